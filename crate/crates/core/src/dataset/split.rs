use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::labels::Category;
use super::meta::{Recording, RecordingMeta};
use super::segment::{segment_window, Segment, SegmentConfig};
use crate::error::{Error, Result};

const SHIPSEAR_SPLIT: &str = include_str!("shipsear_split.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

/// Restricts one recording to a time window on one side of the split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRange {
    pub id: u32,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySplit {
    pub name: String,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub train_ranges: Vec<TimeRange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_ranges: Vec<TimeRange>,
    /// Expected (train, test) segment counts, when published.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<[usize; 2]>,
}

impl CategorySplit {
    pub fn category(&self) -> Result<Category> {
        self.name.parse()
    }

    fn ranges(&self, side: Side) -> &[TimeRange] {
        match side {
            Side::Train => &self.train_ranges,
            Side::Test => &self.test_ranges,
        }
    }

    fn ids(&self, side: Side) -> &[u32] {
        match side {
            Side::Train => &self.train,
            Side::Test => &self.test,
        }
    }
}

/// Which recordings go to training and which to testing, per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    #[serde(rename = "category")]
    pub categories: Vec<CategorySplit>,
}

/// Where one recording (or part of it) lands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub side: Side,
    pub start_s: f64,
    pub end_s: f64,
}

impl SplitManifest {
    /// The published ShipsEar split.
    pub fn shipsear() -> Self {
        Self::from_toml_str(SHIPSEAR_SPLIT).expect("embedded split manifest is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: SplitManifest = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("split manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("split manifest serializes")
    }

    /// Holds out the last `test_per_class` recordings of every category (in id
    /// order) for testing.
    pub fn holdout(metas: &[RecordingMeta], test_per_class: usize) -> Result<Self> {
        let mut by_cat: BTreeMap<Category, Vec<u32>> = BTreeMap::new();
        for m in metas {
            by_cat.entry(m.category).or_default().push(m.id);
        }
        let mut categories = Vec::new();
        for (cat, mut ids) in by_cat {
            ids.sort_unstable();
            if ids.len() <= test_per_class {
                return Err(Error::InvalidInput(format!(
                    "{cat} has {} recordings, cannot hold out {test_per_class}",
                    ids.len()
                )));
            }
            let test = ids.split_off(ids.len() - test_per_class);
            categories.push(CategorySplit {
                name: cat.name().to_string(),
                train: ids,
                test,
                train_ranges: vec![],
                test_ranges: vec![],
                segments: None,
            });
        }
        let m = SplitManifest { categories };
        m.validate()?;
        Ok(m)
    }

    /// Checks category names and that no recording contributes overlapping
    /// audio to both sides.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<u32, Vec<Placement>> = BTreeMap::new();
        let mut names = BTreeSet::new();
        for c in &self.categories {
            let cat = c.category()?;
            if !names.insert(cat) {
                return Err(Error::InvalidInput(format!("category {cat} listed twice")));
            }
            for side in [Side::Train, Side::Test] {
                let ids = c.ids(side);
                for r in c.ranges(side) {
                    if !ids.contains(&r.id) {
                        return Err(Error::InvalidInput(format!("range for {} not listed on that side", r.id)));
                    }
                    if !(r.start_s >= 0.0 && r.end_s > r.start_s) {
                        return Err(Error::InvalidInput(format!("empty time range for recording {}", r.id)));
                    }
                }
                for &id in ids {
                    for p in self.placements_in(c, id, side) {
                        seen.entry(id).or_default().push(p);
                    }
                }
            }
        }
        for (id, places) in &seen {
            for (i, a) in places.iter().enumerate() {
                for b in &places[i + 1..] {
                    if a.start_s < b.end_s && b.start_s < a.end_s {
                        return Err(Error::InvalidInput(format!("recording {id} appears twice with overlapping audio")));
                    }
                }
            }
        }
        Ok(())
    }

    fn placements_in(&self, c: &CategorySplit, id: u32, side: Side) -> Vec<Placement> {
        let ranges: Vec<Placement> = c
            .ranges(side)
            .iter()
            .filter(|r| r.id == id)
            .map(|r| Placement { side, start_s: r.start_s, end_s: r.end_s })
            .collect();
        if ranges.is_empty() {
            vec![Placement { side, start_s: 0.0, end_s: f64::INFINITY }]
        } else {
            ranges
        }
    }

    /// Category and placements of a recording id.
    pub fn placements(&self, id: u32) -> Option<(Category, Vec<Placement>)> {
        for c in &self.categories {
            let mut out = Vec::new();
            for side in [Side::Train, Side::Test] {
                if c.ids(side).contains(&id) {
                    out.extend(self.placements_in(c, id, side));
                }
            }
            if !out.is_empty() {
                return c.category().ok().map(|cat| (cat, out));
            }
        }
        None
    }

    pub fn record_counts(&self) -> (usize, usize) {
        self.categories.iter().fold((0, 0), |(a, b), c| (a + c.train.len(), b + c.test.len()))
    }

    pub fn expected_segments(&self) -> Option<(usize, usize)> {
        self.categories.iter().try_fold((0, 0), |(a, b), c| c.segments.map(|[x, y]| (a + x, b + y)))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Segment>,
    pub test: Vec<Segment>,
}

impl Split {
    pub fn segments_for(&self, category: Category) -> (usize, usize) {
        let count = |v: &[Segment]| v.iter().filter(|s| s.label == category.index()).count();
        (count(&self.train), count(&self.test))
    }
}

/// Segments every recording and assigns the segments to a side.
pub fn build_split(manifest: &SplitManifest, recordings: &[Recording], config: &SegmentConfig) -> Result<Split> {
    let mut split = Split::default();
    for rec in recordings {
        let id = rec.meta.id;
        let (cat, places) = manifest.placements(id).ok_or(Error::UnmappedRecording(id))?;
        if cat != rec.meta.category {
            return Err(Error::InvalidInput(format!(
                "recording {id} is a {} but the split lists it under {cat}",
                rec.meta.category
            )));
        }
        for p in places {
            let segs = segment_window(&rec.meta, &rec.waveform, p.start_s, p.end_s, config)?;
            match p.side {
                Side::Train => split.train.extend(segs),
                Side::Test => split.test.extend(segs),
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Waveform;

    #[test]
    fn shipsear_manifest_matches_published_totals() {
        let m = SplitManifest::shipsear();
        assert_eq!(m.categories.len(), 12);
        assert_eq!(m.record_counts(), (65, 26));
        assert_eq!(m.expected_segments(), Some((541, 84)));
        let pass = m.categories.iter().find(|c| c.name == "Passenger ship").unwrap();
        assert_eq!((pass.train.len(), pass.test.len()), (23, 7));
        assert_eq!(pass.segments, Some([217, 25]));
        let all: BTreeSet<u32> = m.categories.iter().flat_map(|c| c.train.iter().chain(&c.test)).copied().collect();
        // Ids 6..=96 except the Trawler duplicate.
        assert_eq!(all.len(), 90);
        assert_eq!(all.iter().copied().min(), Some(6));
        assert_eq!(all.iter().copied().max(), Some(96));
    }

    #[test]
    fn trawler_split_in_time() {
        let (cat, places) = SplitManifest::shipsear().placements(28).unwrap();
        assert_eq!(cat, Category::Trawler);
        assert_eq!(places.len(), 2);
        assert_eq!((places[0].side, places[0].start_s, places[0].end_s), (Side::Train, 15.0, 125.0));
        assert_eq!((places[1].side, places[1].start_s, places[1].end_s), (Side::Test, 125.0, 163.0));
    }

    #[test]
    fn overlapping_sides_rejected() {
        let text = "[[category]]\nname = \"Tugboat\"\ntrain = [1]\ntest = [1]\n";
        assert!(SplitManifest::from_toml_str(text).is_err());
        let text = "[[category]]\nname = \"Tugboat\"\ntrain = [1]\ntest = [1]\n\
                    train_ranges = [{ id = 1, start_s = 0.0, end_s = 50.0 }]\n\
                    test_ranges = [{ id = 1, start_s = 40.0, end_s = 90.0 }]\n";
        assert!(SplitManifest::from_toml_str(text).is_err());
    }

    #[test]
    fn unmapped_recording_is_an_error() {
        let m = SplitManifest::shipsear();
        let rec = Recording {
            meta: RecordingMeta {
                id: 500,
                category: Category::Tugboat,
                source_range_m: None,
                depth_m: None,
                wind_kmh: None,
                duration_s: 40.0,
            },
            waveform: Waveform::new(vec![0.0; 4000], 100).unwrap(),
        };
        assert!(matches!(build_split(&m, &[rec], &SegmentConfig::default()), Err(Error::UnmappedRecording(500))));
    }

    #[test]
    fn mock_split_is_disjoint() {
        let rec = |id| Recording {
            meta: RecordingMeta {
                id,
                category: Category::Dredger,
                source_range_m: Some(20.0),
                depth_m: Some(3.0),
                wind_kmh: Some(0.0),
                duration_s: 75.0,
            },
            waveform: Waveform::new(vec![0.0; 7500], 100).unwrap(),
        };
        let recs = vec![rec(1), rec(2)];
        let m = SplitManifest::holdout(&recs.iter().map(|r| r.meta.clone()).collect::<Vec<_>>(), 1).unwrap();
        let s = build_split(&m, &recs, &SegmentConfig::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4, 4));
        assert!(s.train.iter().all(|t| s.test.iter().all(|u| u.recording_id != t.recording_id)));
        assert_eq!(s.segments_for(Category::Dredger), (4, 4));
    }

    #[test]
    fn toml_round_trip() {
        let m = SplitManifest::shipsear();
        assert_eq!(SplitManifest::from_toml_str(&m.to_toml_string()).unwrap(), m);
    }
}
