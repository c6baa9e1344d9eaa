//! Glue from recordings to labelled feature maps, plus the synthetic
//! desk-scale experiment used by the CLI and the tests.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_split, generate_synthetic, Recording, Segment, SegmentConfig, SplitManifest, SyntheticSpec};
use crate::error::{Error, Result};
use crate::signal::{FeatureConfig, FeatureExtractor, FeatureKind};
use crate::train::Sample;

/// Extracts features for every segment, in parallel and in input order.
pub fn segment_samples(
    segments: &[Segment],
    recordings: &[Recording],
    extractor: &FeatureExtractor,
    kind: FeatureKind,
) -> Result<Vec<Sample>> {
    let by_id: HashMap<u32, &Recording> = recordings.iter().map(|r| (r.meta.id, r)).collect();
    segments
        .par_iter()
        .map(|seg| {
            let rec = by_id.get(&seg.recording_id).ok_or(Error::UnmappedRecording(seg.recording_id))?;
            let fm = extractor.extract(&seg.extract(&rec.waveform)?, kind)?;
            Ok(Sample { features: fm.data, label: seg.label, aux: seg.aux, recording_id: seg.recording_id })
        })
        .collect()
}

/// Keeps `n` segments, taking them class by class in turn so the classes
/// stay balanced. Order within a class is preserved.
pub fn balanced_subset(segments: Vec<Segment>, n: usize) -> Vec<Segment> {
    let mut classes: Vec<Vec<Segment>> = Vec::new();
    for s in segments {
        if classes.len() <= s.label {
            classes.resize_with(s.label + 1, Vec::new);
        }
        classes[s.label].push(s);
    }
    let mut queues: Vec<std::vec::IntoIter<Segment>> = classes.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let before = out.len();
        for q in &mut queues {
            if out.len() == n {
                break;
            }
            if let Some(s) = q.next() {
                out.push(s);
            }
        }
        if out.len() == before {
            break;
        }
    }
    out
}

/// A synthetic experiment: generated recordings, a recording-level
/// train/test split and short segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeskSpec {
    pub synthetic: SyntheticSpec,
    pub segments: SegmentConfig,
    /// Recordings per class reserved for testing.
    pub test_per_class: usize,
    /// Cap on the number of training segments (class-balanced).
    pub train_segments: Option<usize>,
    pub test_segments: Option<usize>,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            segments: SegmentConfig { length_s: 4.0, stride_s: 2.0 },
            test_per_class: 1,
            train_segments: None,
            test_segments: None,
        }
    }
}

impl DeskSpec {
    /// 12 classes, 3-class wind factor, 200 training and 60 test segments of
    /// 4 s at 8 kHz.
    pub fn twelve_class_wind() -> Self {
        Self {
            synthetic: SyntheticSpec {
                n_classes: 12,
                recordings_per_class: 5,
                duration_s: 12.0,
                range: crate::dataset::FactorMode::Off,
                depth: crate::dataset::FactorMode::Off,
                wind: crate::dataset::FactorMode::Uniform,
                ..SyntheticSpec::default()
            },
            train_segments: Some(200),
            test_segments: Some(60),
            ..Self::default()
        }
    }
}

pub struct DeskData {
    pub recordings: Vec<Recording>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn desk_dataset(spec: &DeskSpec, kind: FeatureKind, seed: u64) -> Result<DeskData> {
    let recordings = generate_synthetic(&spec.synthetic, seed)?;
    let metas: Vec<_> = recordings.iter().map(|r| r.meta.clone()).collect();
    let manifest = SplitManifest::holdout(&metas, spec.test_per_class)?;
    let split = build_split(&manifest, &recordings, &spec.segments)?;
    let cap = |segs: Vec<Segment>, n: Option<usize>| match n {
        Some(n) => balanced_subset(segs, n),
        None => segs,
    };
    let train_segs = cap(split.train, spec.train_segments);
    let test_segs = cap(split.test, spec.test_segments);
    let extractor = FeatureExtractor::new(FeatureConfig { sample_rate: spec.synthetic.sample_rate, ..FeatureConfig::desk() })?;
    let train = segment_samples(&train_segs, &recordings, &extractor, kind)?;
    let test = segment_samples(&test_segs, &recordings, &extractor, kind)?;
    Ok(DeskData { recordings, train, test })
}
