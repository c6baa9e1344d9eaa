use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::labels::{map_aux_label, AuxFactor, AuxLabels, Category};
use crate::error::{Error, Result};
use crate::signal::{read_wav, Waveform};

/// Per-recording annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub id: u32,
    pub category: Category,
    pub source_range_m: Option<f64>,
    pub depth_m: Option<f64>,
    pub wind_kmh: Option<f64>,
    /// Zero until the audio has been read.
    pub duration_s: f64,
}

impl RecordingMeta {
    pub fn factor_value(&self, factor: AuxFactor) -> Option<f64> {
        match factor {
            AuxFactor::Range => self.source_range_m,
            AuxFactor::Depth => self.depth_m,
            AuxFactor::Wind => self.wind_kmh,
        }
    }

    pub fn aux_labels(&self) -> Result<AuxLabels> {
        let mut labels = AuxLabels::default();
        for f in AuxFactor::ALL {
            labels.set(f, map_aux_label(f, self.factor_value(f))?);
        }
        Ok(labels)
    }
}

/// A recording with its audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub waveform: Waveform,
}

fn parse_optional(field: &str, line: usize, what: &str) -> Result<Option<f64>> {
    let f = field.trim();
    if f.is_empty() || matches!(f, "—" | "–" | "-" | "NA" | "N/A" | "n/a") {
        return Ok(None);
    }
    let v: f64 = f.parse().map_err(|_| Error::Manifest { line, reason: format!("{what} `{f}` is not a number") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Manifest { line, reason: format!("{what} {v} must be a non-negative number") });
    }
    Ok(Some(v))
}

/// Parses the metadata manifest: one row per recording with
/// `id, category, range_m, depth_m, wind_kmh`.
///
/// Fields are separated by commas, tabs or semicolons. Blank lines and `#`
/// comments are skipped, as is a header row whose first field is not a number.
/// An absent annotation is written as `—`, `-` or left empty.
pub fn parse_metadata_manifest(text: &str) -> Result<Vec<RecordingMeta>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        // Keep trailing tabs: an empty last field means an absent annotation.
        let row = raw.trim_start().trim_end_matches(['\r', ' ']);
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let delim = ['\t', ';', ','].into_iter().find(|d| row.contains(*d)).unwrap_or(',');
        let fields: Vec<&str> = row.split(delim).map(str::trim).collect();
        if out.is_empty() && fields[0].parse::<u32>().is_err() && fields[0].chars().any(|c| c.is_alphabetic()) {
            debug!("skipping manifest header on line {line}");
            continue;
        }
        if fields.len() < 5 {
            return Err(Error::Manifest { line, reason: format!("expected 5 fields, found {}", fields.len()) });
        }
        let id: u32 =
            fields[0].parse().map_err(|_| Error::Manifest { line, reason: format!("bad id `{}`", fields[0]) })?;
        let category: Category =
            fields[1].parse().map_err(|_| Error::Manifest { line, reason: format!("unknown category `{}`", fields[1]) })?;
        let meta = RecordingMeta {
            id,
            category,
            source_range_m: parse_optional(fields[2], line, "source range")?,
            depth_m: parse_optional(fields[3], line, "depth")?,
            wind_kmh: parse_optional(fields[4], line, "wind speed")?,
            duration_s: 0.0,
        };
        if out.iter().any(|m: &RecordingMeta| m.id == id) {
            return Err(Error::Manifest { line, reason: format!("duplicate id {id}") });
        }
        out.push(meta);
    }
    Ok(out)
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_wavs(&path, out)?;
        } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Leading decimal id of a file name such as `28__10_07_13_trawler.wav` or `28.wav`.
fn file_id(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().take_while(char::is_ascii_digit).collect();
    let rest = &stem[digits.len()..];
    if digits.is_empty() || !(rest.is_empty() || rest.starts_with('_') || rest.starts_with('-')) {
        return None;
    }
    digits.parse().ok()
}

/// Reads every recording listed in the manifest from `root` (searched
/// recursively for WAV files whose name starts with the id).
pub fn load_shipsear(root: &Path, manifest: &[RecordingMeta]) -> Result<Vec<Recording>> {
    let mut files = Vec::new();
    if !manifest.is_empty() {
        collect_wavs(root, &mut files)?;
    }
    files.sort();
    let mut out = Vec::with_capacity(manifest.len());
    for meta in manifest {
        let matches: Vec<&PathBuf> = files.iter().filter(|p| file_id(p) == Some(meta.id)).collect();
        let path = match matches.as_slice() {
            [] => return Err(Error::Ingest { id: meta.id, reason: format!("no WAV file under {}", root.display()) }),
            [p] => *p,
            [p, ..] => {
                warn!("recording {} has {} candidate files, using {}", meta.id, matches.len(), p.display());
                *p
            }
        };
        let waveform = read_wav(path).map_err(|e| Error::Ingest { id: meta.id, reason: e.to_string() })?;
        let mut meta = meta.clone();
        meta.duration_s = waveform.duration_s();
        out.push(Recording { meta, waveform });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_row() {
        let m = parse_metadata_manifest("28, Trawler, 100, 15, 0\n").unwrap();
        assert_eq!(
            m,
            vec![RecordingMeta {
                id: 28,
                category: Category::Trawler,
                source_range_m: Some(100.0),
                depth_m: Some(15.0),
                wind_kmh: Some(0.0),
                duration_s: 0.0,
            }]
        );
        let labels = m[0].aux_labels().unwrap();
        assert_eq!(labels.0, [Some(1), Some(2), Some(0)]);
    }

    #[test]
    fn absent_field_and_header() {
        let text = "id\tcategory\trange\tdepth\twind\n# note\n\n6\tPassenger ship\t40\t8\t—\n7\tPassenger ship\t60\t8\t\n";
        let m = parse_metadata_manifest(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].wind_kmh, None);
        assert_eq!(m[1].wind_kmh, None);
        assert_eq!(m[0].aux_labels().unwrap().get(AuxFactor::Wind), None);
    }

    #[test]
    fn empty_manifest_is_empty() {
        assert!(parse_metadata_manifest("").unwrap().is_empty());
        assert!(load_shipsear(Path::new("/nonexistent"), &[]).unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_metadata_manifest("1, Tugboat, 10, 5, 0\n2, Tugboat, ten, 5, 0\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");
        assert!(matches!(parse_metadata_manifest("3; Yacht; 1; 1; 1").unwrap_err(), Error::Manifest { line: 1, .. }));
        assert!(matches!(parse_metadata_manifest("3, Tugboat, 1").unwrap_err(), Error::Manifest { line: 1, .. }));
        assert!(matches!(parse_metadata_manifest("3, Tugboat, -1, 1, 1").unwrap_err(), Error::Manifest { .. }));
    }

    #[test]
    fn file_id_parsing() {
        assert_eq!(file_id(Path::new("a/28__10_07_13_x.wav")), Some(28));
        assert_eq!(file_id(Path::new("06.wav")), Some(6));
        assert_eq!(file_id(Path::new("28b.wav")), None);
        assert_eq!(file_id(Path::new("x28.wav")), None);
    }

    #[test]
    fn missing_and_unreadable_files_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let meta = parse_metadata_manifest("5, Tugboat, 10, 5, 0").unwrap();
        assert!(matches!(load_shipsear(dir.path(), &meta), Err(Error::Ingest { id: 5, .. })));
        fs::write(dir.path().join("5__broken.wav"), b"not a wav").unwrap();
        assert!(matches!(load_shipsear(dir.path(), &meta), Err(Error::Ingest { id: 5, .. })));
    }

    #[test]
    fn loads_wav_and_sets_duration() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("Tugboat");
        fs::create_dir(&sub).unwrap();
        let w = Waveform::new(vec![0.1; 16_000], 8000).unwrap();
        crate::signal::write_wav(&sub.join("15__tug.wav"), &w).unwrap();
        let meta = parse_metadata_manifest("15, Tugboat, 10, 5, 0").unwrap();
        let recs = load_shipsear(dir.path(), &meta).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].meta.duration_s, 2.0);
    }
}
