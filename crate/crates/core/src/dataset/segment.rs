use log::info;
use serde::{Deserialize, Serialize};

use super::labels::AuxLabels;
use super::meta::RecordingMeta;
use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub length_s: f64,
    pub stride_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { length_s: 30.0, stride_s: 15.0 }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0 && self.stride_s > 0.0) {
            return Err(Error::InvalidInput("segment length and stride must be positive".into()));
        }
        Ok(())
    }
}

/// A fixed-length excerpt of one recording. Audio stays with the recording;
/// use [`Segment::extract`] to copy it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub recording_id: u32,
    pub start_s: f64,
    pub length_s: f64,
    /// Category index.
    pub label: usize,
    pub aux: AuxLabels,
}

impl Segment {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.length_s
    }

    pub fn extract(&self, wave: &Waveform) -> Result<Waveform> {
        wave.slice_seconds(self.start_s, self.length_s)
    }
}

/// Cuts the whole recording into overlapping segments starting at 0,
/// `stride`, `2 * stride`, ... An incomplete final window is dropped.
pub fn segment_recording(meta: &RecordingMeta, wave: &Waveform, config: &SegmentConfig) -> Result<Vec<Segment>> {
    segment_window(meta, wave, 0.0, f64::INFINITY, config)
}

/// First sample of every complete segment inside `[start_s, end_s)` of a
/// signal with `n_samples` samples. Boundaries are computed in samples so
/// float seconds never decide one.
pub fn window_starts(n_samples: usize, sample_rate: u32, start_s: f64, end_s: f64, config: &SegmentConfig) -> Vec<usize> {
    let sr = sample_rate as f64;
    let len = ((config.length_s * sr).round() as usize).max(1);
    let stride = ((config.stride_s * sr).round() as usize).max(1);
    let first = (start_s.max(0.0) * sr).round() as usize;
    let last = if end_s.is_finite() { ((end_s * sr).round() as usize).min(n_samples) } else { n_samples };
    (first..).step_by(stride).take_while(|s| s + len <= last).collect()
}

/// Like [`segment_recording`] but restricted to `[start_s, end_s)`.
pub fn segment_window(
    meta: &RecordingMeta,
    wave: &Waveform,
    start_s: f64,
    end_s: f64,
    config: &SegmentConfig,
) -> Result<Vec<Segment>> {
    config.validate()?;
    let sr = wave.sample_rate as f64;
    let aux = meta.aux_labels()?;
    let label = meta.category.index();
    let out: Vec<Segment> = window_starts(wave.len(), wave.sample_rate, start_s, end_s, config)
        .into_iter()
        .map(|s| Segment { recording_id: meta.id, start_s: s as f64 / sr, length_s: config.length_s, label, aux })
        .collect();
    if out.is_empty() {
        let end = end_s.min(wave.duration_s());
        info!("recording {} window {start_s:.1}..{end:.1}s is shorter than one {}s segment", meta.id, config.length_s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Category;

    fn meta() -> RecordingMeta {
        RecordingMeta {
            id: 1,
            category: Category::Sailboat,
            source_range_m: Some(10.0),
            depth_m: None,
            wind_kmh: Some(3.0),
            duration_s: 0.0,
        }
    }

    fn silent(seconds: usize) -> Waveform {
        Waveform::new(vec![0.0; seconds * 100], 100).unwrap()
    }

    #[test]
    fn sixty_seconds_gives_three() {
        let s = segment_recording(&meta(), &silent(60), &SegmentConfig::default()).unwrap();
        assert_eq!(s.iter().map(|s| s.start_s).collect::<Vec<_>>(), vec![0.0, 15.0, 30.0]);
        assert!(s.iter().all(|s| s.label == Category::Sailboat.index()));
        assert_eq!(s[0].aux.0, [Some(0), None, Some(1)]);
    }

    #[test]
    fn boundary_lengths() {
        let cfg = SegmentConfig::default();
        assert_eq!(segment_recording(&meta(), &silent(30), &cfg).unwrap().len(), 1);
        assert_eq!(segment_recording(&meta(), &silent(29), &cfg).unwrap().len(), 0);
        assert_eq!(segment_recording(&meta(), &silent(44), &cfg).unwrap().len(), 1);
        assert_eq!(segment_recording(&meta(), &silent(45), &cfg).unwrap().len(), 2);
    }

    #[test]
    fn window_restricts_segments() {
        let cfg = SegmentConfig::default();
        let w = silent(163);
        let train = segment_window(&meta(), &w, 15.0, 125.0, &cfg).unwrap();
        let test = segment_window(&meta(), &w, 125.0, 163.0, &cfg).unwrap();
        assert_eq!((train.len(), test.len()), (6, 1));
        assert_eq!(train.last().unwrap().end_s(), 120.0);
        assert_eq!(test[0].start_s, 125.0);
    }

    #[test]
    fn extract_copies_audio() {
        let w = Waveform::new((0..6000).map(|i| i as f64).collect(), 100).unwrap();
        let s = &segment_recording(&meta(), &w, &SegmentConfig::default()).unwrap()[1];
        let x = s.extract(&w).unwrap();
        assert_eq!(x.len(), 3000);
        assert_eq!(x.samples[0], 1500.0);
    }
}
