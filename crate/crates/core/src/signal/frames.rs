use std::f64::consts::PI;

use ndarray::Array2;

use super::Waveform;
use crate::error::{Error, Result};

/// Windowed frames of a signal, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub frames: Array2<f64>,
    pub window: Vec<f64>,
    /// Hop in samples; fractional hops are rounded per frame.
    pub hop: f64,
}

impl FrameMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_len(&self) -> usize {
        self.frames.ncols()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Frames produced for `n_samples` input samples: `round(n_samples / hop)`.
pub fn frame_count(n_samples: usize, hop: f64) -> usize {
    (n_samples as f64 / hop).round() as usize
}

/// Splits the signal into 50 ms Hann-windowed frames with 50% overlap.
///
/// The signal is reflect-padded by half a frame on both ends, so frame `i`
/// is centered on sample `i * hop` of the original signal.
pub fn frame_and_window(wave: &Waveform) -> Result<FrameMatrix> {
    let frame_len = (0.05 * wave.sample_rate as f64).round() as usize;
    frame_with_window(wave, &hann_window(frame_len), frame_len as f64 / 2.0)
}

pub(crate) fn frame_with_window(wave: &Waveform, window: &[f64], hop: f64) -> Result<FrameMatrix> {
    let frame_len = window.len();
    let n = wave.len();
    if n < frame_len || n < 2 {
        return Err(Error::SignalTooShort { len: n, needed: frame_len });
    }
    let n_frames = frame_count(n, hop);
    let pad = frame_len / 2;

    let x = &wave.samples;
    // numpy-style "reflect": the edge sample is not repeated.
    let reflect = |i: isize| -> f64 {
        let last = n as isize - 1;
        let mut j = i;
        loop {
            if j < 0 {
                j = -j;
            } else if j > last {
                j = 2 * last - j;
            } else {
                return x[j as usize];
            }
        }
    };

    let mut frames = Array2::zeros((n_frames, frame_len));
    for (i, mut row) in frames.outer_iter_mut().enumerate() {
        let start = (i as f64 * hop).round() as isize - pad as isize;
        for (k, v) in row.iter_mut().enumerate() {
            *v = reflect(start + k as isize) * window[k];
        }
    }
    Ok(FrameMatrix { frames, window: window.to_vec(), hop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_second_segment_yields_1200_frames() {
        let w = Waveform::new(vec![0.0; 44_100 * 30], 44_100).unwrap();
        let f = frame_and_window(&w).unwrap();
        assert_eq!(f.frames.dim(), (1200, 2205));
        assert_eq!(f.hop, 1102.5);
    }

    #[test]
    fn fifteen_second_segment_yields_600_frames() {
        assert_eq!(frame_count(661_500, 1102.5), 600);
        let w = Waveform::new(vec![0.0; 661_500], 44_100).unwrap();
        assert_eq!(frame_and_window(&w).unwrap().n_frames(), 600);
    }

    #[test]
    fn frame_count_is_forty_per_second() {
        for secs in 1..=40 {
            assert_eq!(frame_count(44_100 * secs, 1102.5), 40 * secs);
        }
    }

    #[test]
    fn constant_signal_frames_equal_window() {
        let w = Waveform::new(vec![1.0; 44_100], 44_100).unwrap();
        let f = frame_and_window(&w).unwrap();
        for row in f.frames.outer_iter() {
            assert_eq!(row.to_vec(), f.window);
        }
    }

    #[test]
    fn frames_are_centered_on_hop_multiples() {
        let n = 9000;
        let w = Waveform::new((0..n).map(|i| i as f64).collect(), 44_100).unwrap();
        let window = vec![1.0; 2205];
        let f = frame_with_window(&w, &window, 1102.5).unwrap();
        let center = 1102;
        for i in 1..f.n_frames() - 1 {
            assert_eq!(f.frames[[i, center]], (i as f64 * 1102.5).round());
        }
        // Reflection at the left edge.
        assert_eq!(f.frames[[0, center - 1]], 1.0);
    }

    #[test]
    fn short_signal_rejected() {
        let w = Waveform::new(vec![0.0; 2000], 44_100).unwrap();
        assert!(matches!(frame_and_window(&w), Err(Error::SignalTooShort { len: 2000, needed: 2205 })));
    }
}
