use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{BinCountRule, FeatureKind, FeatureMap, FrameMatrix};
use crate::error::{Error, Result};

/// One-sided complex spectra, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    pub data: Array2<Complex64>,
    /// Transform length (equal to the frame length, no zero padding).
    pub fft_len: usize,
    pub sample_rate: f64,
    pub hop: f64,
}

impl Spectra {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate / self.fft_len as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate / self.hop
    }

    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.n_bins()).map(|k| k as f64 * self.bin_hz()).collect()
    }

    fn amplitudes(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }
}

/// Short-time Fourier transform of windowed frames; the FFT length equals the
/// frame length, so an odd 2205-sample frame yields 1103 bins.
pub fn stft(frames: &FrameMatrix, sample_rate: f64) -> Result<Spectra> {
    if frames.n_frames() == 0 || frames.frame_len() == 0 {
        return Err(Error::InvalidInput("no frames to transform".into()));
    }
    let fft = FftPlanner::new().plan_fft_forward(frames.frame_len());
    Ok(stft_with_plan(frames, sample_rate, fft.as_ref()))
}

pub(crate) fn stft_with_plan(frames: &FrameMatrix, sample_rate: f64, fft: &dyn Fft<f64>) -> Spectra {
    let len = frames.frame_len();
    let n_bins = len / 2 + 1;
    let mut data = Array2::zeros((frames.n_frames(), n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (frame, mut out) in frames.frames.outer_iter().zip(data.outer_iter_mut()) {
        for (b, &x) in buf.iter_mut().zip(frame.iter()) {
            *b = Complex64::new(x, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = *b;
        }
    }
    Spectra { data, fft_len: len, sample_rate, hop: frames.hop }
}

/// Amplitude spectrogram.
pub fn spectrogram(spectra: &Spectra) -> FeatureMap {
    FeatureMap {
        kind: FeatureKind::Spec,
        data: spectra.data.mapv(|c| c.norm() as f32),
        freq_axis: spectra.bin_frequencies(),
        frame_rate: spectra.frame_rate(),
    }
}

/// Mel scale, `2595 log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with centers uniform on the Mel axis between `f_min`
/// and `f_max`. Returns the `(n_mels x n_bins)` matrix and center frequencies.
///
/// A filter narrower than the FFT bin spacing would miss every bin; such a
/// filter instead interpolates linearly between the two bins bracketing its
/// center, so every row carries positive weight.
pub fn mel_filter_bank(
    n_mels: usize,
    fft_len: usize,
    sample_rate: f64,
    f_min: f64,
    f_max: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if n_mels < 2 {
        return Err(Error::InvalidInput("n_mels must be at least 2".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0) {
        return Err(Error::InvalidCutoff(format!("Mel range {f_min}..{f_max} Hz is invalid")));
    }
    let n_bins = fft_len / 2 + 1;
    let bin_hz = sample_rate / fft_len as f64;
    let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> =
        (0..n_mels + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64)).collect();

    let mut bank = Array2::zeros((n_mels, n_bins));
    for (m, mut row) in bank.outer_iter_mut().enumerate() {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rise = (f - lo) / (center - lo);
            let fall = (hi - f) / (hi - center);
            *w = rise.min(fall).max(0.0);
        }
        if row.sum() <= 0.0 {
            let pos = center / bin_hz;
            let k = (pos.floor() as usize).min(n_bins - 1);
            let frac = pos - k as f64;
            row[k] = 1.0 - frac;
            if k + 1 < n_bins {
                row[k + 1] = frac;
            }
        }
    }
    Ok((bank, edges[1..=n_mels].to_vec()))
}

/// Log-compressed Mel spectrogram with `n_mels` filters over 10..22050 Hz.
pub fn mel_spectrogram(spectra: &Spectra, n_mels: usize) -> Result<FeatureMap> {
    let f_max = (spectra.sample_rate / 2.0).min(22_050.0);
    let (bank, freqs) = mel_filter_bank(n_mels, spectra.fft_len, spectra.sample_rate, 10.0f64.min(f_max / 2.0), f_max)?;
    Ok(apply_bank(spectra, &bank, &freqs, FeatureKind::Mel, 1e-8))
}

/// Constant ratio of center frequency to bandwidth for `b` bins per octave.
pub fn cqt_q(bins_per_octave: usize) -> f64 {
    1.0 / (2f64.powf(1.0 / bins_per_octave as f64) - 1.0)
}

pub fn cqt_bin_count(bins_per_octave: usize, f_min: f64, f_max: f64, rule: BinCountRule) -> usize {
    let exact = bins_per_octave as f64 * (f_max / f_min).log2();
    // Guard against log2 landing a hair off an integer.
    let snapped = if (exact - exact.round()).abs() < 1e-9 { exact.round() } else { exact };
    match rule {
        BinCountRule::Floor => snapped.floor() as usize,
        BinCountRule::Ceil => snapped.ceil() as usize,
    }
}

/// Geometric ladder `f_k = 2^(k/b) f_min`.
pub fn cqt_center_frequencies(bins_per_octave: usize, f_min: f64, f_max: f64, rule: BinCountRule) -> Result<Vec<f64>> {
    if f_min <= 0.0 || f_min >= f_max {
        return Err(Error::InvalidCutoff(format!("CQT range {f_min}..{f_max} Hz is invalid")));
    }
    if bins_per_octave == 0 {
        return Err(Error::InvalidInput("bins per octave must be at least 1".into()));
    }
    let k = cqt_bin_count(bins_per_octave, f_min, f_max, rule);
    Ok((0..k).map(|k| f_min * 2f64.powf(k as f64 / bins_per_octave as f64)).collect())
}

/// Nominal bandwidth `f_k / Q` of a CQT filter.
pub fn cqt_bandwidth(center_hz: f64, bins_per_octave: usize) -> f64 {
    center_hz / cqt_q(bins_per_octave)
}

/// Spectral-domain CQT kernel, `(n_filters x n_fft_bins)`.
///
/// Each row is a Gaussian bandpass response centered on `f_k` whose full
/// width at half maximum is the nominal bandwidth `f_k / Q`, widened to one
/// FFT bin where the nominal band is narrower than the bin spacing. Rows are
/// normalized to unit area.
pub fn cqt_kernel(centers: &[f64], bins_per_octave: usize, fft_len: usize, sample_rate: f64) -> Array2<f64> {
    let n_bins = fft_len / 2 + 1;
    let bin_hz = sample_rate / fft_len as f64;
    let fwhm_to_sigma = 1.0 / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let mut kernel = Array2::zeros((centers.len(), n_bins));
    for (&fk, mut row) in centers.iter().zip(kernel.outer_iter_mut()) {
        let sigma = cqt_bandwidth(fk, bins_per_octave).max(bin_hz) * fwhm_to_sigma;
        let lo = ((fk - 6.0 * sigma) / bin_hz).floor().max(0.0) as usize;
        let hi = (((fk + 6.0 * sigma) / bin_hz).ceil() as usize).min(n_bins - 1);
        for k in lo..=hi {
            let d = (k as f64 * bin_hz - fk) / sigma;
            row[k] = (-0.5 * d * d).exp();
        }
        let area = row.sum();
        if area > 0.0 {
            row /= area;
        } else {
            let k = ((fk / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    kernel
}

/// Log-compressed CQT spectrogram.
pub fn cqt_spectrogram(spectra: &Spectra, bins_per_octave: usize, f_min: f64, f_max: f64) -> Result<FeatureMap> {
    cqt_spectrogram_with_rule(spectra, bins_per_octave, f_min, f_max, BinCountRule::Floor)
}

pub fn cqt_spectrogram_with_rule(
    spectra: &Spectra,
    bins_per_octave: usize,
    f_min: f64,
    f_max: f64,
    rule: BinCountRule,
) -> Result<FeatureMap> {
    let centers = cqt_center_frequencies(bins_per_octave, f_min, f_max, rule)?;
    let kernel = cqt_kernel(&centers, bins_per_octave, spectra.fft_len, spectra.sample_rate);
    Ok(apply_bank(spectra, &kernel, &centers, FeatureKind::Cqt, 1e-8))
}

/// `log(amplitudes . bank^T + eps)`.
pub(crate) fn apply_bank(spectra: &Spectra, bank: &Array2<f64>, freqs: &[f64], kind: FeatureKind, eps: f64) -> FeatureMap {
    let amps = spectra.amplitudes();
    let projected = amps.dot(&bank.t());
    let mut data = Array2::zeros(projected.raw_dim());
    ndarray::Zip::from(&mut data).and(&projected).for_each(|d, &p| *d = (p + eps).ln() as f32);
    debug_assert_eq!(data.len_of(Axis(1)), freqs.len());
    FeatureMap { kind, data, freq_axis: freqs.to_vec(), frame_rate: spectra.frame_rate() }
}
