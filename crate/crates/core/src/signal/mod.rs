//! Preprocessing and time-frequency feature extraction.
//!
//! The chain is `resample -> bandpass -> normalize_waveform -> frame_and_window
//! -> stft`, followed by one of the three feature projections
//! ([`spectrogram`], [`mel_spectrogram`], [`cqt_spectrogram`]).
//! [`FeatureExtractor`] precomputes the FFT plan and filter banks for a
//! [`FeatureConfig`] and runs the whole chain.

mod cache;
mod filter;
mod frames;
mod resample;
mod spectral;
mod wav;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{read_feature_cache, write_feature_cache, CacheKind, CACHE_MAGIC, CACHE_VERSION};
pub use filter::{bandpass, butterworth_sos, Biquad, FilterKind};
pub use frames::{frame_and_window, frame_count, hann_window, FrameMatrix};
pub use resample::resample;
pub use spectral::{
    cqt_bandwidth, cqt_bin_count, cqt_center_frequencies, cqt_kernel, cqt_q, cqt_spectrogram, hz_to_mel,
    mel_filter_bank, mel_spectrogram, mel_to_hz, spectrogram, stft, Spectra,
};
pub use wav::{read_wav, write_wav};

/// A mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of the samples in `[start_s, start_s + length_s)`.
    pub fn slice_seconds(&self, start_s: f64, length_s: f64) -> Result<Waveform> {
        let sr = self.sample_rate as f64;
        let start = (start_s * sr).round() as usize;
        let len = (length_s * sr).round() as usize;
        if start + len > self.samples.len() {
            return Err(Error::InvalidInput(format!(
                "slice {start_s}s+{length_s}s exceeds {:.3}s recording",
                self.duration_s()
            )));
        }
        Ok(Waveform { samples: self.samples[start..start + len].to_vec(), sample_rate: self.sample_rate })
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let mean = self.mean();
        self.samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Standardize to zero mean and unit variance.
pub fn normalize_waveform(wave: &Waveform) -> Result<Waveform> {
    let mean = wave.mean();
    let var = wave.variance();
    if wave.is_empty() || var <= 1e-20 * (1.0 + mean * mean) {
        return Err(Error::DegenerateSignal);
    }
    let inv_std = 1.0 / var.sqrt();
    let samples = wave.samples.iter().map(|s| (s - mean) * inv_std).collect();
    Ok(Waveform { samples, sample_rate: wave.sample_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    #[serde(alias = "spectrogram", alias = "stft")]
    Spec,
    Mel,
    Cqt,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Spec, FeatureKind::Mel, FeatureKind::Cqt];

    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Spec => 0,
            FeatureKind::Mel => 1,
            FeatureKind::Cqt => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Spec => "spec",
            FeatureKind::Mel => "mel",
            FeatureKind::Cqt => "cqt",
        })
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spec" | "spectrogram" | "stft" => Ok(FeatureKind::Spec),
            "mel" => Ok(FeatureKind::Mel),
            "cqt" => Ok(FeatureKind::Cqt),
            other => Err(Error::InvalidInput(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// A time x frequency feature, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub data: Array2<f32>,
    /// Center frequency of every column, in Hz.
    pub freq_axis: Vec<f64>,
    /// Frames per second.
    pub frame_rate: f64,
}

impl FeatureMap {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// How the CQT bin count is derived from `bins_per_octave * log2(f_max / f_min)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BinCountRule {
    /// 399 bins for the default parameters.
    #[default]
    Floor,
    /// 400 bins for the default parameters.
    Ceil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub filter_order: usize,
    pub frame_seconds: f64,
    pub overlap: f64,
    pub n_mels: usize,
    pub mel_f_min: f64,
    pub mel_f_max: f64,
    pub cqt_bins_per_octave: usize,
    pub cqt_f_min: f64,
    pub cqt_f_max: f64,
    pub cqt_bin_count: BinCountRule,
    pub log_epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            band_lo_hz: 10.0,
            band_hi_hz: 22_050.0,
            filter_order: 5,
            frame_seconds: 0.05,
            overlap: 0.5,
            n_mels: 400,
            mel_f_min: 10.0,
            mel_f_max: 22_050.0,
            cqt_bins_per_octave: 36,
            cqt_f_min: 10.0,
            cqt_f_max: 22_050.0,
            cqt_bin_count: BinCountRule::Floor,
            log_epsilon: 1e-8,
        }
    }
}

impl FeatureConfig {
    /// A reduced configuration for fast experiments on synthetic data at 8 kHz.
    pub fn desk() -> Self {
        Self {
            sample_rate: 8_000,
            band_lo_hz: 10.0,
            band_hi_hz: 4_000.0,
            n_mels: 64,
            mel_f_min: 10.0,
            mel_f_max: 4_000.0,
            cqt_bins_per_octave: 12,
            cqt_f_min: 40.0,
            cqt_f_max: 4_000.0,
            ..Self::default()
        }
    }

    pub fn frame_len(&self) -> usize {
        (self.frame_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn hop(&self) -> f64 {
        self.frame_len() as f64 * (1.0 - self.overlap)
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample_rate must be positive".into()));
        }
        if self.frame_len() < 2 {
            return Err(Error::InvalidInput("frame length must be at least 2 samples".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::InvalidInput("overlap must lie in [0, 1)".into()));
        }
        if !(self.band_lo_hz > 0.0 && self.band_lo_hz < self.band_hi_hz && self.band_hi_hz <= nyquist) {
            return Err(Error::InvalidCutoff(format!(
                "band {}..{} Hz invalid for sample rate {}",
                self.band_lo_hz, self.band_hi_hz, self.sample_rate
            )));
        }
        if self.n_mels < 2 {
            return Err(Error::InvalidInput("n_mels must be at least 2".into()));
        }
        if self.cqt_f_min <= 0.0 || self.cqt_f_min >= self.cqt_f_max {
            return Err(Error::InvalidCutoff(format!(
                "CQT range {}..{} Hz is invalid",
                self.cqt_f_min, self.cqt_f_max
            )));
        }
        if self.cqt_bins_per_octave == 0 {
            return Err(Error::InvalidInput("cqt_bins_per_octave must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of columns produced for `kind`.
    pub fn n_bins(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Spec => self.frame_len() / 2 + 1,
            FeatureKind::Mel => self.n_mels,
            FeatureKind::Cqt => {
                cqt_bin_count(self.cqt_bins_per_octave, self.cqt_f_min, self.cqt_f_max, self.cqt_bin_count)
            }
        }
    }
}

/// Runs the full preprocessing and feature chain with cached FFT plans and
/// filter banks. Immutable once built, so it can be shared across threads.
pub struct FeatureExtractor {
    config: FeatureConfig,
    window: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    mel_bank: Array2<f64>,
    mel_freqs: Vec<f64>,
    cqt_kernel: Array2<f64>,
    cqt_freqs: Vec<f64>,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor").field("config", &self.config).finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        config.validate()?;
        let frame_len = config.frame_len();
        let sr = config.sample_rate as f64;
        let (mel_bank, mel_freqs) = mel_filter_bank(config.n_mels, frame_len, sr, config.mel_f_min, config.mel_f_max)?;
        let cqt_freqs = cqt_center_frequencies(
            config.cqt_bins_per_octave,
            config.cqt_f_min,
            config.cqt_f_max,
            config.cqt_bin_count,
        )?;
        let cqt_kernel = cqt_kernel(&cqt_freqs, config.cqt_bins_per_octave, frame_len, sr);
        let fft = rustfft::FftPlanner::new().plan_fft_forward(frame_len);
        Ok(Self { window: hann_window(frame_len), fft, mel_bank, mel_freqs, cqt_kernel, cqt_freqs, config })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Resample, band-pass and standardize a raw recording.
    pub fn preprocess(&self, wave: &Waveform) -> Result<Waveform> {
        let resampled = resample(wave, self.config.sample_rate)?;
        let filtered = bandpass_with_order(
            &resampled,
            self.config.band_lo_hz,
            self.config.band_hi_hz,
            self.config.filter_order,
        )?;
        normalize_waveform(&filtered)
    }

    /// Framing and STFT of an already preprocessed waveform.
    pub fn spectra(&self, wave: &Waveform) -> Result<Spectra> {
        if wave.sample_rate != self.config.sample_rate {
            return Err(Error::InvalidInput(format!(
                "expected {} Hz input, got {} Hz",
                self.config.sample_rate, wave.sample_rate
            )));
        }
        let frames = frames::frame_with_window(wave, &self.window, self.config.hop())?;
        Ok(spectral::stft_with_plan(&frames, wave.sample_rate as f64, self.fft.as_ref()))
    }

    /// Feature of an already preprocessed waveform.
    pub fn features(&self, wave: &Waveform, kind: FeatureKind) -> Result<FeatureMap> {
        let spectra = self.spectra(wave)?;
        Ok(self.project(&spectra, kind))
    }

    /// Preprocess and extract in one call.
    pub fn extract(&self, raw: &Waveform, kind: FeatureKind) -> Result<FeatureMap> {
        let wave = self.preprocess(raw)?;
        self.features(&wave, kind)
    }

    pub fn project(&self, spectra: &Spectra, kind: FeatureKind) -> FeatureMap {
        let eps = self.config.log_epsilon;
        match kind {
            FeatureKind::Spec => spectrogram(spectra),
            FeatureKind::Mel => spectral::apply_bank(spectra, &self.mel_bank, &self.mel_freqs, FeatureKind::Mel, eps),
            FeatureKind::Cqt => spectral::apply_bank(spectra, &self.cqt_kernel, &self.cqt_freqs, FeatureKind::Cqt, eps),
        }
    }
}

/// Band-pass with a configurable Butterworth order.
pub fn bandpass_with_order(wave: &Waveform, lo: f64, hi: f64, order: usize) -> Result<Waveform> {
    filter::bandpass_order(wave, lo, hi, order)
}
