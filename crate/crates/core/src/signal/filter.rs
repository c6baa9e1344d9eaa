use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * gain;
        let z1 = b1 - a1 * gain + z2;
        [z1, z2]
    }
}

/// Digital Butterworth filter as cascaded second-order sections, via the
/// bilinear transform with frequency prewarping.
pub fn butterworth_sos(order: usize, cutoff_hz: f64, sample_rate: f64, kind: FilterKind) -> Result<Vec<Biquad>> {
    let nyquist = sample_rate / 2.0;
    if order == 0 {
        return Err(Error::InvalidInput("filter order must be at least 1".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidCutoff(format!("{cutoff_hz} Hz is outside (0, {nyquist}) Hz")));
    }
    let fs2 = 2.0 * sample_rate;
    let warped = fs2 * (PI * cutoff_hz / sample_rate).tan();
    let n = order as f64;

    // Upper-half-plane prototype poles plus the real pole for odd orders.
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    let bilinear = |p: Complex64| (fs2 + p) / (fs2 - p);
    let zero = match kind {
        FilterKind::Lowpass => -1.0,
        FilterKind::Highpass => 1.0,
    };
    for k in 0..order / 2 {
        let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
        let proto = Complex64::from_polar(1.0, theta);
        let analog = match kind {
            FilterKind::Lowpass => proto * warped,
            FilterKind::Highpass => Complex64::new(warped, 0.0) / proto,
        };
        let p = bilinear(analog);
        sections.push(Biquad { b: [1.0, -2.0 * zero, 1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] });
    }
    if order % 2 == 1 {
        // The real prototype pole -1 maps to -warped for both kinds.
        let p = bilinear(Complex64::new(-warped, 0.0)).re;
        sections.push(Biquad { b: [1.0, -zero, 0.0], a: [1.0, -p, 0.0] });
    }

    // Unit gain at DC (lowpass) or Nyquist (highpass), spread over sections.
    let reference = Complex64::new(-zero, 0.0);
    for s in &mut sections {
        let g = s.response(reference).norm();
        for b in &mut s.b {
            *b /= g;
        }
    }
    Ok(sections)
}

fn sos_filter(sections: &[Biquad], x: &[f64], initial: Option<&[[f64; 2]]>) -> Vec<f64> {
    let mut y = x.to_vec();
    for (i, s) in sections.iter().enumerate() {
        let [mut z1, mut z2] = initial.map(|z| z[i]).unwrap_or([0.0, 0.0]);
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        for v in y.iter_mut() {
            let input = *v;
            let out = b0 * input + z1;
            z1 = b1 * input - a1 * out + z2;
            z2 = b2 * input - a2 * out;
            *v = out;
        }
    }
    y
}

/// Per-section initial states that put the cascade in steady state for a
/// constant input of `level`.
fn cascade_step_state(sections: &[Biquad], level: f64) -> Vec<[f64; 2]> {
    let mut scale = level;
    sections
        .iter()
        .map(|s| {
            let [z1, z2] = s.step_state();
            let state = [z1 * scale, z2 * scale];
            scale *= (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
            state
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd extension at both ends.
pub(crate) fn filtfilt(sections: &[Biquad], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = cascade_step_state(sections, ext[0]);
    let mut forward = sos_filter(sections, &ext, Some(&zi));
    forward.reverse();
    let zi = cascade_step_state(sections, forward[0]);
    let mut backward = sos_filter(sections, &forward, Some(&zi));
    backward.reverse();
    backward[pad..pad + n].to_vec()
}

/// Zero-phase 5th-order Butterworth band-pass between `lo` and `hi` Hz.
///
/// The low-pass half is omitted when `hi` equals the Nyquist frequency.
pub fn bandpass(wave: &Waveform, lo: f64, hi: f64) -> Result<Waveform> {
    bandpass_order(wave, lo, hi, 5)
}

pub(crate) fn bandpass_order(wave: &Waveform, lo: f64, hi: f64, order: usize) -> Result<Waveform> {
    let sr = wave.sample_rate as f64;
    let nyquist = sr / 2.0;
    if lo >= hi {
        return Err(Error::InvalidCutoff(format!("low cutoff {lo} Hz must be below high cutoff {hi} Hz")));
    }
    if lo <= 0.0 || hi > nyquist {
        return Err(Error::InvalidCutoff(format!("cutoffs {lo}..{hi} Hz must satisfy 0 < lo < hi <= {nyquist}")));
    }
    let mut sections = butterworth_sos(order, lo, sr, FilterKind::Highpass)?;
    if hi < nyquist {
        sections.extend(butterworth_sos(order, hi, sr, FilterKind::Lowpass)?);
    }
    // Long enough for the slowest pole to settle inside the padding.
    let padlen = (3 * (2 * sections.len() + 1)).max((3.0 * sr / lo).ceil() as usize);
    Ok(Waveform { samples: filtfilt(&sections, &wave.samples, padlen), sample_rate: wave.sample_rate })
}
