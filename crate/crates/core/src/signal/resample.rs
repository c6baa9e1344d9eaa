use std::f64::consts::PI;
use std::sync::OnceLock;

use super::Waveform;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: usize = 24;
const TABLE_PRECISION: usize = 512;
const ROLLOFF: f64 = 0.945;
const KAISER_BETA: f64 = 9.0;

/// Half of a Kaiser-windowed sinc, sampled `TABLE_PRECISION` times per zero
/// crossing. Index 0 is the kernel center.
fn kernel_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = ZERO_CROSSINGS * TABLE_PRECISION + 1;
        let denom = bessel_i0(KAISER_BETA);
        (0..n)
            .map(|i| {
                let x = i as f64 / TABLE_PRECISION as f64;
                let r = x / ZERO_CROSSINGS as f64;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
                let t = ROLLOFF * x;
                let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
                ROLLOFF * sinc * window
            })
            .collect()
    })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

#[inline]
fn interp(table: &[f64], pos: f64) -> f64 {
    let idx = pos as usize;
    if idx + 1 >= table.len() {
        return 0.0;
    }
    let frac = pos - idx as f64;
    table[idx] + frac * (table[idx + 1] - table[idx])
}

/// Band-limited sinc resampling to `target_rate`.
///
/// Interpolates from a tabulated windowed-sinc kernel whose cutoff follows the
/// lower of the two Nyquist frequencies. Same-rate input is returned as-is.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty waveform".into()));
    }
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if wave.sample_rate == target_rate {
        return Ok(wave.clone());
    }

    let table = kernel_table();
    let in_rate = wave.sample_rate as f64;
    let ratio = target_rate as f64 / in_rate;
    let scale = ratio.min(1.0);
    let n_in = wave.samples.len();
    let n_out = ((n_in as u64 * target_rate as u64).div_ceil(wave.sample_rate as u64)) as usize;
    let step = TABLE_PRECISION as f64 * scale;
    // Kernel reach in input samples.
    let reach = (ZERO_CROSSINGS as f64 / scale).ceil() as usize;
    let x = &wave.samples;

    let samples = (0..n_out)
        .map(|n| {
            // Exact rational position avoids drift over long recordings.
            let num = n as u64 * wave.sample_rate as u64;
            let center = (num / target_rate as u64) as usize;
            let frac = (num % target_rate as u64) as f64 / target_rate as f64;
            let mut acc = 0.0;
            // Left wing: samples center, center-1, ...
            let left = reach.min(center);
            for i in 0..=left {
                let pos = (frac + i as f64) * step;
                acc += x[center - i] * interp(table, pos);
            }
            // Right wing: samples center+1, ...
            for i in 0..reach {
                let j = center + 1 + i;
                if j >= n_in {
                    break;
                }
                let pos = (1.0 - frac + i as f64) * step;
                acc += x[j] * interp(table, pos);
            }
            acc * scale
        })
        .collect();

    Ok(Waveform { samples, sample_rate: target_rate })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (seconds * rate as f64).round() as usize;
        let samples = (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn identity_when_rates_match() {
        let w = sine(440.0, 44_100, 0.1);
        assert_eq!(resample(&w, 44_100).unwrap(), w);
    }

    #[test]
    fn empty_input_rejected() {
        let w = Waveform { samples: vec![], sample_rate: 100 };
        assert!(matches!(resample(&w, 50), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn thirty_seconds_of_shipsear_rate() {
        let w = Waveform::new(vec![0.0; 52_734 * 30], 52_734).unwrap();
        let out = resample(&w, 44_100).unwrap();
        assert_eq!(out.len(), 1_323_000);
        assert_eq!(out.sample_rate, 44_100);
    }

    #[test]
    fn sinusoid_amplitude_preserved_in_passband() {
        let w = sine(1000.0, 52_734, 0.5);
        let out = resample(&w, 44_100).unwrap();
        let expected = sine(1000.0, 44_100, 0.5);
        // Compare away from the edges where the kernel is truncated.
        let n = out.len().min(expected.len());
        let max_err = (1000..n - 1000).map(|i| (out.samples[i] - expected.samples[i]).abs()).fold(0.0, f64::max);
        assert!(max_err < 2e-3, "max error {max_err}");
    }

    #[test]
    fn content_above_target_nyquist_is_removed() {
        // 24 kHz is above the 22.05 kHz Nyquist of the target rate.
        let w = sine(24_000.0, 52_734, 0.5);
        let out = resample(&w, 44_100).unwrap();
        let rms = (out.samples[2000..out.len() - 2000].iter().map(|s| s * s).sum::<f64>()
            / (out.len() - 4000) as f64)
            .sqrt();
        assert!(rms < 0.01, "alias rms {rms}");
    }
}
