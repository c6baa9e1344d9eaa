//! Local masking and replicating (LMR): rectangular patches of a training
//! spectrogram are overwritten by the same patch from another sample in the
//! batch.

use log::warn;
use ndarray::{s, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmrConfig {
    /// Inclusive range of patches per augmented sample.
    pub n_patches: (usize, usize),
    /// Patch extent as a fraction of the time axis.
    pub time_fraction: (f64, f64),
    /// Patch extent as a fraction of the passband rows.
    pub freq_fraction: (f64, f64),
    /// Eligible frequency rows `[lo, hi)`; `None` means all rows.
    pub passband: Option<(usize, usize)>,
    pub probability: f64,
}

impl Default for LmrConfig {
    fn default() -> Self {
        Self { n_patches: (1, 3), time_fraction: (0.05, 0.15), freq_fraction: (0.05, 0.15), passband: None, probability: 0.5 }
    }
}

impl LmrConfig {
    pub fn disabled() -> Self {
        Self { probability: 0.0, ..Self::default() }
    }

    pub fn validate(&self, n_rows: Option<usize>) -> Result<()> {
        let frac_ok = |(a, b): (f64, f64)| a > 0.0 && a <= b && b <= 1.0;
        if !frac_ok(self.time_fraction) || !frac_ok(self.freq_fraction) {
            return Err(Error::InvalidInput("LMR patch fractions must satisfy 0 < min <= max <= 1".into()));
        }
        if self.n_patches.0 > self.n_patches.1 {
            return Err(Error::InvalidInput("LMR patch count range is inverted".into()));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidInput(format!("LMR probability {} outside [0, 1]", self.probability)));
        }
        if let Some((lo, hi)) = self.passband {
            if lo >= hi || n_rows.is_some_and(|n| hi > n) {
                return Err(Error::InvalidInput(format!("LMR passband rows {lo}..{hi} invalid")));
            }
        }
        Ok(())
    }
}

/// A rectangle `[t0, t1) x [f0, f1)` copied from `donor` into `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub target: usize,
    pub donor: usize,
    pub t0: usize,
    pub t1: usize,
    pub f0: usize,
    pub f1: usize,
}

/// Copies one patch in place.
pub fn apply_patch(batch: &mut Array3<f32>, patch: &Patch) {
    let src = batch.slice(s![patch.donor, patch.t0..patch.t1, patch.f0..patch.f1]).to_owned();
    batch.slice_mut(s![patch.target, patch.t0..patch.t1, patch.f0..patch.f1]).assign(&src);
}

fn extent(total: usize, (lo, hi): (f64, f64), rng: &mut impl Rng) -> usize {
    let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    ((frac * total as f64).round() as usize).clamp(1, total)
}

/// Draws the patches for one batch of shape `(batch, time, freq)`. Patches
/// for all samples are drawn against the unmodified batch.
pub fn draw_patches(shape: (usize, usize, usize), config: &LmrConfig, rng: &mut impl Rng) -> Result<Vec<Patch>> {
    let (b, t, f) = shape;
    config.validate(Some(f))?;
    if config.probability == 0.0 || t == 0 || f == 0 {
        return Ok(Vec::new());
    }
    if b < 2 {
        warn!("LMR needs at least two samples per batch; skipping");
        return Ok(Vec::new());
    }
    let (band_lo, band_hi) = config.passband.unwrap_or((0, f));
    let rows = band_hi - band_lo;
    let mut patches = Vec::new();
    for target in 0..b {
        if rng.random::<f64>() >= config.probability {
            continue;
        }
        let count = rng.random_range(config.n_patches.0..=config.n_patches.1);
        for _ in 0..count {
            let mut donor = rng.random_range(0..b - 1);
            if donor >= target {
                donor += 1;
            }
            let dt = extent(t, config.time_fraction, rng);
            let df = extent(rows, config.freq_fraction, rng);
            let t0 = rng.random_range(0..=t - dt);
            let f0 = band_lo + rng.random_range(0..=rows - df);
            patches.push(Patch { target, donor, t0, t1: t0 + dt, f0, f1: f0 + df });
        }
    }
    Ok(patches)
}

/// Applies LMR to a `(batch, time, freq)` stack. Returns the augmented batch
/// and the patches used.
pub fn lmr(batch: &Array3<f32>, config: &LmrConfig, rng: &mut impl Rng) -> Result<(Array3<f32>, Vec<Patch>)> {
    let patches = draw_patches(batch.dim(), config, rng)?;
    let mut out = batch.clone();
    // Donor content always comes from the original batch.
    for p in &patches {
        let src = batch.slice(s![p.donor, p.t0..p.t1, p.f0..p.f1]);
        out.slice_mut(s![p.target, p.t0..p.t1, p.f0..p.f1]).assign(&src);
    }
    Ok((out, patches))
}
