use std::f64::consts::PI;

/// Learning-rate multiplier for `epoch` (0-based): a linear ramp
/// `(epoch + 1) / warmup` during warm-up, then cosine annealing
/// `0.5 * (1 + cos(pi * t))` with `t = (epoch - warmup + 1) / (epochs - warmup + 1)`.
/// Always in `(0, 1]`.
pub fn lr_multiplier(epoch: usize, epochs: usize, warmup: usize) -> f64 {
    if epoch < warmup {
        return (epoch + 1) as f64 / warmup as f64;
    }
    let span = epochs.saturating_sub(warmup) + 1;
    let t = (epoch + 1 - warmup) as f64 / span as f64;
    0.5 * (1.0 + (PI * t.min(1.0)).cos())
}
