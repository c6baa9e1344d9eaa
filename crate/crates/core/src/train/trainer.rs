use std::collections::BTreeSet;

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{AdamW, AdamWConfig};
use super::schedule::lr_multiplier;
use super::step::{adv_step, mt_step, Batch};
use crate::augment::{lmr, LmrConfig};
use crate::dataset::{AuxFactor, AuxLabels};
use crate::error::{Error, Result};
use crate::nn::{AmtNet, NetConfig};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_mt: f64,
    pub lr_adv: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub factor: AuxFactor,
    /// Off gives the plain multi-task network.
    pub adversarial: bool,
    /// Weight of the auxiliary term in the multi-task loss. Zero with
    /// `adversarial = false` trains the single-branch baseline.
    pub aux_weight: f64,
    /// Run the adversarial pass before the multi-task pass in each epoch.
    pub iteration_reversal: bool,
    /// Fraction of training recordings held out for checkpoint selection.
    pub validation_fraction: f64,
    /// Channel multiplier of the network.
    pub width: f64,
    pub lmr: LmrConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 5,
            lr_mt: 5e-4,
            lr_adv: 1e-4,
            weight_decay: 1e-5,
            batch_size: 32,
            factor: AuxFactor::Range,
            adversarial: true,
            aux_weight: 1.0,
            iteration_reversal: true,
            validation_fraction: 0.1,
            width: 1.0,
            lmr: LmrConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be at least 1".to_string());
        }
        for (name, v) in [("lr_mt", self.lr_mt), ("lr_adv", self.lr_adv), ("weight_decay", self.weight_decay), ("aux_weight", self.aux_weight)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            out.push(format!("validation_fraction must be in [0, 1), got {}", self.validation_fraction));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            out.push(format!("width must be positive, got {}", self.width));
        }
        if let Err(e) = self.lmr.validate(None) {
            out.push(e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(p.join("; ")))
        }
    }

    /// True when the auxiliary branch is built at all.
    pub fn uses_aux(&self) -> bool {
        self.adversarial || self.aux_weight > 0.0
    }

    pub fn net_config(&self, n_class: usize) -> NetConfig {
        NetConfig {
            n_class,
            n_aux: self.uses_aux().then(|| self.factor.n_aux()),
            width: self.width,
            in_channels: 1,
        }
    }
}

/// A labelled feature map `(time, freq)` and the recording it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Array2<f32>,
    pub label: usize,
    pub aux: AuxLabels,
    pub recording_id: u32,
}

/// Stacks samples into `(N, 1, T, F)`.
pub fn stack(samples: &[&Sample]) -> Result<Array4<f32>> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("no samples to stack".into()))?;
    let (t, f) = first.features.dim();
    let mut x = Array4::zeros((samples.len(), 1, t, f));
    for (i, smp) in samples.iter().enumerate() {
        if smp.features.dim() != (t, f) {
            return Err(Error::Shape(format!("sample of shape {:?} among samples of ({t}, {f})", smp.features.dim())));
        }
        x.slice_mut(s![i, 0, .., ..]).assign(&smp.features);
    }
    Ok(x)
}

fn make_batch(samples: &[&Sample], factor: AuxFactor) -> Result<Batch<f32>> {
    Ok(Batch {
        x: stack(samples)?,
        labels: samples.iter().map(|s| s.label).collect(),
        aux: samples.iter().map(|s| s.aux.get(factor)).collect(),
    })
}

/// Eval-mode recognition and auxiliary accuracy over `samples`.
pub fn accuracy(model: &AmtNet<f32>, samples: &[&Sample], factor: AuxFactor, batch_size: usize) -> Result<(f64, Option<f64>)> {
    let mut correct = 0usize;
    let (mut aux_correct, mut aux_total) = (0usize, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = stack(chunk)?;
        let p = model.predict_recognition(&x)?;
        let q = if model.has_aux() { Some(model.predict_aux(&x)?) } else { None };
        for (i, smp) in chunk.iter().enumerate() {
            correct += usize::from(super::loss::argmax(p.row(i).iter().copied()) == smp.label);
            if let (Some(q), Some(a)) = (&q, smp.aux.get(factor)) {
                aux_total += 1;
                aux_correct += usize::from(super::loss::argmax(q.row(i).iter().copied()) == a);
            }
        }
    }
    let n = samples.len().max(1) as f64;
    let aux = (aux_total > 0).then(|| aux_correct as f64 / aux_total as f64);
    Ok((correct as f64 / n, aux))
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_mt: f64,
    pub lr_adv: f64,
    pub loss_recog: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_aux: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_adv: Option<f64>,
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_aux_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_aux_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
}

impl RunHistory {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.to_json_lines().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct TrainOutcome {
    /// Model with the best validation accuracy (the final model when there
    /// is no validation set).
    pub best: AmtNet<f32>,
    pub best_epoch: usize,
    pub last: AmtNet<f32>,
    pub history: RunHistory,
    pub validation_recordings: Vec<u32>,
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_LMR: u64 = 2;
const STREAM_MISLEADING: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Holds out whole recordings for validation.
pub fn validation_recordings(samples: &[Sample], fraction: f64, seed: u64) -> Vec<u32> {
    let ids: BTreeSet<u32> = samples.iter().map(|s| s.recording_id).collect();
    let mut ids: Vec<u32> = ids.into_iter().collect();
    if fraction <= 0.0 || ids.len() < 2 {
        return Vec::new();
    }
    ids.shuffle(&mut stream(seed, STREAM_VALIDATION));
    let n = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut held: Vec<u32> = ids[..n].to_vec();
    held.sort_unstable();
    held
}

#[allow(clippy::too_many_arguments)]
fn adversarial_pass(
    model: &mut AmtNet<f32>,
    opt: &mut AdamW<f32>,
    fit: &[&Sample],
    order: &mut [usize],
    config: &TrainConfig,
    lr: f64,
    shuffle_rng: &mut ChaCha8Rng,
    misleading_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    order.shuffle(shuffle_rng);
    let (mut total, mut n) = (0.0, 0usize);
    for idx in order.chunks(config.batch_size) {
        let chunk: Vec<&Sample> = idx.iter().map(|&i| fit[i]).collect();
        let batch = make_batch(&chunk, config.factor)?;
        let st = adv_step(model, opt, &batch, lr, misleading_rng)?;
        total += st.loss_adv * st.samples as f64;
        n += st.samples;
    }
    Ok(if n > 0 { total / n as f64 } else { 0.0 })
}

/// Trains a fresh model on `samples`. Each epoch runs the adversarial pass
/// then the multi-task pass (reversed when `iteration_reversal` is off); the
/// last epoch skips the adversarial pass. LMR is applied to multi-task
/// batches only.
pub fn train(config: &TrainConfig, n_class: usize, samples: &[Sample], seed: u64) -> Result<TrainOutcome> {
    train_with(config, n_class, samples, seed, &mut |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    config: &TrainConfig,
    n_class: usize,
    samples: &[Sample],
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.label >= n_class) {
        return Err(Error::InvalidInput(format!("label {} outside {n_class} classes", s.label)));
    }
    let held = validation_recordings(samples, config.validation_fraction, seed);
    let (val, fit): (Vec<&Sample>, Vec<&Sample>) = samples.iter().partition(|s| held.binary_search(&s.recording_id).is_ok());

    let mut model = AmtNet::<f32>::init(config.net_config(n_class), seed)?;
    let mut opt = AdamW::new(AdamWConfig { weight_decay: config.weight_decay, ..Default::default() });
    let mut shuffle_rng = stream(seed, STREAM_SHUFFLE);
    let mut lmr_rng = stream(seed, STREAM_LMR);
    let mut misleading_rng = stream(seed, STREAM_MISLEADING);
    let adversarial = config.adversarial && model.has_aux();

    let mut history = RunHistory::default();
    let mut best: Option<(f64, usize, AmtNet<f32>)> = None;
    let mut order: Vec<usize> = (0..fit.len()).collect();

    for epoch in 0..config.epochs {
        let mult = lr_multiplier(epoch, config.epochs, config.warmup_epochs);
        let (lr_mt, lr_adv) = (config.lr_mt * mult, config.lr_adv * mult);
        let run_adv = adversarial && epoch + 1 < config.epochs;

        let mut loss_adv = None;
        if run_adv && config.iteration_reversal {
            loss_adv = Some(adversarial_pass(&mut model, &mut opt, &fit, &mut order, config, lr_adv, &mut shuffle_rng, &mut misleading_rng)?);
        }

        order.shuffle(&mut shuffle_rng);
        let (mut recog_sum, mut aux_sum) = (0.0, 0.0);
        let (mut n, mut correct, mut aux_n, mut aux_correct) = (0usize, 0usize, 0usize, 0usize);
        for idx in order.chunks(config.batch_size) {
            let chunk: Vec<&Sample> = idx.iter().map(|&i| fit[i]).collect();
            let mut batch = make_batch(&chunk, config.factor)?;
            if config.lmr.probability > 0.0 {
                let (b, _, t, f) = batch.x.dim();
                let plain: Array3<f32> = batch.x.view().into_shape_with_order((b, t, f)).expect("contiguous").to_owned();
                let (mixed, _) = lmr(&plain, &config.lmr, &mut lmr_rng)?;
                batch.x = mixed.insert_axis(Axis(1));
            }
            let st = mt_step(&mut model, &mut opt, &batch, lr_mt, config.aux_weight)?;
            recog_sum += st.loss_recog * st.samples as f64;
            aux_sum += st.loss_aux.unwrap_or(0.0) * st.aux_samples as f64;
            n += st.samples;
            correct += st.correct;
            aux_n += st.aux_samples;
            aux_correct += st.aux_correct;
        }

        if run_adv && !config.iteration_reversal {
            loss_adv = Some(adversarial_pass(&mut model, &mut opt, &fit, &mut order, config, lr_adv, &mut shuffle_rng, &mut misleading_rng)?);
        }

        let (val_acc, val_aux_acc) = if val.is_empty() {
            (None, None)
        } else {
            let (a, x) = accuracy(&model, &val, config.factor, config.batch_size)?;
            (Some(a), x)
        };
        let record = EpochRecord {
            epoch,
            lr_mt,
            lr_adv,
            loss_recog: recog_sum / n.max(1) as f64,
            loss_aux: model.has_aux().then(|| if aux_n > 0 { aux_sum / aux_n as f64 } else { 0.0 }),
            loss_adv,
            train_acc: correct as f64 / n.max(1) as f64,
            train_aux_acc: (model.has_aux() && aux_n > 0).then(|| aux_correct as f64 / aux_n as f64),
            val_acc,
            val_aux_acc,
        };
        log::info!(
            "epoch {epoch}: recog {:.4} adv {} train acc {:.3} val acc {}",
            record.loss_recog,
            record.loss_adv.map_or("-".into(), |v| format!("{v:.4}")),
            record.train_acc,
            record.val_acc.map_or("-".into(), |v| format!("{v:.3}"))
        );
        on_epoch(&record);
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, model.clone()));
            }
        }
        history.epochs.push(record);
    }

    let last_epoch = config.epochs - 1;
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model.clone()),
    };
    Ok(TrainOutcome { best, best_epoch, last: model, history, validation_recordings: held })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Two classes distinguished by which half of the frequency axis is hot.
    fn toy(n_rec: u32, per_rec: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut out = Vec::new();
        for rec in 0..n_rec {
            let label = (rec % 2) as usize;
            for _ in 0..per_rec {
                let features = Array2::from_shape_fn((16, 12), |(_, f)| {
                    let hot = if (f < 6) == (label == 0) { 1.0 } else { 0.0 };
                    hot + 0.3 * rng.random::<f32>()
                });
                let mut aux = AuxLabels::default();
                aux.set(AuxFactor::Wind, Some(rng.random_range(0..3)));
                out.push(Sample { features, label, aux, recording_id: rec + 1 });
            }
        }
        out
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            warmup_epochs: 1,
            lr_mt: 3e-3,
            lr_adv: 6e-4,
            batch_size: 4,
            factor: AuxFactor::Wind,
            width: 1.0 / 16.0,
            validation_fraction: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn single_epoch_has_no_adversarial_pass() {
        let cfg = TrainConfig { epochs: 1, ..quick() };
        let out = train(&cfg, 2, &toy(4, 3), 1).unwrap();
        assert_eq!(out.history.epochs.len(), 1);
        assert!(out.history.epochs[0].loss_adv.is_none());
    }

    #[test]
    fn last_epoch_skips_adversarial_pass() {
        let out = train(&quick(), 2, &toy(10, 2), 1).unwrap();
        let adv: Vec<bool> = out.history.epochs.iter().map(|e| e.loss_adv.is_some()).collect();
        assert_eq!(adv, vec![true, true, false]);
        assert_eq!(out.validation_recordings.len(), 2);
        assert!(out.history.epochs.iter().all(|e| e.val_acc.is_some()));
    }

    #[test]
    fn plain_multitask_logs_no_adversarial_loss() {
        let cfg = TrainConfig { adversarial: false, ..quick() };
        let out = train(&cfg, 2, &toy(6, 2), 2).unwrap();
        assert!(out.history.epochs.iter().all(|e| e.loss_adv.is_none() && e.loss_aux.is_some()));
        let base = TrainConfig { adversarial: false, aux_weight: 0.0, ..quick() };
        let out = train(&base, 2, &toy(6, 2), 2).unwrap();
        assert!(out.last.aux.is_none());
        assert!(!out.history.to_json_lines().contains("loss_aux"));
    }

    #[test]
    fn identical_runs_agree() {
        let data = toy(6, 2);
        let a = train(&quick(), 2, &data, 7).unwrap();
        let b = train(&quick(), 2, &data, 7).unwrap();
        assert_eq!(a.history.checksum(), b.history.checksum());
        assert_eq!(crate::nn::checksum(&a.last), crate::nn::checksum(&b.last));
        let c = train(&quick(), 2, &data, 8).unwrap();
        assert_ne!(a.history.checksum(), c.history.checksum());
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let cfg = TrainConfig { epochs: 15, validation_fraction: 0.0, ..quick() };
        let data = toy(8, 4);
        let out = train(&cfg, 2, &data, 3).unwrap();
        let refs: Vec<&Sample> = data.iter().collect();
        let (acc, _) = accuracy(&out.best, &refs, AuxFactor::Wind, 8).unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
        assert_eq!(out.best_epoch, 14);
    }

    #[test]
    fn invalid_configs_list_every_problem() {
        let cfg = TrainConfig { epochs: 0, batch_size: 0, lr_mt: -1.0, ..Default::default() };
        assert_eq!(cfg.problems().len(), 3);
        assert!(train(&quick(), 2, &[], 0).is_err());
    }
}
