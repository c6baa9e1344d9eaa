use ndarray::Array4;
use rand::Rng;

use super::loss::{sample_misleading_labels, softmax_cross_entropy};
use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::nn::{AmtNet, Float, Group};

/// One mini-batch: inputs `(N, C, T, F)`, recognition labels and auxiliary
/// labels for the active factor (`None` means excluded from auxiliary losses).
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub x: Array4<F>,
    pub labels: Vec<usize>,
    pub aux: Vec<Option<usize>>,
}

impl<F> Batch<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()>
    where
        F: Clone,
    {
        let n = self.x.dim().0;
        if n == 0 || self.labels.len() != n || self.aux.len() != n {
            return Err(Error::Shape(format!(
                "batch of {n} inputs with {} labels and {} auxiliary labels",
                self.labels.len(),
                self.aux.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MtStats {
    pub loss_recog: f64,
    /// `None` when the model has no auxiliary branch.
    pub loss_aux: Option<f64>,
    pub samples: usize,
    pub correct: usize,
    pub aux_samples: usize,
    pub aux_correct: usize,
}

impl MtStats {
    /// Recognition loss plus the weighted auxiliary loss.
    pub fn total(&self, aux_weight: f64) -> f64 {
        self.loss_recog + aux_weight * self.loss_aux.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AdvStats {
    pub loss_adv: f64,
    pub samples: usize,
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("{what} is {value}")))
    }
}

/// Training-mode forward and backward pass of the multi-task objective.
/// Batch-norm running statistics are updated as a side effect.
pub fn mt_gradients<F: Float>(model: &mut AmtNet<F>, batch: &Batch<F>, aux_weight: f64) -> Result<(MtStats, AmtNet<F>)> {
    batch.check()?;
    let (logits, aux_logits, cache) = model.forward_mt(&batch.x)?;
    let recog_labels: Vec<Option<usize>> = batch.labels.iter().copied().map(Some).collect();
    let recog = softmax_cross_entropy(&logits, &recog_labels);
    let mut stats = MtStats {
        loss_recog: finite(recog.loss, "recognition loss")?,
        samples: batch.len(),
        correct: recog.correct,
        ..Default::default()
    };
    let d_aux = match &aux_logits {
        Some(q) => {
            let aux = softmax_cross_entropy(q, &batch.aux);
            if aux.count == 0 {
                log::warn!("every sample in the batch lacks an auxiliary label; auxiliary loss is 0");
            }
            stats.loss_aux = Some(finite(aux.loss, "auxiliary loss")?);
            stats.aux_samples = aux.count;
            stats.aux_correct = aux.correct;
            Some(aux.grad.mapv(|g| g * F::c(aux_weight)))
        }
        None => None,
    };
    let mut grads = model.zeros_like();
    model.backward_mt(&cache, &recog.grad, d_aux.as_ref(), &mut grads)?;
    Ok((stats, grads))
}

/// Training-mode forward and backward pass of the adversarial objective
/// against the given misleading labels. Rows without an auxiliary label are
/// masked out. The recognition branch is not evaluated.
pub fn adv_gradients<F: Float>(
    model: &mut AmtNet<F>,
    batch: &Batch<F>,
    misleading: &[usize],
) -> Result<(AdvStats, AmtNet<F>)> {
    batch.check()?;
    if misleading.len() != batch.len() {
        return Err(Error::Shape(format!("{} misleading labels for {} samples", misleading.len(), batch.len())));
    }
    let (q, cache) = model.forward_adv(&batch.x)?;
    let targets: Vec<Option<usize>> = batch.aux.iter().zip(misleading).map(|(a, &m)| a.map(|_| m)).collect();
    let adv = softmax_cross_entropy(&q, &targets);
    if adv.count == 0 {
        log::warn!("every sample in the batch lacks an auxiliary label; adversarial loss is 0");
    }
    let stats = AdvStats { loss_adv: finite(adv.loss, "adversarial loss")?, samples: adv.count };
    let mut grads = model.zeros_like();
    model.backward_adv(&cache, &adv.grad, &mut grads)?;
    Ok((stats, grads))
}

/// One multi-task update of all partitions.
pub fn mt_step<F: Float>(
    model: &mut AmtNet<F>,
    opt: &mut AdamW<F>,
    batch: &Batch<F>,
    lr: f64,
    aux_weight: f64,
) -> Result<MtStats> {
    let (stats, grads) = mt_gradients(model, batch, aux_weight)?;
    opt.step(model, &grads, lr, &[Group::Shared, Group::Recognition, Group::Auxiliary])?;
    Ok(stats)
}

/// One adversarial update: misleading labels are drawn fresh for the batch
/// and only the shared and auxiliary partitions move.
pub fn adv_step<F: Float>(
    model: &mut AmtNet<F>,
    opt: &mut AdamW<F>,
    batch: &Batch<F>,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<AdvStats> {
    let n_aux = model
        .n_aux()
        .filter(|_| model.has_aux())
        .ok_or_else(|| Error::UnsupportedOperation("adversarial step needs an auxiliary branch".into()))?;
    let misleading = sample_misleading_labels(n_aux, batch.len(), rng);
    let (stats, grads) = adv_gradients(model, batch, &misleading)?;
    opt.step(model, &grads, lr, &[Group::Shared, Group::Auxiliary])?;
    Ok(stats)
}
