use log::warn;
use ndarray::Array2;
use rand::Rng;

use crate::nn::{softmax_rows, Float};

/// Probabilities are clamped here before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Mean cross-entropy over the rows whose label is present, with its
/// gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy<F> {
    pub loss: f64,
    pub grad: Array2<F>,
    /// Rows that contributed.
    pub count: usize,
    /// Rows whose argmax matched the label.
    pub correct: usize,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Float>(row: impl IntoIterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn cross_entropy_from_probs<F: Float>(probs: &Array2<F>, labels: &[Option<usize>]) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for (row, label) in probs.rows().into_iter().zip(labels) {
        if let Some(y) = *label {
            total -= row[y].as_f64().max(LOG_FLOOR).ln();
            n += 1;
        }
    }
    if n == 0 {
        (0.0, 0)
    } else {
        (total / n as f64, n)
    }
}

/// Softmax cross-entropy on logits. Rows labelled `None` are ignored.
pub fn softmax_cross_entropy<F: Float>(logits: &Array2<F>, labels: &[Option<usize>]) -> CrossEntropy<F> {
    assert_eq!(logits.nrows(), labels.len(), "one label per row");
    let probs = softmax_rows(logits);
    let (loss, count) = cross_entropy_from_probs(&probs, labels);
    let mut grad = Array2::zeros(logits.dim());
    let mut correct = 0;
    if count > 0 {
        let scale = F::c(1.0 / count as f64);
        for ((mut g, p), label) in grad.rows_mut().into_iter().zip(probs.rows()).zip(labels) {
            if let Some(y) = *label {
                g.assign(&p.mapv(|v| v * scale));
                g[y] -= scale;
                if argmax(p.iter().copied()) == y {
                    correct += 1;
                }
            }
        }
    }
    CrossEntropy { loss, grad, count, correct }
}

/// Multi-task loss: recognition cross-entropy over all rows plus auxiliary
/// cross-entropy over rows with an auxiliary label. Returns the two terms.
pub fn loss_mt<F: Float>(p: &Array2<F>, y: &[usize], q: &Array2<F>, y_aux: &[Option<usize>]) -> (f64, f64) {
    let recog: Vec<Option<usize>> = y.iter().copied().map(Some).collect();
    let (l_recog, _) = cross_entropy_from_probs(p, &recog);
    let (l_aux, n) = cross_entropy_from_probs(q, y_aux);
    if n == 0 {
        warn!("every sample in the batch lacks an auxiliary label; auxiliary loss is 0");
    }
    (l_recog, l_aux)
}

/// Adversarial loss: auxiliary cross-entropy against misleading labels.
pub fn loss_adv<F: Float>(q: &Array2<F>, misleading: &[usize]) -> f64 {
    let labels: Vec<Option<usize>> = misleading.iter().copied().map(Some).collect();
    cross_entropy_from_probs(q, &labels).0
}

/// Independent uniform draws over `0..n_aux`.
pub fn sample_misleading_labels(n_aux: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(n_aux >= 2, "need at least two auxiliary classes");
    (0..batch_size).map(|_| rng.random_range(0..n_aux)).collect()
}
