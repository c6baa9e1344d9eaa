use std::collections::BTreeMap;

use ndarray::{ArrayD, ArrayViewD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Float, Group, Params, Partition, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

#[derive(Debug, Clone)]
struct Moments<F> {
    m: ArrayD<F>,
    v: ArrayD<F>,
    step: u64,
}

/// Adam with decoupled weight decay. One state is kept per tensor name and
/// shared between training stages; tensors outside the selected groups are
/// skipped entirely (no decay, no moment update, no step count).
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    state: BTreeMap<String, Moments<F>>,
}

impl<F: Float> AdamW<F> {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, state: BTreeMap::new() }
    }

    pub fn step_count(&self, name: &str) -> u64 {
        self.state.get(name).map_or(0, |s| s.step)
    }

    pub fn step<P: Params<F>>(&mut self, model: &mut P, grads: &P, lr: f64, groups: &[Group]) -> Result<()> {
        let mut grad_views: Vec<(String, ArrayViewD<'_, F>)> = Vec::new();
        grads.visit("", &mut |name, slot, v| {
            if slot == Slot::Weight {
                grad_views.push((name.to_string(), v));
            }
        });
        let c = self.config;
        let (b1, b2) = (F::c(c.beta1), F::c(c.beta2));
        let eps = F::c(c.eps);
        let decay = F::c(1.0 - lr * c.weight_decay);
        let mut next = grad_views.iter();
        let mut error = None;
        model.visit_mut("", &mut |name, slot, mut p| {
            if slot != Slot::Weight || error.is_some() {
                return;
            }
            let Some((gname, g)) = next.next() else {
                error = Some(format!("no gradient for {name}"));
                return;
            };
            if gname != name || g.shape() != p.shape() {
                error = Some(format!("gradient {gname} does not match parameter {name}"));
                return;
            }
            let selected = Partition::of(name).is_some_and(|part| groups.contains(&part.group()));
            if !selected {
                return;
            }
            let s = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: ArrayD::zeros(p.shape()),
                v: ArrayD::zeros(p.shape()),
                step: 0,
            });
            s.step += 1;
            let bc1 = 1.0 - c.beta1.powi(s.step as i32);
            let bc2 = 1.0 - c.beta2.powi(s.step as i32);
            let step_size = F::c(lr / bc1);
            let bc2_sqrt = F::c(bc2.sqrt());
            Zip::from(&mut p).and(&mut s.m).and(&mut s.v).and(g).for_each(|w, m, v, &gr| {
                *w *= decay;
                *m = b1 * *m + (F::one() - b1) * gr;
                *v = b2 * *v + (F::one() - b2) * gr * gr;
                *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            });
        });
        match error {
            Some(e) => Err(Error::Shape(e)),
            None => Ok(()),
        }
    }
}
