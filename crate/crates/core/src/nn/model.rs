use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{join, Linear};
use super::resnet::{BodyCache, ResNetBody, Stem, StemCache};
use super::{softmax_rows, Float, Params, Slot};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n_class: usize,
    /// Auxiliary classes; `None` builds the single-branch baseline.
    pub n_aux: Option<usize>,
    /// Multiplies every channel count (1.0 gives 64/128/256/512).
    pub width: f64,
    pub in_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { n_class: 12, n_aux: Some(2), width: 1.0, in_channels: 1 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_class < 2 {
            return Err(Error::InvalidInput(format!("n_class must be at least 2, got {}", self.n_class)));
        }
        if self.n_aux.is_some_and(|a| a < 2) {
            return Err(Error::InvalidInput("n_aux must be at least 2".into()));
        }
        if !(self.width > 0.0 && self.width.is_finite()) || self.in_channels == 0 {
            return Err(Error::InvalidInput("width must be positive and in_channels at least 1".into()));
        }
        Ok(())
    }

    pub fn widths(&self) -> [usize; 4] {
        [64, 128, 256, 512].map(|c| ((c as f64 * self.width).round() as usize).max(1))
    }

    pub fn embedding_dim(&self) -> usize {
        self.widths()[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxBranch<F> {
    pub body: ResNetBody<F>,
    pub dis: Linear<F>,
}

/// Shared stem feeding a recognition branch (`main` + `fc`) and an optional
/// auxiliary branch (`aux` + `dis`) of identical structure.
#[derive(Debug, Clone, PartialEq)]
pub struct AmtNet<F> {
    pub config: NetConfig,
    pub shared: Stem<F>,
    pub main: ResNetBody<F>,
    pub fc: Linear<F>,
    pub aux: Option<AuxBranch<F>>,
    /// Set when the auxiliary branch was removed from a trained model.
    pub pruned: bool,
}

/// Intermediate results of a multi-task forward pass.
#[derive(Debug, Clone)]
pub struct MtCache<F> {
    stem: StemCache<F>,
    main: BodyCache<F>,
    main_embed: Array2<F>,
    aux: Option<(BodyCache<F>, Array2<F>)>,
}

/// Intermediate results of an auxiliary-only forward pass.
#[derive(Debug, Clone)]
pub struct AdvCache<F> {
    stem: StemCache<F>,
    body: BodyCache<F>,
    embed: Array2<F>,
}

#[derive(Debug, Clone)]
pub struct Embeddings<F> {
    /// Shared-layer output `(N, C, T/4, F/4)`.
    pub shared: Array4<F>,
    pub main: Array2<F>,
    pub aux: Option<Array2<F>>,
}

impl<F: Float> AmtNet<F> {
    /// All-zero model with the right structure; BN scales are 1.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let emb = w[3];
        let aux = config.n_aux.map(|n| AuxBranch { body: ResNetBody::new(w[0], w), dis: Linear::new(emb, n) });
        Ok(Self {
            shared: Stem::new(config.in_channels, w[0]),
            main: ResNetBody::new(w[0], w),
            fc: Linear::new(emb, config.n_class),
            aux,
            pruned: false,
            config,
        })
    }

    /// Fan-in scaled normal weights (`sqrt(2 / fan_in)` for convolutions,
    /// `sqrt(1 / fan_in)` for linear layers), zero biases, unit BN scales.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.visit_mut("", &mut |name, slot, mut v| {
            if slot != Slot::Weight || !name.ends_with(".weight") {
                return;
            }
            let fan_in: usize = v.shape()[1..].iter().product();
            let gain = if v.ndim() == 4 { 2.0 } else { 1.0 };
            let std = (gain / fan_in as f64).sqrt();
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = F::c(std * z);
            }
        });
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.visit_mut("", &mut |_, _, mut v| v.fill(F::zero()));
        g
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    pub fn n_aux(&self) -> Option<usize> {
        self.aux.as_ref().map(|a| a.dis.outputs())
    }

    /// Removes the auxiliary branch; the recognition path is untouched.
    pub fn prune(&self) -> Self {
        Self { aux: None, pruned: true, ..self.clone() }
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (n, c, h, w) = x.dim();
        if n == 0 || c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected (N >= 1, {}, T, F) input, got {:?}",
                self.config.in_channels,
                x.dim()
            )));
        }
        // Every stage must keep at least one row and column.
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!("input {h}x{w} is too small")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("input contains non-finite values".into()));
        }
        Ok(())
    }

    fn aux_branch(&self) -> Result<&AuxBranch<F>> {
        self.aux.as_ref().ok_or_else(|| {
            Error::UnsupportedOperation(if self.pruned {
                "the auxiliary branch was pruned".into()
            } else {
                "this model has no auxiliary branch".into()
            })
        })
    }

    /// Shared representation in inference mode.
    pub fn shared_forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check_input(x)?;
        Ok(self.shared.forward_eval(x))
    }

    pub fn embeddings(&self, x: &Array4<F>) -> Result<Embeddings<F>> {
        let shared = self.shared_forward(x)?;
        let main = self.main.forward_eval(&shared);
        let aux = self.aux.as_ref().map(|a| a.body.forward_eval(&shared));
        Ok(Embeddings { shared, main, aux })
    }

    /// Recognition logits `(N, n_class)`.
    pub fn recognition_logits(&self, x: &Array4<F>) -> Result<Array2<F>> {
        let r = self.shared_forward(x)?;
        Ok(self.fc.forward(&self.main.forward_eval(&r)))
    }

    pub fn predict_recognition(&self, x: &Array4<F>) -> Result<Array2<F>> {
        Ok(softmax_rows(&self.recognition_logits(x)?))
    }

    pub fn predict_aux(&self, x: &Array4<F>) -> Result<Array2<F>> {
        let a = self.aux_branch()?;
        let r = self.shared_forward(x)?;
        Ok(softmax_rows(&a.dis.forward(&a.body.forward_eval(&r))))
    }

    /// Class and auxiliary probabilities.
    pub fn predict_heads(&self, x: &Array4<F>) -> Result<(Array2<F>, Array2<F>)> {
        let a = self.aux_branch()?;
        let r = self.shared_forward(x)?;
        let p = softmax_rows(&self.fc.forward(&self.main.forward_eval(&r)));
        let q = softmax_rows(&a.dis.forward(&a.body.forward_eval(&r)));
        Ok((p, q))
    }

    /// Names and `(C, H, W)` shapes of every stage for one input, from an
    /// actual inference pass.
    pub fn forward_trace(&self, x: &Array4<F>) -> Result<Vec<(String, (usize, usize, usize))>> {
        self.check_input(x)?;
        let chw = |a: &Array4<F>| (a.dim().1, a.dim().2, a.dim().3);
        let mut out = vec![("input".to_string(), chw(x))];
        let [act, pooled] = self.shared.stage_maps(x);
        out.push(("shared.conv".into(), chw(&act)));
        out.push(("shared.maxpool".into(), chw(&pooled)));
        let maps = self.main.stage_maps(&pooled);
        for (i, m) in maps.iter().enumerate() {
            out.push((format!("main.layer{}", i + 1), chw(m)));
        }
        let c = maps.last().map_or(0, |m| m.dim().1);
        out.push(("main.avgpool".into(), (c, 1, 1)));
        out.push(("fc".into(), (self.fc.outputs(), 1, 1)));
        if let Some(a) = &self.aux {
            let maps = a.body.stage_maps(&pooled);
            for (i, m) in maps.iter().enumerate() {
                out.push((format!("aux.layer{}", i + 1), chw(m)));
            }
            out.push(("aux.avgpool".into(), (c, 1, 1)));
            out.push(("dis".into(), (a.dis.outputs(), 1, 1)));
        }
        Ok(out)
    }

    /// Training-mode pass through the shared layer and both branches.
    /// Returns recognition logits, auxiliary logits and the cache.
    pub fn forward_mt(&mut self, x: &Array4<F>) -> Result<(Array2<F>, Option<Array2<F>>, MtCache<F>)> {
        self.check_input(x)?;
        let (r, stem) = self.shared.forward_train(x);
        let (main_embed, main) = self.main.forward_train(&r);
        let logits = self.fc.forward(&main_embed);
        let (aux_logits, aux) = match &mut self.aux {
            Some(a) => {
                let (e, c) = a.body.forward_train(&r);
                (Some(a.dis.forward(&e)), Some((c, e)))
            }
            None => (None, None),
        };
        Ok((logits, aux_logits, MtCache { stem, main, main_embed, aux }))
    }

    /// Accumulates parameter gradients into `grads` given logit gradients.
    pub fn backward_mt(
        &self,
        cache: &MtCache<F>,
        d_logits: &Array2<F>,
        d_aux: Option<&Array2<F>>,
        grads: &mut AmtNet<F>,
    ) -> Result<()> {
        let d_embed = self.fc.backward(&cache.main_embed, d_logits, &mut grads.fc);
        let mut dr = self.main.backward(&cache.main, &d_embed, &mut grads.main);
        match (d_aux, &self.aux, &cache.aux, &mut grads.aux) {
            (Some(d), Some(a), Some((bc, e)), Some(ga)) => {
                let de = a.dis.backward(e, d, &mut ga.dis);
                dr += &a.body.backward(bc, &de, &mut ga.body);
            }
            (None, _, _, _) => {}
            _ => return Err(Error::UnsupportedOperation("auxiliary gradient without an auxiliary branch".into())),
        }
        self.shared.backward(&cache.stem, &dr, &mut grads.shared);
        Ok(())
    }

    /// Training-mode pass through the shared layer and the auxiliary branch
    /// only; the recognition branch is not evaluated.
    pub fn forward_adv(&mut self, x: &Array4<F>) -> Result<(Array2<F>, AdvCache<F>)> {
        self.aux_branch()?;
        self.check_input(x)?;
        let (r, stem) = self.shared.forward_train(x);
        let a = self.aux.as_mut().expect("checked above");
        let (embed, body) = a.body.forward_train(&r);
        Ok((a.dis.forward(&embed), AdvCache { stem, body, embed }))
    }

    pub fn backward_adv(&self, cache: &AdvCache<F>, d_aux: &Array2<F>, grads: &mut AmtNet<F>) -> Result<()> {
        let a = self.aux_branch()?;
        let ga = grads
            .aux
            .as_mut()
            .ok_or_else(|| Error::UnsupportedOperation("gradient buffer has no auxiliary branch".into()))?;
        let de = a.dis.backward(&cache.embed, d_aux, &mut ga.dis);
        let dr = a.body.backward(&cache.body, &de, &mut ga.body);
        self.shared.backward(&cache.stem, &dr, &mut grads.shared);
        Ok(())
    }
}

impl<F: Float> Params<F> for AmtNet<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewD<'a, F>)) {
        self.shared.visit(&join(prefix, "shared"), f);
        self.main.visit(&join(prefix, "main"), f);
        self.fc.visit(&join(prefix, "fc"), f);
        if let Some(a) = &self.aux {
            a.body.visit(&join(prefix, "aux"), f);
            a.dis.visit(&join(prefix, "dis"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewMutD<'a, F>)) {
        self.shared.visit_mut(&join(prefix, "shared"), f);
        self.main.visit_mut(&join(prefix, "main"), f);
        self.fc.visit_mut(&join(prefix, "fc"), f);
        if let Some(a) = &mut self.aux {
            a.body.visit_mut(&join(prefix, "aux"), f);
            a.dis.visit_mut(&join(prefix, "dis"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{checksum, param_count, Partition};
    use ndarray::Array;
    use rand::Rng;

    fn tiny(n_aux: Option<usize>) -> NetConfig {
        NetConfig { n_class: 5, n_aux, width: 1.0 / 16.0, in_channels: 1 }
    }

    fn input(n: usize, t: usize, f: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((n, 1, t, f), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_branches_differ() {
        let a = AmtNet::<f32>::init(tiny(Some(3)), 9).unwrap();
        let b = AmtNet::<f32>::init(tiny(Some(3)), 9).unwrap();
        assert_eq!(checksum(&a), checksum(&b));
        let aux = &a.aux.as_ref().unwrap().body;
        assert_ne!(a.main.blocks[0].conv1.weight, aux.blocks[0].conv1.weight);
        assert_eq!(a.fc.outputs(), 5);
        assert_eq!(a.n_aux(), Some(3));
        assert!(a.fc.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn twelve_classes_three_aux() {
        let cfg = NetConfig { n_class: 12, n_aux: Some(3), width: 0.25, in_channels: 1 };
        let net = AmtNet::<f32>::zeros(cfg).unwrap();
        assert_eq!(net.fc.weight.dim(), (12, 128));
        assert_eq!(net.aux.unwrap().dis.weight.dim(), (3, 128));
    }

    #[test]
    fn desk_scale_trace() {
        let net = AmtNet::<f32>::init(tiny(Some(2)), 1).unwrap();
        let trace = net.forward_trace(&input(1, 600, 399, 2)).unwrap();
        let get = |n: &str| trace.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("shared.maxpool"), (4, 150, 100));
        assert_eq!(get("main.layer4"), (32, 19, 13));
        assert_eq!(get("aux.layer4"), (32, 19, 13));
        assert_eq!(get("fc"), (5, 1, 1));
    }

    #[test]
    fn zero_input_gives_zero_shared_output() {
        let net = AmtNet::<f32>::init(tiny(Some(2)), 1).unwrap();
        let r = net.shared_forward(&Array4::zeros((1, 1, 40, 30))).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = AmtNet::<f32>::init(tiny(Some(2)), 1).unwrap();
        let mut x = input(1, 20, 20, 0);
        x[[0, 0, 3, 3]] = f32::NAN;
        assert!(matches!(net.shared_forward(&x), Err(Error::Numerical(_))));
        assert!(matches!(net.shared_forward(&Array4::zeros((1, 2, 20, 20))), Err(Error::Shape(_))));
    }

    #[test]
    fn heads_are_distributions() {
        let net = AmtNet::<f32>::init(tiny(Some(3)), 4).unwrap();
        let (p, q) = net.predict_heads(&input(3, 32, 24, 5)).unwrap();
        assert_eq!((p.dim(), q.dim()), ((3, 5), (3, 3)));
        for row in p.rows().into_iter().chain(q.rows()) {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn pruning_halves_and_keeps_predictions() {
        let net = AmtNet::<f32>::init(NetConfig { width: 0.25, ..tiny(Some(3)) }, 3).unwrap();
        let pruned = net.prune();
        let ratio = param_count(&pruned) as f64 / param_count(&net) as f64;
        assert!(ratio <= 0.55, "ratio {ratio}");
        let x = input(2, 40, 30, 6);
        let a = net.predict_recognition(&x).unwrap();
        let b = pruned.predict_recognition(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(matches!(pruned.predict_heads(&x), Err(Error::UnsupportedOperation(_))));
        assert!(matches!(pruned.predict_aux(&x), Err(Error::UnsupportedOperation(_))));
    }

    #[test]
    fn partitions_cover_every_tensor_once() {
        let net = AmtNet::<f32>::init(tiny(Some(2)), 0).unwrap();
        let mut names = Vec::new();
        net.visit("", &mut |n, _, _| names.push(n.to_string()));
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.iter().all(|n| Partition::of(n).is_some()));
        for p in [Partition::Shared, Partition::Main, Partition::Fc, Partition::Aux, Partition::Dis] {
            assert!(names.iter().any(|n| Partition::of(n) == Some(p)));
        }
    }

    #[test]
    fn adversarial_pass_needs_aux() {
        let mut net = AmtNet::<f32>::init(tiny(None), 0).unwrap();
        assert!(matches!(net.forward_adv(&input(2, 20, 20, 0)), Err(Error::UnsupportedOperation(_))));
    }
}
