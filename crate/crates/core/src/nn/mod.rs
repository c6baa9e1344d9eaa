//! Residual network building blocks with hand-written backward passes, and
//! the two-branch recognition model built from them.

mod checkpoint;
mod layers;
mod model;
mod resnet;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, ArrayViewD, ArrayViewMutD, Axis};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use layers::{
    global_avg_pool, max_pool, max_pool_backward, pool_out_size, relu, BatchNorm2d, BnCache, Conv2d, Linear,
    PoolCache, BN_EPS, BN_MOMENTUM,
};
pub use model::{AdvCache, AmtNet, AuxBranch, Embeddings, MtCache, NetConfig};
pub use resnet::{BasicBlock, BlockCache, BodyCache, ResNetBody, Stem, StemCache};

/// Scalar type the network runs in: `f32` for training, `f64` for checks.
pub trait Float:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn c(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Float for f32 {
    fn c(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    fn c(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Learnable tensor or running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Weight,
    Buffer,
}

/// Top-level parameter subtree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Shared,
    Main,
    Fc,
    Aux,
    Dis,
}

/// Coarse grouping used by the training stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Shared,
    Recognition,
    Auxiliary,
}

impl Partition {
    pub fn of(name: &str) -> Option<Self> {
        match name.split('.').next()? {
            "shared" => Some(Partition::Shared),
            "main" => Some(Partition::Main),
            "fc" => Some(Partition::Fc),
            "aux" => Some(Partition::Aux),
            "dis" => Some(Partition::Dis),
            _ => None,
        }
    }

    pub fn group(self) -> Group {
        match self {
            Partition::Shared => Group::Shared,
            Partition::Main | Partition::Fc => Group::Recognition,
            Partition::Aux | Partition::Dis => Group::Auxiliary,
        }
    }
}

/// Walks every tensor in a fixed order under dotted names.
pub trait Params<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewD<'a, F>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewMutD<'a, F>));
}

/// Number of learnable scalars.
pub fn param_count<F, P: Params<F> + ?Sized>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, slot, v| {
        if slot == Slot::Weight {
            n += v.len();
        }
    });
    n
}

/// SHA-256 over names and values of every tensor, buffers included.
pub fn checksum<F: Float, P: Params<F> + ?Sized>(p: &P) -> String {
    let mut h = Sha256::new();
    p.visit("", &mut |name, _, v| {
        h.update(name.as_bytes());
        for x in v.iter() {
            h.update(x.as_f64().to_le_bytes());
        }
    });
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-partition checksums, for checking which parts of a model changed.
pub fn partition_checksums<F: Float, P: Params<F> + ?Sized>(p: &P) -> Vec<(Partition, String)> {
    let mut hashers: Vec<(Partition, Sha256)> = Vec::new();
    p.visit("", &mut |name, _, v| {
        let part = Partition::of(name).expect("parameter names start with a partition");
        if hashers.last().is_none_or(|(q, _)| *q != part) {
            hashers.push((part, Sha256::new()));
        }
        let h = &mut hashers.last_mut().expect("just pushed").1;
        h.update(name.as_bytes());
        for x in v.iter() {
            h.update(x.as_f64().to_le_bytes());
        }
    });
    hashers.into_iter().map(|(p, h)| (p, h.finalize().iter().map(|b| format!("{b:02x}")).collect())).collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Float>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_distribution(rows in 1usize..4, v in prop::collection::vec(-50.0f64..50.0, 12)) {
            let cols = 12 / rows.max(1);
            let logits = Array2::from_shape_vec((rows, cols), v[..rows * cols].to_vec()).unwrap();
            let p = softmax_rows(&logits);
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            let shifted = softmax_rows(&logits.mapv(|x| x + 7.5));
            prop_assert!(p.iter().zip(&shifted).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn equal_logits_are_uniform() {
        let p = softmax_rows(&Array2::<f32>::from_elem((1, 12), 3.0));
        assert!(p.iter().all(|&x| (x - 1.0 / 12.0).abs() < 1e-7));
    }

    #[test]
    fn partitions_from_names() {
        assert_eq!(Partition::of("shared.conv.weight"), Some(Partition::Shared));
        assert_eq!(Partition::of("fc.bias").map(Partition::group), Some(Group::Recognition));
        assert_eq!(Partition::of("dis.weight").map(Partition::group), Some(Group::Auxiliary));
        assert_eq!(Partition::of("other"), None);
    }
}
