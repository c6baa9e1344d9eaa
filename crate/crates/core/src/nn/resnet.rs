use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD, Zip};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, join, max_pool, max_pool_backward, pool_out_size, relu, relu_backward,
    BatchNorm2d, BnCache, Conv2d, PoolCache,
};
use super::{Float, Params, Slot};

/// conv3x3-BN-ReLU-conv3x3-BN plus a skip connection, then ReLU. The skip is
/// a strided 1x1 conv + BN when the width or resolution changes.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm2d<F>,
    pub conv2: Conv2d<F>,
    pub bn2: BatchNorm2d<F>,
    pub downsample: Option<(Conv2d<F>, BatchNorm2d<F>)>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    x: Array4<F>,
    bn1: BnCache<F>,
    h: Array4<F>,
    bn2: BnCache<F>,
    down: Option<BnCache<F>>,
    out: Array4<F>,
}

fn add_relu<F: Float>(mut a: Array4<F>, b: &Array4<F>) -> Array4<F> {
    Zip::from(&mut a).and(b).for_each(|x, &y| {
        let s = *x + y;
        *x = if s > F::zero() { s } else { F::zero() };
    });
    a
}

impl<F: Float> BasicBlock<F> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        let downsample = (stride != 1 || in_channels != out_channels)
            .then(|| (Conv2d::new(in_channels, out_channels, 1, stride, 0), BatchNorm2d::new(out_channels)));
        Self {
            conv1: Conv2d::new(in_channels, out_channels, 3, stride, 1),
            bn1: BatchNorm2d::new(out_channels),
            conv2: Conv2d::new(out_channels, out_channels, 3, 1, 1),
            bn2: BatchNorm2d::new(out_channels),
            downsample,
        }
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let h = relu(&self.bn1.forward_eval(&self.conv1.forward(x)));
        let main = self.bn2.forward_eval(&self.conv2.forward(&h));
        match &self.downsample {
            Some((conv, bn)) => add_relu(main, &bn.forward_eval(&conv.forward(x))),
            None => add_relu(main, x),
        }
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BlockCache<F>) {
        let (a, bn1) = self.bn1.forward_train(&self.conv1.forward(x));
        let h = relu(&a);
        let (main, bn2) = self.bn2.forward_train(&self.conv2.forward(&h));
        let (out, down) = match &mut self.downsample {
            Some((conv, bn)) => {
                let (skip, cache) = bn.forward_train(&conv.forward(x));
                (add_relu(main, &skip), Some(cache))
            }
            None => (add_relu(main, x), None),
        };
        (out.clone(), BlockCache { x: x.clone(), bn1, h, bn2, down, out })
    }

    pub fn backward(&self, cache: &BlockCache<F>, dy: &Array4<F>, grads: &mut BasicBlock<F>) -> Array4<F> {
        let dpre = relu_backward(&cache.out, dy);
        let dc = self.bn2.backward(&cache.bn2, &dpre, &mut grads.bn2);
        let dh = self.conv2.backward(&cache.h, &dc, &mut grads.conv2.weight);
        let da = relu_backward(&cache.h, &dh);
        let db = self.bn1.backward(&cache.bn1, &da, &mut grads.bn1);
        let mut dx = self.conv1.backward(&cache.x, &db, &mut grads.conv1.weight);
        match (&self.downsample, &cache.down, &mut grads.downsample) {
            (Some((conv, bn)), Some(bc), Some((gconv, gbn))) => {
                let ds = bn.backward(bc, &dpre, gbn);
                dx += &conv.backward(&cache.x, &ds, &mut gconv.weight);
            }
            _ => dx += &dpre,
        }
        dx
    }
}

impl<F: Float> Params<F> for BasicBlock<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewD<'a, F>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.downsample {
            conv.visit(&join(prefix, "downsample.conv"), f);
            bn.visit(&join(prefix, "downsample.bn"), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewMutD<'a, F>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_mut(&join(prefix, "downsample.conv"), f);
            bn.visit_mut(&join(prefix, "downsample.bn"), f);
        }
    }
}

/// Four stages of two basic blocks followed by global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetBody<F> {
    pub blocks: Vec<BasicBlock<F>>,
}

#[derive(Debug, Clone)]
pub struct BodyCache<F> {
    blocks: Vec<BlockCache<F>>,
    pre_pool: (usize, usize, usize, usize),
}

impl<F: Float> ResNetBody<F> {
    pub fn new(in_channels: usize, widths: [usize; 4]) -> Self {
        let mut blocks = Vec::with_capacity(8);
        let mut c = in_channels;
        for (stage, &w) in widths.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(c, w, stride));
            blocks.push(BasicBlock::new(w, w, 1));
            c = w;
        }
        Self { blocks }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.conv2.out_channels())
    }

    /// Output of every stage (after its second block).
    pub fn stage_maps(&self, r: &Array4<F>) -> Vec<Array4<F>> {
        let mut x = r.clone();
        let mut out = Vec::with_capacity(4);
        for (i, b) in self.blocks.iter().enumerate() {
            x = b.forward_eval(&x);
            if i % 2 == 1 {
                out.push(x.clone());
            }
        }
        out
    }

    pub fn forward_eval(&self, r: &Array4<F>) -> Array2<F> {
        let mut x = r.clone();
        for b in &self.blocks {
            x = b.forward_eval(&x);
        }
        global_avg_pool(&x)
    }

    pub fn forward_train(&mut self, r: &Array4<F>) -> (Array2<F>, BodyCache<F>) {
        let mut x = r.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (y, c) = b.forward_train(&x);
            caches.push(c);
            x = y;
        }
        (global_avg_pool(&x), BodyCache { blocks: caches, pre_pool: x.dim() })
    }

    pub fn backward(&self, cache: &BodyCache<F>, d_embed: &Array2<F>, grads: &mut ResNetBody<F>) -> Array4<F> {
        let mut d = global_avg_pool_backward(d_embed, cache.pre_pool);
        for ((b, c), g) in self.blocks.iter().zip(&cache.blocks).zip(&mut grads.blocks).rev() {
            d = b.backward(c, &d, g);
        }
        d
    }
}

fn block_prefix(prefix: &str, i: usize) -> String {
    join(prefix, &format!("layer{}.{}", i / 2 + 1, i % 2))
}

impl<F: Float> Params<F> for ResNetBody<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewD<'a, F>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&block_prefix(prefix, i), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewMutD<'a, F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&block_prefix(prefix, i), f);
        }
    }
}

/// Shared front end: 7x7 stride-2 conv, BN, ReLU, 3x3 stride-2 max pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem<F> {
    pub conv: Conv2d<F>,
    pub bn: BatchNorm2d<F>,
}

#[derive(Debug, Clone)]
pub struct StemCache<F> {
    x: Array4<F>,
    bn: BnCache<F>,
    act: Array4<F>,
    pool: PoolCache,
}

impl<F: Float> Stem<F> {
    pub fn new(in_channels: usize, width: usize) -> Self {
        Self { conv: Conv2d::new(in_channels, width, 7, 2, 3), bn: BatchNorm2d::new(width) }
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let (h1, w1) = self.conv.out_size(h, w);
        (self.conv.out_channels(), pool_out_size(h1), pool_out_size(w1))
    }

    /// Output after the convolution, after BN+ReLU, and after pooling.
    pub fn stage_maps(&self, x: &Array4<F>) -> [Array4<F>; 2] {
        let a = relu(&self.bn.forward_eval(&self.conv.forward(x)));
        let p = max_pool(&a).0;
        [a, p]
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        max_pool(&relu(&self.bn.forward_eval(&self.conv.forward(x)))).0
    }

    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, StemCache<F>) {
        let (a, bn) = self.bn.forward_train(&self.conv.forward(x));
        let act = relu(&a);
        let (out, pool) = max_pool(&act);
        (out, StemCache { x: x.clone(), bn, act, pool })
    }

    pub fn backward(&self, cache: &StemCache<F>, dy: &Array4<F>, grads: &mut Stem<F>) -> Array4<F> {
        let d = max_pool_backward(&cache.pool, dy);
        let d = relu_backward(&cache.act, &d);
        let d = self.bn.backward(&cache.bn, &d, &mut grads.bn);
        self.conv.backward(&cache.x, &d, &mut grads.conv.weight)
    }
}

impl<F: Float> Params<F> for Stem<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewD<'a, F>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ArrayViewMutD<'a, F>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_conv_block_is_relu_of_input() {
        let block = BasicBlock::<f64>::new(4, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_fn((2, 4, 5, 6), |_| rng.random_range(-1.0..1.0));
        let y = block.forward_eval(&x);
        assert_eq!(y, relu(&x));
    }

    #[test]
    fn body_stage_widths_and_strides() {
        let body = ResNetBody::<f32>::new(4, [4, 8, 16, 32]);
        assert_eq!(body.blocks.len(), 8);
        assert!(body.blocks[0].downsample.is_none());
        assert!(body.blocks[2].downsample.is_some());
        assert_eq!(body.out_channels(), 32);
        let maps = body.stage_maps(&Array4::zeros((1, 4, 30, 10)));
        let shapes: Vec<_> = maps.iter().map(|m| m.dim()).collect();
        assert_eq!(shapes, vec![(1, 4, 30, 10), (1, 8, 15, 5), (1, 16, 8, 3), (1, 32, 4, 2)]);
        assert_eq!(body.forward_eval(&Array4::zeros((3, 4, 30, 10))).dim(), (3, 32));
    }

    #[test]
    fn param_names_follow_layer_tree() {
        let body = ResNetBody::<f32>::new(4, [4, 8, 16, 32]);
        let mut names = Vec::new();
        body.visit("main", &mut |n, _, _| names.push(n.to_string()));
        assert_eq!(names[0], "main.layer1.0.conv1.weight");
        assert!(names.contains(&"main.layer2.0.downsample.conv.weight".to_string()));
        assert!(names.contains(&"main.layer4.1.bn2.running_var".to_string()));
    }
}
