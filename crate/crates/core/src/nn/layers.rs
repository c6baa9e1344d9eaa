use ndarray::{s, Array1, Array2, Array4, ArrayView2, ArrayView3, Axis, Zip};
use rayon::prelude::*;

use super::{Float, Params, Slot};

/// 2-D convolution without bias, weight layout `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub weight: Array4<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Float> Conv2d<F> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { weight: Array4::zeros((out_channels, in_channels, kernel, kernel)), stride, padding }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        ((h + 2 * self.padding - k) / self.stride + 1, (w + 2 * self.padding - k) / self.stride + 1)
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let (o, i, k, _) = self.weight.dim();
        self.weight.view().into_shape_with_order((o, i * k * k)).expect("contiguous weight")
    }

    fn geometry(&self, x: &Array4<F>) -> Geometry {
        let (_, c, h, w) = x.dim();
        let (ho, wo) = self.out_size(h, w);
        Geometry { c, h, w, k: self.kernel(), stride: self.stride, pad: self.padding, ho, wo }
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channels");
        assert!(h + 2 * self.padding >= self.kernel() && w + 2 * self.padding >= self.kernel(), "conv input too small");
        let g = self.geometry(x);
        let wm = self.weight_matrix();
        let x = x.as_standard_layout();
        let mut out = Array4::zeros((n, self.out_channels(), g.ho, g.wo));
        Zip::from(out.outer_iter_mut()).and(x.outer_iter()).par_for_each(|mut o, xi| {
            let cols = im2col(xi, &g);
            let y = wm.dot(&cols);
            o.assign(&y.into_shape_with_order((self.out_channels(), g.ho, g.wo)).expect("conv output shape"));
        });
        out
    }

    /// Returns the input gradient and adds the weight gradient to `dw`.
    pub fn backward(&self, x: &Array4<F>, dy: &Array4<F>, dw: &mut Array4<F>) -> Array4<F> {
        let g = self.geometry(x);
        let wm = self.weight_matrix();
        let wt = wm.t();
        let (o, i, k, _) = self.weight.dim();
        let x = x.as_standard_layout();
        let dy = dy.as_standard_layout();
        let per_sample: Vec<(Array2<F>, Array2<F>)> = (0..x.dim().0)
            .into_par_iter()
            .map(|n| {
                let cols = im2col(x.index_axis(Axis(0), n), &g);
                let dyn_ = dy.index_axis(Axis(0), n);
                let dyn_ = dyn_.into_shape_with_order((o, g.ho * g.wo)).expect("contiguous grad");
                (dyn_.dot(&cols.t()), wt.dot(&dyn_))
            })
            .collect();
        let mut dx = Array4::zeros(x.dim());
        let mut dwm = dw.view_mut().into_shape_with_order((o, i * k * k)).expect("contiguous weight grad");
        // Fixed summation order keeps results independent of thread count.
        for (n, (dwn, dcols)) in per_sample.into_iter().enumerate() {
            dwm += &dwn;
            col2im(&dcols, dx.index_axis_mut(Axis(0), n).as_slice_mut().expect("contiguous"), &g);
        }
        dx
    }
}

impl<F: Float> Params<F> for Conv2d<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewD<'a, F>)) {
        f(&join(prefix, "weight"), Slot::Weight, self.weight.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewMutD<'a, F>)) {
        f(&join(prefix, "weight"), Slot::Weight, self.weight.view_mut().into_dyn());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Output columns `ox` whose input column `ox * stride + kj - pad` is in bounds.
    fn ox_range(&self, kj: usize) -> (usize, usize) {
        let lo = if kj >= self.pad { 0 } else { (self.pad - kj).div_ceil(self.stride) };
        let hi = if self.w + self.pad > kj { ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn iy(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }
}

fn im2col<F: Float>(x: ArrayView3<'_, F>, g: &Geometry) -> Array2<F> {
    let x = x.as_slice().expect("standard layout input");
    let (k, p) = (g.k, g.ho * g.wo);
    let mut cols = vec![F::zero(); g.c * k * k * p];
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.ox_range(kj);
                for oy in 0..g.ho {
                    let Some(iy) = g.iy(oy, ki) else { continue };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let d = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        d[ox] = src[ox * g.stride + kj - g.pad];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((g.c * k * k, p), cols).expect("im2col shape")
}

fn col2im<F: Float>(cols: &Array2<F>, dx: &mut [F], g: &Geometry) {
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout");
    let (k, p) = (g.k, g.ho * g.wo);
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.ox_range(kj);
                for oy in 0..g.ho {
                    let Some(iy) = g.iy(oy, ki) else { continue };
                    let d = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        d[ox * g.stride + kj - g.pad] += s[ox];
                    }
                }
            }
        }
    }
}

/// Batch normalization over `(N, H, W)` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct BnCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
    /// Batch statistics were used (training mode).
    batch_stats: bool,
}

impl<F: Float> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    fn normalize(&self, x: &Array4<F>, mean: &Array1<F>, inv_std: &Array1<F>) -> (Array4<F>, Array4<F>) {
        let mut xhat = x.to_owned();
        for (c, mut plane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (mean[c], inv_std[c]);
            plane.mapv_inplace(|v| (v - m) * s);
        }
        let mut y = xhat.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma[c], self.beta[c]);
            plane.mapv_inplace(|v| v * g + b);
        }
        (y, xhat)
    }

    /// Training mode: normalizes with batch statistics and updates the
    /// running estimates (unbiased variance).
    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let (n, c, h, w) = x.dim();
        let m = n * h * w;
        let mf = F::c(m as f64);
        let eps = F::c(BN_EPS);
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for (ci, plane) in x.axis_iter(Axis(1)).enumerate() {
            let mu = plane.iter().copied().sum::<F>() / mf;
            let v = plane.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / mf;
            mean[ci] = mu;
            var[ci] = v;
        }
        let inv_std = var.mapv(|v: F| F::one() / (v + eps).sqrt());
        let (y, xhat) = self.normalize(x, &mean, &inv_std);

        let mom = F::c(BN_MOMENTUM);
        let unbias = if m > 1 { F::c(m as f64 / (m as f64 - 1.0)) } else { F::one() };
        Zip::from(&mut self.running_mean).and(&mean).for_each(|r, &mu| *r = (F::one() - mom) * *r + mom * mu);
        Zip::from(&mut self.running_var).and(&var).for_each(|r, &v| *r = (F::one() - mom) * *r + mom * v * unbias);
        (y, BnCache { xhat, inv_std, batch_stats: true })
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        self.forward_eval_cached(x).0
    }

    pub fn forward_eval_cached(&self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let eps = F::c(BN_EPS);
        let inv_std = self.running_var.mapv(|v| F::one() / (v + eps).sqrt());
        let (y, xhat) = self.normalize(x, &self.running_mean, &inv_std);
        (y, BnCache { xhat, inv_std, batch_stats: false })
    }

    pub fn backward(&self, cache: &BnCache<F>, dy: &Array4<F>, grads: &mut BatchNorm2d<F>) -> Array4<F> {
        let (n, _, h, w) = dy.dim();
        let mf = F::c((n * h * w) as f64);
        let mut dx = Array4::zeros(dy.dim());
        for (ci, ((dyc, xh), mut dxc)) in dy
            .axis_iter(Axis(1))
            .zip(cache.xhat.axis_iter(Axis(1)))
            .zip(dx.axis_iter_mut(Axis(1)))
            .enumerate()
        {
            let sum_dy = dyc.iter().copied().sum::<F>();
            let sum_dy_xhat = Zip::from(&dyc).and(&xh).fold(F::zero(), |acc, &d, &x| acc + d * x);
            grads.gamma[ci] += sum_dy_xhat;
            grads.beta[ci] += sum_dy;
            let g = self.gamma[ci];
            let s = cache.inv_std[ci];
            if cache.batch_stats {
                let k = g * s / mf;
                Zip::from(&mut dxc)
                    .and(&dyc)
                    .and(&xh)
                    .for_each(|o, &d, &x| *o = k * (mf * d - sum_dy - x * sum_dy_xhat));
            } else {
                Zip::from(&mut dxc).and(&dyc).for_each(|o, &d| *o = d * g * s);
            }
        }
        dx
    }
}

impl<F: Float> Params<F> for BatchNorm2d<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewD<'a, F>)) {
        f(&join(prefix, "gamma"), Slot::Weight, self.gamma.view().into_dyn());
        f(&join(prefix, "beta"), Slot::Weight, self.beta.view().into_dyn());
        f(&join(prefix, "running_mean"), Slot::Buffer, self.running_mean.view().into_dyn());
        f(&join(prefix, "running_var"), Slot::Buffer, self.running_var.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewMutD<'a, F>)) {
        let Self { gamma, beta, running_mean, running_var } = self;
        f(&join(prefix, "gamma"), Slot::Weight, gamma.view_mut().into_dyn());
        f(&join(prefix, "beta"), Slot::Weight, beta.view_mut().into_dyn());
        f(&join(prefix, "running_mean"), Slot::Buffer, running_mean.view_mut().into_dyn());
        f(&join(prefix, "running_var"), Slot::Buffer, running_var.view_mut().into_dyn());
    }
}

pub fn relu<F: Float>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<F: Float>(out: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.to_owned();
    Zip::from(&mut dx).and(out).for_each(|d, &o| {
        if o <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// 3x3 max pooling, stride 2, padding 1 (padding never wins).
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    /// Flat input index within its `(n, c)` plane for every output element.
    argmax: Vec<u32>,
}

pub const POOL_KERNEL: usize = 3;
pub const POOL_STRIDE: usize = 2;
pub const POOL_PAD: usize = 1;

pub fn pool_out_size(h: usize) -> usize {
    (h + 2 * POOL_PAD - POOL_KERNEL) / POOL_STRIDE + 1
}

pub fn max_pool<F: Float>(x: &Array4<F>) -> (Array4<F>, PoolCache) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (pool_out_size(h), pool_out_size(w));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array4::zeros((n, c, ho, wo));
    let mut argmax = vec![0u32; n * c * ho * wo];
    let dst = out.as_slice_mut().expect("fresh array");
    for plane in 0..n * c {
        let xs = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let y0 = (oy * POOL_STRIDE).saturating_sub(POOL_PAD);
            let y1 = (oy * POOL_STRIDE + POOL_KERNEL - POOL_PAD).min(h);
            for ox in 0..wo {
                let x0 = (ox * POOL_STRIDE).saturating_sub(POOL_PAD);
                let x1 = (ox * POOL_STRIDE + POOL_KERNEL - POOL_PAD).min(w);
                let mut best = y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = iy * w + ix;
                        // Strict comparison: the first maximum wins.
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                dst[o] = xs[best];
                argmax[o] = best as u32;
            }
        }
    }
    (out, PoolCache { input_dim: (n, c, h, w), argmax })
}

pub fn max_pool_backward<F: Float>(cache: &PoolCache, dy: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = cache.input_dim;
    let (_, _, ho, wo) = dy.dim();
    let dy = dy.as_standard_layout();
    let g = dy.as_slice().expect("standard layout");
    let mut dx = Array4::zeros((n, c, h, w));
    let d = dx.as_slice_mut().expect("fresh array");
    for plane in 0..n * c {
        for o in plane * ho * wo..(plane + 1) * ho * wo {
            d[plane * h * w + cache.argmax[o] as usize] += g[o];
        }
    }
    dx
}

/// Adaptive average pooling to `1 x 1` followed by flattening.
pub fn global_avg_pool<F: Float>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let scale = F::c(1.0 / (h * w) as f64);
    let mut out = Array2::zeros((n, c));
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = x.slice(s![i, j, .., ..]).iter().copied().sum::<F>() * scale;
    }
    out
}

pub fn global_avg_pool_backward<F: Float>(dy: &Array2<F>, dim: (usize, usize, usize, usize)) -> Array4<F> {
    let (n, c, h, w) = dim;
    let scale = F::c(1.0 / (h * w) as f64);
    let mut dx = Array4::zeros((n, c, h, w));
    for ((i, j), &g) in dy.indexed_iter() {
        dx.slice_mut(s![i, j, .., ..]).fill(g * scale);
    }
    dx
}

/// Fully connected layer, weight layout `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Float> Linear<F> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>, grads: &mut Linear<F>) -> Array2<F> {
        grads.weight += &dy.t().dot(x);
        grads.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl<F: Float> Params<F> for Linear<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewD<'a, F>)) {
        f(&join(prefix, "weight"), Slot::Weight, self.weight.view().into_dyn());
        f(&join(prefix, "bias"), Slot::Weight, self.bias.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot, ndarray::ArrayViewMutD<'a, F>)) {
        let Self { weight, bias } = self;
        f(&join(prefix, "weight"), Slot::Weight, weight.view_mut().into_dyn());
        f(&join(prefix, "bias"), Slot::Weight, bias.view_mut().into_dyn());
    }
}
