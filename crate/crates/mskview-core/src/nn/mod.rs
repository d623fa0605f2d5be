//! Minimal CNN building blocks with explicit forward/backward passes.
//!
//! Activations are `(C, H, W)` arrays of f64. A network is a tree of
//! [`Block`]s; `forward` returns the output plus a [`Cache`] mirroring the
//! tree, and `backward` walks both to accumulate parameter gradients into a
//! [`GradStore`]. Every convolution carries an id assigned once at build
//! time, which indexes its gradient and optimizer state.

pub mod backbones;

use ndarray::{Array1, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// 2-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub id: usize,
    pub weight: Array4<f64>, // (C_out, C_in, K, K)
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        // He initialization
        let std = (2.0 / (c_in * kernel * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let weight =
            Array4::from_shape_fn((c_out, c_in, kernel, kernel), |_| normal.sample(rng));
        Conv2d {
            id: usize::MAX,
            weight,
            bias: Array1::zeros(c_out),
            stride,
            padding,
        }
    }

    fn out_dim(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.dim().2;
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (c_in, h, w) = x.dim();
        let (c_out, c_in_w, k, _) = self.weight.dim();
        assert_eq!(c_in, c_in_w, "conv {}: channel mismatch", self.id);
        let (oh, ow) = self.out_dim(h, w);
        let s = self.stride;
        let p = self.padding as isize;

        let xs = x.as_slice().expect("standard layout");
        let ws = self.weight.as_slice().expect("standard layout");
        let mut out = Array3::<f64>::zeros((c_out, oh, ow));
        {
            let os = out.as_slice_mut().unwrap();
            for co in 0..c_out {
                let base_o = co * oh * ow;
                let b = self.bias[co];
                for v in &mut os[base_o..base_o + oh * ow] {
                    *v = b;
                }
                for ci in 0..c_in {
                    let base_x = ci * h * w;
                    let base_w = (co * c_in + ci) * k * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let wv = ws[base_w + ky * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * s) as isize + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let row_x = base_x + iy as usize * w;
                                let row_o = base_o + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * s) as isize + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    os[row_o + ox] += wv * xs[row_x + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients into `grad` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
        grad: &mut ConvGrad,
    ) -> Array3<f64> {
        let (c_in, h, w) = x.dim();
        let (c_out, _, k, _) = self.weight.dim();
        let (oh, ow) = self.out_dim(h, w);
        let s = self.stride;
        let p = self.padding as isize;

        let xs = x.as_slice().unwrap();
        let gos = grad_out.as_slice().unwrap();
        let ws = self.weight.as_slice().unwrap();
        let mut grad_in = Array3::<f64>::zeros((c_in, h, w));
        let gis = grad_in.as_slice_mut().unwrap();
        let gws = grad.weight.as_slice_mut().unwrap();

        for co in 0..c_out {
            let base_o = co * oh * ow;
            grad.bias[co] += gos[base_o..base_o + oh * ow].iter().sum::<f64>();
            for ci in 0..c_in {
                let base_x = ci * h * w;
                let base_w = (co * c_in + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = ws[base_w + ky * k + kx];
                        let mut gw = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s) as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row_x = base_x + iy as usize * w;
                            let row_o = base_o + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * s) as isize + kx as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let g = gos[row_o + ox];
                                gw += g * xs[row_x + ix as usize];
                                gis[row_x + ix as usize] += g * wv;
                            }
                        }
                        gws[base_w + ky * k + kx] += gw;
                    }
                }
            }
        }
        grad_in
    }
}

/// Gradient buffers for one convolution.
#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Per-conv gradients indexed by conv id, plus the head gradient slot.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub convs: Vec<ConvGrad>,
}

impl GradStore {
    pub fn zeros_like(block: &Block) -> Self {
        let mut convs = Vec::new();
        block.visit_convs(&mut |conv| {
            assert_eq!(conv.id, convs.len(), "conv ids must be assigned in order");
            convs.push(ConvGrad {
                weight: Array4::zeros(conv.weight.dim()),
                bias: Array1::zeros(conv.bias.dim()),
            });
        });
        GradStore { convs }
    }

    pub fn add(&mut self, other: &GradStore) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

/// A network as a tree of operations.
#[derive(Debug, Clone)]
pub enum Block {
    Conv(Conv2d),
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Seq(Vec<Block>),
    /// out = relu(main(x) + shortcut(x)); identity shortcut when `None`.
    Residual {
        main: Box<Block>,
        shortcut: Option<Box<Block>>,
    },
    /// Channel-wise concatenation of parallel branches.
    Concat(Vec<Block>),
}

/// Forward-pass intermediates needed by `backward`, mirroring the block tree.
#[derive(Debug)]
pub enum Cache {
    Conv {
        input: Array3<f64>,
    },
    Relu {
        output: Array3<f64>,
    },
    MaxPool {
        in_dim: (usize, usize, usize),
        /// Flat input index of each pooled maximum.
        argmax: Vec<usize>,
        out_dim: (usize, usize, usize),
    },
    GlobalAvgPool {
        in_dim: (usize, usize, usize),
    },
    Seq(Vec<Cache>),
    Residual {
        main: Box<Cache>,
        shortcut: Option<Box<Cache>>,
        output: Array3<f64>,
    },
    Concat(Vec<(Cache, usize)>),
}

impl Block {
    /// Assign sequential ids to every convolution, depth-first.
    pub fn assign_ids(&mut self, next: &mut usize) {
        match self {
            Block::Conv(conv) => {
                conv.id = *next;
                *next += 1;
            }
            Block::Seq(blocks) | Block::Concat(blocks) => {
                for b in blocks {
                    b.assign_ids(next);
                }
            }
            Block::Residual { main, shortcut } => {
                main.assign_ids(next);
                if let Some(s) = shortcut {
                    s.assign_ids(next);
                }
            }
            _ => {}
        }
    }

    pub fn visit_convs(&self, f: &mut impl FnMut(&Conv2d)) {
        self.visit_convs_dyn(f);
    }

    fn visit_convs_dyn(&self, f: &mut dyn FnMut(&Conv2d)) {
        match self {
            Block::Conv(conv) => f(conv),
            Block::Seq(blocks) | Block::Concat(blocks) => {
                for b in blocks {
                    b.visit_convs_dyn(f);
                }
            }
            Block::Residual { main, shortcut } => {
                main.visit_convs_dyn(f);
                if let Some(s) = shortcut {
                    s.visit_convs_dyn(f);
                }
            }
            _ => {}
        }
    }

    /// All convolutions in id order, as simultaneously borrowable references
    /// (for building optimizer parameter lists).
    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out = Vec::new();
        self.collect_convs_mut(&mut out);
        out
    }

    fn collect_convs_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Conv2d>) {
        match self {
            Block::Conv(conv) => out.push(conv),
            Block::Seq(blocks) | Block::Concat(blocks) => {
                for b in blocks {
                    b.collect_convs_mut(out);
                }
            }
            Block::Residual { main, shortcut } => {
                main.collect_convs_mut(out);
                if let Some(s) = shortcut {
                    s.collect_convs_mut(out);
                }
            }
            _ => {}
        }
    }

    pub fn visit_convs_mut(&mut self, f: &mut dyn FnMut(&mut Conv2d)) {
        match self {
            Block::Conv(conv) => f(conv),
            Block::Seq(blocks) | Block::Concat(blocks) => {
                for b in blocks {
                    b.visit_convs_mut(f);
                }
            }
            Block::Residual { main, shortcut } => {
                main.visit_convs_mut(f);
                if let Some(s) = shortcut {
                    s.visit_convs_mut(f);
                }
            }
            _ => {}
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, Cache) {
        match self {
            Block::Conv(conv) => {
                let out = conv.forward(x);
                (out, Cache::Conv { input: x.clone() })
            }
            Block::Relu => {
                let out = x.mapv(|v| v.max(0.0));
                (out.clone(), Cache::Relu { output: out })
            }
            Block::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (out, argmax) = max_pool_forward(x, *kernel, *stride, *padding);
                let cache = Cache::MaxPool {
                    in_dim: x.dim(),
                    argmax,
                    out_dim: out.dim(),
                };
                (out, cache)
            }
            Block::GlobalAvgPool => {
                let (c, h, w) = x.dim();
                let mut out = Array3::<f64>::zeros((c, 1, 1));
                for ci in 0..c {
                    out[[ci, 0, 0]] =
                        x.index_axis(Axis(0), ci).sum() / (h * w) as f64;
                }
                (out, Cache::GlobalAvgPool { in_dim: x.dim() })
            }
            Block::Seq(blocks) => {
                let mut caches = Vec::with_capacity(blocks.len());
                let mut cur = x.clone();
                for b in blocks {
                    let (out, cache) = b.forward(&cur);
                    caches.push(cache);
                    cur = out;
                }
                (cur, Cache::Seq(caches))
            }
            Block::Residual { main, shortcut } => {
                let (main_out, main_cache) = main.forward(x);
                let (short_out, short_cache) = match shortcut {
                    Some(s) => {
                        let (o, c) = s.forward(x);
                        (o, Some(Box::new(c)))
                    }
                    None => (x.clone(), None),
                };
                let out = (&main_out + &short_out).mapv(|v| v.max(0.0));
                let cache = Cache::Residual {
                    main: Box::new(main_cache),
                    shortcut: short_cache,
                    output: out.clone(),
                };
                (out, cache)
            }
            Block::Concat(branches) => {
                let mut outs = Vec::with_capacity(branches.len());
                let mut caches = Vec::with_capacity(branches.len());
                for b in branches {
                    let (o, c) = b.forward(x);
                    caches.push((c, o.dim().0));
                    outs.push(o);
                }
                let (_, h, w) = outs[0].dim();
                let total: usize = outs.iter().map(|o| o.dim().0).sum();
                let mut out = Array3::<f64>::zeros((total, h, w));
                let mut offset = 0;
                for o in &outs {
                    let c = o.dim().0;
                    out.slice_mut(ndarray::s![offset..offset + c, .., ..])
                        .assign(o);
                    offset += c;
                }
                (out, Cache::Concat(caches))
            }
        }
    }

    /// Forward pass without retaining intermediates.
    pub fn infer(&self, x: &Array3<f64>) -> Array3<f64> {
        match self {
            Block::Conv(conv) => conv.forward(x),
            Block::Relu => x.mapv(|v| v.max(0.0)),
            Block::MaxPool {
                kernel,
                stride,
                padding,
            } => max_pool_forward(x, *kernel, *stride, *padding).0,
            Block::GlobalAvgPool => {
                let (c, h, w) = x.dim();
                Array3::from_shape_fn((c, 1, 1), |(ci, _, _)| {
                    x.index_axis(Axis(0), ci).sum() / (h * w) as f64
                })
            }
            Block::Seq(blocks) => {
                let mut cur = x.clone();
                for b in blocks {
                    cur = b.infer(&cur);
                }
                cur
            }
            Block::Residual { main, shortcut } => {
                let main_out = main.infer(x);
                let short_out = match shortcut {
                    Some(s) => s.infer(x),
                    None => x.clone(),
                };
                (&main_out + &short_out).mapv(|v| v.max(0.0))
            }
            Block::Concat(branches) => {
                let outs: Vec<Array3<f64>> = branches.iter().map(|b| b.infer(x)).collect();
                let (_, h, w) = outs[0].dim();
                let total: usize = outs.iter().map(|o| o.dim().0).sum();
                let mut out = Array3::<f64>::zeros((total, h, w));
                let mut offset = 0;
                for o in &outs {
                    let c = o.dim().0;
                    out.slice_mut(ndarray::s![offset..offset + c, .., ..])
                        .assign(o);
                    offset += c;
                }
                out
            }
        }
    }

    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &Array3<f64>,
        grads: &mut GradStore,
    ) -> Array3<f64> {
        match (self, cache) {
            (Block::Conv(conv), Cache::Conv { input }) => {
                conv.backward(input, grad_out, &mut grads.convs[conv.id])
            }
            (Block::Relu, Cache::Relu { output }) => {
                let mut grad = grad_out.clone();
                ndarray::Zip::from(&mut grad).and(output).for_each(|g, &o| {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                });
                grad
            }
            (Block::MaxPool { .. }, Cache::MaxPool { in_dim, argmax, out_dim }) => {
                let mut grad_in = Array3::<f64>::zeros(*in_dim);
                let gis = grad_in.as_slice_mut().unwrap();
                let gos = grad_out.as_slice().unwrap();
                debug_assert_eq!(grad_out.dim(), *out_dim);
                for (i, &src) in argmax.iter().enumerate() {
                    gis[src] += gos[i];
                }
                grad_in
            }
            (Block::GlobalAvgPool, Cache::GlobalAvgPool { in_dim }) => {
                let (c, h, w) = *in_dim;
                let scale = 1.0 / (h * w) as f64;
                Array3::from_shape_fn((c, h, w), |(ci, _, _)| grad_out[[ci, 0, 0]] * scale)
            }
            (Block::Seq(blocks), Cache::Seq(caches)) => {
                let mut grad = grad_out.clone();
                for (b, c) in blocks.iter().zip(caches).rev() {
                    grad = b.backward(c, &grad, grads);
                }
                grad
            }
            (
                Block::Residual { main, shortcut },
                Cache::Residual {
                    main: main_cache,
                    shortcut: short_cache,
                    output,
                },
            ) => {
                let mut grad_sum = grad_out.clone();
                ndarray::Zip::from(&mut grad_sum).and(output).for_each(|g, &o| {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                });
                let grad_main = main.backward(main_cache, &grad_sum, grads);
                let grad_short = match (shortcut, short_cache) {
                    (Some(s), Some(sc)) => s.backward(sc, &grad_sum, grads),
                    (None, None) => grad_sum,
                    _ => unreachable!("cache shape mismatch"),
                };
                grad_main + grad_short
            }
            (Block::Concat(branches), Cache::Concat(caches)) => {
                let mut offset = 0;
                let mut total: Option<Array3<f64>> = None;
                for (b, (c, channels)) in branches.iter().zip(caches) {
                    let slice = grad_out
                        .slice(ndarray::s![offset..offset + channels, .., ..])
                        .to_owned();
                    offset += channels;
                    let g = b.backward(c, &slice, grads);
                    total = Some(match total {
                        Some(t) => t + g,
                        None => g,
                    });
                }
                total.expect("concat has at least one branch")
            }
            _ => unreachable!("block/cache tree mismatch"),
        }
    }
}

fn max_pool_forward(
    x: &Array3<f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Array3<f64>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let xs = x.as_slice().unwrap();
    let mut out = Array3::<f64>::zeros((c, oh, ow));
    let mut argmax = vec![0usize; c * oh * ow];
    {
        let os = out.as_slice_mut().unwrap();
        let p = padding as isize;
        for ci in 0..c {
            let base_x = ci * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..kernel {
                        let iy = (oy * stride) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride) as isize + kx as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base_x + iy as usize * w + ix as usize;
                            if xs[idx] > best {
                                best = xs[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o_idx = (ci * oh + oy) * ow + ox;
                    os[o_idx] = best;
                    argmax[o_idx] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

/// Single-logit affine head over the aggregated feature vector.
#[derive(Debug, Clone)]
pub struct Head {
    pub weight: Array1<f64>,
    pub bias: f64,
}

impl Head {
    pub fn new(feature_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).unwrap();
        Head {
            weight: Array1::from_shape_fn(feature_dim, |_| normal.sample(rng)),
            bias: 0.0,
        }
    }

    pub fn logit(&self, features: &Array1<f64>) -> f64 {
        self.weight.dot(features) + self.bias
    }
}

pub fn sigmoid(logit: f64) -> f64 {
    1.0 / (1.0 + (-logit).exp())
}

/// Adam with decoupled weight decay (parameter shrinkage applied alongside
/// the adaptive step, never folded into the loss gradient).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over parallel parameter/gradient tensor lists. Tensor
    /// order must be stable across calls.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let prev = p[i];
                p[i] -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps))
                    + self.learning_rate * self.weight_decay * prev;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_input(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_matches_hand_computed_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 1, 2, 1, 0, &mut rng);
        conv.weight = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        conv.bias = Array1::from_vec(vec![0.5]);
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = conv.forward(&x);
        assert_eq!(out.dim(), (1, 1, 1));
        // 1*1 + 2*2 + 3*3 + 4*4 + 0.5
        assert_eq!(out[[0, 0, 0]], 30.5);
    }

    #[test]
    fn maxpool_padding_and_backward_routing() {
        let x = Array3::from_shape_vec(
            (1, 2, 2),
            vec![1.0, 5.0, 3.0, 2.0],
        )
        .unwrap();
        let block = Block::MaxPool {
            kernel: 2,
            stride: 2,
            padding: 0,
        };
        let (out, cache) = block.forward(&x);
        assert_eq!(out[[0, 0, 0]], 5.0);
        let mut grads = GradStore { convs: vec![] };
        let grad_in = block.backward(&cache, &Array3::from_elem((1, 1, 1), 2.0), &mut grads);
        assert_eq!(grad_in[[0, 0, 1]], 2.0);
        assert_eq!(grad_in.sum(), 2.0);
    }

    /// Central finite differences over every parameter of a small composite
    /// network, including residual and concat paths.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Block::Seq(vec![
            Block::Conv(Conv2d::new(2, 4, 3, 1, 1, &mut rng)),
            Block::Relu,
            Block::Residual {
                main: Box::new(Block::Seq(vec![
                    Block::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
                    Block::Relu,
                    Block::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)),
                ])),
                shortcut: None,
            },
            Block::Concat(vec![
                Block::Seq(vec![Block::Conv(Conv2d::new(4, 2, 1, 1, 0, &mut rng)), Block::Relu]),
                Block::Seq(vec![
                    Block::MaxPool { kernel: 3, stride: 1, padding: 1 },
                    Block::Conv(Conv2d::new(4, 2, 1, 1, 0, &mut rng)),
                ]),
            ]),
            Block::GlobalAvgPool,
        ]);
        let mut next = 0;
        net.assign_ids(&mut next);
        let x = rand_input(2, 6, 6, 11);

        // scalar loss: sum of squared outputs
        let loss_of = |net: &Block| -> f64 {
            let out = net.infer(&x);
            out.iter().map(|v| v * v).sum()
        };
        let (out, cache) = net.forward(&x);
        let grad_out = out.mapv(|v| 2.0 * v);
        let mut grads = GradStore::zeros_like(&net);
        net.backward(&cache, &grad_out, &mut grads);

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-6;
        for conv_id in 0..grads.convs.len() {
            for _probe in 0..6 {
                let len = grads.convs[conv_id].weight.len();
                let idx = rng.gen_range(0..len);
                let analytic = grads.convs[conv_id].weight.as_slice().unwrap()[idx];
                let mut perturb = |delta: f64, net: &mut Block| {
                    net.visit_convs_mut(&mut |c| {
                        if c.id == conv_id {
                            c.weight.as_slice_mut().unwrap()[idx] += delta;
                        }
                    });
                };
                perturb(h, &mut net);
                let plus = loss_of(&net);
                perturb(-2.0 * h, &mut net);
                let minus = loss_of(&net);
                perturb(h, &mut net);
                let numeric = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((analytic - numeric) / denom).abs() < 1e-4,
                    "conv {conv_id} idx {idx}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn forward_and_infer_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Block::Seq(vec![
            Block::Conv(Conv2d::new(3, 4, 3, 2, 1, &mut rng)),
            Block::Relu,
            Block::MaxPool { kernel: 2, stride: 2, padding: 0 },
            Block::GlobalAvgPool,
        ]);
        let mut next = 0;
        net.assign_ids(&mut next);
        let x = rand_input(3, 16, 16, 8);
        let (a, _) = net.forward(&x);
        let b = net.infer(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        // 2-parameter toy model: compare against a hand-computed step
        let mut adam = Adam::new(0.1, 0.5);
        let mut params = vec![1.0_f64, -2.0];
        let grads = vec![0.3_f64, -0.1];
        adam.step(&mut [&mut params], &[&grads]);

        for (i, (&p0, &g)) in [1.0, -2.0].iter().zip(&grads).enumerate() {
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9_f64);
            let v_hat = v / (1.0 - 0.999_f64);
            let expected = p0 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8)) - 0.1 * 0.5 * p0;
            assert!(
                (params[i] - expected).abs() < 1e-9,
                "param {i}: {} vs {expected}",
                params[i]
            );
        }
    }

    #[test]
    fn sigmoid_midpoint() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(2.0) > 0.88 && sigmoid(2.0) < 0.881);
    }
}
