//! Differentiable building blocks. Each layer caches what its backward pass
//! needs during a training-mode forward and consumes it in `backward`.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use trifusion_core::seed::Rng;

use crate::scalar::{matmul, Mat, Scalar};
use crate::tensor::{Act, Param};

/// Per-call state threaded through a forward pass.
pub struct Ctx {
    pub train: bool,
    pub rng: Rng,
    /// Multiply-accumulates of conv, linear and recurrent matmuls.
    pub macs: u64,
    /// When set, blocks append `(name, [C, H, W])` of their outputs.
    pub trace: Option<Vec<(String, [usize; 3])>>,
}

impl Ctx {
    pub fn new(train: bool, rng: Rng) -> Self {
        Self {
            train,
            rng,
            macs: 0,
            trace: None,
        }
    }

    pub fn eval() -> Self {
        Self::new(false, trifusion_core::seed::rng_from_seed(0))
    }

    pub fn record<T: Scalar>(&mut self, name: &str, x: &Act<T>) {
        if let Some(t) = &mut self.trace {
            t.push((name.to_string(), [x.c, x.h, x.w]));
        }
    }
}

pub type Visitor<'a, T> = dyn FnMut(&str, &mut Param<T>) + 'a;

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T>;
    /// Gradient w.r.t. the input; parameter gradients accumulate.
    fn backward(&mut self, g: Act<T>) -> Act<T>;
    fn visit(&mut self, _prefix: &str, _f: &mut Visitor<'_, T>) {}
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kaiming-normal (fan-out, ReLU gain) weights.
pub fn kaiming<T: Scalar>(shape: &[usize], fan: usize, rng: &mut Rng) -> Param<T> {
    let std = (2.0 / fan as f64).sqrt();
    normal(shape, std, rng)
}

pub fn normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut Rng) -> Param<T> {
    let d = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Param::new(shape, (0..n).map(|_| T::of(d.sample(rng))).collect())
}

pub fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut Rng) -> Param<T> {
    let n = shape.iter().product();
    Param::new(shape, (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvShape {
    pub fn square(cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
            ph: k / 2,
            pw: k / 2,
        }
    }

    /// A `1 x k` kernel sliding along the width axis only.
    pub fn temporal(cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        Self {
            cin,
            cout,
            kh: 1,
            kw: k,
            sh: 1,
            sw: stride,
            ph: 0,
            pw: k / 2,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.ph - self.kh) / self.sh + 1, (w + 2 * self.pw - self.kw) / self.sw + 1)
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

pub struct Conv2d<T> {
    pub shape: ConvShape,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<Act<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(shape: ConvShape, bias: bool, rng: &mut Rng) -> Self {
        let fan_out = shape.cout * shape.kh * shape.kw;
        Self {
            weight: kaiming(&[shape.cout, shape.cin, shape.kh, shape.kw], fan_out, rng),
            bias: bias.then(|| Param::constant(&[shape.cout], T::zero())),
            shape,
            cache: None,
        }
    }

    /// Fully connected layer on `[C, N, 1, 1]` with `N(0, 1/fan_in)` weights.
    pub fn linear(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let shape = ConvShape::square(cin, cout, 1, 1);
        Self {
            weight: normal(&[cout, cin, 1, 1], (1.0 / cin as f64).sqrt(), rng),
            bias: Some(Param::constant(&[cout], T::zero())),
            shape,
            cache: None,
        }
    }

    fn im2col(&self, x: &Act<T>, ho: usize, wo: usize) -> Vec<T> {
        let s = &self.shape;
        let cols = x.n * ho * wo;
        let mut col = vec![T::zero(); s.k() * cols];
        for c in 0..s.cin {
            for ki in 0..s.kh {
                for kj in 0..s.kw {
                    let row = (c * s.kh + ki) * s.kw + kj;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for b in 0..x.n {
                        let src = &x.data[(c * x.n + b) * x.h * x.w..];
                        for oy in 0..ho {
                            let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * x.w..];
                            let drow = &mut dst[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    *d = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[T], n: usize, h: usize, w: usize, ho: usize, wo: usize) -> Act<T> {
        let s = &self.shape;
        let cols = n * ho * wo;
        let mut dx = Act::zeros(s.cin, n, h, w);
        for c in 0..s.cin {
            for ki in 0..s.kh {
                for kj in 0..s.kw {
                    let row = (c * s.kh + ki) * s.kw + kj;
                    let src = &col[row * cols..(row + 1) * cols];
                    for b in 0..n {
                        let dst = &mut dx.data[(c * n + b) * h * w..(c * n + b + 1) * h * w];
                        for oy in 0..ho {
                            let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &src[(b * ho + oy) * wo..(b * ho + oy + 1) * wo];
                            for (ox, v) in srow.iter().enumerate() {
                                let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[iy as usize * w + ix as usize] += *v;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let s = self.shape;
        assert_eq!(x.c, s.cin, "conv input channels");
        let (ho, wo) = s.out_hw(x.h, x.w);
        let cols = x.n * ho * wo;
        let mut y = Act::zeros(s.cout, x.n, ho, wo);
        let wmat = Mat::new(&self.weight.value, s.cout, s.k());
        if s.pointwise() {
            matmul(T::one(), wmat, Mat::new(&x.data, s.cin, cols), T::zero(), &mut y.data);
        } else {
            let col = self.im2col(&x, ho, wo);
            matmul(T::one(), wmat, Mat::new(&col, s.k(), cols), T::zero(), &mut y.data);
        }
        if let Some(b) = &self.bias {
            for (o, bv) in b.value.iter().enumerate() {
                y.plane_mut(o).iter_mut().for_each(|v| *v += *bv);
            }
        }
        ctx.macs += (s.cout * s.k() * cols) as u64;
        if ctx.train {
            self.cache = Some(x);
        }
        y
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let s = self.shape;
        let x = self.cache.take().expect("conv backward without training forward");
        let (ho, wo) = (g.h, g.w);
        let cols = x.n * ho * wo;
        if let Some(b) = &mut self.bias {
            for o in 0..s.cout {
                b.grad[o] += g.plane(o).iter().copied().sum::<T>();
            }
        }
        let gmat = Mat::new(&g.data, s.cout, cols);
        let wmat = Mat::new(&self.weight.value, s.cout, s.k());
        if s.pointwise() {
            matmul(T::one(), gmat, Mat::new(&x.data, s.cin, cols).t(), T::one(), &mut self.weight.grad);
            let mut dx = Act::zeros(s.cin, x.n, x.h, x.w);
            matmul(T::one(), wmat.t(), gmat, T::zero(), &mut dx.data);
            dx
        } else {
            let col = self.im2col(&x, ho, wo);
            matmul(T::one(), gmat, Mat::new(&col, s.k(), cols).t(), T::one(), &mut self.weight.grad);
            let mut dcol = col;
            matmul(T::one(), wmat.t(), gmat, T::zero(), &mut dcol);
            self.col2im(&dcol, x.n, x.h, x.w, ho, wo)
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Depthwise 3x3 convolution (one filter per channel, padding 1).
pub struct Depthwise<T> {
    pub channels: usize,
    pub stride: usize,
    pub weight: Param<T>,
    cache: Option<Act<T>>,
}

impl<T: Scalar> Depthwise<T> {
    pub fn new(channels: usize, stride: usize, rng: &mut Rng) -> Self {
        Self {
            channels,
            stride,
            weight: kaiming(&[channels, 1, 3, 3], 9, rng),
            cache: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    /// Calls `f(out_index, in_index, tap)` for every valid tap of channel-plane geometry.
    fn taps(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_hw(h, w);
        for oy in 0..ho {
            for ox in 0..wo {
                for ki in 0..3 {
                    let iy = (oy * self.stride + ki) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..3 {
                        let ix = (ox * self.stride + kj) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        f(oy * wo + ox, iy as usize * w + ix as usize, ki * 3 + kj);
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> for Depthwise<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        assert_eq!(x.c, self.channels);
        let (ho, wo) = self.out_hw(x.h, x.w);
        let mut y = Act::zeros(x.c, x.n, ho, wo);
        for c in 0..x.c {
            let wk = &self.weight.value[c * 9..c * 9 + 9];
            for b in 0..x.n {
                let src = &x.data[(c * x.n + b) * x.h * x.w..(c * x.n + b + 1) * x.h * x.w];
                let dst = &mut y.data[(c * x.n + b) * ho * wo..(c * x.n + b + 1) * ho * wo];
                self.taps(x.h, x.w, |o, i, t| dst[o] += src[i] * wk[t]);
            }
        }
        ctx.macs += (x.c * 9 * x.n * ho * wo) as u64;
        if ctx.train {
            self.cache = Some(x);
        }
        y
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let x = self.cache.take().expect("depthwise backward without training forward");
        let (ho, wo) = (g.h, g.w);
        let mut dx = Act::zeros(x.c, x.n, x.h, x.w);
        for c in 0..x.c {
            let wk: [T; 9] = std::array::from_fn(|t| self.weight.value[c * 9 + t]);
            let mut dw = [T::zero(); 9];
            for b in 0..x.n {
                let plane = x.h * x.w;
                let src = &x.data[(c * x.n + b) * plane..(c * x.n + b + 1) * plane];
                let gs = &g.data[(c * x.n + b) * ho * wo..(c * x.n + b + 1) * ho * wo];
                let dst = &mut dx.data[(c * x.n + b) * plane..(c * x.n + b + 1) * plane];
                self.taps(x.h, x.w, |o, i, t| {
                    dw[t] += gs[o] * src[i];
                    dst[i] += gs[o] * wk[t];
                });
            }
            for t in 0..9 {
                self.weight.grad[c * 9 + t] += dw[t];
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Act<T>, Vec<T>)>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::constant(&[c], T::one()),
            beta: Param::constant(&[c], T::zero()),
            running_mean: Param::buffer(&[c], T::zero()),
            running_var: Param::buffer(&[c], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, mut x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        assert_eq!(x.c, self.gamma.len(), "batchnorm channels");
        let m = x.plane_len();
        if !ctx.train {
            for c in 0..x.c {
                let inv = T::one() / (self.running_var.value[c] + T::of(self.eps)).sqrt();
                let (g, b, mu) = (self.gamma.value[c], self.beta.value[c], self.running_mean.value[c]);
                x.plane_mut(c).iter_mut().for_each(|v| *v = (*v - mu) * inv * g + b);
            }
            return x;
        }
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.c);
        let mom = T::of(self.momentum);
        for c in 0..x.c {
            let p = xhat.plane_mut(c);
            let mean = p.iter().copied().sum::<T>() / T::of(m as f64);
            let var = p.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / T::of(m as f64);
            let inv = T::one() / (var + T::of(self.eps)).sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) * inv);
            inv_std.push(inv);
            let unbiased = if m > 1 { var * T::of(m as f64 / (m - 1) as f64) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.value[c];
            *rv = (T::one() - mom) * *rv + mom * unbiased;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for (o, h) in x.plane_mut(c).iter_mut().zip(xhat.plane(c)) {
                *o = *h * g + b;
            }
        }
        self.cache = Some((xhat, inv_std));
        x
    }

    fn backward(&mut self, mut g: Act<T>) -> Act<T> {
        let (xhat, inv_std) = self.cache.take().expect("batchnorm backward without training forward");
        let m = T::of(g.plane_len() as f64);
        for c in 0..g.c {
            let xh = xhat.plane(c);
            let gp = g.plane_mut(c);
            let dbeta: T = gp.iter().copied().sum();
            let dgamma: T = gp.iter().zip(xh).map(|(a, b)| *a * *b).sum();
            self.beta.grad[c] += dbeta;
            self.gamma.grad[c] += dgamma;
            let k = self.gamma.value[c] * inv_std[c] / m;
            for (d, h) in gp.iter_mut().zip(xh) {
                *d = k * (m * *d - dbeta - *h * dgamma);
            }
        }
        g
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, mut x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        if ctx.train {
            self.mask = x.data.iter().map(|v| *v > T::zero()).collect();
        }
        x
    }

    fn backward(&mut self, mut g: Act<T>) -> Act<T> {
        for (v, m) in g.data.iter_mut().zip(&self.mask) {
            if !m {
                *v = T::zero();
            }
        }
        g
    }
}

#[derive(Default)]
pub struct Sigmoid<T> {
    out: Vec<T>,
}

impl<T: Scalar> Layer<T> for Sigmoid<T> {
    fn forward(&mut self, mut x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        x.data.iter_mut().for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
        if ctx.train {
            self.out = x.data.clone();
        }
        x
    }

    fn backward(&mut self, mut g: Act<T>) -> Act<T> {
        for (d, y) in g.data.iter_mut().zip(&self.out) {
            *d *= *y * (T::one() - *y);
        }
        g
    }
}

/// Global average pool to `[C, N, 1, 1]`.
#[derive(Default)]
pub struct Gap {
    hw: (usize, usize),
}

impl<T: Scalar> Layer<T> for Gap {
    fn forward(&mut self, x: Act<T>, _ctx: &mut Ctx) -> Act<T> {
        let hw = x.h * x.w;
        self.hw = (x.h, x.w);
        let scale = T::of(1.0 / hw as f64);
        let data = x.data.chunks(hw).map(|c| c.iter().copied().sum::<T>() * scale).collect();
        Act::from_vec(x.c, x.n, 1, 1, data)
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let (h, w) = self.hw;
        let scale = T::of(1.0 / (h * w) as f64);
        let data = g.data.iter().flat_map(|v| std::iter::repeat_n(*v * scale, h * w)).collect();
        Act::from_vec(g.c, g.n, h, w, data)
    }
}

/// Inverted dropout; the identity outside training.
pub struct Dropout<T> {
    pub p: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Self { p, mask: None }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, mut x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        if !ctx.train || self.p <= 0.0 {
            self.mask = None;
            return x;
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.data.len())
            .map(|_| if ctx.rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        x.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= *m);
        self.mask = Some(mask);
        x
    }

    fn backward(&mut self, mut g: Act<T>) -> Act<T> {
        if let Some(mask) = &self.mask {
            g.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
        }
        g
    }
}

/// Named sequence of layers.
#[derive(Default)]
pub struct Seq<T> {
    pub layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Scalar> Seq<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(mut self, name: impl Into<String>, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push((name.into(), Box::new(layer)));
        self
    }

    /// Convolution followed by batch norm and, optionally, ReLU.
    pub fn conv_bn(shape: ConvShape, relu: bool, rng: &mut Rng) -> Self {
        let s = Self::new().push("conv", Conv2d::new(shape, false, rng)).push("bn", BatchNorm::new(shape.cout));
        if relu {
            s.push("relu", Relu::default())
        } else {
            s
        }
    }

    pub fn extend(mut self, other: Seq<T>) -> Self {
        self.layers.extend(other.layers);
        self
    }
}

impl<T: Scalar> Layer<T> for Seq<T> {
    fn forward(&mut self, mut x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        for (_, l) in &mut self.layers {
            x = l.forward(x, ctx);
        }
        x
    }

    fn backward(&mut self, mut g: Act<T>) -> Act<T> {
        for (_, l) in self.layers.iter_mut().rev() {
            g = l.backward(g);
        }
        g
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        for (name, l) in &mut self.layers {
            l.visit(&join(prefix, name), f);
        }
    }
}

/// Bottleneck residual block: `relu(body(x) + shortcut(x))`.
pub struct Residual<T> {
    pub body: Seq<T>,
    pub shortcut: Option<Seq<T>>,
    relu: Relu,
}

impl<T: Scalar> Residual<T> {
    pub fn bottleneck(cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Self {
        let inner = (cout / 2).max(1);
        let body = Seq::conv_bn(ConvShape::square(cin, inner, 1, 1), true, rng)
            .extend(Seq::conv_bn(ConvShape::square(inner, inner, 3, stride), true, rng))
            .extend(Seq::conv_bn(ConvShape::square(inner, cout, 1, 1), false, rng));
        let body = rename(body, &["reduce", "spatial", "expand"]);
        let shortcut = (cin != cout || stride != 1)
            .then(|| Seq::conv_bn(ConvShape { ph: 0, pw: 0, ..ConvShape::square(cin, cout, 1, stride) }, false, rng));
        Self {
            body,
            shortcut,
            relu: Relu::default(),
        }
    }
}

/// Groups a flat conv/bn/relu list into named sub-blocks.
fn rename<T: Scalar>(seq: Seq<T>, groups: &[&str]) -> Seq<T> {
    let mut out = Seq::new();
    let mut gi = 0;
    for (name, l) in seq.layers {
        if name == "conv" && !out.layers.is_empty() {
            gi += 1;
        }
        out.layers.push((format!("{}.{name}", groups[gi]), l));
    }
    out
}

impl<T: Scalar> Layer<T> for Residual<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let skip = match &mut self.shortcut {
            Some(s) => s.forward(x.clone(), ctx),
            None => x.clone(),
        };
        let mut y = self.body.forward(x, ctx);
        y.add_assign(&skip);
        self.relu.forward(y, ctx)
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let g = <Relu as Layer<T>>::backward(&mut self.relu, g);
        let skip = match &mut self.shortcut {
            Some(s) => s.backward(g.clone()),
            None => g.clone(),
        };
        let mut dx = self.body.backward(g);
        dx.add_assign(&skip);
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.body.visit(prefix, f);
        if let Some(s) = &mut self.shortcut {
            s.visit(&join(prefix, "shortcut"), f);
        }
    }
}

/// Stage of the optical/acoustic encoder: a strided bottleneck halves the
/// resolution, then a deep residual path and a cheap depthwise path share
/// the output channels equally.
pub struct GhostStage<T> {
    pub down: Residual<T>,
    pub deep: Seq<T>,
    pub cheap: Seq<T>,
    split: usize,
}

impl<T: Scalar> GhostStage<T> {
    pub fn new(cin: usize, cout: usize, repeats: usize, rng: &mut Rng) -> Self {
        let mid = cout / 2;
        assert!(mid > 0 && cout % 2 == 0, "stage width must be even");
        let down = Residual::bottleneck(cin, mid, 2, rng);
        let mut deep = Seq::new();
        for r in 0..repeats {
            deep = deep.push(format!("{r}"), Residual::bottleneck(mid, mid, 1, rng));
        }
        let cheap = Seq::new()
            .push("dw", Depthwise::new(mid, 1, rng))
            .push("bn", BatchNorm::new(mid));
        Self {
            down,
            deep,
            cheap,
            split: mid,
        }
    }
}

impl<T: Scalar> Layer<T> for GhostStage<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let y = self.down.forward(x, ctx);
        let cheap = self.cheap.forward(y.clone(), ctx);
        let deep = self.deep.forward(y, ctx);
        Act::concat(deep, cheap)
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let (gd, gc) = g.split(self.split);
        let mut gy = self.deep.backward(gd);
        gy.add_assign(&self.cheap.backward(gc));
        self.down.backward(gy)
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.down.visit(&join(prefix, "down"), f);
        self.deep.visit(&join(prefix, "deep"), f);
        self.cheap.visit(&join(prefix, "cheap"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use trifusion_core::seed::rng_from_seed;

    fn rng() -> Rng {
        rng_from_seed(3)
    }

    fn naive_conv(x: &Act<f64>, w: &[f64], s: ConvShape) -> Act<f64> {
        let (ho, wo) = s.out_hw(x.h, x.w);
        let mut y = Act::zeros(s.cout, x.n, ho, wo);
        for o in 0..s.cout {
            for b in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..s.cin {
                            for ki in 0..s.kh {
                                for kj in 0..s.kw {
                                    let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                                    let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                        acc += w[((o * s.cin + c) * s.kh + ki) * s.kw + kj]
                                            * x.data[((c * x.n + b) * x.h + iy as usize) * x.w + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data[((o * x.n + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(c: usize, n: usize, h: usize, w: usize) -> Act<f64> {
        let len = c * n * h * w;
        Act::from_vec(c, n, h, w, (0..len).map(|v| ((v * 37 % 11) as f64 - 5.0) / 3.0).collect())
    }

    #[test]
    fn conv_matches_naive_loops() {
        for s in [
            ConvShape::square(3, 4, 3, 1),
            ConvShape::square(3, 4, 3, 2),
            ConvShape::square(3, 2, 1, 1),
            ConvShape::temporal(3, 2, 3, 2),
        ] {
            let mut conv = Conv2d::<f64>::new(s, false, &mut rng());
            let x = ramp(3, 2, 7, 6);
            let want = naive_conv(&x, &conv.weight.value, s);
            let got = conv.forward(x, &mut Ctx::eval());
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_macs_counted() {
        let mut conv = Conv2d::<f32>::new(ConvShape::square(3, 16, 3, 2), false, &mut rng());
        let mut ctx = Ctx::eval();
        let y = conv.forward(Act::zeros(3, 1, 224, 224), &mut ctx);
        assert_eq!((y.h, y.w), (112, 112));
        assert_eq!(ctx.macs, 16 * 27 * 112 * 112);
        assert_eq!(conv.weight.len(), 432);
    }

    #[test]
    fn batchnorm_train_normalizes_and_tracks() {
        let mut bn = BatchNorm::<f64>::new(2);
        let x = ramp(2, 4, 3, 3);
        let mut ctx = Ctx::new(true, rng());
        let y = bn.forward(x.clone(), &mut ctx);
        for c in 0..2 {
            let p = y.plane(c);
            let mean: f64 = p.iter().sum::<f64>() / p.len() as f64;
            let var: f64 = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-3);
            let xm: f64 = x.plane(c).iter().sum::<f64>() / 36.0;
            assert!((bn.running_mean.value[c] - 0.1 * xm).abs() < 1e-12);
        }
        assert!(!bn.running_var.trainable);
    }

    #[test]
    fn dropout_modes() {
        let mut d = Dropout::<f64>::new(0.5);
        let x = Act::from_vec(1, 1, 1, 1000, vec![1.0; 1000]);
        let e = d.forward(x.clone(), &mut Ctx::eval());
        assert_eq!(e, x);
        let t = d.forward(x, &mut Ctx::new(true, rng()));
        let zeros = t.data.iter().filter(|v| **v == 0.0).count();
        assert!((400..600).contains(&zeros));
        assert!(t.data.iter().all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn ghost_stage_shapes() {
        let mut g = GhostStage::<f32>::new(16, 24, 1, &mut rng());
        let mut ctx = Ctx::eval();
        let y = g.forward(Act::zeros(16, 2, 112, 112), &mut ctx);
        assert_eq!(y.shape(), [24, 2, 56, 56]);
        let mut names = Vec::new();
        g.visit("s", &mut |n, _| names.push(n.to_string()));
        assert!(names.contains(&"s.down.shortcut.conv.weight".to_string()));
        assert!(names.contains(&"s.deep.0.spatial.conv.weight".to_string()));
        assert!(names.contains(&"s.cheap.dw.weight".to_string()));
    }
}
