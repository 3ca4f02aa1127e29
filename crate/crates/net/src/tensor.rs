//! Activations in channel-major `[C, N, H, W]` layout and trainable parameters.
//!
//! Keeping channels outermost makes a convolution a single GEMM over the
//! whole batch and turns channel concatenation into a buffer append.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "activation buffer size");
        Self { c, n, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.n, self.h, self.w]
    }

    /// Elements per channel.
    pub fn plane_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let p = self.plane_len();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane_len();
        &mut self.data[c * p..(c + 1) * p]
    }

    /// Converts a batch stored sample-major `[N, C, H, W]`.
    pub fn from_nchw(n: usize, c: usize, h: usize, w: usize, src: &[f32]) -> Self {
        assert_eq!(src.len(), n * c * h * w);
        let hw = h * w;
        let mut out = Self::zeros(c, n, h, w);
        for b in 0..n {
            for ch in 0..c {
                let s = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                let d = &mut out.data[(ch * n + b) * hw..(ch * n + b + 1) * hw];
                for (d, s) in d.iter_mut().zip(s) {
                    *d = T::of(*s as f64);
                }
            }
        }
        out
    }

    /// Values of sample `b` as `[C, H, W]`.
    pub fn sample(&self, b: usize) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = Vec::with_capacity(self.c * hw);
        for ch in 0..self.c {
            out.extend_from_slice(&self.data[(ch * self.n + b) * hw..(ch * self.n + b + 1) * hw]);
        }
        out
    }

    /// Stacks `a` over `b` along channels.
    pub fn concat(mut a: Self, b: Self) -> Self {
        assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial/batch mismatch");
        a.c += b.c;
        a.data.extend_from_slice(&b.data);
        a
    }

    /// Splits off the first `c` channels.
    pub fn split(mut self, c: usize) -> (Self, Self) {
        assert!(c <= self.c);
        let tail = self.data.split_off(c * self.plane_len());
        let rest = Self::from_vec(self.c - c, self.n, self.h, self.w, tail);
        self.c = c;
        (self, rest)
    }

    /// Samples `idx` of the batch, in order.
    pub fn gather(&self, idx: &[usize]) -> Self {
        let hw = self.h * self.w;
        let mut out = Self::zeros(self.c, idx.len(), self.h, self.w);
        for ch in 0..self.c {
            for (k, &b) in idx.iter().enumerate() {
                let s = &self.data[(ch * self.n + b) * hw..(ch * self.n + b + 1) * hw];
                out.data[(ch * idx.len() + k) * hw..(ch * idx.len() + k + 1) * hw].copy_from_slice(s);
            }
        }
        out
    }

    /// Inverse of [`Act::gather`] into a zero batch of size `n`.
    pub fn scatter(&self, idx: &[usize], n: usize) -> Self {
        let hw = self.h * self.w;
        let mut out = Self::zeros(self.c, n, self.h, self.w);
        for ch in 0..self.c {
            for (k, &b) in idx.iter().enumerate() {
                let s = &self.data[(ch * self.n + k) * hw..(ch * self.n + k + 1) * hw];
                out.data[(ch * n + b) * hw..(ch * n + b + 1) * hw].copy_from_slice(s);
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named tensor; running statistics are carried as non-trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            grad: vec![T::zero(); value.len()],
            value,
            shape: shape.to_vec(),
            trainable: true,
        }
    }

    pub fn constant(shape: &[usize], v: T) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], v: T) -> Self {
        Self {
            trainable: false,
            ..Self::constant(shape, v)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}
