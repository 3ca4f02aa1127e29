//! Single-layer LSTM over `[C, N, 1, T]` sequences, emitting the final hidden state.

use trifusion_core::seed::Rng;

use crate::layers::{join, uniform, Ctx, Layer, Visitor};
use crate::scalar::{matmul, Mat, Scalar};
use crate::tensor::{Act, Param};

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

struct Trace<T> {
    x: Act<T>,
    /// Post-activation gates `[4h, N]` per processed step.
    gates: Vec<Vec<T>>,
    /// Cell state after each step; index 0 is the zero initial state.
    cells: Vec<Vec<T>>,
    hidden: Vec<Vec<T>>,
}

pub struct Lstm<T> {
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
    pub weight_ih: Param<T>,
    pub weight_hh: Param<T>,
    pub bias: Param<T>,
    cache: Option<Trace<T>>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(input: usize, hidden: usize, reverse: bool, rng: &mut Rng) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            input,
            hidden,
            reverse,
            weight_ih: uniform(&[4 * hidden, input], b, rng),
            weight_hh: uniform(&[4 * hidden, hidden], b, rng),
            bias: uniform(&[4 * hidden], b, rng),
            cache: None,
        }
    }

    fn order(&self, len: usize) -> Vec<usize> {
        if self.reverse {
            (0..len).rev().collect()
        } else {
            (0..len).collect()
        }
    }
}

impl<T: Scalar> Layer<T> for Lstm<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        assert_eq!((x.c, x.h), (self.input, 1), "lstm expects [C, N, 1, T]");
        let (h, n, len) = (self.hidden, x.n, x.w);
        let cols = n * len;
        let mut zx = vec![T::zero(); 4 * h * cols];
        matmul(
            T::one(),
            Mat::new(&self.weight_ih.value, 4 * h, x.c),
            Mat::new(&x.data, x.c, cols),
            T::zero(),
            &mut zx,
        );
        ctx.macs += (4 * h * (x.c + h) * cols) as u64;

        let mut hs = vec![vec![T::zero(); h * n]];
        let mut cs = vec![vec![T::zero(); h * n]];
        let mut gates_all = Vec::with_capacity(len);
        for t in self.order(len) {
            let mut z = vec![T::zero(); 4 * h * n];
            for r in 0..4 * h {
                for b in 0..n {
                    z[r * n + b] = zx[r * cols + b * len + t] + self.bias.value[r];
                }
            }
            let hp = hs.last().expect("initial state");
            matmul(T::one(), Mat::new(&self.weight_hh.value, 4 * h, h), Mat::new(hp, h, n), T::one(), &mut z);
            let cp = cs.last().expect("initial state");
            let mut c = vec![T::zero(); h * n];
            let mut hn = vec![T::zero(); h * n];
            for k in 0..h * n {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h * n + k]);
                let g = z[2 * h * n + k].tanh();
                let o = sigmoid(z[3 * h * n + k]);
                c[k] = f * cp[k] + i * g;
                hn[k] = o * c[k].tanh();
                z[k] = i;
                z[h * n + k] = f;
                z[2 * h * n + k] = g;
                z[3 * h * n + k] = o;
            }
            gates_all.push(z);
            cs.push(c);
            hs.push(hn);
        }
        let out = Act::from_vec(h, n, 1, 1, hs.last().expect("state").clone());
        if ctx.train {
            self.cache = Some(Trace {
                x,
                gates: gates_all,
                cells: cs,
                hidden: hs,
            });
        }
        out
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let tr = self.cache.take().expect("lstm backward without training forward");
        let (h, n, len) = (self.hidden, tr.x.n, tr.x.w);
        let cols = n * len;
        let hn = h * n;
        let mut dzx = vec![T::zero(); 4 * h * cols];
        let mut dh = g.data;
        let mut dc = vec![T::zero(); hn];
        let order = self.order(len);
        for s in (0..len).rev() {
            let t = order[s];
            let z = &tr.gates[s];
            let (c, cp, hp) = (&tr.cells[s + 1], &tr.cells[s], &tr.hidden[s]);
            let mut dz = vec![T::zero(); 4 * hn];
            for k in 0..hn {
                let (i, f, gg, o) = (z[k], z[hn + k], z[2 * hn + k], z[3 * hn + k]);
                let tc = c[k].tanh();
                let d_o = dh[k] * tc;
                dc[k] += dh[k] * o * (T::one() - tc * tc);
                dz[k] = dc[k] * gg * i * (T::one() - i);
                dz[hn + k] = dc[k] * cp[k] * f * (T::one() - f);
                dz[2 * hn + k] = dc[k] * i * (T::one() - gg * gg);
                dz[3 * hn + k] = d_o * o * (T::one() - o);
                dc[k] *= f;
            }
            matmul(T::one(), Mat::new(&dz, 4 * h, n), Mat::new(hp, h, n).t(), T::one(), &mut self.weight_hh.grad);
            for r in 0..4 * h {
                let row = &dz[r * n..(r + 1) * n];
                self.bias.grad[r] += row.iter().copied().sum::<T>();
                for (b, v) in row.iter().enumerate() {
                    dzx[r * cols + b * len + t] = *v;
                }
            }
            let mut next = vec![T::zero(); hn];
            matmul(T::one(), Mat::new(&self.weight_hh.value, 4 * h, h).t(), Mat::new(&dz, 4 * h, n), T::zero(), &mut next);
            dh = next;
        }
        matmul(
            T::one(),
            Mat::new(&dzx, 4 * h, cols),
            Mat::new(&tr.x.data, self.input, cols).t(),
            T::one(),
            &mut self.weight_ih.grad,
        );
        let mut dx = Act::zeros(self.input, n, 1, len);
        matmul(T::one(), Mat::new(&self.weight_ih.value, 4 * h, self.input).t(), Mat::new(&dzx, 4 * h, cols), T::zero(), &mut dx.data);
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight_ih"), &mut self.weight_ih);
        f(&join(prefix, "weight_hh"), &mut self.weight_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and reverse LSTMs; output is `[2h, N, 1, 1]` of both final states.
pub struct BiLstm<T> {
    pub fwd: Lstm<T>,
    pub bwd: Lstm<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            fwd: Lstm::new(input, hidden, false, rng),
            bwd: Lstm::new(input, hidden, true, rng),
        }
    }
}

impl<T: Scalar> Layer<T> for BiLstm<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let b = self.bwd.forward(x.clone(), ctx);
        let f = self.fwd.forward(x, ctx);
        Act::concat(f, b)
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let (gf, gb) = g.split(self.fwd.hidden);
        let mut dx = self.fwd.backward(gf);
        dx.add_assign(&self.bwd.backward(gb));
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.fwd.visit(&join(prefix, "forward"), f);
        self.bwd.visit(&join(prefix, "reverse"), f);
    }
}
