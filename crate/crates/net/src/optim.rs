//! SGD with heavy-ball momentum and L2 weight decay folded into the gradient.

use crate::model::FusionNet;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    /// `g = grad + wd*w; buf = mu*buf + g; w -= lr*buf` for every trainable tensor.
    pub fn step(&mut self, net: &mut FusionNet<T>) {
        let (lr, mu, wd) = (T::of(self.lr), T::of(self.momentum), T::of(self.weight_decay));
        let buffers = &mut self.buffers;
        let mut k = 0;
        net.visit(&mut |_, p| {
            if !p.trainable {
                return;
            }
            if buffers.len() <= k {
                buffers.push(vec![T::zero(); p.len()]);
            }
            let buf = &mut buffers[k];
            for ((w, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let g = *g + wd * *w;
                *b = mu * *b + g;
                *w -= lr * *b;
            }
            k += 1;
        });
    }
}
