//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use trifusion_core::objectives::{total_loss_and_grad, LossWeights};
use trifusion_core::seed::rng_from_seed;
use trifusion_core::NormalizedState;

use crate::layers::Ctx;
use crate::model::{rows, Batch, FusionNet};
use crate::tensor::Act;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(name, index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss(net: &mut FusionNet<f64>, batch: &Batch<f64>, truth: &[NormalizedState], w: &LossWeights) -> (f64, Act<f64>) {
    let mut ctx = Ctx::new(true, rng_from_seed(0));
    let y = net.forward(batch, &mut ctx).expect("valid batch");
    let pred: Vec<NormalizedState> = rows(&y).into_iter().map(NormalizedState::from_array).collect();
    let (l, g) = total_loss_and_grad(&pred, truth, w).expect("matching batch");
    let mut ga = Act::zeros(3, y.n, 1, 1);
    for (b, gr) in g.iter().enumerate() {
        for s in 0..3 {
            ga.data[s * y.n + b] = gr[s];
        }
    }
    (l, ga)
}

/// Compares analytic and numeric gradients on `samples` random trainable scalars.
///
/// Training-mode forward passes are used so batch norm sees batch statistics;
/// dropout must be zero for the loss to be deterministic.
pub fn gradient_check(
    net: &mut FusionNet<f64>,
    batch: &Batch<f64>,
    truth: &[NormalizedState],
    weights: &LossWeights,
    samples: usize,
    h: f64,
    seed: u64,
) -> GradCheck {
    assert!(net.config.dropout == 0.0, "gradient check needs deterministic forward passes");
    net.zero_grad();
    let (_, g) = loss(net, batch, truth, weights);
    net.backward(g);

    let mut index = Vec::new();
    net.visit(&mut |name, p| {
        if p.trainable {
            for i in 0..p.len() {
                index.push((name.to_string(), i, p.grad[i]));
            }
        }
    });
    let mut rng = rng_from_seed(seed);
    let picks = sample(&mut rng, index.len(), samples.min(index.len()));

    let set = |net: &mut FusionNet<f64>, target: &str, i: usize, delta: f64| {
        net.visit(&mut |name, p| {
            if name == target {
                p.value[i] += delta;
            }
        });
    };
    let mut out = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for k in picks {
        let (name, i, analytic) = index[k].clone();
        set(net, &name, i, h);
        let (lp, _) = loss(net, batch, truth, weights);
        set(net, &name, i, -2.0 * h);
        let (lm, _) = loss(net, batch, truth, weights);
        set(net, &name, i, h);
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.checked += 1;
        if rel >= out.max_rel_error {
            out.max_rel_error = rel;
            out.worst = Some((name, i, analytic, numeric));
        }
    }
    out
}

/// Adds `N(0, std)` noise to every trainable value. Fresh initializations
/// put zero biases behind dead units, so pre-activations can sit exactly on
/// a ReLU kink where finite differences are meaningless.
pub fn jitter(net: &mut FusionNet<f64>, std: f64, seed: u64) {
    use rand_distr::{Distribution, Normal};
    let mut rng = rng_from_seed(seed);
    let d = Normal::new(0.0, std).expect("finite std");
    net.visit(&mut |_, p| {
        if p.trainable {
            p.value.iter_mut().for_each(|v| *v += d.sample(&mut rng));
        }
    });
}
