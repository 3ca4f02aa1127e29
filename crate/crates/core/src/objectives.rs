//! Loss functions, state encoding and evaluation statistics. All errors are
//! measured on normalized state values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{check_range, Direction, LeaderState, NormalizedState, P_X_RANGE, P_Y_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_d: f64,
    /// Smooth-L1 threshold on normalized units.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_y: 1.0,
            lambda_d: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        // Zero weights are allowed so single states can be switched off.
        let ok = [self.lambda_x, self.lambda_y, self.lambda_d].iter().all(|l| *l >= 0.0 && l.is_finite())
            && self.beta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid loss weights {self:?}")))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda_x, self.lambda_y, self.lambda_d]
    }
}

/// Huber-style loss of an absolute error `e >= 0`.
#[inline]
pub fn smooth_l1(e: f64, beta: f64) -> f64 {
    if e < beta {
        e * e / (2.0 * beta)
    } else {
        e - beta / 2.0
    }
}

/// Derivative of `smooth_l1(|diff|)` with respect to `diff`.
#[inline]
pub fn smooth_l1_grad(diff: f64, beta: f64) -> f64 {
    if diff.abs() < beta {
        diff / beta
    } else {
        diff.signum()
    }
}

/// Weighted sum of the per-state mean smooth-L1 losses.
pub fn total_loss(pred: &[NormalizedState], truth: &[NormalizedState], w: &LossWeights) -> Result<f64> {
    Ok(total_loss_and_grad(pred, truth, w)?.0)
}

/// Loss and its gradient with respect to every prediction component.
pub fn total_loss_and_grad(
    pred: &[NormalizedState],
    truth: &[NormalizedState],
    w: &LossWeights,
) -> Result<(f64, Vec<[f64; 3]>)> {
    if pred.is_empty() {
        return Err(CoreError::Empty("loss batch"));
    }
    if pred.len() != truth.len() {
        return Err(CoreError::Shape(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    let n = pred.len() as f64;
    let lambdas = w.as_array();
    let mut sums = [0.0; 3];
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.to_array(), t.to_array());
        let mut g = [0.0; 3];
        for k in 0..3 {
            let diff = p[k] - t[k];
            sums[k] += smooth_l1(diff.abs(), w.beta);
            g[k] = lambdas[k] * smooth_l1_grad(diff, w.beta) / n;
        }
        grads.push(g);
    }
    let loss = (0..3).map(|k| lambdas[k] * sums[k] / n).sum();
    Ok((loss, grads))
}

pub fn normalize_state(s: &LeaderState) -> Result<NormalizedState> {
    check_range("p_x", s.p_x, P_X_RANGE)?;
    check_range("p_y", s.p_y, P_Y_RANGE)?;
    let lin = |p: f64, (lo, hi): (f64, f64)| (p - lo) / (hi - lo);
    Ok(NormalizedState {
        p_xn: lin(s.p_x, P_X_RANGE),
        p_yn: lin(s.p_y, P_Y_RANGE),
        d_n: s.d.code(),
    })
}

/// Inverse of [`normalize_state`]; the heading is recovered by thresholding.
pub fn denormalize_state(n: &NormalizedState) -> LeaderState {
    let lin = |p: f64, (lo, hi): (f64, f64)| lo + p * (hi - lo);
    LeaderState {
        p_x: lin(n.p_xn, P_X_RANGE),
        p_y: lin(n.p_yn, P_Y_RANGE),
        d: classify_direction(n.d_n),
    }
}

/// `L` for `d <= 0.25`, `R` for `d >= 0.75`, `S` otherwise (NaN maps to `S`).
pub fn classify_direction(d: f64) -> Direction {
    if d <= 0.25 {
        Direction::L
    } else if d >= 0.75 {
        Direction::R
    } else {
        Direction::S
    }
}

/// Optional outlier screening applied before direction classification.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutlierRule {
    /// Drop samples whose `d̂` is farther than this from the nearest code.
    pub max_code_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionSummary {
    pub count: usize,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    /// Per state `[x, y, d]`.
    pub rmse: [f64; 3],
    pub sd: [f64; 3],
    pub mean_error: [f64; 3],
    /// Rows: true class, columns: predicted class, order L, S, R.
    pub confusion: [[usize; 3]; 3],
    /// Raw `d̂` statistics per true class; `None` when the class is absent.
    pub direction: [Option<DirectionSummary>; 3],
    pub outliers_dropped: usize,
}

impl EvalReport {
    /// Root mean square over both position components pooled.
    pub fn position_rmse(&self) -> f64 {
        ((self.rmse[0].powi(2) + self.rmse[1].powi(2)) / 2.0).sqrt()
    }

    pub fn precision(&self, class: Direction) -> Option<f64> {
        let k = class.index();
        let col: usize = (0..3).map(|r| self.confusion[r][k]).sum();
        (col > 0).then(|| self.confusion[k][k] as f64 / col as f64)
    }

    pub fn recall(&self, class: Direction) -> Option<f64> {
        let k = class.index();
        let row: usize = self.confusion[k].iter().sum();
        (row > 0).then(|| self.confusion[k][k] as f64 / row as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.count);
        let _ = writeln!(s, "{:<6}{:>12}{:>12}{:>12}", "state", "RMSE", "SD", "mean err");
        for (k, name) in ["p_x", "p_y", "d"].iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<6}{:>12.5}{:>12.5}{:>12.5}",
                name, self.rmse[k], self.sd[k], self.mean_error[k]
            );
        }
        let _ = writeln!(s, "confusion (rows true, cols predicted: L S R):");
        for (r, row) in self.confusion.iter().enumerate() {
            let _ = writeln!(
                s,
                "  {}  {:>6} {:>6} {:>6}",
                Direction::ALL[r],
                row[0],
                row[1],
                row[2]
            );
        }
        for d in Direction::ALL {
            if let Some(sum) = &self.direction[d.index()] {
                let _ = writeln!(
                    s,
                    "{:<14} mean {:.5}  lower {:.5}  upper {:.5}  precision {}  recall {}",
                    d.name(),
                    sum.mean,
                    sum.lower,
                    sum.upper,
                    fmt_opt(self.precision(d)),
                    fmt_opt(self.recall(d)),
                );
            }
        }
        if self.outliers_dropped > 0 {
            let _ = writeln!(s, "outliers dropped before classification: {}", self.outliers_dropped);
        }
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

pub fn eval_report(preds: &[NormalizedState], truths: &[NormalizedState]) -> Result<EvalReport> {
    eval_report_with(preds, truths, &OutlierRule::default())
}

pub fn eval_report_with(preds: &[NormalizedState], truths: &[NormalizedState], rule: &OutlierRule) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(CoreError::Empty("evaluation batch"));
    }
    if preds.len() != truths.len() {
        return Err(CoreError::Shape(format!("{} predictions vs {} targets", preds.len(), truths.len())));
    }
    let n = preds.len() as f64;
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for (p, t) in preds.iter().zip(truths) {
        let (p, t) = (p.to_array(), t.to_array());
        for k in 0..3 {
            let e = p[k] - t[k];
            sum[k] += e;
            sum_sq[k] += e * e;
        }
    }
    let mut rmse = [0.0; 3];
    let mut sd = [0.0; 3];
    let mut mean_error = [0.0; 3];
    for k in 0..3 {
        let mean = sum[k] / n;
        // Second pass for the deviation avoids cancellation in sum_sq/n - mean².
        let var = preds
            .iter()
            .zip(truths)
            .map(|(p, t)| (p.to_array()[k] - t.to_array()[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        rmse[k] = (sum_sq[k] / n).sqrt();
        sd[k] = var.sqrt();
        mean_error[k] = mean;
    }

    let mut confusion = [[0usize; 3]; 3];
    let mut dropped = 0;
    let mut groups: [Vec<f64>; 3] = Default::default();
    for (p, t) in preds.iter().zip(truths) {
        let truth = classify_direction(t.d_n);
        groups[truth.index()].push(p.d_n);
        if let Some(max) = rule.max_code_distance {
            let nearest = Direction::ALL
                .iter()
                .map(|d| (p.d_n - d.code()).abs())
                .fold(f64::INFINITY, f64::min);
            if !(nearest <= max) {
                dropped += 1;
                continue;
            }
        }
        confusion[truth.index()][classify_direction(p.d_n).index()] += 1;
    }
    let direction = groups.map(|g| {
        (!g.is_empty()).then(|| DirectionSummary {
            count: g.len(),
            mean: g.iter().sum::<f64>() / g.len() as f64,
            lower: g.iter().copied().fold(f64::INFINITY, f64::min),
            upper: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    });
    Ok(EvalReport {
        count: preds.len(),
        rmse,
        sd,
        mean_error,
        confusion,
        direction,
        outliers_dropped: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ns(x: f64, y: f64, d: f64) -> NormalizedState {
        NormalizedState { p_xn: x, p_yn: y, d_n: d }
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0, 1.0), 0.0);
        assert_eq!(smooth_l1(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1(2.0, 1.0), 1.5);
    }

    #[test]
    fn smooth_l1_is_c1_at_beta() {
        for beta in [0.1, 1.0, 3.0] {
            let quad = |e: f64| e * e / (2.0 * beta);
            let lin = |e: f64| e - beta / 2.0;
            assert!((quad(beta) - lin(beta)).abs() < 1e-12);
            // Derivatives of both branches at beta: e/beta and 1.
            assert!((beta / beta - 1.0f64).abs() < 1e-12);
            assert!((smooth_l1_grad(beta - 1e-13, beta) - smooth_l1_grad(beta, beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_matches_finite_difference() {
        for &(d, beta) in &[(0.3, 1.0), (-0.7, 0.5), (2.5, 1.0), (-4.0, 2.0)] {
            let f = |x: f64| smooth_l1(f64::abs(x), beta);
            let h = 1e-6;
            let fd = (f(d + h) - f(d - h)) / (2.0 * h);
            assert!((smooth_l1_grad(d, beta) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn total_loss_examples() {
        let t = vec![ns(0.2, 0.3, 0.5), ns(0.7, 0.1, 1.0)];
        let w = LossWeights::default();
        assert_eq!(total_loss(&t, &t, &w).unwrap(), 0.0);

        let p = vec![ns(0.25, 0.2, 0.9), ns(0.6, 0.3, 0.1)];
        let no_d = LossWeights { lambda_d: 0.0, ..w };
        let mut p2 = p.clone();
        p2[0].d_n = 0.0;
        p2[1].d_n = 0.77;
        assert_eq!(total_loss(&p, &t, &no_d).unwrap(), total_loss(&p2, &t, &no_d).unwrap());

        let double = LossWeights {
            lambda_x: 2.0,
            lambda_y: 2.0,
            lambda_d: 2.0,
            beta: 1.0,
        };
        let a = total_loss(&p, &t, &w).unwrap();
        let b = total_loss(&p, &t, &double).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);

        assert!(total_loss(&[], &[], &w).is_err());
        assert!(total_loss(&p, &t[..1], &w).is_err());
    }

    #[test]
    fn total_loss_hand_value() {
        // Errors 0.1 (x), 0.2 (y), 0.5 (d) on one sample, beta = 1, unit weights:
        // 0.01/2 + 0.04/2 + 0.25/2 = 0.15.
        let l = total_loss(&[ns(0.3, 0.4, 1.0)], &[ns(0.2, 0.2, 0.5)], &LossWeights::default()).unwrap();
        assert!((l - 0.15).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_state(&LeaderState::new(40.0, 70.0, Direction::S).unwrap()).unwrap();
        assert!((n.p_xn - 0.2).abs() < 1e-15);
        assert!((n.p_yn - 0.175).abs() < 1e-15);
        assert_eq!(n.d_n, 0.5);
        let lo = normalize_state(&LeaderState::new(0.0, 0.0, Direction::L).unwrap()).unwrap();
        let hi = normalize_state(&LeaderState::new(200.0, 400.0, Direction::R).unwrap()).unwrap();
        assert_eq!((lo.p_xn, lo.p_yn, lo.d_n), (0.0, 0.0, 0.0));
        assert_eq!((hi.p_xn, hi.p_yn, hi.d_n), (1.0, 1.0, 1.0));
        let bad = LeaderState {
            p_x: 250.0,
            p_y: 10.0,
            d: Direction::L,
        };
        assert!(normalize_state(&bad).is_err());
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify_direction(0.25), Direction::L);
        assert_eq!(classify_direction(0.250001), Direction::S);
        assert_eq!(classify_direction(0.5), Direction::S);
        assert_eq!(classify_direction(0.75), Direction::R);
        assert_eq!(classify_direction(0.749999), Direction::S);
        assert_eq!(classify_direction(-3.0), Direction::L);
        assert_eq!(classify_direction(1.2), Direction::R);
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![ns(0.2, 0.175, 0.0), ns(0.5, 0.475, 0.5), ns(0.8, 0.775, 1.0)];
        let r = eval_report(&t, &t).unwrap();
        assert_eq!(r.rmse, [0.0; 3]);
        assert_eq!(r.sd, [0.0; 3]);
        assert_eq!(r.confusion, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
    }

    #[test]
    fn constant_bias() {
        let t = vec![ns(0.2, 0.1, 0.0), ns(0.4, 0.3, 0.5), ns(0.6, 0.9, 1.0)];
        let p: Vec<_> = t.iter().map(|s| ns(s.p_xn + 0.03, s.p_yn, s.d_n)).collect();
        let r = eval_report(&p, &t).unwrap();
        assert!((r.rmse[0] - 0.03).abs() < 1e-12);
        assert!(r.sd[0] < 1e-12);
    }

    #[test]
    fn hand_batch_of_four() {
        // Errors in x: +0.01, -0.02, +0.03, 0.00
        //   mean 0.005, mean square (1+4+9+0)e-4/4 = 3.5e-4, RMSE 0.018708287,
        //   variance 3.5e-4 - 0.25e-4 = 3.25e-4, SD 0.018027756.
        // Errors in y: 0.0, 0.0, 0.1, -0.1 -> RMSE sqrt(0.005) = 0.070710678, SD same.
        // d truths L S R R, preds 0.1 0.6 0.8 0.7 -> classes L S R S.
        let t = vec![ns(0.2, 0.1, 0.0), ns(0.4, 0.2, 0.5), ns(0.6, 0.3, 1.0), ns(0.8, 0.4, 1.0)];
        let p = vec![ns(0.21, 0.1, 0.1), ns(0.38, 0.2, 0.6), ns(0.63, 0.4, 0.8), ns(0.8, 0.3, 0.7)];
        let r = eval_report(&p, &t).unwrap();
        assert!((r.rmse[0] - 0.018_708_286_933_869_71).abs() < 1e-12, "{}", r.rmse[0]);
        assert!((r.sd[0] - 0.018_027_756_377_319_95).abs() < 1e-12, "{}", r.sd[0]);
        assert!((r.rmse[1] - 0.070_710_678_118_654_75).abs() < 1e-12);
        assert!((r.sd[1] - 0.070_710_678_118_654_75).abs() < 1e-12);
        assert_eq!(r.confusion, [[1, 0, 0], [0, 1, 0], [0, 1, 1]]);
        let right = r.direction[2].unwrap();
        assert_eq!((right.count, right.lower, right.upper), (2, 0.7, 0.8));
        assert!((right.mean - 0.75).abs() < 1e-15);
        assert_eq!(r.recall(Direction::R), Some(0.5));
        assert_eq!(r.precision(Direction::S), Some(0.5));
    }

    #[test]
    fn outlier_rule_reports_drops() {
        let t = vec![ns(0.2, 0.1, 0.0), ns(0.4, 0.2, 0.5), ns(0.6, 0.3, 1.0)];
        let p = vec![ns(0.2, 0.1, 0.0), ns(0.4, 0.2, 0.5), ns(0.6, 0.3, 1.5)];
        let rule = OutlierRule {
            max_code_distance: Some(0.4),
        };
        let r = eval_report_with(&p, &t, &rule).unwrap();
        assert_eq!(r.outliers_dropped, 1);
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(total, 2);
        // Default keeps everything.
        assert_eq!(eval_report(&p, &t).unwrap().outliers_dropped, 0);
    }

    #[test]
    fn empty_report_errors() {
        assert!(eval_report(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_decomposes(errs in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5), 1..50)) {
            let t: Vec<_> = errs.iter().map(|_| ns(0.5, 0.5, 0.5)).collect();
            let p: Vec<_> = errs.iter().map(|e| ns(0.5 + e.0, 0.5 + e.1, 0.5 + e.2)).collect();
            let r = eval_report(&p, &t).unwrap();
            for k in 0..3 {
                let lhs = r.rmse[k].powi(2);
                let rhs = r.sd[k].powi(2) + r.mean_error[k].powi(2);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }

        #[test]
        fn confusion_rows_match_class_counts(ds in prop::collection::vec((0usize..3, -0.5f64..1.5), 1..60)) {
            let t: Vec<_> = ds.iter().map(|(c, _)| ns(0.5, 0.5, Direction::ALL[*c].code())).collect();
            let p: Vec<_> = ds.iter().map(|(_, d)| ns(0.5, 0.5, *d)).collect();
            let r = eval_report(&p, &t).unwrap();
            for c in 0..3 {
                let expect = ds.iter().filter(|(k, _)| *k == c).count();
                prop_assert_eq!(r.confusion[c].iter().sum::<usize>(), expect);
            }
        }

        #[test]
        fn classification_is_a_partition(d in any::<f64>()) {
            let hits = [d <= 0.25, d > 0.25 && d < 0.75, d >= 0.75].iter().filter(|b| **b).count();
            if d.is_nan() {
                prop_assert_eq!(classify_direction(d), Direction::S);
            } else {
                prop_assert_eq!(hits, 1);
                let expect = if d <= 0.25 { Direction::L } else if d >= 0.75 { Direction::R } else { Direction::S };
                prop_assert_eq!(classify_direction(d), expect);
            }
        }

        #[test]
        fn normalization_round_trips(px in 0.0f64..=200.0, py in 0.0f64..=400.0, k in 0usize..3) {
            let s = LeaderState::new(px, py, Direction::ALL[k]).unwrap();
            let back = denormalize_state(&normalize_state(&s).unwrap());
            prop_assert!((back.p_x - px).abs() < 1e-9);
            prop_assert!((back.p_y - py).abs() < 1e-9);
            prop_assert_eq!(back.d, s.d);
        }
    }
}
