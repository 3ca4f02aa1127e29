//! Desk-scale ablation: simulate the toy scene, train each modality set, compare close-range errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trifusion_core::dataio::{load_dataset, RunConfig};
use trifusion_core::simulator::{generate_dataset, SceneConfig};

use crate::error::{HarnessError, Result};
use crate::suite::{ablation_suite, run_one, RunResult};
use crate::train::Logger;

/// Frames simulated per toy case: 100 train plus 30 test.
pub const TOY_FRAMES_PER_CASE: usize = 130;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    /// Ordered as `ablation_suite`: tri, dual, optical, pressure.
    pub runs: Vec<RunResult>,
}

impl AblationRun {
    /// Close-range position RMSE per entry.
    pub fn close_position_rmse(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.evaluation.close.as_ref().map_or(f64::NAN, |c| c.position_rmse()))
            .collect()
    }
}

/// Base config for the toy ablation at `seed`; dataset and split share the seed.
pub fn toy_config(dataset: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::toy(dataset);
    cfg.seed = seed;
    cfg.split_seed = seed;
    cfg
}

/// Generates (or reuses) the toy dataset under `root/data` and runs the ablation entries.
pub fn toy_ablation(root: &Path, seed: u64, epochs: Option<usize>, log: &mut Logger<'_>) -> Result<AblationRun> {
    let data = root.join("data");
    if !data.join(trifusion_core::dataio::MANIFEST_FILE).is_file() {
        let mut scene = SceneConfig::toy();
        scene.seed = seed;
        generate_dataset(&scene, TOY_FRAMES_PER_CASE, &data, seed)?;
    }
    let ds = load_dataset(&data)?;
    let mut base = toy_config(&data, seed);
    if let Some(e) = epochs {
        base.optimizer.epochs = e;
    }
    let mut runs = Vec::new();
    for e in ablation_suite(&base) {
        let (r, _) = run_one(&e.config, &ds, &root.join(&e.name), log)?;
        runs.push(r);
    }
    if runs.is_empty() {
        return Err(HarnessError::Usage("empty ablation".into()));
    }
    Ok(AblationRun { seed, runs })
}

/// Median of finite values; NaN when none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
