//! Minibatch SGD with a step schedule, validation hold-out and best-checkpoint selection.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;
use trifusion_core::dataio::{hold_out, Dataset, FrameRef, RunConfig};
use trifusion_core::objectives::{total_loss, total_loss_and_grad};
use trifusion_core::seed::{derive_seed, derived_rng, rng_from_seed};
use trifusion_core::NormalizedState;
use trifusion_net::layers::Ctx;
use trifusion_net::model::rows;
use trifusion_net::{checkpoint, Act, FusionNet, NetConfig, Sgd};

use crate::error::{HarnessError, Result};
use crate::frames::{load_frames, make_batch, select, Frame};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_LOG: &str = "train.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: Vec<EpochLog>,
    pub params: usize,
    pub train_frames: usize,
    pub val_frames: usize,
}

/// Line-delimited JSON records to any writer.
pub struct Logger<'a> {
    sinks: Vec<&'a mut dyn Write>,
}

impl<'a> Logger<'a> {
    pub fn new(sinks: Vec<&'a mut dyn Write>) -> Self {
        Self { sinks }
    }

    pub fn silent() -> Self {
        Self { sinks: Vec::new() }
    }

    pub fn log(&mut self, record: serde_json::Value) {
        let line = record.to_string();
        for s in &mut self.sinks {
            let _ = writeln!(s, "{line}");
        }
    }
}

fn targets(frames: &[Frame], idx: &[usize]) -> Vec<NormalizedState> {
    idx.iter().map(|&i| frames[i].truth).collect()
}

fn grad_act(g: &[[f64; 3]]) -> Act<f32> {
    let n = g.len();
    let mut a = Act::zeros(3, n, 1, 1);
    for (b, row) in g.iter().enumerate() {
        for s in 0..3 {
            a.data[s * n + b] = row[s] as f32;
        }
    }
    a
}

/// Eval-mode predictions for every frame, in order.
pub fn predict_frames(net: &mut FusionNet<f32>, frames: &[Frame], batch_size: usize) -> Result<Vec<NormalizedState>> {
    let cfg = net.config.clone();
    let mut out = Vec::with_capacity(frames.len());
    let idx: Vec<usize> = (0..frames.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = make_batch(&cfg, frames, chunk)?;
        out.extend(net.predict(&b)?.into_iter().map(NormalizedState::from_array));
    }
    Ok(out)
}

fn mean_loss(net: &mut FusionNet<f32>, frames: &[Frame], cfg: &RunConfig) -> Result<f64> {
    let preds = predict_frames(net, frames, cfg.optimizer.batch_size)?;
    let truth: Vec<_> = frames.iter().map(|f| f.truth).collect();
    Ok(total_loss(&preds, &truth, &cfg.loss)?)
}

pub fn net_config(cfg: &RunConfig) -> NetConfig {
    NetConfig::from_spec(&cfg.network, cfg.modalities)
}

/// Trains on `train` refs, writing the best checkpoint, config and log into `out_dir`.
pub fn train(cfg: &RunConfig, ds: &Dataset, train: &[FrameRef], out_dir: &Path, log: &mut Logger<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    let log_path = out_dir.join(TRAIN_LOG);
    let mut file = std::fs::File::create(&log_path).map_err(|e| HarnessError::io(&log_path, e))?;

    let refs = select(train, ds, cfg);
    if refs.is_empty() {
        return Err(HarnessError::Usage("no training frames selected".into()));
    }
    let (keep, val) = hold_out(&refs, cfg.optimizer.val_fraction, derive_seed(cfg.split_seed, &["validation"]));
    let train_frames = load_frames(ds, &keep, cfg)?;
    let val_frames = load_frames(ds, &val, cfg)?;
    let net_cfg = net_config(cfg);
    let mut net = FusionNet::<f32>::new(net_cfg.clone(), derive_seed(cfg.seed, &["init"]))?;
    let params = net.count_params();
    let mut opt = Sgd::new(cfg.optimizer.learning_rate, cfg.optimizer.momentum, cfg.optimizer.weight_decay);
    let ckpt = out_dir.join(BEST_CHECKPOINT);

    let start = json!({
        "event": "start", "run": cfg.name, "modalities": cfg.modalities.to_string(),
        "architecture": cfg.network.architecture, "params": params,
        "train_frames": train_frames.len(), "val_frames": val_frames.len(),
    });
    log.log(start.clone());
    let _ = writeln!(file, "{start}");

    let mut best: Option<(usize, f64)> = None;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_frames.len()).collect();
    for epoch in 0..cfg.optimizer.epochs {
        let t0 = Instant::now();
        let lr = cfg.optimizer.lr_at(epoch);
        opt.lr = lr;
        order.sort_unstable();
        order.shuffle(&mut derived_rng(cfg.seed, &["epoch", &epoch.to_string()]));
        let mut sum = 0.0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(cfg.optimizer.batch_size).enumerate() {
            let batch = make_batch::<f32>(&net_cfg, &train_frames, chunk)?;
            let mut ctx = Ctx::new(true, rng_from_seed(derive_seed(cfg.seed, &["dropout", &epoch.to_string(), &bi.to_string()])));
            let y = net.forward(&batch, &mut ctx)?;
            let pred: Vec<NormalizedState> = rows(&y).into_iter().map(NormalizedState::from_array).collect();
            let (loss, grad) = total_loss_and_grad(&pred, &targets(&train_frames, chunk), &cfg.loss)?;
            if !loss.is_finite() {
                log.log(json!({"event": "diverged", "epoch": epoch, "batch": bi, "loss": loss.to_string()}));
                return Err(HarnessError::Divergence { epoch, batch: bi, loss });
            }
            net.zero_grad();
            net.backward(grad_act(&grad));
            opt.step(&mut net);
            sum += loss * chunk.len() as f64;
            batches += 1;
        }
        let train_loss = sum / train_frames.len() as f64;
        let val_loss = if val_frames.is_empty() {
            train_loss
        } else {
            mean_loss(&mut net, &val_frames, cfg)?
        };
        if !val_loss.is_finite() {
            return Err(HarnessError::Divergence {
                epoch,
                batch: usize::MAX,
                loss: val_loss,
            });
        }
        if best.is_none_or(|(_, b)| val_loss < b) {
            best = Some((epoch, val_loss));
            checkpoint::save(&mut net, &ckpt, &[("run", cfg.name.clone()), ("epoch", epoch.to_string())])?;
        }
        let rec = EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            batches,
        };
        let line = json!({
            "event": "epoch", "run": cfg.name, "epoch": epoch, "lr": lr,
            "train_loss": train_loss, "val_loss": val_loss, "batches": batches, "seconds": t0.elapsed().as_secs_f64(),
        });
        log.log(line.clone());
        let _ = writeln!(file, "{line}");
        epochs.push(rec);
    }
    let (best_epoch, best_val_loss) = best.ok_or_else(|| HarnessError::Usage("zero epochs configured".into()))?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        best_epoch,
        best_val_loss,
        epochs,
        params,
        train_frames: train_frames.len(),
        val_frames: val_frames.len(),
    })
}
