//! Ablation and baseline runs over one dataset, summarized as a comparison table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use trifusion_core::dataio::{split, Architecture, Dataset, ModalitySet, RunConfig, Split, SplitConfig};
use trifusion_core::objectives::EvalReport;

use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, write_record, Evaluation, Record};
use crate::train::{train, Logger, TrainOutcome, BEST_CHECKPOINT, CONFIG_FILE};

pub const OUTCOME_FILE: &str = "outcome.json";
pub const RECORD_FILE: &str = "record.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub config: RunConfig,
}

fn entry(base: &RunConfig, name: &str, m: ModalitySet, arch: Architecture, pressure_only: bool) -> SuiteEntry {
    let mut config = base.clone();
    config.name = name.to_string();
    config.modalities = m;
    config.network.architecture = arch;
    config.pressure_cases_only = pressure_only;
    SuiteEntry {
        name: name.to_string(),
        config,
    }
}

/// Tri-modal, dual-modal (O+A), optical-only and pressure-only runs.
pub fn ablation_suite(base: &RunConfig) -> Vec<SuiteEntry> {
    vec![
        entry(base, "tri-modal", ModalitySet::TRI, Architecture::FusionNet, false),
        entry(base, "dual-modal", ModalitySet::OPTICAL_ACOUSTIC, Architecture::FusionNet, false),
        entry(base, "optical", ModalitySet::OPTICAL, Architecture::FusionNet, false),
        entry(base, "pressure", ModalitySet::PRESSURE, Architecture::FusionNet, true),
    ]
}

/// Ablation runs plus the two baselines.
pub fn standard_suite(base: &RunConfig) -> Vec<SuiteEntry> {
    let mut s = ablation_suite(base);
    s.push(entry(base, "baseline1", ModalitySet::TRI, Architecture::ConvPressure, false));
    s.push(entry(base, "baseline2", ModalitySet::TRI, Architecture::LateFusion, false));
    s
}

pub fn validate_suite(entries: &[SuiteEntry]) -> Result<()> {
    let mut names = std::collections::BTreeSet::new();
    for e in entries {
        if !names.insert(&e.name) {
            return Err(HarnessError::Usage(format!("duplicate suite entry {:?}", e.name)));
        }
        e.config.validate()?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub modalities: String,
    pub trained: bool,
    pub outcome: TrainOutcome,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub result: std::result::Result<RunResult, String>,
}

pub fn split_for(cfg: &RunConfig, ds: &Dataset) -> Result<Split> {
    Ok(split(
        &ds.manifest,
        &SplitConfig {
            train_per_case: cfg.train_per_case,
            test_per_case: cfg.test_per_case,
            mode: cfg.split_mode,
        },
        cfg.split_seed,
    )?)
}

fn cached(dir: &Path, cfg: &RunConfig) -> Option<TrainOutcome> {
    let stored = std::fs::read_to_string(dir.join(CONFIG_FILE)).ok()?;
    if stored != cfg.to_toml_string() || !dir.join(BEST_CHECKPOINT).is_file() {
        return None;
    }
    let o = std::fs::read_to_string(dir.join(OUTCOME_FILE)).ok()?;
    serde_json::from_str(&o).ok()
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v).expect("serializable")).map_err(|e| HarnessError::io(path, e))
}

/// Trains (unless a matching checkpoint exists in `dir`) and evaluates one configuration.
pub fn run_one(cfg: &RunConfig, ds: &Dataset, dir: &Path, log: &mut Logger<'_>) -> Result<(RunResult, Record)> {
    let sp = split_for(cfg, ds)?;
    let (outcome, trained) = match cached(dir, cfg) {
        Some(o) => {
            log.log(json!({"event": "cached", "run": cfg.name, "dir": dir.display().to_string()}));
            (o, false)
        }
        None => {
            let o = train(cfg, ds, &sp.train, dir, log)?;
            write_json(&dir.join(OUTCOME_FILE), &o)?;
            (o, true)
        }
    };
    let (evaluation, record) = evaluate(&dir.join(BEST_CHECKPOINT), cfg, ds, &sp.test)?;
    write_record(&record, &dir.join(RECORD_FILE))?;
    write_json(&dir.join(REPORT_FILE), &evaluation)?;
    log.log(json!({
        "event": "evaluated", "run": cfg.name, "frames": evaluation.overall.count,
        "close_position_rmse": evaluation.close.as_ref().map(|r| r.position_rmse()),
        "overall_position_rmse": evaluation.overall.position_rmse(),
    }));
    Ok((
        RunResult {
            name: cfg.name.clone(),
            modalities: cfg.modalities.to_string(),
            trained,
            outcome,
            evaluation,
        },
        record,
    ))
}

/// Runs every entry under `root/<name>`; a failing entry is recorded and the rest continue.
pub fn run_suite(entries: &[SuiteEntry], ds: &Dataset, root: &Path, log: &mut Logger<'_>) -> Result<Vec<SuiteRow>> {
    validate_suite(entries)?;
    let mut rows = Vec::new();
    for e in entries {
        let dir: PathBuf = root.join(&e.name);
        let result = run_one(&e.config, ds, &dir, log).map(|(r, _)| r).map_err(|err| {
            log.log(json!({"event": "failed", "run": e.name, "error": err.to_string()}));
            err.to_string()
        });
        rows.push(SuiteRow {
            name: e.name.clone(),
            result,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableScope {
    Close,
    Far,
    Overall,
}

impl TableScope {
    fn pick(self, e: &Evaluation) -> Option<&EvalReport> {
        match self {
            Self::Close => e.close.as_ref(),
            Self::Far => e.far.as_ref(),
            Self::Overall => Some(&e.overall),
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::Close => "close range",
            Self::Far => "far range",
            Self::Overall => "all cases",
        }
    }
}

/// RMSE and SD per state, one row per entry.
pub fn table(rows: &[SuiteRow], scope: TableScope) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Statistical results ({}), normalized units", scope.label());
    let _ = writeln!(
        s,
        "{:<14}{:<8}{:>8}{:>11}{:>11}{:>11}{:>11}{:>11}{:>11}",
        "method", "input", "frames", "RMSE p_x", "RMSE p_y", "RMSE d", "SD p_x", "SD p_y", "SD d"
    );
    for row in rows {
        match &row.result {
            Ok(r) => match scope.pick(&r.evaluation) {
                Some(rep) => {
                    let _ = writeln!(
                        s,
                        "{:<14}{:<8}{:>8}{:>11.5}{:>11.5}{:>11.5}{:>11.5}{:>11.5}{:>11.5}",
                        row.name, r.modalities, rep.count, rep.rmse[0], rep.rmse[1], rep.rmse[2], rep.sd[0], rep.sd[1], rep.sd[2]
                    );
                }
                None => {
                    let _ = writeln!(s, "{:<14}{:<8}{:>8}  (no frames in scope)", row.name, r.modalities, 0);
                }
            },
            Err(e) => {
                let _ = writeln!(s, "{:<14}failed: {e}", row.name);
            }
        }
    }
    s
}
