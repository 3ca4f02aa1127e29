//! Test-set evaluation with close/far partitions and a replayable record file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trifusion_core::dataio::{Dataset, FrameRef, RunConfig};
use trifusion_core::objectives::{eval_report, EvalReport};
use trifusion_core::{CaseTriplet, CoreError, Direction, NormalizedState};
use trifusion_net::{checkpoint, FusionNet};

use crate::error::{HarnessError, Result};
use crate::frames::{load_frames, select, CLOSE_RANGE_CM};
use crate::train::{net_config, predict_frames};

/// One evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub case_id: String,
    pub index: usize,
    pub p_x: f64,
    pub p_y: f64,
    pub d: Direction,
    pub truth: [f64; 3],
    pub pred: [f64; 3],
}

impl RecordRow {
    pub fn close(&self) -> bool {
        self.p_y <= CLOSE_RANGE_CM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub run: String,
    pub modalities: String,
    pub rows: Vec<RecordRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: EvalReport,
    pub close: Option<EvalReport>,
    pub far: Option<EvalReport>,
}

impl Evaluation {
    pub fn to_text(&self) -> String {
        let mut s = format!("== overall ==\n{}", self.overall.to_text());
        if let Some(c) = &self.close {
            s += &format!("== close range (p_y <= {CLOSE_RANGE_CM} cm) ==\n{}", c.to_text());
        }
        if let Some(f) = &self.far {
            s += &format!("== far range ==\n{}", f.to_text());
        }
        s
    }
}

fn report(rows: &[&RecordRow]) -> Result<Option<EvalReport>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let preds: Vec<_> = rows.iter().map(|r| NormalizedState::from_array(r.pred)).collect();
    let truth: Vec<_> = rows.iter().map(|r| NormalizedState::from_array(r.truth)).collect();
    Ok(Some(eval_report(&preds, &truth)?))
}

/// Recomputes all reports from a record; the same path `evaluate` uses.
pub fn evaluation_from_record(record: &Record) -> Result<Evaluation> {
    let all: Vec<&RecordRow> = record.rows.iter().collect();
    let overall = report(&all)?.ok_or_else(|| HarnessError::Usage("empty record".into()))?;
    let close: Vec<&RecordRow> = record.rows.iter().filter(|r| r.close()).collect();
    let far: Vec<&RecordRow> = record.rows.iter().filter(|r| !r.close()).collect();
    Ok(Evaluation {
        overall,
        close: report(&close)?,
        far: report(&far)?,
    })
}

/// Predicts every selected test frame with `net`.
pub fn record_with(net: &mut FusionNet<f32>, cfg: &RunConfig, ds: &Dataset, test: &[FrameRef]) -> Result<Record> {
    if net.config != net_config(cfg) {
        return Err(HarnessError::Net(trifusion_net::NetError::Checkpoint(
            "checkpoint network does not match the run configuration".into(),
        )));
    }
    let refs = select(test, ds, cfg);
    let frames = load_frames(ds, &refs, cfg)?;
    if frames.is_empty() {
        return Err(HarnessError::Usage("no test frames selected".into()));
    }
    let preds = predict_frames(net, &frames, cfg.optimizer.batch_size)?;
    let rows = frames
        .iter()
        .zip(preds)
        .map(|(f, p)| {
            Ok(RecordRow {
                case_id: f.id.case_id.clone(),
                index: f.id.index,
                p_x: f.p_x,
                p_y: f.p_y,
                d: CaseTriplet::parse_id(&f.id.case_id)?.d,
                truth: f.truth.to_array(),
                pred: p.to_array(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Record {
        run: cfg.name.clone(),
        modalities: cfg.modalities.to_string(),
        rows,
    })
}

pub fn evaluate(checkpoint_path: &Path, cfg: &RunConfig, ds: &Dataset, test: &[FrameRef]) -> Result<(Evaluation, Record)> {
    let mut net = checkpoint::load::<f32>(checkpoint_path)?;
    let record = record_with(&mut net, cfg, ds, test)?;
    Ok((evaluation_from_record(&record)?, record))
}

pub fn write_record(record: &Record, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(record).expect("record serializes");
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e))
}

pub fn read_record(path: &Path) -> Result<Record> {
    let s = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| {
        HarnessError::Data(CoreError::Malformed {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    })
}
