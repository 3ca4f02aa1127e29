//! Network-ready frames: RGB plus acoustic attention as bytes, the gated
//! pressure window, and the normalized target.

use std::collections::BTreeMap;

use trifusion_core::dataio::{Dataset, DatasetSource, FrameRef, RunConfig};
use trifusion_core::fusion::{build_attention, AcousticStats, RangeSource};
use trifusion_core::objectives::normalize_state;
use trifusion_core::seed::derive_seed;
use trifusion_core::{unit_from_u8, unit_to_u8, NormalizedState, PressureData, SensorFrame};
use trifusion_net::{Batch, NetConfig, Scalar};

use crate::error::{HarnessError, Result};

/// Cases at or within this depth count as close range in reports.
pub const CLOSE_RANGE_CM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: FrameRef,
    pub p_x: f64,
    pub p_y: f64,
    /// `[C, S, S]` quantized image-branch input; empty without that branch.
    pub image: Vec<u8>,
    /// Row-major `[9, L]` relative pressure in Pa when usable.
    pub pressure: Option<Vec<f64>>,
    pub truth: NormalizedState,
}

impl Frame {
    pub fn close(&self) -> bool {
        self.p_y <= CLOSE_RANGE_CM
    }
}

/// Picks the frames a run sees; with `pressure_cases_only` the far cases are dropped.
pub fn select(refs: &[FrameRef], ds: &Dataset, cfg: &RunConfig) -> Vec<FrameRef> {
    refs.iter()
        .filter(|r| {
            !cfg.pressure_cases_only
                || ds
                    .manifest
                    .entry(&r.case_id)
                    .is_some_and(|e| cfg.pressure_rule.pressure_usable(e.p_y))
        })
        .cloned()
        .collect()
}

fn image_input(frame: &SensorFrame, ds: &Dataset, cfg: &RunConfig, r: &FrameRef, stats: &[Option<AcousticStats>]) -> Result<Vec<u8>> {
    let m = cfg.modalities;
    if !m.has_image_branch() {
        return Ok(Vec::new());
    }
    let img = &frame.image;
    let hw = img.height * img.width;
    let mut out = Vec::with_capacity(m.image_channels() * hw);
    if m.optical {
        out.extend(img.data.iter().map(|v| unit_to_u8(*v)));
    }
    if m.acoustic {
        let seed = derive_seed(cfg.seed, &[&r.case_id, &r.index.to_string(), "attention"]);
        let rig = ds.manifest.image_rig();
        let att = build_attention(frame, RangeSource::Stats(stats), &rig, &cfg.fusion, seed)?;
        out.extend(att.heatmap.field.iter().map(|v| unit_to_u8(*v)));
    }
    Ok(out)
}

/// Loads and prepares `refs` in order.
pub fn load_frames(ds: &Dataset, refs: &[FrameRef], cfg: &RunConfig) -> Result<Vec<Frame>> {
    let size = ds.manifest.image_size;
    if cfg.modalities.has_image_branch() && size != cfg.network.image_size {
        return Err(HarnessError::Usage(format!(
            "dataset images are {size} px but the network expects {}",
            cfg.network.image_size
        )));
    }
    let mut by_case: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, r) in refs.iter().enumerate() {
        by_case.entry(&r.case_id).or_default().push(k);
    }
    let mut out: Vec<Option<Frame>> = vec![None; refs.len()];
    for (case_id, slots) in by_case {
        let data = ds.load_case(case_id)?;
        let stats = data.acoustic_stats(&cfg.fusion);
        let e = &data.entry;
        let truth = normalize_state(&e.case().state())?;
        for k in slots {
            let r = &refs[k];
            let frame = data.frame(ds, r.index)?;
            let pressure = match (&frame.pressure, cfg.modalities.pressure) {
                (PressureData::Present(w), true) if cfg.pressure_rule.pressure_usable(e.p_y) => Some(w.data.clone()),
                _ => None,
            };
            let image = image_input(&frame, ds, cfg, r, &stats)?;
            out[k] = Some(Frame {
                id: r.clone(),
                p_x: e.p_x,
                p_y: e.p_y,
                image,
                pressure,
                truth,
            });
        }
    }
    Ok(out.into_iter().map(|f| f.expect("every slot filled")).collect())
}

/// Assembles a network batch from frames `idx`.
pub fn make_batch<T: Scalar>(net: &NetConfig, frames: &[Frame], idx: &[usize]) -> Result<Batch<T>> {
    let images: Option<Vec<f32>> = net
        .uses_image()
        .then(|| idx.iter().flat_map(|&i| frames[i].image.iter().map(|b| unit_from_u8(*b))).collect());
    let pressure: Vec<Option<&[f64]>> = idx.iter().map(|&i| frames[i].pressure.as_deref()).collect();
    Ok(Batch::build(net, images.as_deref(), &pressure)?)
}
