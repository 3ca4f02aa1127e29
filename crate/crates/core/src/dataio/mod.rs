//! On-disk dataset layout, loading and checksums.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<case_id>/meta.json
//! <root>/<case_id>/acoustic.csv     t,a0,a1,...   (cm, -1 = no echo)
//! <root>/<case_id>/pressure.csv     t,p0,...,p8   (absolute Pa)
//! <root>/<case_id>/images/NNNN.png  8-bit RGB
//! ```
//!
//! Each case checksum is SHA-256 over its files in sorted path order, each
//! contributing its relative path, byte length and contents.

mod config;
mod split;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::*;
pub use split::*;

use crate::error::{CoreError, Result};
use crate::fusion::{filter_and_stats, AcousticStats, FusionParams};
use crate::pressure::{extract_window, relative_pressure, still_water_baseline, PressureRecord, PressureSeries};
use crate::rig::RigModel;
use crate::simulator::{AcousticSeries, CaseRecording, LocationGrid, Timing};
use crate::types::{
    unit_from_u8, unit_to_u8, CaseTriplet, Direction, ImageTensor, PressureData, RelativePressureWindow, SensorFrame,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub p_x: f64,
    pub p_y: f64,
    pub d: Direction,
    pub frames: usize,
    pub pressure_available: bool,
    /// Paths relative to the case directory.
    pub files: Vec<String>,
    pub checksum: String,
}

impl CaseEntry {
    pub fn case(&self) -> CaseTriplet {
        CaseTriplet::new(self.p_x, self.p_y, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub grid: LocationGrid,
    pub image_size: usize,
    pub rig: RigModel,
    pub timing: Timing,
    pub pressure_rule: ModalityRule,
    pub seed: u64,
    pub cases: Vec<CaseEntry>,
}

impl DatasetManifest {
    pub fn entry(&self, case_id: &str) -> Option<&CaseEntry> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn total_frames(&self) -> usize {
        self.cases.iter().map(|c| c.frames).sum()
    }

    /// Rig with the camera matched to the stored image size.
    pub fn image_rig(&self) -> RigModel {
        self.rig.with_image_size(self.image_size)
    }
}

/// Per-case sidecar with the time base of every stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub timestamps: Vec<f64>,
    pub acoustic_rate_hz: f64,
    pub acoustic_start_s: f64,
    pub pressure_rate_hz: f64,
    pub still_len: usize,
    pub window_len: usize,
    pub window_stride_s: f64,
}

fn image_name(k: usize) -> String {
    format!("images/{k:04}.png")
}

fn case_files(frames: usize) -> Vec<String> {
    let mut files = vec!["acoustic.csv".to_string(), "meta.json".into(), "pressure.csv".into()];
    files.extend((0..frames).map(image_name));
    files.sort();
    files
}

fn case_checksum(dir: &Path, files: &[String]) -> Result<String> {
    let mut sorted: Vec<&String> = files.iter().collect();
    sorted.sort();
    let mut h = Sha256::new();
    for rel in sorted {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let map = |e: csv::Error| CoreError::Config(e.to_string());
    w.write_record(&header).map_err(map)?;
    for row in rows {
        // `Display` for f64 is shortest round-trip, so values reload exactly.
        w.write_record(row.iter().map(|v| v.to_string())).map_err(map)?;
    }
    w.into_inner().map_err(|e| CoreError::Config(e.to_string()))
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(CoreError::Shape(format!("PNG export needs 3 channels, got {}", img.channels)));
    }
    let (h, w) = (img.height, img.width);
    let mut hwc = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for c in 0..3 {
            hwc.push(unit_to_u8(img.data[c * h * w + i]));
        }
    }
    let rgb = image::RgbImage::from_raw(w as u32, h as u32, hwc).expect("buffer size matches");
    let mut out = std::io::Cursor::new(Vec::new());
    rgb.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| CoreError::Config(e.to_string()))?;
    Ok(out.into_inner())
}

fn decode_png(path: &Path, size: usize) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| CoreError::malformed(path, e))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (w, h) != (size, size) {
        return Err(CoreError::malformed(path, format!("image is {w}x{h}, expected {size}x{size}")));
    }
    let mut t = ImageTensor::zeros(3, h, w);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            t.data[c * h * w + i] = unit_from_u8(px[c]);
        }
    }
    Ok(t)
}

/// Writes one simulated case and returns its manifest entry.
pub fn write_case(root: &Path, rec: &CaseRecording, timing: &Timing, rule: &ModalityRule) -> Result<CaseEntry> {
    let id = rec.case.id();
    let dir = root.join(&id);
    let sensors = rec.acoustic.sensors;
    let mut header = vec!["t".to_string()];
    header.extend((0..sensors).map(|j| format!("a{j}")));
    let ac = &rec.acoustic;
    let rows = ac.rows.iter().enumerate().map(|(k, r)| {
        let mut row = vec![ac.start_s + k as f64 / ac.rate_hz];
        row.extend_from_slice(r);
        row
    });
    write(&dir.join("acoustic.csv"), &csv_bytes(header, rows)?)?;

    let s = &rec.pressure.series;
    let mut header = vec!["t".to_string()];
    header.extend((0..s.sensors).map(|i| format!("p{i}")));
    let rows = (0..s.len).map(|k| {
        let mut row = vec![k as f64 / s.rate_hz];
        row.extend((0..s.sensors).map(|i| s.data[i * s.len + k]));
        row
    });
    write(&dir.join("pressure.csv"), &csv_bytes(header, rows)?)?;

    let meta = CaseMeta {
        case_id: id.clone(),
        timestamps: rec.timestamps.clone(),
        acoustic_rate_hz: ac.rate_hz,
        acoustic_start_s: ac.start_s,
        pressure_rate_hz: s.rate_hz,
        still_len: rec.pressure.still_len,
        window_len: timing.window_len,
        window_stride_s: timing.window_stride_s,
    };
    write(
        &dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
    )?;
    for (k, img) in rec.images.iter().enumerate() {
        write(&dir.join(image_name(k)), &encode_png(img)?)?;
    }
    let files = case_files(rec.images.len());
    let checksum = case_checksum(&dir, &files)?;
    Ok(CaseEntry {
        case_id: id,
        p_x: rec.case.p_x,
        p_y: rec.case.p_y,
        d: rec.case.d,
        frames: rec.images.len(),
        pressure_available: rule.pressure_usable(rec.case.p_y),
        files,
        checksum,
    })
}

pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    let s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write(&root.join(MANIFEST_FILE), s.as_bytes())
}

/// Access to a dataset's cases, independent of its storage format.
pub trait DatasetSource {
    fn manifest(&self) -> &DatasetManifest;
    fn load_case(&self, case_id: &str) -> Result<CaseData>;
}

/// A verified dataset directory; case data is read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

/// Loads and verifies a dataset: every listed file must exist and every case
/// checksum must match.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mpath = root.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(CoreError::MissingFile(mpath));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| CoreError::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| CoreError::malformed(&mpath, e))?;
    if manifest.version != FORMAT_VERSION {
        return Err(CoreError::malformed(
            &mpath,
            format!("format version {} (expected {FORMAT_VERSION})", manifest.version),
        ));
    }
    manifest.rig.validate()?;
    for entry in &manifest.cases {
        let dir = root.join(&entry.case_id);
        for rel in &entry.files {
            let p = dir.join(rel);
            if !p.is_file() {
                return Err(CoreError::MissingFile(p));
            }
        }
        if entry.files.len() != case_files(entry.frames).len() {
            return Err(CoreError::malformed(&mpath, format!("file list of {} is incomplete", entry.case_id)));
        }
        if case_checksum(&dir, &entry.files)? != entry.checksum {
            return Err(CoreError::Checksum {
                case_id: entry.case_id.clone(),
                path: dir,
            });
        }
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}

fn read_csv(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CoreError::malformed(path, e))?;
    let header = r.headers().map_err(|e| CoreError::malformed(path, e))?.len();
    if header != width {
        return Err(CoreError::malformed(path, format!("{header} columns, expected {width}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CoreError::malformed(path, e))?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| CoreError::malformed(path, format!("row {}: {e}", line + 1)))?;
        if row.len() != width {
            return Err(CoreError::malformed(path, format!("row {} has {} fields", line + 1, row.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CoreError::malformed(path, "no data rows"));
    }
    Ok(rows)
}

impl Dataset {
    pub fn case_dir(&self, case_id: &str) -> PathBuf {
        self.root.join(case_id)
    }

    /// Image `index` of a case as `[3 x S x S]` in `[0, 1]`.
    pub fn image(&self, case_id: &str, index: usize) -> Result<ImageTensor> {
        decode_png(&self.case_dir(case_id).join(image_name(index)), self.manifest.image_size)
    }

    /// Full frame with raw readings; pressure follows the manifest rule.
    pub fn frame(&self, case_id: &str, index: usize) -> Result<SensorFrame> {
        self.load_case(case_id)?.frame(self, index)
    }

    /// Counts frames that fail [`crate::types::validate_frame`].
    pub fn count_violations(&self) -> Result<usize> {
        let rig = self.manifest.image_rig();
        let mut bad = 0;
        for entry in &self.manifest.cases {
            let data = self.load_case(&entry.case_id)?;
            for k in 0..entry.frames {
                if crate::types::validate_frame(&data.frame(self, k)?, &rig).is_err() {
                    bad += 1;
                }
            }
        }
        Ok(bad)
    }
}

impl DatasetSource for Dataset {
    fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn load_case(&self, case_id: &str) -> Result<CaseData> {
        let entry = self
            .manifest
            .entry(case_id)
            .ok_or_else(|| CoreError::Config(format!("unknown case {case_id}")))?
            .clone();
        let dir = self.case_dir(case_id);
        let mpath = dir.join("meta.json");
        let meta: CaseMeta = serde_json::from_str(&fs::read_to_string(&mpath).map_err(|e| CoreError::io(&mpath, e))?)
            .map_err(|e| CoreError::malformed(&mpath, e))?;
        if meta.timestamps.len() != entry.frames {
            return Err(CoreError::malformed(&mpath, "timestamp count differs from frame count"));
        }
        let sensors = self.manifest.rig.acoustic.len();
        let ac_rows = read_csv(&dir.join("acoustic.csv"), sensors + 1)?;
        let acoustic = AcousticSeries {
            rate_hz: meta.acoustic_rate_hz,
            start_s: meta.acoustic_start_s,
            sensors,
            rows: ac_rows.into_iter().map(|r| r[1..].to_vec()).collect(),
        };
        let n = self.manifest.rig.pressure_sensors.len();
        let p_path = dir.join("pressure.csv");
        let p_rows = read_csv(&p_path, n + 1)?;
        let len = p_rows.len();
        let mut data = vec![0.0; n * len];
        for (k, row) in p_rows.iter().enumerate() {
            for i in 0..n {
                data[i * len + k] = row[i + 1];
            }
        }
        let record = PressureRecord {
            series: PressureSeries::new(n, len, meta.pressure_rate_hz, data)?,
            still_len: meta.still_len,
        };
        let baseline = still_water_baseline(&record)?;
        let relative = relative_pressure(&record, &baseline)?;
        Ok(CaseData {
            entry,
            meta,
            acoustic,
            record,
            baseline,
            relative,
        })
    }
}

/// Everything stored for one case, with the still-water baseline applied.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub entry: CaseEntry,
    pub meta: CaseMeta,
    pub acoustic: AcousticSeries,
    pub record: PressureRecord,
    pub baseline: Vec<f64>,
    pub relative: PressureSeries,
}

impl CaseData {
    /// Per-sensor statistics of the filtered readings; `None` where nothing survives.
    pub fn acoustic_stats(&self, params: &FusionParams) -> Vec<Option<AcousticStats>> {
        (0..self.acoustic.sensors)
            .map(|j| filter_and_stats(&self.acoustic.column(j), params.filter_lo, params.filter_hi, j).ok())
            .collect()
    }

    /// Acoustic readings nearest to frame `index`.
    pub fn readings(&self, index: usize) -> Vec<f64> {
        self.acoustic.at(self.meta.timestamps[index]).to_vec()
    }

    /// Relative-pressure window whose last column is the latest sample at or
    /// before the frame time.
    pub fn window(&self, index: usize) -> Result<RelativePressureWindow> {
        let rate = self.meta.pressure_rate_hz;
        let t = *self
            .meta
            .timestamps
            .get(index)
            .ok_or(CoreError::OutOfRange {
                what: "frame index",
                value: index as f64,
                lo: 0.0,
                hi: self.entry.frames as f64 - 1.0,
            })?;
        let step = (self.meta.window_stride_s * rate).round() as usize;
        let end = (t * rate + 1e-9).floor() as usize;
        let span = (self.meta.window_len - 1) * step;
        if end < span {
            return Err(CoreError::OutOfRange {
                what: "window start",
                value: end as f64 - span as f64,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        extract_window(
            &self.relative,
            (end - span) as f64 / rate,
            self.meta.window_len,
            self.meta.window_stride_s,
        )
    }

    pub fn frame(&self, ds: &Dataset, index: usize) -> Result<SensorFrame> {
        let image = ds.image(&self.entry.case_id, index)?;
        let frame = SensorFrame {
            image,
            acoustic: self.readings(index),
            pressure: PressureData::Present(self.window(index)?),
            case: self.entry.case(),
            timestamp: self.meta.timestamps[index],
        };
        Ok(modality_gate(frame, &ds.manifest.pressure_rule))
    }
}

/// Marks pressure absent for frames beyond the rule's range.
pub fn modality_gate(mut frame: SensorFrame, rule: &ModalityRule) -> SensorFrame {
    if !rule.pressure_usable(frame.case.p_y) {
        frame.pressure = PressureData::Absent;
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RelativePressureWindow;

    fn frame_at(p_y: f64) -> SensorFrame {
        SensorFrame {
            image: ImageTensor::zeros(3, 4, 4),
            acoustic: vec![],
            pressure: PressureData::Present(RelativePressureWindow {
                sensors: 9,
                len: 1,
                stride_s: 0.5,
                data: vec![0.0; 9],
            }),
            case: CaseTriplet::new(100.0, p_y, Direction::S),
            timestamp: 0.0,
        }
    }

    #[test]
    fn gate_examples() {
        let rule = ModalityRule::default();
        assert!(modality_gate(frame_at(70.0), &rule).pressure.is_present());
        assert!(modality_gate(frame_at(90.0), &rule).pressure.is_present());
        assert!(!modality_gate(frame_at(190.0), &rule).pressure.is_present());
        assert!(modality_gate(frame_at(310.0), &ModalityRule::ALWAYS).pressure.is_present());
    }

    #[test]
    fn png_round_trip_is_exact() {
        let mut img = ImageTensor::zeros(3, 5, 7);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = unit_from_u8((i * 37 % 256) as u8);
        }
        let bytes = encode_png(&img).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        fs::write(&p, bytes).unwrap();
        assert!(decode_png(&p, 7).is_err());
        let mut square = ImageTensor::zeros(3, 6, 6);
        for (i, v) in square.data.iter_mut().enumerate() {
            *v = unit_from_u8((i * 53 % 256) as u8);
        }
        fs::write(&p, encode_png(&square).unwrap()).unwrap();
        assert_eq!(decode_png(&p, 6).unwrap(), square);
    }

    #[test]
    fn csv_numbers_round_trip() {
        let vals = vec![vec![0.1, 101_325.123_456_789_01, -1.0, 1e-17]];
        let bytes = csv_bytes(vec!["a".into(), "b".into(), "c".into(), "d".into()], vals.clone().into_iter()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_csv(&p, 4).unwrap(), vals);
        assert!(read_csv(&p, 3).is_err());
        fs::write(&p, "a,b\n1,zz\n").unwrap();
        let err = read_csv(&p, 2).unwrap_err().to_string();
        assert!(err.contains("x.csv") && err.contains("row 1"), "{err}");
    }
}
