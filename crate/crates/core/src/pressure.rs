//! Still-water baselining and window extraction for the pressure array.

use crate::error::{CoreError, Result};
use crate::types::RelativePressureWindow;

/// Pascal per standard atmosphere, for display only.
pub const PA_PER_ATM: f64 = 101_325.0;

/// Multi-sensor time series, row-major `[sensors x len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureSeries {
    pub sensors: usize,
    pub len: usize,
    /// Hz
    pub rate_hz: f64,
    pub data: Vec<f64>,
}

impl PressureSeries {
    pub fn new(sensors: usize, len: usize, rate_hz: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != sensors * len {
            return Err(CoreError::Shape(format!(
                "pressure data has {} values, expected {sensors} x {len}",
                data.len()
            )));
        }
        if !(rate_hz > 0.0) {
            return Err(CoreError::Config(format!("sample rate must be positive, got {rate_hz}")));
        }
        Ok(Self {
            sensors,
            len,
            rate_hz,
            data,
        })
    }

    pub fn row(&self, sensor: usize) -> &[f64] {
        &self.data[sensor * self.len..(sensor + 1) * self.len]
    }
}

/// Raw absolute readings whose first `still_len` samples precede propeller start.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureRecord {
    pub series: PressureSeries,
    pub still_len: usize,
}

/// Per-sensor mean over the still-water segment.
pub fn still_water_baseline(record: &PressureRecord) -> Result<Vec<f64>> {
    let sl = record.still_len;
    if sl == 0 {
        return Err(CoreError::Empty("still-water segment"));
    }
    if sl > record.series.len {
        return Err(CoreError::Shape(format!(
            "still segment {sl} longer than series {}",
            record.series.len
        )));
    }
    Ok((0..record.series.sensors)
        .map(|i| record.series.row(i)[..sl].iter().sum::<f64>() / sl as f64)
        .collect())
}

/// Subtracts the per-sensor baseline from every sample.
pub fn relative_pressure(record: &PressureRecord, baseline: &[f64]) -> Result<PressureSeries> {
    let s = &record.series;
    if baseline.len() != s.sensors {
        return Err(CoreError::Shape(format!(
            "baseline has {} sensors, series has {}",
            baseline.len(),
            s.sensors
        )));
    }
    let mut data = Vec::with_capacity(s.data.len());
    for (i, b) in baseline.iter().enumerate() {
        data.extend(s.row(i).iter().map(|r| r - b));
    }
    PressureSeries::new(s.sensors, s.len, s.rate_hz, data)
}

/// Raw-sample step corresponding to `seconds` at the series rate; must be integral.
fn samples_for(seconds: f64, rate_hz: f64, what: &str) -> Result<usize> {
    let x = seconds * rate_hz;
    let n = x.round();
    if !(x >= 0.0) || (x - n).abs() > 1e-6 {
        return Err(CoreError::Config(format!(
            "{what} of {seconds} s is not a whole number of samples at {rate_hz} Hz"
        )));
    }
    Ok(n as usize)
}

/// `len` columns taken every `stride_s` seconds starting at `start_s`.
pub fn extract_window(series: &PressureSeries, start_s: f64, len: usize, stride_s: f64) -> Result<RelativePressureWindow> {
    let start = samples_for(start_s, series.rate_hz, "window start")?;
    let step = samples_for(stride_s, series.rate_hz, "window stride")?;
    if len == 0 || step == 0 {
        return Err(CoreError::Config("window needs length and stride > 0".into()));
    }
    let last = start + (len - 1) * step;
    if last >= series.len {
        return Err(CoreError::OutOfRange {
            what: "window end sample",
            value: last as f64,
            lo: 0.0,
            hi: (series.len - 1) as f64,
        });
    }
    let mut data = Vec::with_capacity(series.sensors * len);
    for i in 0..series.sensors {
        let row = series.row(i);
        data.extend((0..len).map(|k| row[start + k * step]));
    }
    Ok(RelativePressureWindow {
        sensors: series.sensors,
        len,
        stride_s,
        data,
    })
}

/// Number of raw samples covered by a window, first column to one past the last stride.
pub fn window_span(len: usize, stride_s: f64, rate_hz: f64) -> Result<usize> {
    Ok(len * samples_for(stride_s, rate_hz, "window stride")?)
}
