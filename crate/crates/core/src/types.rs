//! Domain records shared by every stage of the pipeline: leader states,
//! case triplets and synchronized multi-modal frames.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rig::RigModel;

/// Normalization range of `p_x`, cm.
pub const P_X_RANGE: (f64, f64) = (0.0, 200.0);
/// Normalization range of `p_y`, cm.
pub const P_Y_RANGE: (f64, f64) = (0.0, 400.0);

/// Acoustic reading used when a sensor receives no echo from the target.
pub const NO_ECHO: f64 = -1.0;

/// Number of pressure sensors on the sensing module.
pub const PRESSURE_SENSORS: usize = 9;

/// Canonical model input edge length, pixels.
pub const MODEL_INPUT_SIZE: usize = 224;

/// Heading of the leader vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    /// Turn left.
    L,
    /// Move straight (forward or backward).
    S,
    /// Turn right.
    R,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::L, Direction::S, Direction::R];

    /// Regression code: 0, 0.5 and 1 for L, S and R.
    pub fn code(self) -> f64 {
        match self {
            Direction::L => 0.0,
            Direction::S => 0.5,
            Direction::R => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::L => 0,
            Direction::S => 1,
            Direction::R => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Direction::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::L => "Turn Left",
            Direction::S => "Move Straight",
            Direction::R => "Turn Right",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Direction::L => "L",
            Direction::S => "S",
            Direction::R => "R",
        };
        f.write_str(s)
    }
}

impl FromStr for Direction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Direction::L),
            // The original data uses M for "move straight".
            "S" | "M" => Ok(Direction::S),
            "R" => Ok(Direction::R),
            other => Err(CoreError::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Planar state of the leader: position in the pool frame plus heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderState {
    /// cm
    pub p_x: f64,
    /// cm
    pub p_y: f64,
    pub d: Direction,
}

impl LeaderState {
    pub fn new(p_x: f64, p_y: f64, d: Direction) -> Result<Self> {
        check_range("p_x", p_x, P_X_RANGE)?;
        check_range("p_y", p_y, P_Y_RANGE)?;
        Ok(Self { p_x, p_y, d })
    }
}

pub(crate) fn check_range(what: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(CoreError::OutOfRange {
            what,
            value,
            lo,
            hi,
        })
    }
}

/// State mapped to the unit cube. Ground truth is exactly in `[0, 1]`;
/// network predictions are stored unclamped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedState {
    pub p_xn: f64,
    pub p_yn: f64,
    pub d_n: f64,
}

impl NormalizedState {
    pub fn to_array(self) -> [f64; 3] {
        [self.p_xn, self.p_yn, self.d_n]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            p_xn: a[0],
            p_yn: a[1],
            d_n: a[2],
        }
    }
}

/// One sampled case: a grid location plus one of the three headings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseTriplet {
    pub p_x: f64,
    pub p_y: f64,
    pub d: Direction,
}

impl CaseTriplet {
    pub fn new(p_x: f64, p_y: f64, d: Direction) -> Self {
        Self { p_x, p_y, d }
    }

    pub fn id(&self) -> String {
        make_case_id(self)
    }

    pub fn state(&self) -> LeaderState {
        LeaderState {
            p_x: self.p_x,
            p_y: self.p_y,
            d: self.d,
        }
    }

    /// Parses the output of [`make_case_id`].
    pub fn parse_id(id: &str) -> Result<Self> {
        let bad = || CoreError::Config(format!("malformed case id {id:?}"));
        let mut parts = id.split('_');
        let px = parts.next().and_then(|p| p.strip_prefix("px")).ok_or_else(bad)?;
        let py = parts.next().and_then(|p| p.strip_prefix("py")).ok_or_else(bad)?;
        let d = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            p_x: px.parse().map_err(|_| bad())?,
            p_y: py.parse().map_err(|_| bad())?,
            d: d.parse()?,
        })
    }
}

/// Filesystem-safe identifier `px<p_x>_py<p_y>_<d>`.
pub fn make_case_id(case: &CaseTriplet) -> String {
    format!("px{}_py{}_{}", case.p_x, case.p_y, case.d)
}

/// Planar multi-channel image, channel-major (`[C x H x W]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// `[Q x T]` window of still-water-relative pressures, Pa, row-major by sensor.
/// 8-bit level to the `[0, 1]` intensity used everywhere in memory.
#[inline]
pub fn unit_from_u8(b: u8) -> f32 {
    (b as f64 / 255.0) as f32
}

/// Nearest 8-bit level; exact inverse of [`unit_from_u8`] on its range.
#[inline]
pub fn unit_to_u8(v: f32) -> u8 {
    ((v as f64).clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePressureWindow {
    pub sensors: usize,
    pub len: usize,
    /// Seconds between consecutive columns.
    pub stride_s: f64,
    pub data: Vec<f64>,
}

impl RelativePressureWindow {
    pub fn row(&self, sensor: usize) -> &[f64] {
        &self.data[sensor * self.len..(sensor + 1) * self.len]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PressureData {
    Present(RelativePressureWindow),
    /// Modality flagged unavailable for this frame.
    Absent,
}

impl PressureData {
    pub fn window(&self) -> Option<&RelativePressureWindow> {
        match self {
            PressureData::Present(w) => Some(w),
            PressureData::Absent => None,
        }
    }

    pub fn is_present(&self) -> bool {
        matches!(self, PressureData::Present(_))
    }
}

/// One synchronized sample from all three modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    /// `[3 x H x W]`, values in `[0, 1]`.
    pub image: ImageTensor,
    /// One reading per acoustic sensor, cm, or [`NO_ECHO`].
    pub acoustic: Vec<f64>,
    pub pressure: PressureData,
    pub case: CaseTriplet,
    /// seconds
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ImageShape {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    ImageRange { index: usize, value: f32 },
    AcousticCount { expected: usize, found: usize },
    AcousticValue { sensor: usize, value: f64 },
    PressureChannels { expected: usize, found: usize },
    PressureShape { expected: usize, found: usize },
    PressureValue { index: usize },
    PressureMissing,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ImageShape { expected, found } => {
                write!(f, "image shape {found:?} ≠ {expected:?}")
            }
            Violation::ImageRange { index, value } => {
                write!(f, "image range: value {value} at {index} outside [0, 1]")
            }
            Violation::AcousticCount { expected, found } => {
                write!(f, "acoustic sensor count {found} ≠ {expected}")
            }
            Violation::AcousticValue { sensor, value } => {
                write!(f, "acoustic reading {value} of sensor {sensor} is neither positive nor the no-echo sentinel")
            }
            Violation::PressureChannels { expected, found } => {
                write!(f, "pressure channel count {found} ≠ {expected}")
            }
            Violation::PressureShape { expected, found } => {
                write!(f, "pressure data length {found} ≠ {expected}")
            }
            Violation::PressureValue { index } => {
                write!(f, "pressure value at {index} is not finite")
            }
            Violation::PressureMissing => {
                write!(f, "pressure window empty but modality not flagged absent")
            }
        }
    }
}

/// Checks every frame invariant against the rig and returns all violations.
pub fn validate_frame(frame: &SensorFrame, rig: &RigModel) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let img = &frame.image;
    let expected = (3, rig.camera.height, rig.camera.width);
    let found = (img.channels, img.height, img.width);
    if found != expected || img.data.len() != img.channels * img.height * img.width {
        out.push(Violation::ImageShape { expected, found });
    }
    // One range violation is enough to flag the image.
    if let Some((index, &value)) = img
        .data
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        out.push(Violation::ImageRange { index, value });
    }

    if frame.acoustic.len() != rig.acoustic.len() {
        out.push(Violation::AcousticCount {
            expected: rig.acoustic.len(),
            found: frame.acoustic.len(),
        });
    }
    for (sensor, &value) in frame.acoustic.iter().enumerate() {
        let ok = value == NO_ECHO || (value.is_finite() && value > 0.0);
        if !ok {
            out.push(Violation::AcousticValue { sensor, value });
        }
    }

    if let PressureData::Present(w) = &frame.pressure {
        if w.len == 0 || w.data.is_empty() {
            out.push(Violation::PressureMissing);
        } else {
            if w.sensors != rig.pressure_sensors.len() {
                out.push(Violation::PressureChannels {
                    expected: rig.pressure_sensors.len(),
                    found: w.sensors,
                });
            }
            if w.data.len() != w.sensors * w.len {
                out.push(Violation::PressureShape {
                    expected: w.sensors * w.len,
                    found: w.data.len(),
                });
            }
            if let Some(index) = w.data.iter().position(|v| !v.is_finite()) {
                out.push(Violation::PressureValue { index });
            }
        }
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_ids() {
        let c = |x, y, d| make_case_id(&CaseTriplet::new(x, y, d));
        assert_eq!(c(40.0, 70.0, Direction::L), "px40_py70_L");
        assert_eq!(c(100.0, 190.0, Direction::S), "px100_py190_S");
        assert_eq!(c(160.0, 310.0, Direction::R), "px160_py310_R");
    }

    #[test]
    fn case_id_parses_back() {
        let case = CaseTriplet::new(140.0, 290.0, Direction::R);
        assert_eq!(CaseTriplet::parse_id(&case.id()).unwrap(), case);
        assert!(CaseTriplet::parse_id("px1_py2").is_err());
        assert!(CaseTriplet::parse_id("px1_py2_Q").is_err());
    }

    #[test]
    fn leader_state_range() {
        assert!(LeaderState::new(0.0, 400.0, Direction::S).is_ok());
        assert!(LeaderState::new(-0.1, 10.0, Direction::S).is_err());
        assert!(LeaderState::new(10.0, 400.5, Direction::S).is_err());
        assert!(LeaderState::new(f64::NAN, 10.0, Direction::S).is_err());
    }

    fn frame(rig: &RigModel) -> SensorFrame {
        SensorFrame {
            image: ImageTensor::zeros(3, rig.camera.height, rig.camera.width),
            acoustic: vec![NO_ECHO; rig.acoustic.len()],
            pressure: PressureData::Present(RelativePressureWindow {
                sensors: 9,
                len: 4,
                stride_s: 0.5,
                data: vec![0.0; 36],
            }),
            case: CaseTriplet::new(100.0, 90.0, Direction::S),
            timestamp: 0.0,
        }
    }

    #[test]
    fn well_formed_frame_validates() {
        let rig = RigModel::default();
        assert_eq!(validate_frame(&frame(&rig), &rig), Ok(()));
        let mut f = frame(&rig);
        f.pressure = PressureData::Absent;
        f.acoustic[0] = 120.0;
        assert_eq!(validate_frame(&f, &rig), Ok(()));
    }

    #[test]
    fn pressure_row_count_violation() {
        let rig = RigModel::default();
        let mut f = frame(&rig);
        f.pressure = PressureData::Present(RelativePressureWindow {
            sensors: 8,
            len: 4,
            stride_s: 0.5,
            data: vec![0.0; 32],
        });
        let v = validate_frame(&f, &rig).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "pressure channel count 8 ≠ 9");
    }

    #[test]
    fn image_range_violation() {
        let rig = RigModel::default();
        let mut f = frame(&rig);
        f.image.data[17] = 1.5;
        let v = validate_frame(&f, &rig).unwrap_err();
        assert!(v[0].to_string().starts_with("image range"));
    }

    #[test]
    fn collects_every_violation() {
        let rig = RigModel::default();
        let mut f = frame(&rig);
        f.image.data[0] = -0.5;
        f.acoustic = vec![0.0];
        f.pressure = PressureData::Present(RelativePressureWindow {
            sensors: 9,
            len: 0,
            stride_s: 0.5,
            data: vec![],
        });
        let v = validate_frame(&f, &rig).unwrap_err();
        assert_eq!(v.len(), 4, "{v:?}");
        assert!(v.contains(&Violation::PressureMissing));
    }
}
