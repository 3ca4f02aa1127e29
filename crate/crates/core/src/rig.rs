//! Sensing-module geometry: pinhole camera, acoustic cone beams and the
//! projection of a range reading into image-plane bounds.
//!
//! Camera-aligned axes: `u` points right (pool `+x`), `v` points down, depth
//! looks along pool `+y`. Sensor offsets are measured from the camera's
//! optical centre in cm; acoustic boresights are parallel to the optical axis.
//!
//! The cone-to-rectangle convention: the beam cross-section at depth `r` is a
//! disc of radius `r tan θ` centred on the sensor's lateral offset. Under the
//! pinhole model its image is a disc centred at `c + f t / r` with radius
//! `f tan θ`, independent of range; the axis-aligned box around that disc,
//! clipped to the image, is the projected bound.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{CaseTriplet, MODEL_INPUT_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length, pixels.
    pub focal: f64,
    /// Principal point, pixels.
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    /// 224 x 224 model input with a 25° half field of view.
    fn default() -> Self {
        let size = MODEL_INPUT_SIZE;
        Self {
            focal: 240.0,
            cu: size as f64 / 2.0,
            cv: size as f64 / 2.0,
            width: size,
            height: size,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || self.width == 0 || self.height == 0 {
            return Err(CoreError::Config(format!("invalid camera {self:?}")));
        }
        if !(0.0..=self.width as f64).contains(&self.cu) || !(0.0..=self.height as f64).contains(&self.cv) {
            return Err(CoreError::Config("principal point outside image".into()));
        }
        Ok(())
    }

    /// Same field of view resampled to a `size x size` image.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            focal: self.focal * sx,
            cu: self.cu * sx,
            cv: self.cv * sy,
            width,
            height,
        }
    }

    /// Projects a camera-frame point (cm) to pixels; `None` behind the camera.
    pub fn project(&self, x: f64, y: f64, z: f64) -> Option<(f64, f64)> {
        (z > 0.0).then(|| (self.cu + self.focal * x / z, self.cv + self.focal * y / z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticSensorModel {
    pub index: usize,
    /// Offset from the camera along `u`, cm.
    pub t_u: f64,
    /// Offset from the camera along `v`, cm.
    pub t_v: f64,
    /// Cone half-angle, radians.
    pub half_angle: f64,
    /// cm
    pub min_range: f64,
    /// cm
    pub max_range: f64,
}

impl AcousticSensorModel {
    pub fn new(index: usize, t_u: f64, t_v: f64) -> Self {
        Self {
            index,
            t_u,
            t_v,
            half_angle: 15f64.to_radians(),
            min_range: 25.0,
            max_range: 400.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_angle > 0.0 && self.half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(CoreError::Config(format!(
                "sensor {}: cone half-angle {} outside (0, π/2)",
                self.index, self.half_angle
            )));
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(CoreError::Config(format!(
                "sensor {}: need 0 < min range < max range",
                self.index
            )));
        }
        Ok(())
    }
}

/// Everything the fusion geometry needs about the sensing module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigModel {
    pub camera: CameraModel,
    pub acoustic: Vec<AcousticSensorModel>,
    /// `(u, v)` offsets of the nine pressure ports from the camera, cm,
    /// indexed row-major from the top-left port.
    pub pressure_sensors: Vec<[f64; 2]>,
    /// Position of the module in the pool frame, cm.
    pub mount: [f64; 2],
    /// How far the target centre sits below the camera's optical axis, cm.
    pub target_offset_v: f64,
}

impl Default for RigModel {
    /// Lab rig: four active acoustic sensors around a 3 x 3 pressure array.
    fn default() -> Self {
        let acoustic = vec![
            AcousticSensorModel::new(0, -8.0, 6.0),
            AcousticSensorModel::new(1, 8.0, 6.0),
            AcousticSensorModel::new(2, -8.0, 18.0),
            AcousticSensorModel::new(3, 8.0, 18.0),
        ];
        let mut pressure_sensors = Vec::with_capacity(9);
        for v in [7.0, 12.0, 17.0] {
            for u in [-5.0, 0.0, 5.0] {
                pressure_sensors.push([u, v]);
            }
        }
        Self {
            camera: CameraModel::default(),
            acoustic,
            pressure_sensors,
            mount: [100.0, 50.0],
            target_offset_v: 12.0,
        }
    }
}

impl RigModel {
    /// All six mounted acoustic sensors active.
    pub fn six_sensor() -> Self {
        let mut rig = Self::default();
        rig.acoustic.push(AcousticSensorModel::new(4, -16.0, 12.0));
        rig.acoustic.push(AcousticSensorModel::new(5, 16.0, 12.0));
        rig
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let mut seen = std::collections::HashSet::new();
        for s in &self.acoustic {
            s.validate()?;
            if !seen.insert(s.index) {
                return Err(CoreError::Config(format!("duplicate acoustic sensor index {}", s.index)));
            }
        }
        if self.pressure_sensors.len() != crate::types::PRESSURE_SENSORS {
            return Err(CoreError::Config(format!(
                "expected {} pressure sensors, got {}",
                crate::types::PRESSURE_SENSORS,
                self.pressure_sensors.len()
            )));
        }
        Ok(())
    }

    /// Same rig with the camera resampled to `size x size`.
    pub fn with_image_size(&self, size: usize) -> Self {
        let mut rig = self.clone();
        rig.camera = self.camera.resized(size, size);
        rig
    }

    /// Target centre in camera-aligned coordinates `(u, v, depth)`, cm.
    pub fn target_in_camera(&self, case: &CaseTriplet) -> [f64; 3] {
        [
            case.p_x - self.mount[0],
            self.target_offset_v,
            case.p_y - self.mount[1],
        ]
    }

    /// Target position relative to one acoustic sensor, cm.
    pub fn target_in_sensor(&self, case: &CaseTriplet, sensor: &AcousticSensorModel) -> [f64; 3] {
        let [x, y, z] = self.target_in_camera(case);
        [x - sensor.t_u, y - sensor.t_v, z]
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let rig: RigModel = toml::from_str(s).map_err(|e| CoreError::Config(e.to_string()))?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("rig serializes")
    }
}

/// Axis-aligned pixel box `[u_l, u_u] x [v_l, v_u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageBounds {
    pub u_l: f64,
    pub u_u: f64,
    pub v_l: f64,
    pub v_u: f64,
}

/// Projects the cone cross-section at range `r_a` into clipped image bounds.
///
/// Returns `Ok(None)` when the projected box lies entirely outside the image.
pub fn project_cone(r_a: f64, sensor: &AcousticSensorModel, cam: &CameraModel) -> Result<Option<ImageBounds>> {
    if !(r_a.is_finite() && r_a >= sensor.min_range && r_a <= sensor.max_range) {
        return Err(CoreError::OutOfRange {
            what: "acoustic range",
            value: r_a,
            lo: sensor.min_range,
            hi: sensor.max_range,
        });
    }
    Ok(project_cone_unclipped(r_a, sensor, cam).clip(cam))
}

/// Cone bounds before clipping to the image.
pub fn project_cone_unclipped(r_a: f64, sensor: &AcousticSensorModel, cam: &CameraModel) -> ImageBounds {
    let uc = cam.cu + cam.focal * sensor.t_u / r_a;
    let vc = cam.cv + cam.focal * sensor.t_v / r_a;
    let half = cam.focal * sensor.half_angle.tan();
    ImageBounds {
        u_l: uc - half,
        u_u: uc + half,
        v_l: vc - half,
        v_u: vc + half,
    }
}

impl ImageBounds {
    pub fn clip(self, cam: &CameraModel) -> Option<ImageBounds> {
        let (w, h) = (cam.width as f64, cam.height as f64);
        let b = ImageBounds {
            u_l: self.u_l.clamp(0.0, w),
            u_u: self.u_u.clamp(0.0, w),
            v_l: self.v_l.clamp(0.0, h),
            v_u: self.v_u.clamp(0.0, h),
        };
        (b.u_l < b.u_u && b.v_l < b.v_u).then_some(b)
    }
}

/// Whether the target centre lies inside the sensor's closed reception cone.
pub fn in_reception_field(case: &CaseTriplet, sensor: &AcousticSensorModel, rig: &RigModel) -> bool {
    let [x, y, z] = rig.target_in_sensor(case, sensor);
    point_in_cone([x, y, z], sensor)
}

pub(crate) fn point_in_cone([x, y, z]: [f64; 3], sensor: &AcousticSensorModel) -> bool {
    if z <= 0.0 {
        return false;
    }
    let dist = (x * x + y * y + z * z).sqrt();
    let off_axis = (x * x + y * y).sqrt().atan2(z);
    off_axis <= sensor.half_angle && dist >= sensor.min_range && dist <= sensor.max_range
}
