//! Synthetic pool: renders camera frames, acoustic range series and the
//! propeller-wake pressure record for each case.
//!
//! Pool frame: `x` across the pool, `y` away from the sensing module, both cm.
//! A case position is the centre of the target's propeller plane; the body
//! extends forward from it along the heading. Straight is parallel to `+y`,
//! left and right are rotated by the configured yaw toward `-x` and `+x`.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataio::{write_case, write_manifest, CaseEntry, DatasetManifest, ModalityRule, FORMAT_VERSION};
use crate::error::{CoreError, Result};
use crate::pressure::{PressureRecord, PressureSeries};
use crate::rig::{in_reception_field, RigModel};
use crate::seed::{derived_rng, Rng};
use crate::types::{unit_from_u8, CaseTriplet, Direction, ImageTensor, NO_ECHO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAppearance {
    /// Body length along the heading, cm.
    pub length: f64,
    pub radius: f64,
    /// Lateral distance of each propeller from the body axis, cm.
    pub prop_offset: f64,
    pub prop_radius: f64,
    /// Yaw of the left and right orientations, degrees.
    pub turn_yaw_deg: f64,
    pub nose_color: [f64; 3],
    pub tail_color: [f64; 3],
    /// Stripe along the port side of the tail half.
    pub band_color: [f64; 3],
    pub prop_color: [f64; 3],
}

impl Default for TargetAppearance {
    fn default() -> Self {
        Self {
            length: 36.0,
            radius: 6.5,
            prop_offset: 5.0,
            prop_radius: 3.0,
            turn_yaw_deg: 45.0,
            nose_color: [0.95, 0.62, 0.12],
            tail_color: [0.92, 0.92, 0.88],
            band_color: [0.85, 0.12, 0.1],
            prop_color: [0.12, 0.12, 0.14],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-channel Gaussian pixel noise on `[0, 1]` intensities.
    pub pixel_sigma: f64,
    /// Acoustic range noise `sigma0 * (1 + kappa * dist)`, cm and 1/cm.
    pub acoustic_sigma0: f64,
    pub acoustic_kappa: f64,
    /// White sensor noise on every pressure sample, Pa.
    pub pressure_sigma: f64,
    /// Spread of the per-sensor calibration offsets, Pa.
    pub pressure_offset_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.02,
            acoustic_sigma0: 0.5,
            acoustic_kappa: 0.01,
            pressure_sigma: 2.0,
            pressure_offset_sigma: 30.0,
        }
    }
}

/// Wake amplitude model: `A0 (d_ref / d)^decay`, scaled by the jet
/// directivity and the action's thrust factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeModel {
    /// Pa at `d_ref`.
    pub amplitude: f64,
    /// cm
    pub d_ref: f64,
    pub decay: f64,
    /// Oscillation band, Hz.
    pub band: [f64; 2],
    /// Sinusoids per oscillation component.
    pub components: usize,
    /// Share of oscillation power that is independent per sensor.
    pub incoherent: f64,
    /// Log-amplitude spread of slow thrust gusts.
    pub gust_sigma: f64,
    /// Sensor response off the jet axis, `floor + (1 - floor) (1 + cos φ) / 2`.
    pub directivity_floor: f64,
    /// Signed `[left, right]` propeller thrust factors; negative reverses the jet.
    pub straight: [f64; 2],
    pub left: [f64; 2],
    pub right: [f64; 2],
    /// Onset ramp after the still segment, seconds.
    pub ramp_s: f64,
}

impl Default for WakeModel {
    fn default() -> Self {
        Self {
            amplitude: 1300.0,
            d_ref: 30.0,
            decay: 5.0,
            band: [0.2, 0.9],
            components: 5,
            incoherent: 0.5,
            gust_sigma: 0.2,
            directivity_floor: 0.4,
            straight: [1.0, 1.0],
            left: [-0.5, 1.0],
            right: [1.0, -0.5],
            ramp_s: 2.0,
        }
    }
}

impl WakeModel {
    pub fn activity(&self, d: Direction) -> [f64; 2] {
        match d {
            Direction::L => self.left,
            Direction::S => self.straight,
            Direction::R => self.right,
        }
    }

    /// Oscillation amplitude at distance `dist` on the jet axis with unit thrust.
    pub fn amplitude_at(&self, dist: f64) -> f64 {
        self.amplitude * (self.d_ref / dist.max(1e-6)).powf(self.decay)
    }

    pub fn directivity(&self, cos_phi: f64) -> f64 {
        self.directivity_floor + (1.0 - self.directivity_floor) * (1.0 + cos_phi) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude >= 0.0
            && self.d_ref > 0.0
            && self.decay > 0.0
            && self.band[0] > 0.0
            && self.band[1] >= self.band[0]
            && self.components > 0
            && (0.0..=1.0).contains(&self.incoherent)
            && self.gust_sigma >= 0.0
            && (0.0..=1.0).contains(&self.directivity_floor)
            && self.ramp_s >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid wake model {self:?}")))
        }
    }
}

/// Sampling rates and recording layout shared by every case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub frame_rate_hz: f64,
    pub acoustic_rate_hz: f64,
    pub pressure_rate_hz: f64,
    /// Still-water recording before the propellers start, seconds.
    pub still_s: f64,
    pub window_len: usize,
    /// Spacing of window columns, seconds.
    pub window_stride_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            frame_rate_hz: 4.0,
            acoustic_rate_hz: 10.0,
            pressure_rate_hz: 10.0,
            still_s: 30.0,
            window_len: 64,
            window_stride_s: 0.5,
        }
    }
}

impl Timing {
    /// Seconds between propeller start and the first frame, so the first
    /// window covers wake only.
    pub fn warmup_s(&self) -> f64 {
        (self.window_len.saturating_sub(1)) as f64 * self.window_stride_s
    }

    pub fn frame_time(&self, k: usize) -> f64 {
        self.still_s + self.warmup_s() + k as f64 / self.frame_rate_hz
    }

    /// Length of a recording holding `frames` frames, seconds.
    pub fn duration_s(&self, frames: usize) -> f64 {
        self.frame_time(frames.saturating_sub(1)) + 1.0
    }
}

/// Slow station-keeping drift of the moored target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoverJitter {
    /// RMS position drift per axis, cm.
    pub position_cm: f64,
    /// RMS yaw drift, degrees.
    pub yaw_deg: f64,
    /// Drift frequency band, Hz.
    pub band: [f64; 2],
}

impl Default for HoverJitter {
    fn default() -> Self {
        Self {
            position_cm: 1.0,
            yaw_deg: 2.0,
            band: [0.01, 0.08],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl LocationGrid {
    /// The 7 x 6 laboratory grid.
    pub fn lab() -> Self {
        Self {
            xs: vec![40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0],
            ys: vec![70.0, 90.0, 170.0, 190.0, 290.0, 310.0],
        }
    }

    /// 12 locations: three columns over two close and two far rows. The close
    /// rows sit past the acoustic blind zone so every modality observes them.
    pub fn toy() -> Self {
        Self {
            xs: vec![90.0, 100.0, 110.0],
            ys: vec![80.0, 90.0, 190.0, 290.0],
        }
    }

    /// Six river-test locations.
    pub fn field() -> Self {
        Self {
            xs: vec![70.0, 100.0, 130.0],
            ys: vec![90.0, 190.0],
        }
    }

    pub fn locations(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.xs.len() * self.ys.len());
        for &y in &self.ys {
            for &x in &self.xs {
                out.push((x, y));
            }
        }
        out
    }

    /// Every location in all three orientations, row-major then L, S, R.
    pub fn cases(&self) -> Vec<CaseTriplet> {
        self.locations()
            .into_iter()
            .flat_map(|(x, y)| Direction::ALL.map(|d| CaseTriplet::new(x, y, d)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Pool extent `[x, y]`, cm.
    pub pool: [f64; 2],
    /// Rendered square image size, pixels; the rig camera is rescaled to it.
    pub image_size: usize,
    pub rig: RigModel,
    /// Contrast attenuation per cm of viewing distance.
    pub turbidity: f64,
    pub water_color: [f64; 3],
    pub target: TargetAppearance,
    pub noise: NoiseConfig,
    pub wake: WakeModel,
    pub timing: Timing,
    pub hover: HoverJitter,
    pub grid: LocationGrid,
    /// Cases with `p_y` above this are flagged as having no usable pressure, cm.
    pub pressure_range_limit: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::lab()
    }
}

impl SceneConfig {
    pub fn lab() -> Self {
        Self {
            pool: [200.0, 400.0],
            image_size: 224,
            rig: RigModel::default(),
            turbidity: 0.004,
            water_color: [0.08, 0.3, 0.36],
            target: TargetAppearance::default(),
            noise: NoiseConfig::default(),
            wake: WakeModel::default(),
            timing: Timing::default(),
            hover: HoverJitter::default(),
            grid: LocationGrid::lab(),
            pressure_range_limit: 100.0,
            seed: 0,
        }
    }

    /// Desk-scale variant: 64 px images on the 12-location grid.
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            grid: LocationGrid::toy(),
            ..Self::lab()
        }
    }

    /// River conditions: murkier water, stronger drift and noise.
    pub fn field() -> Self {
        let mut s = Self {
            turbidity: 0.007,
            water_color: [0.2, 0.26, 0.2],
            grid: LocationGrid::field(),
            ..Self::lab()
        };
        s.noise.pixel_sigma = 0.03;
        s.noise.pressure_sigma = 3.0;
        s.hover.position_cm = 2.0;
        s.hover.yaw_deg = 4.0;
        s
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lab" => Ok(Self::lab()),
            "toy" => Ok(Self::toy()),
            "field" => Ok(Self::field()),
            other => Err(CoreError::Config(format!("unknown scene preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        self.wake.validate()?;
        let n = &self.noise;
        let noise_ok = [
            n.pixel_sigma,
            n.acoustic_sigma0,
            n.acoustic_kappa,
            n.pressure_sigma,
            n.pressure_offset_sigma,
            self.turbidity,
            self.hover.position_cm,
            self.hover.yaw_deg,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite());
        if !noise_ok {
            return Err(CoreError::Config("noise levels must be finite and >= 0".into()));
        }
        if self.image_size == 0 {
            return Err(CoreError::Config("image size must be positive".into()));
        }
        if self.grid.xs.is_empty() || self.grid.ys.is_empty() {
            return Err(CoreError::Config("location grid is empty".into()));
        }
        for (x, y) in self.grid.locations() {
            if !(0.0..=self.pool[0]).contains(&x) || !(0.0..=self.pool[1]).contains(&y) {
                return Err(CoreError::Config(format!("grid location ({x}, {y}) outside the pool")));
            }
            if y <= self.rig.mount[1] {
                return Err(CoreError::Config(format!("grid location ({x}, {y}) not in front of the module")));
            }
        }
        let t = &self.timing;
        if !(t.frame_rate_hz > 0.0 && t.acoustic_rate_hz > 0.0 && t.pressure_rate_hz > 0.0)
            || t.window_len == 0
            || t.still_s <= 0.0
        {
            return Err(CoreError::Config(format!("invalid timing {t:?}")));
        }
        let step = t.window_stride_s * t.pressure_rate_hz;
        if step < 1.0 - 1e-9 || (step - step.round()).abs() > 1e-6 {
            return Err(CoreError::Config("window stride must be a whole number of pressure samples".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let scene: SceneConfig = toml::from_str(s).map_err(|e| CoreError::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    /// Rig with the camera matched to the rendered image size.
    pub fn image_rig(&self) -> RigModel {
        self.rig.with_image_size(self.image_size)
    }

    pub fn pressure_available(&self, case: &CaseTriplet) -> bool {
        case.p_y <= self.pressure_range_limit
    }
}

/// Instantaneous target placement: tail-centre position and heading angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPose {
    pub p_x: f64,
    pub p_y: f64,
    /// Radians from `+y`, positive toward `+x`.
    pub yaw: f64,
}

impl TargetPose {
    pub fn nominal(case: &CaseTriplet, target: &TargetAppearance) -> Self {
        let yaw = target.turn_yaw_deg.to_radians()
            * match case.d {
                Direction::L => -1.0,
                Direction::S => 0.0,
                Direction::R => 1.0,
            };
        Self {
            p_x: case.p_x,
            p_y: case.p_y,
            yaw,
        }
    }

    /// Forward and starboard unit vectors in the pool plane.
    fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let h = [self.yaw.sin(), self.yaw.cos()];
        (h, [h[1], -h[0]])
    }

    fn as_case(&self, d: Direction) -> CaseTriplet {
        CaseTriplet::new(self.p_x, self.p_y, d)
    }
}

/// Unit-RMS sum of sinusoids with random frequencies in a band.
#[derive(Debug, Clone)]
struct BandSignal {
    freqs: Vec<f64>,
    phases: Vec<f64>,
    amp: f64,
}

impl BandSignal {
    fn new(rng: &mut Rng, band: [f64; 2], components: usize) -> Self {
        let n = components.max(1);
        let freqs = (0..n)
            .map(|_| if band[1] > band[0] { rng.random_range(band[0]..band[1]) } else { band[0] })
            .collect();
        let phases = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        Self {
            freqs,
            phases,
            amp: (2.0 / n as f64).sqrt(),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp
            * self
                .freqs
                .iter()
                .zip(&self.phases)
                .map(|(f, p)| (2.0 * PI * f * t + p).sin())
                .sum::<f64>()
    }
}

/// Drift of the moored target over time.
#[derive(Debug, Clone)]
struct Drift {
    x: BandSignal,
    y: BandSignal,
    yaw: BandSignal,
    pos_scale: f64,
    yaw_scale: f64,
}

impl Drift {
    fn new(rng: &mut Rng, h: &HoverJitter) -> Self {
        Self {
            x: BandSignal::new(rng, h.band, 3),
            y: BandSignal::new(rng, h.band, 3),
            yaw: BandSignal::new(rng, h.band, 3),
            pos_scale: h.position_cm,
            yaw_scale: h.yaw_deg.to_radians(),
        }
    }

    fn pose(&self, nominal: TargetPose, t: f64) -> TargetPose {
        TargetPose {
            p_x: nominal.p_x + self.pos_scale * self.x.at(t),
            p_y: nominal.p_y + self.pos_scale * self.y.at(t),
            yaw: nominal.yaw + self.yaw_scale * self.yaw.at(t),
        }
    }
}

/// `exp(-turbidity * distance)`.
pub fn attenuation(turbidity: f64, distance: f64) -> f64 {
    (-turbidity * distance).exp()
}

fn water_at(scene: &SceneConfig, row: usize, h: usize) -> [f64; 3] {
    // Lighter toward the surface.
    let g = 1.15 - 0.3 * (row as f64 + 0.5) / h as f64;
    scene.water_color.map(|c| (c * g).clamp(0.0, 1.0))
}

/// Noise-free rendering of a pose plus the viewing distance of every
/// pixel that hit the target (`None` for open water).
pub fn render_clean(pose: &TargetPose, scene: &SceneConfig) -> (ImageTensor, Vec<Option<f64>>) {
    let size = scene.image_size;
    let cam = scene.image_rig().camera;
    let tgt = &scene.target;
    let (fwd, stbd) = pose.axes();
    let mount = scene.rig.mount;
    let ov = scene.rig.target_offset_v;
    // Camera frame: (u right, v down, z depth).
    let to_cam = |x: f64, y: f64, v: f64| [x - mount[0], v, y - mount[1]];
    let tail = to_cam(pose.p_x, pose.p_y, ov);
    let a = tgt.length / 2.0;
    let centre = [tail[0] + a * fwd[0], tail[1], tail[2] + a * fwd[1]];
    let e1 = [fwd[0], 0.0, fwd[1]];
    let e2 = [stbd[0], 0.0, stbd[1]];
    let e3 = [0.0, 1.0, 0.0];
    let props = [-1.0, 1.0].map(|s| {
        [
            tail[0] + s * tgt.prop_offset * stbd[0] - 0.5 * fwd[0],
            tail[1],
            tail[2] + s * tgt.prop_offset * stbd[1] - 0.5 * fwd[1],
        ]
    });

    let mut img = ImageTensor::zeros(3, size, size);
    let mut depth = vec![None; size * size];
    let dot = |p: [f64; 3], q: [f64; 3]| p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    for row in 0..size {
        for col in 0..size {
            let dir = [
                (col as f64 + 0.5 - cam.cu) / cam.focal,
                (row as f64 + 0.5 - cam.cv) / cam.focal,
                1.0,
            ];
            let norm = dot(dir, dir).sqrt();
            let d = dir.map(|c| c / norm);
            let mut hit: Option<(f64, [f64; 3])> = None;

            // Body ellipsoid in its own axes.
            let oc = [-centre[0], -centre[1], -centre[2]];
            let semi = [a, tgt.radius, tgt.radius];
            let axes = [e1, e2, e3];
            let o = [0, 1, 2].map(|k| dot(oc, axes[k]) / semi[k]);
            let v = [0, 1, 2].map(|k| dot(d, axes[k]) / semi[k]);
            let qa = dot(v, v);
            let qb = 2.0 * dot(o, v);
            let qc = dot(o, o) - 1.0;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc >= 0.0 {
                let t = (-qb - disc.sqrt()) / (2.0 * qa);
                if t > 0.0 {
                    let local = [0, 1, 2].map(|k| o[k] + t * v[k]);
                    let normal_local = [0, 1, 2].map(|k| local[k] / semi[k]);
                    let mut n = [0.0; 3];
                    for k in 0..3 {
                        for c in 0..3 {
                            n[c] += normal_local[k] * axes[k][c];
                        }
                    }
                    let nn = dot(n, n).sqrt();
                    let n = n.map(|c| c / nn);
                    let lambert = (-dot(d, n)).max(0.0);
                    let shade = 0.35 + 0.65 * lambert;
                    let base = if local[0] > 0.0 {
                        tgt.nose_color
                    } else if local[1] < -0.55 && local[2].abs() < 0.45 {
                        tgt.band_color
                    } else {
                        tgt.tail_color
                    };
                    hit = Some((t, base.map(|c| c * shade)));
                }
            }
            // Propeller discs facing along the heading.
            for p in &props {
                let denom = dot(d, e1);
                if denom.abs() < 1e-9 {
                    continue;
                }
                let t = dot(*p, e1) / denom;
                if t <= 0.0 || hit.is_some_and(|(th, _)| th <= t) {
                    continue;
                }
                let q = [d[0] * t - p[0], d[1] * t - p[1], d[2] * t - p[2]];
                if dot(q, q) <= tgt.prop_radius * tgt.prop_radius {
                    let shade = 0.5 + 0.5 * denom.abs();
                    hit = Some((t, tgt.prop_color.map(|c| c * shade)));
                }
            }

            let bg = water_at(scene, row, size);
            let px = row * size + col;
            let out = match hit {
                Some((t, color)) => {
                    depth[px] = Some(t);
                    let k = attenuation(scene.turbidity, t);
                    [0, 1, 2].map(|c| bg[c] + (color[c] - bg[c]) * k)
                }
                None => bg,
            };
            for c in 0..3 {
                img.data[c * size * size + px] = out[c] as f32;
            }
        }
    }
    (img, depth)
}

fn quantize(v: f64) -> f32 {
    unit_from_u8((v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

fn render_pose(pose: &TargetPose, scene: &SceneConfig, rng: &mut Rng) -> ImageTensor {
    let (mut img, _) = render_clean(pose, scene);
    let sigma = scene.noise.pixel_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    for v in &mut img.data {
        let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
        *v = quantize(*v as f64 + n);
    }
    img
}

/// Frame of the target at its nominal pose, quantized to 8-bit levels.
pub fn render_image(case: &CaseTriplet, scene: &SceneConfig, rng: &mut Rng) -> ImageTensor {
    render_pose(&TargetPose::nominal(case, &scene.target), scene, rng)
}

/// Geometric range from each acoustic sensor to the target position, cm;
/// `None` outside the sensor's reception field.
pub fn true_ranges(case: &CaseTriplet, rig: &RigModel) -> Vec<Option<f64>> {
    rig.acoustic
        .iter()
        .map(|s| {
            in_reception_field(case, s, rig).then(|| {
                let [x, y, z] = rig.target_in_sensor(case, s);
                (x * x + y * y + z * z).sqrt()
            })
        })
        .collect()
}

/// One reading per sensor: truth plus range-dependent noise, or the no-echo sentinel.
pub fn simulate_acoustics(case: &CaseTriplet, rig: &RigModel, noise: &NoiseConfig, rng: &mut Rng) -> Vec<f64> {
    true_ranges(case, rig)
        .into_iter()
        .map(|r| match r {
            Some(dist) => {
                let sigma = noise.acoustic_sigma0 * (1.0 + noise.acoustic_kappa * dist);
                if sigma > 0.0 {
                    Normal::new(dist, sigma).expect("finite").sample(rng)
                } else {
                    dist
                }
            }
            None => NO_ECHO,
        })
        .collect()
}

struct WakeStreams {
    coherent: [BandSignal; 2],
    incoherent: Vec<[BandSignal; 2]>,
    gust: BandSignal,
}

/// Per-sensor, per-propeller amplitude for a pose.
fn wake_amplitudes(pose: &TargetPose, d: Direction, scene: &SceneConfig) -> Vec<[f64; 2]> {
    let rig = &scene.rig;
    let wake = &scene.wake;
    let (fwd, stbd) = pose.axes();
    let act = wake.activity(d);
    let tail = [pose.p_x - rig.mount[0], rig.target_offset_v, pose.p_y - rig.mount[1]];
    rig.pressure_sensors
        .iter()
        .map(|&[u, v]| {
            [0usize, 1].map(|p| {
                let side = if p == 0 { -1.0 } else { 1.0 };
                let pos = [
                    tail[0] + side * scene.target.prop_offset * stbd[0],
                    tail[1],
                    tail[2] + side * scene.target.prop_offset * stbd[1],
                ];
                let r = [u - pos[0], v - pos[1], -pos[2]];
                let dist = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                // Jet leaves backward for forward thrust.
                let s = act[p].signum();
                let jet = [-s * fwd[0], 0.0, -s * fwd[1]];
                let cos_phi = (r[0] * jet[0] + r[2] * jet[2]) / dist.max(1e-9);
                act[p].abs() * wake.amplitude_at(dist) * wake.directivity(cos_phi)
            })
        })
        .collect()
}

/// Deterministic wake contribution (no noise, no baseline) at time `t`.
fn wake_sample(amps: &[[f64; 2]], streams: &WakeStreams, wake: &WakeModel, t_wake: f64, out: &mut [f64]) {
    let ramp = if wake.ramp_s > 0.0 { (t_wake / wake.ramp_s).clamp(0.0, 1.0) } else { 1.0 };
    let gust = (wake.gust_sigma * streams.gust.at(t_wake) - wake.gust_sigma * wake.gust_sigma / 2.0).exp();
    let (wc, wi) = ((1.0 - wake.incoherent).sqrt(), wake.incoherent.sqrt());
    for (i, a) in amps.iter().enumerate() {
        let mut s = 0.0;
        for p in 0..2 {
            let osc = wc * streams.coherent[p].at(t_wake) + wi * streams.incoherent[i][p].at(t_wake);
            s += a[p] * osc;
        }
        out[i] = ramp * gust * s;
    }
}

/// Raw absolute pressure record: still water for `timing.still_s`, then wake.
pub fn simulate_pressure(case: &CaseTriplet, scene: &SceneConfig, duration_s: f64, rng: &mut Rng) -> Result<PressureRecord> {
    let drift = Drift::new(rng, &scene.hover);
    simulate_pressure_with(case, scene, duration_s, &drift, rng)
}

fn simulate_pressure_with(
    case: &CaseTriplet,
    scene: &SceneConfig,
    duration_s: f64,
    drift: &Drift,
    rng: &mut Rng,
) -> Result<PressureRecord> {
    let timing = &scene.timing;
    let wake = &scene.wake;
    let rate = timing.pressure_rate_hz;
    let len = (duration_s * rate).ceil().max(1.0) as usize;
    let still_len = (timing.still_s * rate).round() as usize;
    if still_len == 0 || still_len >= len {
        return Err(CoreError::Config(format!(
            "recording of {duration_s} s leaves no wake after a {} s still segment",
            timing.still_s
        )));
    }
    let n = scene.rig.pressure_sensors.len();
    // Hydrostatic head of each port below a 30 cm module depth, plus calibration offset.
    let offset = Normal::new(0.0, scene.noise.pressure_offset_sigma.max(f64::MIN_POSITIVE)).expect("finite");
    let baseline: Vec<f64> = scene
        .rig
        .pressure_sensors
        .iter()
        .map(|&[_, v]| {
            let cal = if scene.noise.pressure_offset_sigma > 0.0 { offset.sample(rng) } else { 0.0 };
            crate::pressure::PA_PER_ATM + 9.81 * (30.0 + v) * 10.0 + cal
        })
        .collect();
    let streams = WakeStreams {
        coherent: [0, 1].map(|_| BandSignal::new(rng, wake.band, wake.components)),
        incoherent: (0..n)
            .map(|_| [0, 1].map(|_| BandSignal::new(rng, wake.band, wake.components)))
            .collect(),
        gust: BandSignal::new(rng, [0.02, 0.1], 3),
    };
    let white = Normal::new(0.0, scene.noise.pressure_sigma.max(f64::MIN_POSITIVE)).expect("finite");
    let sigma_on = scene.noise.pressure_sigma > 0.0;
    let nominal = TargetPose::nominal(case, &scene.target);

    let mut data = vec![0.0; n * len];
    let mut sample = vec![0.0; n];
    for k in 0..len {
        let t = k as f64 / rate;
        sample.iter_mut().for_each(|s| *s = 0.0);
        if k >= still_len {
            let pose = drift.pose(nominal, t);
            let amps = wake_amplitudes(&pose, case.d, scene);
            wake_sample(&amps, &streams, wake, t - timing.still_s, &mut sample);
        }
        for i in 0..n {
            let noise = if sigma_on { white.sample(rng) } else { 0.0 };
            data[i * len + k] = baseline[i] + sample[i] + noise;
        }
    }
    Ok(PressureRecord {
        series: PressureSeries::new(n, len, rate, data)?,
        still_len,
    })
}

/// Acoustic readings at a fixed rate, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticSeries {
    pub rate_hz: f64,
    /// Time of the first row, seconds.
    pub start_s: f64,
    pub sensors: usize,
    pub rows: Vec<Vec<f64>>,
}

impl AcousticSeries {
    /// Row closest to time `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let k = ((t - self.start_s) * self.rate_hz).round().clamp(0.0, (self.rows.len() - 1) as f64) as usize;
        &self.rows[k]
    }

    /// All readings of one sensor.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Everything recorded for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecording {
    pub case: CaseTriplet,
    pub timestamps: Vec<f64>,
    pub images: Vec<ImageTensor>,
    pub acoustic: AcousticSeries,
    pub pressure: PressureRecord,
}

/// Simulates one case under its own derived random streams.
pub fn simulate_case(scene: &SceneConfig, case: &CaseTriplet, frames: usize, master_seed: u64) -> Result<CaseRecording> {
    scene.validate()?;
    if frames == 0 {
        return Err(CoreError::Config("at least one frame per case is required".into()));
    }
    let id = case.id();
    let timing = &scene.timing;
    let duration = timing.duration_s(frames);
    let mut drift_rng = derived_rng(master_seed, &[&id, "drift"]);
    let drift = Drift::new(&mut drift_rng, &scene.hover);
    let mut p_rng = derived_rng(master_seed, &[&id, "pressure"]);
    let pressure = simulate_pressure_with(case, scene, duration, &drift, &mut p_rng)?;

    let nominal = TargetPose::nominal(case, &scene.target);
    let mut a_rng = derived_rng(master_seed, &[&id, "acoustic"]);
    let start_s = timing.still_s;
    let n_ac = ((duration - start_s) * timing.acoustic_rate_hz).ceil() as usize;
    let rows = (0..n_ac)
        .map(|k| {
            let t = start_s + k as f64 / timing.acoustic_rate_hz;
            let pose = drift.pose(nominal, t).as_case(case.d);
            simulate_acoustics(&pose, &scene.rig, &scene.noise, &mut a_rng)
        })
        .collect();
    let acoustic = AcousticSeries {
        rate_hz: timing.acoustic_rate_hz,
        start_s,
        sensors: scene.rig.acoustic.len(),
        rows,
    };

    let mut i_rng = derived_rng(master_seed, &[&id, "image"]);
    let timestamps: Vec<f64> = (0..frames).map(|k| timing.frame_time(k)).collect();
    let images = timestamps
        .iter()
        .map(|&t| render_pose(&drift.pose(nominal, t), scene, &mut i_rng))
        .collect();
    Ok(CaseRecording {
        case: *case,
        timestamps,
        images,
        acoustic,
        pressure,
    })
}

/// Simulates every grid case and writes the dataset layout under `out`.
/// Cases run on separate threads when cores are available; each uses its own
/// derived seed, so the output does not depend on the thread count.
pub fn generate_dataset(
    scene: &SceneConfig,
    frames_per_case: usize,
    out: &std::path::Path,
    seed: u64,
) -> Result<DatasetManifest> {
    scene.validate()?;
    std::fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
    let rule = ModalityRule {
        pressure_max_p_y: Some(scene.pressure_range_limit),
    };
    let cases = scene.grid.cases();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cases.len()).max(1);
    let mut results: Vec<Option<Result<CaseEntry>>> = (0..cases.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = cases.len().div_ceil(workers);
        for (cs, rs) in cases.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let rule = &rule;
            s.spawn(move || {
                for (c, r) in cs.iter().zip(rs.iter_mut()) {
                    *r = Some(
                        simulate_case(scene, c, frames_per_case, seed)
                            .and_then(|rec| write_case(out, &rec, &scene.timing, rule)),
                    );
                }
            });
        }
    });
    let entries = results
        .into_iter()
        .map(|r| r.expect("every case processed"))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        grid: scene.grid.clone(),
        image_size: scene.image_size,
        rig: scene.rig.clone(),
        timing: scene.timing.clone(),
        pressure_rule: rule,
        seed,
        cases: entries,
    };
    write_manifest(out, &manifest)?;
    let scene_path = out.join("scene.toml");
    std::fs::write(&scene_path, scene.to_toml_string()).map_err(|e| CoreError::io(&scene_path, e))?;
    Ok(manifest)
}

/// Root mean square over all sensors of a series segment.
pub fn rms(series: &PressureSeries, from: usize, to: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for i in 0..series.sensors {
        for v in &series.row(i)[from..to] {
            acc += v * v;
            n += 1;
        }
    }
    (acc / n.max(1) as f64).sqrt()
}

/// Noiseless wake RMS over all sensors at the nominal pose, ignoring gusts.
pub fn expected_wake_rms(case: &CaseTriplet, scene: &SceneConfig) -> f64 {
    let amps = wake_amplitudes(&TargetPose::nominal(case, &scene.target), case.d, scene);
    // Each jet's oscillation has unit RMS and the two are independent.
    let total: f64 = amps.iter().map(|a| a[0] * a[0] + a[1] * a[1]).sum();
    (total / amps.len() as f64).sqrt()
}
