//! Data-level optical-acoustic fusion: each receiving acoustic sensor's cone
//! is projected into the image, turned into a Gaussian, the Gaussians are
//! fused into one joint heatmap and the heatmap becomes the fourth
//! ("attention") channel of the camera image.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rig::{project_cone, AcousticSensorModel, ImageBounds, RigModel};
use crate::seed::rng_from_seed;
use crate::types::{ImageTensor, SensorFrame, NO_ECHO};

/// Tunables of the fusion procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// Expansion factor dividing the projected width into a standard deviation.
    pub gamma_u: f64,
    pub gamma_v: f64,
    /// Acoustic filter thresholds, cm.
    pub filter_lo: f64,
    pub filter_hi: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            gamma_u: 4.0,
            gamma_v: 4.0,
            filter_lo: 25.0,
            filter_hi: 400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcousticStats {
    /// cm
    pub mean: f64,
    /// Population standard deviation, cm.
    pub std: f64,
    pub count: usize,
    pub sensor: usize,
}

/// Drops readings outside `[lo, hi]` and summarizes the survivors.
pub fn filter_and_stats(raw: &[f64], lo: f64, hi: f64, sensor: usize) -> Result<AcousticStats> {
    if !(lo < hi) {
        return Err(CoreError::Config(format!("filter thresholds need lo < hi, got {lo}, {hi}")));
    }
    let kept: Vec<f64> = raw.iter().copied().filter(|r| (lo..=hi).contains(r)).collect();
    if kept.is_empty() {
        return Err(CoreError::EmptyStats { lo, hi });
    }
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(AcousticStats {
        mean,
        std: var.sqrt(),
        count: kept.len(),
        sensor,
    })
}

/// One draw from `N(mean, std²)`, clamped to the sensor's working range.
pub fn sample_range<R: Rng + ?Sized>(stats: &AcousticStats, sensor: &AcousticSensorModel, rng: &mut R) -> f64 {
    let r = if stats.std == 0.0 {
        stats.mean
    } else {
        Normal::new(stats.mean, stats.std)
            .expect("std is finite and non-negative")
            .sample(rng)
    };
    r.clamp(sensor.min_range, sensor.max_range)
}

/// Mean and axis standard deviations of a Gaussian over image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapParams {
    pub mu_u: f64,
    pub mu_v: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    /// Source acoustic sensor; `None` for a fused result.
    pub sensor: Option<usize>,
}

pub fn heatmap_params(b: &ImageBounds, gamma_u: f64, gamma_v: f64, sensor: Option<usize>) -> Result<HeatmapParams> {
    if !(gamma_u > 0.0 && gamma_v > 0.0) {
        return Err(CoreError::Config(format!("expansion factors must be positive, got {gamma_u}, {gamma_v}")));
    }
    if !(b.u_l < b.u_u && b.v_l < b.v_u) {
        return Err(CoreError::DegenerateBounds(format!("{b:?}")));
    }
    Ok(HeatmapParams {
        mu_u: (b.u_u + b.u_l) / 2.0,
        mu_v: (b.v_u + b.v_l) / 2.0,
        sigma_u: (b.u_u - b.u_l) / gamma_u,
        sigma_v: (b.v_u - b.v_l) / gamma_v,
        sensor,
    })
}

/// Joint Gaussian of `J` sensors: means are averaged, standard deviations are
/// combined root-sum-square per axis. A single input is returned unchanged.
pub fn fuse_joint(params: &[HeatmapParams]) -> Result<HeatmapParams> {
    match params {
        [] => Err(CoreError::Empty("heatmap params")),
        [single] => Ok(*single),
        many => {
            let j = many.len() as f64;
            let sum = |f: fn(&HeatmapParams) -> f64| many.iter().map(f).sum::<f64>();
            Ok(HeatmapParams {
                mu_u: sum(|p| p.mu_u) / j,
                mu_v: sum(|p| p.mu_v) / j,
                sigma_u: sum(|p| p.sigma_u * p.sigma_u).sqrt(),
                sigma_v: sum(|p| p.sigma_v * p.sigma_v).sqrt(),
                sensor: None,
            })
        }
    }
}

/// Scalar field over the image grid, row-major `[H x W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHeatmap {
    pub params: Option<HeatmapParams>,
    pub height: usize,
    pub width: usize,
    pub field: Vec<f32>,
}

impl JointHeatmap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            params: None,
            height,
            width,
            field: vec![0.0; height * width],
        }
    }

    pub fn max(&self) -> f32 {
        self.field.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

/// Renders the Gaussian on integer pixel centres and normalizes by the grid
/// maximum. Evaluated in the log domain so the peak is exactly 1 even when the
/// mean lies far outside the image.
pub fn render_heatmap(p: &HeatmapParams, height: usize, width: usize) -> Result<JointHeatmap> {
    if !(p.sigma_u > 0.0 && p.sigma_v > 0.0) {
        return Err(CoreError::Config(format!("heatmap sigma must be positive: {p:?}")));
    }
    let expo = |x: usize, mu: f64, sigma: f64| {
        let d = x as f64 - mu;
        -d * d / (2.0 * sigma * sigma)
    };
    let eu: Vec<f64> = (0..width).map(|u| expo(u, p.mu_u, p.sigma_u)).collect();
    let ev: Vec<f64> = (0..height).map(|v| expo(v, p.mu_v, p.sigma_v)).collect();
    let max_u = eu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_v = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut field = Vec::with_capacity(height * width);
    for &a in &ev {
        for &b in &eu {
            field.push(((a - max_v) + (b - max_u)).exp() as f32);
        }
    }
    Ok(JointHeatmap {
        params: Some(*p),
        height,
        width,
        field,
    })
}

/// `[4 x H x W]` image whose last channel is the acoustic attention field.
pub type RgbaImage = ImageTensor;

/// Stacks the heatmap under the RGB planes without touching the RGB values.
pub fn assemble_rgba(image: &ImageTensor, heatmap: &JointHeatmap) -> Result<RgbaImage> {
    if image.channels != 3 || image.height != heatmap.height || image.width != heatmap.width {
        return Err(CoreError::Shape(format!(
            "image {}x{}x{} vs heatmap {}x{}",
            image.channels, image.height, image.width, heatmap.height, heatmap.width
        )));
    }
    let mut data = Vec::with_capacity(image.data.len() + heatmap.field.len());
    data.extend_from_slice(&image.data);
    data.extend_from_slice(&heatmap.field);
    Ok(ImageTensor {
        channels: 4,
        height: image.height,
        width: image.width,
        data,
    })
}

/// RGBA-to-RGB compositing over a background value.
#[inline]
pub fn blend_rgba_to_rgb(v_rgba: f64, v_alpha: f64, v_bg: f64) -> f64 {
    v_rgba * v_alpha + v_bg * (1.0 - v_alpha)
}

/// Composites an RGBA image over a flat background colour for previews.
pub fn blend_over(rgba: &RgbaImage, background: [f64; 3]) -> ImageTensor {
    let mut out = ImageTensor::zeros(3, rgba.height, rgba.width);
    let alpha = rgba.plane(3);
    for c in 0..3 {
        let src = rgba.plane(c);
        for ((o, &v), &a) in out.plane_mut(c).iter_mut().zip(src).zip(alpha) {
            *o = blend_rgba_to_rgb(v as f64, a as f64, background[c]) as f32;
        }
    }
    out
}

/// Where the range fed into each sensor's cone comes from.
#[derive(Debug, Clone, Copy)]
pub enum RangeSource<'a> {
    /// Use the frame's own readings as-is.
    Readings,
    /// Draw a fresh range per sensor from per-case statistics; `None` marks a
    /// sensor that never saw the target.
    Stats(&'a [Option<AcousticStats>]),
}

/// Result of [`build_attention`] with per-sensor diagnostics.
#[derive(Debug)]
pub struct Attention {
    pub rgba: RgbaImage,
    pub heatmap: JointHeatmap,
    /// Sensors that contributed a heatmap.
    pub receiving: Vec<usize>,
    pub ranges: Vec<Option<f64>>,
    /// Sensors that produced a range but failed in geometry.
    pub sensor_errors: Vec<(usize, CoreError)>,
}

/// Full optical-acoustic fusion for one frame.
///
/// Sensors without a valid echo are skipped; if none remain the attention
/// channel is all zeros. The rig camera must match the frame's image size.
pub fn build_attention(
    frame: &SensorFrame,
    source: RangeSource<'_>,
    rig: &RigModel,
    params: &FusionParams,
    seed: u64,
) -> Result<Attention> {
    let (h, w) = (frame.image.height, frame.image.width);
    if (rig.camera.height, rig.camera.width) != (h, w) {
        return Err(CoreError::Shape(format!(
            "rig camera {}x{} vs frame image {h}x{w}",
            rig.camera.height, rig.camera.width
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut ranges = Vec::with_capacity(rig.acoustic.len());
    for (j, sensor) in rig.acoustic.iter().enumerate() {
        let r = match source {
            RangeSource::Readings => frame
                .acoustic
                .get(j)
                .copied()
                .filter(|&r| r != NO_ECHO && (params.filter_lo..=params.filter_hi).contains(&r)),
            RangeSource::Stats(stats) => stats
                .get(j)
                .copied()
                .flatten()
                .map(|s| sample_range(&s, sensor, &mut rng)),
        };
        ranges.push(r);
    }

    let mut per_sensor = Vec::new();
    let mut receiving = Vec::new();
    let mut sensor_errors = Vec::new();
    for (sensor, r) in rig.acoustic.iter().zip(&ranges) {
        let Some(r) = *r else { continue };
        let outcome = project_cone(r, sensor, &rig.camera).and_then(|b| match b {
            Some(b) => heatmap_params(&b, params.gamma_u, params.gamma_v, Some(sensor.index)).map(Some),
            None => Ok(None),
        });
        match outcome {
            Ok(Some(p)) => {
                per_sensor.push(p);
                receiving.push(sensor.index);
            }
            Ok(None) => {}
            Err(e) => sensor_errors.push((sensor.index, e)),
        }
    }

    let heatmap = if per_sensor.is_empty() {
        JointHeatmap::zeros(h, w)
    } else {
        render_heatmap(&fuse_joint(&per_sensor)?, h, w)?
    };
    let rgba = assemble_rgba(&frame.image, &heatmap)?;
    Ok(Attention {
        rgba,
        heatmap,
        receiving,
        ranges,
        sensor_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::CameraModel;
    use crate::types::{CaseTriplet, Direction, PressureData};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn p(mu_u: f64, mu_v: f64, su: f64, sv: f64) -> HeatmapParams {
        HeatmapParams {
            mu_u,
            mu_v,
            sigma_u: su,
            sigma_v: sv,
            sensor: None,
        }
    }

    #[test]
    fn stats_examples() {
        let s = filter_and_stats(&[100.0, 100.0, 100.0], 0.0, 400.0, 0).unwrap();
        assert_eq!((s.mean, s.std, s.count), (100.0, 0.0, 3));
        let s = filter_and_stats(&[90.0, 110.0, 5000.0], 0.0, 400.0, 0).unwrap();
        assert_eq!((s.mean, s.std, s.count), (100.0, 10.0, 2));
        assert!(matches!(
            filter_and_stats(&[1.0, 2.0, 3.0], 10.0, 400.0, 0),
            Err(CoreError::EmptyStats { .. })
        ));
        assert!(filter_and_stats(&[1.0], 5.0, 5.0, 0).is_err());
    }

    #[test]
    fn stats_use_population_std() {
        // Sample std of [1, 3] would be sqrt(2); population std is 1.
        let s = filter_and_stats(&[1.0, 3.0], 0.0, 10.0, 0).unwrap();
        assert_eq!(s.std, 1.0);
    }

    #[test]
    fn sampling() {
        let sensor = AcousticSensorModel::new(0, 0.0, 0.0);
        let stats = AcousticStats {
            mean: 150.0,
            std: 0.0,
            count: 10,
            sensor: 0,
        };
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            assert_eq!(sample_range(&stats, &sensor, &mut rng), 150.0);
        }

        let stats = AcousticStats { std: 4.0, ..stats };
        let a = sample_range(&stats, &sensor, &mut rng_from_seed(99));
        let b = sample_range(&stats, &sensor, &mut rng_from_seed(99));
        assert_eq!(a, b);

        // The mean of 1e5 draws lies within 3 standard errors of mu.
        let n = 100_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mean = (0..n).map(|_| sample_range(&stats, &sensor, &mut rng)).sum::<f64>() / n as f64;
        let se = stats.std / (n as f64).sqrt();
        assert!((mean - stats.mean).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn sampling_clamps_to_sensor_range() {
        let sensor = AcousticSensorModel::new(0, 0.0, 0.0);
        let stats = AcousticStats {
            mean: 26.0,
            std: 50.0,
            count: 10,
            sensor: 0,
        };
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            let r = sample_range(&stats, &sensor, &mut rng);
            assert!((sensor.min_range..=sensor.max_range).contains(&r));
        }
    }

    #[test]
    fn heatmap_params_examples() {
        let b = ImageBounds {
            u_l: 80.0,
            u_u: 120.0,
            v_l: 60.0,
            v_u: 100.0,
        };
        let h = heatmap_params(&b, 4.0, 4.0, Some(2)).unwrap();
        assert_eq!((h.mu_u, h.mu_v, h.sigma_u, h.sigma_v), (100.0, 80.0, 10.0, 10.0));
        assert_eq!(h.sensor, Some(2));

        let full = ImageBounds {
            u_l: 0.0,
            u_u: 224.0,
            v_l: 0.0,
            v_u: 224.0,
        };
        let h = heatmap_params(&full, 4.0, 4.0, None).unwrap();
        assert_eq!((h.mu_u, h.mu_v, h.sigma_u, h.sigma_v), (112.0, 112.0, 56.0, 56.0));
        let h8 = heatmap_params(&full, 8.0, 4.0, None).unwrap();
        assert_eq!(h8.sigma_u * 2.0, h.sigma_u);
        assert_eq!(h8.sigma_v, h.sigma_v);

        let flat = ImageBounds { u_u: 0.0, ..full };
        assert!(matches!(heatmap_params(&flat, 4.0, 4.0, None), Err(CoreError::DegenerateBounds(_))));
    }

    #[test]
    fn fuse_examples() {
        let j = fuse_joint(&[p(100.0, 0.0, 3.0, 1.0), p(200.0, 0.0, 4.0, 1.0)]).unwrap();
        assert_eq!(j.mu_u, 150.0);
        assert_eq!(j.sigma_u, 5.0);
        let single = HeatmapParams {
            sensor: Some(3),
            ..p(17.0, 29.0, 2.5, 7.0)
        };
        assert_eq!(fuse_joint(&[single]).unwrap(), single);
        assert!(fuse_joint(&[]).is_err());
    }

    #[test]
    fn render_examples() {
        let hm = render_heatmap(&p(30.0, 20.0, 5.0, 8.0), 64, 64).unwrap();
        let at = |u: usize, v: usize| hm.field[v * 64 + u];
        assert_eq!(at(30, 20), 1.0);
        assert!((at(35, 20) as f64 - (-0.5f64).exp()).abs() < 1e-7);
        assert!((at(35, 20) as f64 - 0.606_530_659_712_633_4).abs() < 1e-7);
        for d in 1..20 {
            assert_eq!(at(30 + d, 20), at(30 - d, 20));
            assert_eq!(at(30, 20 + d), at(30, 20 - d));
        }
    }

    #[test]
    fn render_off_grid_mean_still_peaks_at_one() {
        let hm = render_heatmap(&p(-500.0, 900.0, 3.0, 3.0), 32, 48).unwrap();
        assert_eq!(hm.max(), 1.0);
        assert!(hm.field.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(render_heatmap(&p(1.0, 1.0, 0.0, 1.0), 4, 4).is_err());
    }

    #[test]
    fn rgba_assembly() {
        let mut img = ImageTensor::zeros(3, 8, 6);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 7) as f32 / 7.0;
        }
        let zero = JointHeatmap::zeros(8, 6);
        let rgba = assemble_rgba(&img, &zero).unwrap();
        assert_eq!(rgba.channels, 4);
        assert_eq!(&rgba.data[..img.data.len()], &img.data[..]);
        assert!(rgba.plane(3).iter().all(|&a| a == 0.0));

        let hm = render_heatmap(&p(3.0, 4.0, 1.5, 2.0), 8, 6).unwrap();
        let rgba = assemble_rgba(&img, &hm).unwrap();
        assert_eq!(rgba.plane(3), &hm.field[..]);
        assert!(assemble_rgba(&img, &JointHeatmap::zeros(8, 5)).is_err());
    }

    #[test]
    fn blend_examples() {
        assert_eq!(blend_rgba_to_rgb(0.3, 1.0, 0.9), 0.3);
        assert_eq!(blend_rgba_to_rgb(0.3, 0.0, 0.9), 0.9);
        assert_eq!(blend_rgba_to_rgb(1.0, 0.5, 0.0), 0.5);
    }

    fn frame(rig: &RigModel, acoustic: Vec<f64>) -> SensorFrame {
        let mut image = ImageTensor::zeros(3, rig.camera.height, rig.camera.width);
        for (i, v) in image.data.iter_mut().enumerate() {
            *v = ((i * 31) % 255) as f32 / 255.0;
        }
        SensorFrame {
            image,
            acoustic,
            pressure: PressureData::Absent,
            case: CaseTriplet::new(100.0, 190.0, Direction::S),
            timestamp: 0.0,
        }
    }

    fn small_rig() -> RigModel {
        RigModel::default().with_image_size(64)
    }

    #[test]
    fn attention_without_echoes_is_zero() {
        let rig = small_rig();
        let f = frame(&rig, vec![NO_ECHO; 4]);
        let a = build_attention(&f, RangeSource::Readings, &rig, &FusionParams::default(), 0).unwrap();
        assert!(a.receiving.is_empty());
        assert!(a.rgba.plane(3).iter().all(|&v| v == 0.0));
        assert_eq!(&a.rgba.data[..f.image.data.len()], &f.image.data[..]);

        let none = [None, None, None, None];
        let a = build_attention(&f, RangeSource::Stats(&none), &rig, &FusionParams::default(), 0).unwrap();
        assert!(a.rgba.plane(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_single_sensor_is_its_own_heatmap() {
        let rig = small_rig();
        let f = frame(&rig, vec![NO_ECHO, 120.0, NO_ECHO, NO_ECHO]);
        let params = FusionParams::default();
        let a = build_attention(&f, RangeSource::Readings, &rig, &params, 0).unwrap();
        assert_eq!(a.receiving, vec![1]);
        let b = project_cone(120.0, &rig.acoustic[1], &rig.camera).unwrap().unwrap();
        let hp = heatmap_params(&b, params.gamma_u, params.gamma_v, Some(1)).unwrap();
        let expect = render_heatmap(&hp, 64, 64).unwrap();
        assert_eq!(a.rgba.plane(3), &expect.field[..]);
    }

    #[test]
    fn symmetric_sensors_centre_on_midline() {
        // Brute-force construction: two mirrored sensors at equal range give
        // cone centres c_u ± f t / r, so the average lies exactly on c_u.
        let mut rig = small_rig();
        rig.acoustic = vec![AcousticSensorModel::new(0, -9.0, 4.0), AcousticSensorModel::new(1, 9.0, 4.0)];
        let f = frame(&rig, vec![150.0, 150.0]);
        let a = build_attention(&f, RangeSource::Readings, &rig, &FusionParams::default(), 0).unwrap();
        let jp = a.heatmap.params.unwrap();
        let cam: CameraModel = rig.camera;
        assert!((jp.mu_u - cam.cu).abs() < 1e-12);
        // With c_u on an integer pixel column the field is mirror-symmetric about it.
        let row = cam.cv as usize;
        let cu = cam.cu as usize;
        let field = a.rgba.plane(3);
        for d in 1..20 {
            assert_eq!(field[row * 64 + cu + d], field[row * 64 + cu - d]);
        }
    }

    #[test]
    fn attention_is_deterministic_with_zero_spread() {
        let rig = small_rig();
        let stats: Vec<Option<AcousticStats>> = (0..4)
            .map(|j| {
                Some(AcousticStats {
                    mean: 140.0 + j as f64,
                    std: 0.0,
                    count: 5,
                    sensor: j,
                })
            })
            .collect();
        let f = frame(&rig, vec![NO_ECHO; 4]);
        let params = FusionParams::default();
        let a = build_attention(&f, RangeSource::Stats(&stats), &rig, &params, 1).unwrap();
        let b = build_attention(&f, RangeSource::Stats(&stats), &rig, &params, 2).unwrap();
        assert_eq!(a.rgba, b.rgba);
        assert_eq!(a.receiving.len(), 4);
    }

    #[test]
    fn attention_rejects_mismatched_rig() {
        let rig = RigModel::default();
        let f = frame(&small_rig(), vec![NO_ECHO; 4]);
        assert!(build_attention(&f, RangeSource::Readings, &rig, &FusionParams::default(), 0).is_err());
    }

    /// Independent transcription of the joint-fusion formulas.
    fn fuse_oracle(ps: &[HeatmapParams]) -> (f64, f64, f64, f64) {
        let n = ps.len() as f64;
        let mut acc = (0.0, 0.0, 0.0, 0.0);
        for q in ps {
            acc.0 += q.mu_u;
            acc.1 += q.mu_v;
            acc.2 += q.sigma_u.powi(2);
            acc.3 += q.sigma_v.powi(2);
        }
        (acc.0 / n, acc.1 / n, acc.2.sqrt(), acc.3.sqrt())
    }

    fn arb_params() -> impl Strategy<Value = Vec<HeatmapParams>> {
        prop::collection::vec(
            (0.0f64..224.0, 0.0f64..224.0, 0.1f64..80.0, 0.1f64..80.0).prop_map(|(a, b, c, d)| p(a, b, c, d)),
            1..=4,
        )
    }

    proptest! {
        #[test]
        fn fuse_matches_oracle(ps in arb_params()) {
            let j = fuse_joint(&ps).unwrap();
            let o = fuse_oracle(&ps);
            prop_assert!((j.mu_u - o.0).abs() <= 1e-12 * o.0.abs().max(1.0));
            prop_assert!((j.mu_v - o.1).abs() <= 1e-12 * o.1.abs().max(1.0));
            prop_assert!((j.sigma_u - o.2).abs() <= 1e-12 * o.2.max(1.0));
            prop_assert!((j.sigma_v - o.3).abs() <= 1e-12 * o.3.max(1.0));
        }

        #[test]
        fn fuse_is_permutation_invariant(mut ps in arb_params(), seed in any::<u64>()) {
            let a = fuse_joint(&ps).unwrap();
            use rand::seq::SliceRandom;
            ps.shuffle(&mut rng_from_seed(seed));
            let b = fuse_joint(&ps).unwrap();
            prop_assert!((a.mu_u - b.mu_u).abs() < 1e-12 * a.mu_u.abs().max(1.0));
            prop_assert!((a.sigma_v - b.sigma_v).abs() < 1e-12 * a.sigma_v.max(1.0));
        }

        #[test]
        fn rendered_field_is_normalized(mu_u in -100.0f64..300.0, mu_v in -100.0f64..300.0,
                                        su in 0.5f64..100.0, sv in 0.5f64..100.0) {
            let hm = render_heatmap(&p(mu_u, mu_v, su, sv), 40, 56).unwrap();
            prop_assert_eq!(hm.max(), 1.0);
            prop_assert!(hm.field.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
