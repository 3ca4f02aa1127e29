//! Tri-modal localization network, its two baselines, and size accounting.

use serde::{Deserialize, Serialize};
use trifusion_core::dataio::{Architecture, ModalitySet, NetworkSpec};
use trifusion_core::seed::{rng_from_seed, Rng};
use trifusion_core::PRESSURE_SENSORS;

use crate::error::{NetError, Result};
use crate::layers::{join, Conv2d, ConvShape, Ctx, Dropout, Gap, GhostStage, Layer, Relu, Seq, Sigmoid, Visitor};
use crate::lstm::BiLstm;
use crate::scalar::Scalar;
use crate::tensor::{Act, Param};

/// Layer widths and options; everything needed to rebuild a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub architecture: Architecture,
    pub modalities: ModalitySet,
    pub image_size: usize,
    pub stem: usize,
    pub stages: [usize; 4],
    pub repeats: [usize; 4],
    pub conv5: usize,
    /// Width of the 1x1 convolution applied after global pooling.
    pub pooled: usize,
    pub oaf: usize,
    pub pressure_len: usize,
    pub pfem_channels: [usize; 4],
    pub lstm_hidden: usize,
    pub head: [usize; 2],
    pub dropout: f64,
    pub pressure_scale: f64,
    /// Substitute a trainable vector instead of zeros when pressure is absent.
    pub learned_absent: bool,
}

fn even(v: f64) -> usize {
    ((v / 2.0).round() as usize * 2).max(2)
}

impl NetConfig {
    pub fn from_spec(spec: &NetworkSpec, modalities: ModalitySet) -> Self {
        let w = |c: f64| even(c * spec.width);
        let pw = |c: f64| even(c * spec.pressure_width);
        Self {
            architecture: spec.architecture,
            modalities,
            image_size: spec.image_size,
            stem: w(16.0),
            stages: [w(24.0), w(48.0), w(96.0), w(192.0)],
            repeats: spec.stage_repeats,
            conv5: w(512.0),
            pooled: w(1280.0),
            oaf: w(256.0),
            pressure_len: 64,
            pfem_channels: [pw(32.0), pw(64.0), pw(64.0), pw(64.0)],
            lstm_hidden: pw(64.0),
            head: [w(256.0), w(128.0)],
            dropout: spec.dropout,
            pressure_scale: spec.pressure_scale,
            learned_absent: false,
        }
    }

    /// Two channels everywhere on 8x8 images and length-8 windows; used for gradient checks.
    pub fn tiny(architecture: Architecture, modalities: ModalitySet) -> Self {
        Self {
            architecture,
            modalities,
            image_size: 8,
            stem: 2,
            stages: [2; 4],
            repeats: [1; 4],
            conv5: 2,
            pooled: 2,
            oaf: 2,
            pressure_len: 8,
            pfem_channels: [2; 4],
            lstm_hidden: 2,
            head: [2, 2],
            dropout: 0.0,
            pressure_scale: 2.0,
            learned_absent: false,
        }
    }

    pub fn pf_width(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn uses_image(&self) -> bool {
        self.modalities.has_image_branch()
    }

    pub fn uses_pressure(&self) -> bool {
        self.modalities.pressure
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(NetError::Config("no input modality".into()));
        }
        if self.uses_image() && (self.image_size < 8 || self.image_size % 8 != 0) {
            return Err(NetError::Config(format!("image size {} not a multiple of 8", self.image_size)));
        }
        if self.stages.iter().any(|c| c % 2 != 0) {
            return Err(NetError::Config("stage widths must be even".into()));
        }
        if self.pressure_len < 4 {
            return Err(NetError::Config("pressure window too short".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::Config(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }
}

/// Inputs for one minibatch. Pressure rows exist only for frames listed in `present`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub n: usize,
    /// `[C, N, S, S]`.
    pub image: Option<Act<T>>,
    /// `[9, M, 1, L]` after the asinh transform, `M = present.len()`.
    pub pressure: Option<Act<T>>,
    pub present: Vec<usize>,
}

/// asinh compression of relative pressure in Pa.
pub fn encode_pressure(p: f64, scale: f64) -> f64 {
    (p / scale).asinh()
}

impl<T: Scalar> Batch<T> {
    /// `images` is sample-major `[N, C, S, S]` in [0,1]; `pressure[i]` is a row-major `[9, L]` window in Pa.
    pub fn build(cfg: &NetConfig, images: Option<&[f32]>, pressure: &[Option<&[f64]>]) -> Result<Self> {
        let n = pressure.len();
        let image = if cfg.uses_image() {
            let c = cfg.modalities.image_channels();
            let s = cfg.image_size;
            let src = images.ok_or_else(|| NetError::Shape("image branch needs images".into()))?;
            if src.len() != n * c * s * s {
                return Err(NetError::Shape(format!("image buffer {} != {n}x{c}x{s}x{s}", src.len())));
            }
            Some(Act::from_nchw(n, c, s, s, src))
        } else {
            None
        };
        let (l, q) = (cfg.pressure_len, PRESSURE_SENSORS);
        let mut present = Vec::new();
        let mut window = None;
        if cfg.uses_pressure() {
            present = (0..n).filter(|&i| pressure[i].is_some()).collect();
            let m = present.len();
            let mut act = Act::zeros(q, m, 1, l);
            for (k, &i) in present.iter().enumerate() {
                let p = pressure[i].expect("present");
                if p.len() != q * l {
                    return Err(NetError::Shape(format!("pressure window {} != {q}x{l}", p.len())));
                }
                for s in 0..q {
                    let dst = &mut act.data[(s * m + k) * l..(s * m + k + 1) * l];
                    for (d, v) in dst.iter_mut().zip(&p[s * l..(s + 1) * l]) {
                        *d = T::of(encode_pressure(*v, cfg.pressure_scale));
                    }
                }
            }
            window = Some(act);
        }
        Ok(Self {
            n,
            image,
            pressure: window,
            present,
        })
    }
}

/// Optical/acoustic feature extractor producing the OAF vector.
pub struct Oafem<T> {
    stem: Seq<T>,
    stages: Vec<GhostStage<T>>,
    conv5: Seq<T>,
    gap: Gap,
    pooled: Seq<T>,
    out: Conv2d<T>,
}

impl<T: Scalar> Oafem<T> {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let cin = cfg.modalities.image_channels();
        let stem = Seq::conv_bn(ConvShape::square(cin, cfg.stem, 3, 2), true, rng);
        let mut prev = cfg.stem;
        let mut stages = Vec::new();
        for (&c, &r) in cfg.stages.iter().zip(&cfg.repeats) {
            stages.push(GhostStage::new(prev, c, r, rng));
            prev = c;
        }
        let conv5 = Seq::conv_bn(ConvShape::square(prev, cfg.conv5, 1, 1), true, rng);
        let pooled = Seq::new()
            .push("conv", Conv2d::new(ConvShape::square(cfg.conv5, cfg.pooled, 1, 1), true, rng))
            .push("relu", Relu::default());
        let out = Conv2d::new(ConvShape::square(cfg.pooled, cfg.oaf, 1, 1), true, rng);
        Self {
            stem,
            stages,
            conv5,
            gap: Gap::default(),
            pooled,
            out,
        }
    }
}

impl<T: Scalar> Layer<T> for Oafem<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let mut x = self.stem.forward(x, ctx);
        ctx.record("stem", &x);
        for (i, s) in self.stages.iter_mut().enumerate() {
            x = s.forward(x, ctx);
            ctx.record(&format!("stage{}", i + 1), &x);
        }
        x = self.conv5.forward(x, ctx);
        ctx.record("stage5.conv", &x);
        x = <Gap as Layer<T>>::forward(&mut self.gap, x, ctx);
        x = self.pooled.forward(x, ctx);
        x = self.out.forward(x, ctx);
        ctx.record("stage5.out", &x);
        x
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let g = self.out.backward(g);
        let g = self.pooled.backward(g);
        let mut g = <Gap as Layer<T>>::backward(&mut self.gap, g);
        g = self.conv5.backward(g);
        for s in self.stages.iter_mut().rev() {
            g = s.backward(g);
        }
        self.stem.backward(g)
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit(&join(prefix, &format!("stage{}", i + 1)), f);
        }
        self.conv5.visit(&join(prefix, "conv5"), f);
        self.pooled.visit(&join(prefix, "pooled"), f);
        self.out.visit(&join(prefix, "out"), f);
    }
}

/// Pressure feature extractor: four temporal convolutions, then either a
/// BiLSTM or (baseline 1) two more strided convolutions and temporal pooling.
pub struct Pfem<T> {
    convs: Seq<T>,
    tail: Seq<T>,
    pub recurrent_layers: usize,
}

impl<T: Scalar> Pfem<T> {
    pub fn new(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let mut convs = Seq::new();
        let mut prev = PRESSURE_SENSORS;
        for (i, &c) in cfg.pfem_channels.iter().enumerate() {
            let stride = if i < 2 { 2 } else { 1 };
            convs = convs.push(format!("{i}"), Seq::conv_bn(ConvShape::temporal(prev, c, 3, stride), true, rng));
            prev = c;
        }
        let pf = cfg.pf_width();
        let (tail, recurrent_layers) = match cfg.architecture {
            Architecture::ConvPressure => (
                Seq::new()
                    .push("0", Seq::conv_bn(ConvShape::temporal(prev, pf, 3, 2), true, rng))
                    .push("1", Seq::conv_bn(ConvShape::temporal(pf, pf, 3, 2), true, rng))
                    .push("pool", Gap::default()),
                0,
            ),
            _ => (Seq::new().push("bilstm", BiLstm::new(prev, cfg.lstm_hidden, rng)), 1),
        };
        Self {
            convs,
            tail,
            recurrent_layers,
        }
    }
}

impl<T: Scalar> Layer<T> for Pfem<T> {
    fn forward(&mut self, x: Act<T>, ctx: &mut Ctx) -> Act<T> {
        let x = self.convs.forward(x, ctx);
        self.tail.forward(x, ctx)
    }

    fn backward(&mut self, g: Act<T>) -> Act<T> {
        let g = self.tail.backward(g);
        self.convs.backward(g)
    }

    fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.convs.visit(&join(prefix, "conv"), f);
        self.tail.visit(prefix, f);
    }
}

/// Two 1x1 convolutions, dropout, FC to 3 and a sigmoid.
fn state_head<T: Scalar>(cin: usize, widths: &[usize], dropout: f64, rng: &mut Rng) -> Seq<T> {
    let mut s = Seq::new();
    let mut prev = cin;
    for (i, &w) in widths.iter().enumerate() {
        s = s
            .push(format!("conv{i}"), Conv2d::new(ConvShape::square(prev, w, 1, 1), true, rng))
            .push(format!("relu{i}"), Relu::default());
        prev = w;
    }
    s.push("dropout", Dropout::new(dropout))
        .push("fc", Conv2d::linear(prev, 3, rng))
        .push("sigmoid", Sigmoid::default())
}

enum Head<T> {
    Fused(Seq<T>),
    Late {
        image: Option<Seq<T>>,
        pressure: Option<Seq<T>>,
        /// Per-state logit of the image-branch weight.
        theta: Param<T>,
        cache: Option<LateCache<T>>,
    },
}

struct LateCache<T> {
    a: Option<Act<T>>,
    p_full: Option<Act<T>>,
}

pub struct FusionNet<T> {
    pub config: NetConfig,
    oafem: Option<Oafem<T>>,
    pfem: Option<Pfem<T>>,
    absent: Option<Param<T>>,
    head: Head<T>,
    present: Vec<usize>,
    n: usize,
}

impl<T: Scalar> FusionNet<T> {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let oafem = config.uses_image().then(|| Oafem::new(&config, &mut rng));
        let pfem = config.uses_pressure().then(|| Pfem::new(&config, &mut rng));
        let absent = (config.uses_pressure() && config.learned_absent).then(|| Param::constant(&[config.pf_width()], T::zero()));
        let head = match config.architecture {
            Architecture::LateFusion => Head::Late {
                image: config
                    .uses_image()
                    .then(|| state_head(config.oaf, &config.head[1..], config.dropout, &mut rng)),
                pressure: config
                    .uses_pressure()
                    .then(|| state_head(config.pf_width(), &config.head[1..], config.dropout, &mut rng)),
                theta: Param::constant(&[3], T::zero()),
                cache: None,
            },
            _ => {
                let width = config.uses_image() as usize * config.oaf + config.uses_pressure() as usize * config.pf_width();
                Head::Fused(state_head(width, &config.head, config.dropout, &mut rng))
            }
        };
        Ok(Self {
            config,
            oafem,
            pfem,
            absent,
            head,
            present: Vec::new(),
            n: 0,
        })
    }

    /// Network for a run-config network spec and modality set.
    pub fn from_spec(spec: &NetworkSpec, modalities: ModalitySet, seed: u64) -> Result<Self> {
        Self::new(NetConfig::from_spec(spec, modalities), seed)
    }

    fn check(&self, b: &Batch<T>) -> Result<()> {
        let cfg = &self.config;
        if b.n == 0 {
            return Err(NetError::Shape("empty batch".into()));
        }
        if cfg.uses_image() {
            let (c, s) = (cfg.modalities.image_channels(), cfg.image_size);
            match &b.image {
                Some(x) if x.shape() == [c, b.n, s, s] => {}
                Some(x) => return Err(NetError::Shape(format!("image {:?}, expected {:?}", x.shape(), [c, b.n, s, s]))),
                None => return Err(NetError::Shape("missing image input".into())),
            }
        }
        if cfg.uses_pressure() {
            let want = [PRESSURE_SENSORS, b.present.len(), 1, cfg.pressure_len];
            match &b.pressure {
                Some(x) if x.shape() == want => {}
                Some(x) => return Err(NetError::Shape(format!("pressure {:?}, expected {want:?}", x.shape()))),
                None => return Err(NetError::Shape("missing pressure input".into())),
            }
            if b.present.iter().any(|&i| i >= b.n) {
                return Err(NetError::Shape("present index outside batch".into()));
            }
        }
        Ok(())
    }

    /// OAF features `[oaf, N, 1, 1]`.
    pub fn forward_oafem(&mut self, image: Act<T>, ctx: &mut Ctx) -> Result<Act<T>> {
        let (c, s) = (self.config.modalities.image_channels(), self.config.image_size);
        let net = self.oafem.as_mut().ok_or_else(|| NetError::Config("no image branch".into()))?;
        if (image.c, image.h, image.w) != (c, s, s) {
            return Err(NetError::Shape(format!("image {:?}, expected [{c}, N, {s}, {s}]", image.shape())));
        }
        Ok(net.forward(image, ctx))
    }

    /// PF features `[pf, N, 1, 1]`; absent frames get the substitution vector.
    pub fn forward_pfem(&mut self, window: Option<Act<T>>, present: &[usize], n: usize, ctx: &mut Ctx) -> Result<Act<T>> {
        let pf = self.config.pf_width();
        let net = self.pfem.as_mut().ok_or_else(|| NetError::Config("no pressure branch".into()))?;
        let mut out = match window {
            Some(w) if !present.is_empty() => {
                if (w.c, w.n, w.h, w.w) != (PRESSURE_SENSORS, present.len(), 1, self.config.pressure_len) {
                    return Err(NetError::Shape(format!("pressure {:?}", w.shape())));
                }
                net.forward(w, ctx).scatter(present, n)
            }
            _ => Act::zeros(pf, n, 1, 1),
        };
        if let Some(a) = &self.absent {
            for b in (0..n).filter(|b| !present.contains(b)) {
                for c in 0..pf {
                    out.data[c * n + b] = a.value[c];
                }
            }
        }
        Ok(out)
    }

    /// Normalized state predictions `[3, N, 1, 1]`.
    pub fn forward(&mut self, batch: &Batch<T>, ctx: &mut Ctx) -> Result<Act<T>> {
        self.check(batch)?;
        let n = batch.n;
        self.n = n;
        self.present = batch.present.clone();
        let oaf = match &batch.image {
            Some(x) if self.oafem.is_some() => Some(self.forward_oafem(x.clone(), ctx)?),
            _ => None,
        };
        let pf = if self.pfem.is_some() {
            Some(self.forward_pfem(batch.pressure.clone(), &batch.present, n, ctx)?)
        } else {
            None
        };
        let train = ctx.train;
        let present = &self.present;
        Ok(match &mut self.head {
            Head::Fused(seq) => {
                let feat = match (oaf, pf) {
                    (Some(a), Some(p)) => Act::concat(a, p),
                    (Some(a), None) => a,
                    (None, Some(p)) => p,
                    (None, None) => unreachable!("validated modalities"),
                };
                seq.forward(feat, ctx)
            }
            Head::Late {
                image,
                pressure,
                theta,
                cache,
            } => {
                let a = match (image, oaf) {
                    (Some(h), Some(x)) => Some(h.forward(x, ctx)),
                    _ => None,
                };
                let p_full = match (pressure, pf) {
                    (Some(h), Some(x)) => {
                        if present.is_empty() {
                            None
                        } else {
                            Some(h.forward(x.gather(present), ctx).scatter(present, n))
                        }
                    }
                    _ => None,
                };
                let y = late_combine(a.as_ref(), p_full.as_ref(), present, &theta.value, n);
                *cache = train.then_some(LateCache { a, p_full });
                y
            }
        })
    }

    /// Back-propagates `g = dL/d(output)`; parameter gradients accumulate.
    pub fn backward(&mut self, g: Act<T>) {
        let n = self.n;
        let present = self.present.clone();
        let (goaf, gpf) = match &mut self.head {
            Head::Fused(seq) => {
                let gf = seq.backward(g);
                match (self.oafem.is_some(), self.pfem.is_some()) {
                    (true, true) => {
                        let (a, p) = gf.split(self.config.oaf);
                        (Some(a), Some(p))
                    }
                    (true, false) => (Some(gf), None),
                    (false, _) => (None, Some(gf)),
                }
            }
            Head::Late {
                image,
                pressure,
                theta,
                cache,
            } => {
                let c = cache.take().expect("late-fusion backward without training forward");
                let w: Vec<T> = theta.value.iter().map(|t| T::one() / (T::one() + (-*t).exp())).collect();
                let mut ga = g.clone();
                let mut gp = Act::zeros(3, n, 1, 1);
                if let (Some(a), Some(p)) = (&c.a, &c.p_full) {
                    for &b in &present {
                        for s in 0..3 {
                            let k = s * n + b;
                            ga.data[k] = g.data[k] * w[s];
                            gp.data[k] = g.data[k] * (T::one() - w[s]);
                            theta.grad[s] += g.data[k] * (a.data[k] - p.data[k]) * w[s] * (T::one() - w[s]);
                        }
                    }
                } else if c.a.is_none() {
                    gp = g;
                }
                let goaf = match (image, &c.a) {
                    (Some(h), Some(_)) => Some(h.backward(ga)),
                    _ => None,
                };
                let gpf = match (pressure, &c.p_full) {
                    (Some(h), Some(_)) => Some(h.backward(gp.gather(&present)).scatter(&present, n)),
                    (Some(_), None) => Some(Act::zeros(self.config.pf_width(), n, 1, 1)),
                    _ => None,
                };
                (goaf, gpf)
            }
        };
        if let (Some(net), Some(g)) = (&mut self.oafem, goaf) {
            net.backward(g);
        }
        if let (Some(net), Some(g)) = (&mut self.pfem, gpf) {
            if let Some(a) = &mut self.absent {
                for b in (0..n).filter(|b| !present.contains(b)) {
                    for c in 0..a.len() {
                        a.grad[c] += g.data[c * n + b];
                    }
                }
            }
            if !present.is_empty() {
                net.backward(g.gather(&present));
            }
        }
    }

    pub fn visit(&mut self, f: &mut Visitor<'_, T>) {
        if let Some(m) = &mut self.oafem {
            m.visit("oafem", f);
        }
        if let Some(m) = &mut self.pfem {
            m.visit("pfem", f);
        }
        if let Some(a) = &mut self.absent {
            f("pfem.absent", a);
        }
        match &mut self.head {
            Head::Fused(seq) => seq.visit("head", f),
            Head::Late {
                image,
                pressure,
                theta,
                ..
            } => {
                if let Some(h) = image {
                    h.visit("head.image", f);
                }
                if let Some(h) = pressure {
                    h.visit("head.pressure", f);
                }
                f("head.theta", theta);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, p| p.zero_grad());
    }

    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n.to_string()));
        names
    }

    /// Trainable scalars.
    pub fn count_params(&mut self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, p| {
            if p.trainable {
                total += p.len()
            }
        });
        total
    }

    pub fn recurrent_layers(&self) -> usize {
        self.pfem.as_ref().map_or(0, |p| p.recurrent_layers)
    }

    /// Layer-output shapes `(name, [C, H, W])` of the image branch for one sample.
    pub fn shape_trace(&mut self) -> Result<Vec<(String, [usize; 3])>> {
        let mut ctx = Ctx::eval();
        ctx.trace = Some(Vec::new());
        let (c, s) = (self.config.modalities.image_channels(), self.config.image_size);
        self.forward_oafem(Act::zeros(c, 1, s, s), &mut ctx)?;
        Ok(ctx.trace.unwrap_or_default())
    }

    /// FLOPs of one sample with every modality present: twice the
    /// multiply-accumulates of conv, linear and recurrent matmuls. Element-wise
    /// ops, normalization, pooling and activations are not counted.
    pub fn count_flops(&mut self) -> u64 {
        let cfg = self.config.clone();
        let batch = Batch {
            n: 1,
            image: cfg
                .uses_image()
                .then(|| Act::zeros(cfg.modalities.image_channels(), 1, cfg.image_size, cfg.image_size)),
            pressure: cfg
                .uses_pressure()
                .then(|| Act::zeros(PRESSURE_SENSORS, 1, 1, cfg.pressure_len)),
            present: if cfg.uses_pressure() { vec![0] } else { vec![] },
        };
        let mut ctx = Ctx::eval();
        self.forward(&batch, &mut ctx).expect("well-formed probe batch");
        2 * ctx.macs
    }

    /// Sets the late-fusion weight on the image branch per state.
    pub fn set_combination_weight(&mut self, w: [f64; 3]) -> Result<()> {
        match &mut self.head {
            Head::Late { theta, .. } => {
                for (t, w) in theta.value.iter_mut().zip(w) {
                    let w = w.clamp(0.0, 1.0);
                    *t = T::of(if w >= 1.0 {
                        40.0
                    } else if w <= 0.0 {
                        -40.0
                    } else {
                        (w / (1.0 - w)).ln()
                    });
                }
                Ok(())
            }
            Head::Fused(_) => Err(NetError::Config("not a late-fusion network".into())),
        }
    }

    pub fn combination_weight(&self) -> Option<[f64; 3]> {
        match &self.head {
            Head::Late { theta, .. } => Some(std::array::from_fn(|s| 1.0 / (1.0 + (-theta.value[s].f64()).exp()))),
            Head::Fused(_) => None,
        }
    }

    /// Eval-mode predictions per frame.
    pub fn predict(&mut self, batch: &Batch<T>) -> Result<Vec<[f64; 3]>> {
        let y = self.forward(batch, &mut Ctx::eval())?;
        Ok(rows(&y))
    }
}

/// `[3, N, 1, 1]` to per-frame triples.
pub fn rows<T: Scalar>(y: &Act<T>) -> Vec<[f64; 3]> {
    (0..y.n).map(|b| std::array::from_fn(|s| y.data[s * y.n + b].f64())).collect()
}

fn late_combine<T: Scalar>(a: Option<&Act<T>>, p: Option<&Act<T>>, present: &[usize], theta: &[T], n: usize) -> Act<T> {
    match (a, p) {
        (Some(a), Some(p)) => {
            let mut y = a.clone();
            for &b in present {
                for s in 0..3 {
                    let w = T::one() / (T::one() + (-theta[s]).exp());
                    let k = s * n + b;
                    y.data[k] = w * a.data[k] + (T::one() - w) * p.data[k];
                }
            }
            y
        }
        (Some(a), None) => a.clone(),
        (None, Some(p)) => p.clone(),
        (None, None) => Act::zeros(3, n, 1, 1),
    }
}
