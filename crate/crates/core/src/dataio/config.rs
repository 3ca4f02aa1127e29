//! Run configuration shared by training, evaluation and the CLI.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fusion::FusionParams;
use crate::objectives::LossWeights;

/// Nonempty subset of {optical, acoustic, pressure}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalitySet {
    pub optical: bool,
    pub acoustic: bool,
    pub pressure: bool,
}

impl ModalitySet {
    pub const TRI: Self = Self::new(true, true, true);
    pub const OPTICAL_ACOUSTIC: Self = Self::new(true, true, false);
    pub const OPTICAL: Self = Self::new(true, false, false);
    pub const PRESSURE: Self = Self::new(false, false, true);

    pub const fn new(optical: bool, acoustic: bool, pressure: bool) -> Self {
        Self {
            optical,
            acoustic,
            pressure,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.optical || self.acoustic || self.pressure)
    }

    /// Channels of the image-branch input: RGB when optical, plus attention when acoustic.
    pub fn image_channels(&self) -> usize {
        3 * self.optical as usize + self.acoustic as usize
    }

    pub fn has_image_branch(&self) -> bool {
        self.image_channels() > 0
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.optical, "O"), (self.acoustic, "A"), (self.pressure, "P")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, s)| *s)
            .collect();
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for ModalitySet {
    type Err = CoreError;

    /// Accepts letters in any order with optional `+`, `,` or space separators.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Self::new(false, false, false);
        for ch in s.chars() {
            match ch.to_ascii_uppercase() {
                'O' => m.optical = true,
                'A' => m.acoustic = true,
                'P' => m.pressure = true,
                '+' | ',' | ' ' => {}
                _ => return Err(CoreError::Config(format!("unknown modality {ch:?} in {s:?}"))),
            }
        }
        if m.is_empty() {
            return Err(CoreError::Config("modality selection must not be empty".into()));
        }
        Ok(m)
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = CoreError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModalitySet> for String {
    fn from(m: ModalitySet) -> String {
        m.to_string()
    }
}

/// When pressure counts as usable for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityRule {
    /// Largest `p_y` with usable wake, cm; `None` keeps pressure everywhere.
    pub pressure_max_p_y: Option<f64>,
}

impl Default for ModalityRule {
    fn default() -> Self {
        Self {
            pressure_max_p_y: Some(100.0),
        }
    }
}

impl ModalityRule {
    pub const ALWAYS: Self = Self {
        pressure_max_p_y: None,
    };

    pub fn pressure_usable(&self, p_y: f64) -> bool {
        self.pressure_max_p_y.is_none_or(|lim| p_y <= lim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Attention-image CNN branch plus CNN-BiLSTM pressure branch, fused features.
    FusionNet,
    /// Pressure branch without the recurrent layer.
    ConvPressure,
    /// Separate heads per branch combined by learned per-state weights.
    LateFusion,
}

impl FromStr for Architecture {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion_net" | "fusion" => Ok(Self::FusionNet),
            "conv_pressure" | "baseline1" => Ok(Self::ConvPressure),
            "late_fusion" | "baseline2" => Ok(Self::LateFusion),
            _ => Err(CoreError::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Network hyper-parameters; the input modalities come from [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub image_size: usize,
    /// Multiplier on every image-branch channel count.
    pub width: f64,
    /// Residual blocks per stage after the stride-2 entry block.
    pub stage_repeats: [usize; 4],
    /// Multiplier on the pressure-branch widths.
    pub pressure_width: f64,
    pub dropout: f64,
    /// Scale for the `asinh(p / scale)` compression of relative pressure, Pa.
    pub pressure_scale: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::FusionNet,
            image_size: 224,
            width: 1.0,
            stage_repeats: [1, 3, 3, 5],
            pressure_width: 1.0,
            dropout: 0.2,
            pressure_scale: 2.0,
        }
    }
}

impl NetworkSpec {
    pub fn toy() -> Self {
        Self {
            image_size: 64,
            width: 0.5,
            stage_repeats: [1, 1, 1, 1],
            pressure_width: 0.5,
            // Head dropout shrinks the small toy nets' position outputs toward the grid centre.
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 || self.image_size % 32 != 0 {
            return Err(CoreError::Config(format!(
                "image size {} must be a positive multiple of 32",
                self.image_size
            )));
        }
        if !(self.width > 0.0 && self.pressure_width > 0.0) {
            return Err(CoreError::Config("width multipliers must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.pressure_scale > 0.0) {
            return Err(CoreError::Config("pressure scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiply the learning rate by `lr_gamma` every `lr_step` epochs.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Share of training frames held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 200,
            lr_step: 30,
            lr_gamma: 0.1,
            val_fraction: 0.1,
        }
    }
}

impl OptimizerConfig {
    /// Step schedule `lr0 * gamma^floor(epoch / step)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_gamma.powi((epoch / self.lr_step.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.epochs > 0
            && self.lr_step > 0
            && self.lr_gamma > 0.0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// How frames are assigned to the train and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitMode {
    /// Disjoint frames of every case in both sets.
    #[default]
    PerCase,
    /// Generalization check: whole locations are held out for testing.
    HoldOutLocations { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub dataset: PathBuf,
    pub train_per_case: usize,
    pub test_per_case: usize,
    pub modalities: ModalitySet,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub fusion: FusionParams,
    pub pressure_rule: ModalityRule,
    #[serde(default)]
    pub split_mode: SplitMode,
    /// Restrict training and testing to cases where pressure is usable.
    #[serde(default)]
    pub pressure_cases_only: bool,
    /// Weight init, batch order, dropout and range sampling.
    pub seed: u64,
    pub split_seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Laboratory settings: 600/200 frames per case, 224 px, 200 epochs.
    pub fn paper(dataset: impl Into<PathBuf>) -> Self {
        Self {
            name: "tri-modal".into(),
            dataset: dataset.into(),
            train_per_case: 600,
            test_per_case: 200,
            modalities: ModalitySet::TRI,
            network: NetworkSpec::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            fusion: FusionParams::default(),
            pressure_rule: ModalityRule::default(),
            split_mode: SplitMode::PerCase,
            pressure_cases_only: false,
            seed: 0,
            split_seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Desk-scale settings: 100/30 frames per case, 64 px, slim network.
    pub fn toy(dataset: impl Into<PathBuf>) -> Self {
        Self {
            train_per_case: 100,
            test_per_case: 30,
            network: NetworkSpec::toy(),
            optimizer: OptimizerConfig {
                batch_size: 32,
                epochs: 40,
                ..OptimizerConfig::default()
            },
            ..Self::paper(dataset)
        }
    }

    pub fn profile(name: &str, dataset: impl Into<PathBuf>) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(dataset)),
            "toy" => Ok(Self::toy(dataset)),
            other => Err(CoreError::Config(format!("unknown profile {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(CoreError::Config("modality selection must not be empty".into()));
        }
        if self.train_per_case == 0 || self.test_per_case == 0 {
            return Err(CoreError::Config("frame counts per case must be positive".into()));
        }
        self.network.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        match self.network.architecture {
            Architecture::FusionNet => {}
            Architecture::ConvPressure if !self.modalities.pressure => {
                return Err(CoreError::Config("conv_pressure needs the pressure modality".into()));
            }
            Architecture::LateFusion if !(self.modalities.pressure && self.modalities.has_image_branch()) => {
                return Err(CoreError::Config(
                    "late_fusion needs pressure and at least one image modality".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_parsing() {
        assert_eq!("O+A+P".parse::<ModalitySet>().unwrap(), ModalitySet::TRI);
        assert_eq!("ao".parse::<ModalitySet>().unwrap(), ModalitySet::OPTICAL_ACOUSTIC);
        assert_eq!("P".parse::<ModalitySet>().unwrap(), ModalitySet::PRESSURE);
        assert!("".parse::<ModalitySet>().is_err());
        assert!("OX".parse::<ModalitySet>().is_err());
        assert_eq!(ModalitySet::OPTICAL_ACOUSTIC.to_string(), "O+A");
        assert_eq!(ModalitySet::TRI.image_channels(), 4);
        assert_eq!(ModalitySet::OPTICAL.image_channels(), 3);
        assert_eq!(ModalitySet::PRESSURE.image_channels(), 0);
    }

    #[test]
    fn gate_rule() {
        let r = ModalityRule::default();
        assert!(r.pressure_usable(70.0));
        assert!(r.pressure_usable(90.0));
        assert!(!r.pressure_usable(190.0));
        assert!(ModalityRule::ALWAYS.pressure_usable(1e9));
    }

    #[test]
    fn lr_schedule() {
        let o = OptimizerConfig::default();
        assert_eq!(o.lr_at(0), 0.1);
        assert_eq!(o.lr_at(29), 0.1);
        assert!((o.lr_at(30) - 0.01).abs() < 1e-15);
        assert!((o.lr_at(60) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips() {
        for cfg in [RunConfig::paper("data"), RunConfig::toy("data")] {
            cfg.validate().unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
        }
        let mut cfg = RunConfig::toy("d");
        cfg.split_mode = SplitMode::HoldOutLocations { count: 2 };
        cfg.pressure_rule = ModalityRule::ALWAYS;
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn config_rejects_bad_combinations() {
        let mut cfg = RunConfig::toy("d");
        cfg.modalities = ModalitySet::OPTICAL;
        cfg.network.architecture = Architecture::LateFusion;
        assert!(cfg.validate().is_err());
        cfg.network.architecture = Architecture::ConvPressure;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy("d");
        cfg.test_per_case = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::toy("d");
        cfg.network.image_size = 50;
        assert!(cfg.validate().is_err());
    }
}
