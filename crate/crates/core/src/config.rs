//! Run configuration: dataset profile, Table 1 hyperparameters and the
//! per-stage blocks, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canlog::{AttackKind, CorpusConfig, LogFormat};
use crate::distill::{DistillConfig, KlDirection, STUDENT_BUDGET, TEACHER_BUDGET};
use crate::error::{Error, Result};
use crate::explain::ExplainConfig;
use crate::features::{ClassTable, FrameLayout};
use crate::neural::TrainConfig;
use crate::vae::VaeConfig;

pub const ENV_OUT: &str = "CANIDS_OUT";
pub const ENV_ENDPOINT: &str = "CANIDS_ENDPOINT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Hcrl,
    CicIov,
    /// Bundled generator output; CIC-IoV hyperparameters and window shape.
    Synthetic,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Hcrl, Profile::CicIov, Profile::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Hcrl => "hcrl",
            Profile::CicIov => "cic-iov",
            Profile::Synthetic => "synthetic",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Profile::Hcrl => 1,
            Profile::CicIov => 2,
            Profile::Synthetic => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.code() == code)
            .ok_or_else(|| Error::Artifact(format!("unknown profile code {code}")))
    }

    /// Frames per window.
    pub fn window(self) -> usize {
        match self {
            Profile::Hcrl => 29,
            Profile::CicIov | Profile::Synthetic => 7,
        }
    }

    pub fn layout(self) -> FrameLayout {
        match self {
            Profile::Hcrl => FrameLayout::TimestampIdDlcData,
            Profile::CicIov | Profile::Synthetic => FrameLayout::IdData,
        }
    }

    pub fn log_format(self) -> LogFormat {
        match self {
            Profile::Hcrl => LogFormat::Hcrl,
            Profile::CicIov => LogFormat::CicIov,
            Profile::Synthetic => LogFormat::Synthetic,
        }
    }

    pub fn attacks(self) -> &'static [AttackKind] {
        use AttackKind::*;
        match self {
            Profile::Hcrl | Profile::Synthetic => &[DoS, Fuzzing, GearSpoof, RpmSpoof],
            Profile::CicIov => &[DoS, GasSpoof, SteeringSpoof, SpeedSpoof, RpmSpoof],
        }
    }

    pub fn classes(self) -> ClassTable {
        ClassTable::new(self.attacks()).expect("profile attack lists are valid")
    }

    /// Table 1 column for this profile.
    pub fn table1(self) -> Hyperparameters {
        let (smooth_factor, epochs) = match self {
            Profile::Hcrl => (1e-6, 1),
            Profile::CicIov | Profile::Synthetic => (1e-8, 50),
        };
        Hyperparameters {
            smooth_factor,
            encoder_layers: 3,
            batch_size: 32,
            learning_rate: 1e-4,
            epochs,
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "hcrl" | "chd" | "car-hacking" => Ok(Profile::Hcrl),
            "cic-iov" | "ciciov" | "cic" => Ok(Profile::CicIov),
            "synthetic" | "synth" => Ok(Profile::Synthetic),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Table 1 block. The smooth factor is the epsilon inside every log of the
/// classification losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub smooth_factor: f64,
    pub encoder_layers: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// VAE epochs.
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFile {
    pub path: PathBuf,
    /// Attack injected in this file; required for HCRL files, whose rows
    /// only carry an R/T flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub files: Vec<DataFile>,
    /// Generator settings used when `files` is empty (synthetic profile).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeBlock {
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub beta: f64,
    pub benign_only: bool,
}

/// KL weight used by the pipeline. With per-entry MSE on [0, 1] features a
/// unit weight collapses the posterior onto the prior.
pub const PIPELINE_BETA: f64 = 1e-4;

impl Default for VaeBlock {
    fn default() -> Self {
        let v = VaeConfig::default();
        VaeBlock {
            hidden_widths: v.hidden_widths,
            latent_dim: v.latent_dim,
            beta: PIPELINE_BETA,
            benign_only: v.benign_only,
        }
    }
}

/// Distillation settings. Batch size and epsilon come from the Table 1 block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillBlock {
    pub temperature: f64,
    pub alpha: f64,
    pub scale_soft_by_t2: bool,
    pub direction: KlDirection,
    pub teacher_hidden: usize,
    pub student_hidden: usize,
    pub teacher_budget: usize,
    pub student_budget: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub learning_rate: f64,
}

impl Default for DistillBlock {
    fn default() -> Self {
        let d = DistillConfig::default();
        DistillBlock {
            temperature: d.temperature,
            alpha: d.alpha,
            scale_soft_by_t2: d.scale_soft_by_t2,
            direction: d.direction,
            teacher_hidden: d.teacher_hidden,
            student_hidden: d.student_hidden,
            teacher_budget: TEACHER_BUDGET,
            student_budget: STUDENT_BUDGET,
            teacher_epochs: d.teacher.epochs,
            student_epochs: d.student.epochs,
            learning_rate: d.teacher.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainBlock {
    pub permutations: usize,
    pub instances_per_class: usize,
    pub background_size: usize,
}

impl Default for ExplainBlock {
    fn default() -> Self {
        let e = ExplainConfig::default();
        ExplainBlock {
            permutations: e.permutations,
            instances_per_class: e.instances_per_class,
            background_size: e.background_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Frames per window.
    pub window: usize,
    /// Fraction of windows used for training; the rest is the test split.
    pub train_fraction: f64,
    pub hyper: Hyperparameters,
    pub data: DataConfig,
    pub vae: VaeBlock,
    pub distill: DistillBlock,
    pub explain: ExplainBlock,
}

/// File form of [`RunConfig`]: everything except the profile is optional and
/// falls back to the profile's defaults.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    profile: Profile,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    window: Option<usize>,
    train_fraction: Option<f64>,
    hyper: Option<RawHyper>,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    vae: VaeBlock,
    #[serde(default)]
    distill: DistillBlock,
    #[serde(default)]
    explain: ExplainBlock,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHyper {
    smooth_factor: Option<f64>,
    encoder_layers: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        RunConfig {
            profile,
            seed: 0,
            out_dir: PathBuf::from("out"),
            window: profile.window(),
            train_fraction: 0.05,
            hyper: profile.table1(),
            data: DataConfig::default(),
            vae: VaeBlock::default(),
            distill: DistillBlock::default(),
            explain: ExplainBlock::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = RunConfig::defaults(raw.profile);
        let h = raw.hyper.unwrap_or_default();
        c.hyper.smooth_factor = h.smooth_factor.unwrap_or(c.hyper.smooth_factor);
        c.hyper.encoder_layers = h.encoder_layers.unwrap_or(c.hyper.encoder_layers);
        c.hyper.batch_size = h.batch_size.unwrap_or(c.hyper.batch_size);
        c.hyper.learning_rate = h.learning_rate.unwrap_or(c.hyper.learning_rate);
        c.hyper.epochs = h.epochs.unwrap_or(c.hyper.epochs);
        c.seed = raw.seed.unwrap_or(c.seed);
        c.out_dir = raw.out_dir.unwrap_or(c.out_dir);
        c.window = raw.window.unwrap_or(c.window);
        c.train_fraction = raw.train_fraction.unwrap_or(c.train_fraction);
        c.data = raw.data;
        c.vae = raw.vae;
        c.distill = raw.distill;
        c.explain = raw.explain;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.hyper.encoder_layers != self.vae.hidden_widths.len() {
            return Err(Error::Config(format!(
                "encoder_layers = {} but vae.hidden_widths has {} entries",
                self.hyper.encoder_layers,
                self.vae.hidden_widths.len()
            )));
        }
        if self.profile == Profile::Hcrl && self.data.files.iter().any(|f| f.attack.is_none()) {
            return Err(Error::Config("every HCRL data file needs an `attack` entry".into()));
        }
        self.vae_config().validate()?;
        self.distill_config().validate()
    }

    fn phase(&self, learning_rate: f64, epochs: usize, seed_offset: u64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            batch_size: self.hyper.batch_size,
            epochs,
            seed: self.seed.wrapping_add(seed_offset),
            epsilon: self.hyper.smooth_factor,
        }
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            hidden_widths: self.vae.hidden_widths.clone(),
            latent_dim: self.vae.latent_dim,
            beta: self.vae.beta,
            benign_only: self.vae.benign_only,
            train: self.phase(self.hyper.learning_rate, self.hyper.epochs, 0),
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        let d = &self.distill;
        DistillConfig {
            temperature: d.temperature,
            alpha: d.alpha,
            scale_soft_by_t2: d.scale_soft_by_t2,
            direction: d.direction,
            teacher_hidden: d.teacher_hidden,
            student_hidden: d.student_hidden,
            teacher_budget: d.teacher_budget,
            student_budget: d.student_budget,
            teacher: self.phase(d.learning_rate, d.teacher_epochs, 1_000),
            student: self.phase(d.learning_rate, d.student_epochs, 2_000),
        }
    }

    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig {
            permutations: self.explain.permutations,
            instances_per_class: self.explain.instances_per_class,
            background_size: self.explain.background_size,
            seed: self.seed.wrapping_add(4_000),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(3_000)
    }

    pub fn subset_seed(&self) -> u64 {
        self.seed.wrapping_add(5_000)
    }
}
