//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Command-line `--set key=value` pairs override file values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dal_core::data::{SamplingMode, SyntheticConfig};
use dal_core::model::DecayKind;
use dal_core::{Ablation, DalError, HeadKind, LrSchedule, ObjectiveConfig, Result, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features: PathBuf,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,

    pub margin: f64,
    pub lambda: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub max_iter: u64,
    pub seed: u64,
    pub ablation: Ablation,
    pub sampling: SamplingMode,
    pub precision: Precision,

    pub head: String,
    pub hidden: usize,
    /// 0 keeps the input dimension.
    pub embed_dim: usize,

    pub lr: f64,
    pub lr_decay: DecayKind,
    pub lr_factor: f64,
    /// 0 means half of `max_iter`.
    pub lr_interval: u64,
    pub lr_floor: f64,
    pub momentum: f64,

    pub eval_every: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,

    pub identities: usize,
    pub cameras: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub dim: usize,
    pub distortion: f64,
    pub noise: f64,
    pub identity_separation: f64,
    pub data_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        Self {
            features: "data/features.dalf".into(),
            manifest: "data/manifest.csv".into(),
            output_dir: "run".into(),
            margin: 0.2,
            lambda: 1.0,
            eta: 0.5,
            batch_size: 64,
            max_iter: 2000,
            seed: 0,
            ablation: Ablation::Joint,
            sampling: SamplingMode::Uniform,
            precision: Precision::F32,
            head: "linear".into(),
            hidden: 64,
            embed_dim: 0,
            lr: 0.01,
            lr_decay: DecayKind::Step,
            lr_factor: 0.1,
            lr_interval: 0,
            lr_floor: 0.001,
            momentum: 0.9,
            eval_every: 100,
            checkpoint_every: 0,
            identities: syn.identities,
            cameras: syn.cameras,
            frames_min: syn.frames_min,
            frames_max: syn.frames_max,
            dim: syn.dim,
            distortion: syn.distortion,
            noise: syn.noise,
            identity_separation: syn.identity_separation,
            data_seed: syn.seed,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> DalError {
    DalError::InvalidConfig(format!("{key} = {value}: {why}"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DalError::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| DalError::InvalidConfig(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "features" => self.features = value.into(),
            "manifest" => self.manifest = value.into(),
            "output_dir" => self.output_dir = value.into(),
            "margin" => self.margin = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_iter" => self.max_iter = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => self.ablation = parse(key, value)?,
            "sampling" => self.sampling = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(bad(key, value, "expected f32 or f64")),
                }
            }
            "head" => {
                if !matches!(value, "identity" | "linear" | "one_hidden") {
                    return Err(bad(key, value, "expected identity, linear or one_hidden"));
                }
                self.head = value.into();
            }
            "hidden" => self.hidden = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "lr_interval" => self.lr_interval = parse(key, value)?,
            "lr_floor" => self.lr_floor = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "identities" => self.identities = parse(key, value)?,
            "cameras" => self.cameras = parse(key, value)?,
            "frames_min" => self.frames_min = parse(key, value)?,
            "frames_max" => self.frames_max = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "distortion" => self.distortion = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "identity_separation" => self.identity_separation = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            _ => return Err(DalError::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every key, suitable for [`RunConfig::merge_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("features", &self.features.display());
        kv("manifest", &self.manifest.display());
        kv("output_dir", &self.output_dir.display());
        kv("margin", &self.margin);
        kv("lambda", &self.lambda);
        kv("eta", &self.eta);
        kv("batch_size", &self.batch_size);
        kv("max_iter", &self.max_iter);
        kv("seed", &self.seed);
        kv("ablation", &self.ablation.as_str());
        kv("sampling", &self.sampling.as_str());
        kv("precision", &self.precision.as_str());
        kv("head", &self.head);
        kv("hidden", &self.hidden);
        kv("embed_dim", &self.embed_dim);
        kv("lr", &self.lr);
        kv("lr_decay", &self.lr_decay.as_str());
        kv("lr_factor", &self.lr_factor);
        kv("lr_interval", &self.lr_interval);
        kv("lr_floor", &self.lr_floor);
        kv("momentum", &self.momentum);
        kv("eval_every", &self.eval_every);
        kv("checkpoint_every", &self.checkpoint_every);
        kv("identities", &self.identities);
        kv("cameras", &self.cameras);
        kv("frames_min", &self.frames_min);
        kv("frames_max", &self.frames_max);
        kv("dim", &self.dim);
        kv("distortion", &self.distortion);
        kv("noise", &self.noise);
        kv("identity_separation", &self.identity_separation);
        kv("data_seed", &self.data_seed);
        s
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            identities: self.identities,
            cameras: self.cameras,
            frames_min: self.frames_min,
            frames_max: self.frames_max,
            dim: self.dim,
            distortion: self.distortion,
            noise: self.noise,
            identity_separation: self.identity_separation,
            seed: self.data_seed,
        }
    }

    pub fn head_kind(&self) -> HeadKind {
        match self.head.as_str() {
            "identity" => HeadKind::Identity,
            "one_hidden" => HeadKind::OneHidden { hidden: self.hidden },
            _ => HeadKind::Linear,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let interval = if self.lr_interval == 0 { (self.max_iter / 2).max(1) } else { self.lr_interval };
        TrainConfig {
            objective: ObjectiveConfig { margin: self.margin, lambda: self.lambda, ablation: self.ablation },
            eta: self.eta,
            batch_size: self.batch_size,
            head: self.head_kind(),
            embed_dim: (self.embed_dim != 0).then_some(self.embed_dim),
            schedule: LrSchedule {
                initial: self.lr,
                kind: self.lr_decay,
                factor: self.lr_factor,
                interval,
                floor: self.lr_floor,
            },
            momentum: self.momentum,
            seed: self.seed,
            sampling: self.sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DalError::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.eval_every == 0 {
            return Err(DalError::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}
