//! Flat `key=value` run configuration.
//!
//! Layers are applied in order default, preset, file, command line; later
//! layers win.

use std::path::Path;
use std::str::FromStr;

use rocnet_core::datagen::{DatasetSpec, NoiseSpec, PairSpec, ShapeKind};
use rocnet_core::model::{ForwardOptions, ModelConfig};
use rocnet_core::pipeline::{Estimator, PipelineConfig};
use rocnet_core::pose::RansacConfig;
use rocnet_core::training::TrainConfig;
use rocnet_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Clean,
    Partial,
    PartialNoisy,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Clean => "clean",
            Preset::Partial => "partial",
            Preset::PartialNoisy => "partial-noisy",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Preset::Clean),
            "partial" => Ok(Preset::Partial),
            "partial-noisy" => Ok(Preset::PartialNoisy),
            _ => Err(Error::Parameter(format!("unknown preset '{s}' (clean, partial, partial-noisy)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Drops the normal-angle bias from self-attention.
    NoNormals,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no-normals" | "mdgat-attention-off" => Ok(Ablation::NoNormals),
            _ => Err(Error::Parameter(format!(
                "unknown ablation '{s}' (no-normals, mdgat-attention-off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub pairs: usize,
    pub shape: ShapeKind,
    pub pair: PairSpec,
    /// Crop size as a fraction of `n_points`, set by the partial presets and
    /// overridden by an explicit `crop_keep`.
    pub crop_ratio: Option<f64>,
    pub train: TrainConfig,
    /// Fraction of the manifest held out for validation.
    pub holdout: f64,
    pub estimator: Estimator,
    pub ransac: RansacConfig,
    pub icp_max_iters: usize,
    pub icp_tol: f64,
    pub ablation: Ablation,
    pub outlier_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            pairs: 200,
            shape: ShapeKind::Composite,
            pair: PairSpec::default(),
            crop_ratio: None,
            train: TrainConfig::clean(),
            holdout: 0.2,
            estimator: Estimator::Ransac,
            ransac: RansacConfig::default(),
            icp_max_iters: 100,
            icp_tol: 1e-10,
            ablation: Ablation::None,
            outlier_fraction: 0.0,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("{key}: cannot parse '{v}'")))
}

impl RunConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Clean => {
                self.crop_ratio = None;
                self.pair.crop_keep = None;
                self.pair.noise = None;
                self.train.epochs = TrainConfig::clean().epochs;
            }
            Preset::Partial => {
                self.crop_ratio = Some(0.75);
                self.pair.noise = None;
                self.train.epochs = TrainConfig::clean().epochs;
            }
            Preset::PartialNoisy => {
                self.crop_ratio = Some(0.75);
                self.pair.noise = Some(NoiseSpec::default());
                self.train.epochs = TrainConfig::noisy().epochs;
            }
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => {
                self.seed = num(key, value)?;
                self.model.seed = self.seed;
            }
            "pairs" => self.pairs = num(key, value)?,
            "shape" => self.shape = value.parse()?,
            "n_points" => self.pair.n_points = num(key, value)?,
            "rot_min_deg" => self.pair.rot_range_deg[0] = num(key, value)?,
            "rot_max_deg" => self.pair.rot_range_deg[1] = num(key, value)?,
            "trans_min_m" => self.pair.trans_range_m[0] = num(key, value)?,
            "trans_max_m" => self.pair.trans_range_m[1] = num(key, value)?,
            "crop_keep" => {
                self.crop_ratio = None;
                self.pair.crop_keep = match value {
                    "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "noise_sigma" | "noise_clip" => {
                let mut noise = self.pair.noise.unwrap_or_default();
                if key == "noise_sigma" {
                    noise.sigma = num(key, value)?;
                } else {
                    noise.clip = num(key, value)?;
                }
                self.pair.noise = Some(noise);
            }
            "noise" => {
                if value == "none" {
                    self.pair.noise = None;
                } else {
                    return Err(Error::Parameter("noise accepts only 'none'; use noise_sigma/noise_clip".into()));
                }
            }
            "lr" => self.train.lr = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "beta1" => self.train.beta1 = num(key, value)?,
            "beta2" => self.train.beta2 = num(key, value)?,
            "adam_eps" => self.train.eps = num(key, value)?,
            "holdout" => self.holdout = num(key, value)?,
            "estimator" => self.estimator = value.parse()?,
            "k_c" => self.ransac.k_c = num(key, value)?,
            "ransac_iters" => self.ransac.max_iters = num(key, value)?,
            "inlier_threshold" => self.ransac.inlier_threshold = num(key, value)?,
            "sample_size" => self.ransac.sample_size = num(key, value)?,
            "icp_iters" => self.icp_max_iters = num(key, value)?,
            "icp_tol" => self.icp_tol = num(key, value)?,
            "ablate" => self.ablation = value.parse()?,
            "outliers" => self.outlier_fraction = num(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("{}:{}: expected key=value", origin.display(), n + 1)))?;
            self.set(k.trim(), v).map_err(|e| {
                let msg = match e {
                    Error::Parameter(m) => m,
                    other => other.to_string(),
                };
                Error::Parameter(format!("{}:{}: {msg}", origin.display(), n + 1))
            })?;
        }
        Ok(())
    }

    pub fn pair_spec(&self) -> PairSpec {
        let crop_keep = match self.crop_ratio {
            Some(r) => Some((self.pair.n_points as f64 * r).round() as usize),
            None => self.pair.crop_keep,
        };
        PairSpec { crop_keep, seed: self.seed, ..self.pair }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pair_spec().validate()?;
        self.train.validate()?;
        self.ransac.validate()?;
        if self.pairs == 0 {
            return Err(Error::Parameter("pairs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Parameter(format!("holdout must be in [0, 1), got {}", self.holdout)));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::Parameter(format!("outliers must be in [0, 1], got {}", self.outlier_fraction)));
        }
        if self.icp_max_iters == 0 || !(self.icp_tol > 0.0) {
            return Err(Error::Parameter("icp_iters must be >= 1 and icp_tol > 0".into()));
        }
        Ok(())
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            pairs: self.pairs,
            shape: self.shape,
            pair: self.pair_spec(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn forward(&self) -> ForwardOptions {
        ForwardOptions {
            normal_bias: self.ablation == Ablation::None,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            estimator: self.estimator,
            ransac: RansacConfig { seed: self.seed, ..self.ransac },
            icp_max_iters: self.icp_max_iters,
            icp_tol: self.icp_tol,
            forward: self.forward(),
        }
    }
}
