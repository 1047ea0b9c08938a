use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::IdsConfig;
use crate::losses::{LossConfig, LossWeights};
use crate::model::{ArchConfig, ModelOptions};
use crate::nn::{AdamConfig, PairMeasure};

/// Method variants compared in the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    WoInd,
    WoCon,
    WoBoth,
    Orth,
    Corr,
    WoCdpl,
    WoIds,
    NoEarlyFork,
    Erm,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Full,
        Variant::WoInd,
        Variant::WoCon,
        Variant::WoBoth,
        Variant::Orth,
        Variant::Corr,
        Variant::WoCdpl,
        Variant::WoIds,
        Variant::NoEarlyFork,
        Variant::Erm,
    ];

    /// Rows of the ablation table, in display order.
    pub const ABLATIONS: [Variant; 9] = [
        Variant::Full,
        Variant::WoInd,
        Variant::WoCon,
        Variant::WoBoth,
        Variant::Orth,
        Variant::Corr,
        Variant::WoCdpl,
        Variant::WoIds,
        Variant::NoEarlyFork,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WoInd => "wo-ind",
            Variant::WoCon => "wo-con",
            Variant::WoBoth => "wo-both",
            Variant::Orth => "orth",
            Variant::Corr => "corr",
            Variant::WoCdpl => "wo-cdpl",
            Variant::WoIds => "wo-ids",
            Variant::NoEarlyFork => "no-early-fork",
            Variant::Erm => "erm",
        }
    }

    /// Row label used in printed tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Ours",
            Variant::WoInd => "Ours w/o L_ind",
            Variant::WoCon => "Ours w/o L_con",
            Variant::WoBoth => "Ours w/o L_ind & L_con",
            Variant::Orth => "Ours w/o L_ind & w/ L_orth",
            Variant::Corr => "Ours w/o L_ind & w/ L_corr",
            Variant::WoCdpl => "Ours w/o CDPL",
            Variant::WoIds => "Ours w/o IDS",
            Variant::NoEarlyFork => "Ours w/o f_c / f_d",
            Variant::Erm => "ERM",
        }
    }

    /// Applies the variant's switches on top of `cfg`.
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut c = cfg.clone();
        c.variant = self;
        match self {
            Variant::Full => {}
            Variant::WoInd => c.loss.weights.alpha = 0.0,
            Variant::WoCon => c.loss.weights.beta = 0.0,
            Variant::WoBoth => c.loss.weights = LossWeights { alpha: 0.0, beta: 0.0 },
            Variant::Orth => c.loss.measure = PairMeasure::Orth,
            Variant::Corr => c.loss.measure = PairMeasure::Corr,
            Variant::WoCdpl => c.model.cdpl = false,
            Variant::WoIds => c.use_ids = false,
            Variant::NoEarlyFork => c.model.early_fork = false,
            Variant::Erm => {
                c.loss.weights = LossWeights { alpha: 0.0, beta: 0.0 };
                c.use_ids = false;
                c.model = ModelOptions::erm();
            }
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown variant {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Everything that determines one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Architecture preset name; data dimensions come from the dataset.
    pub preset: String,
    /// Full architecture override; takes precedence over `preset`.
    pub arch: Option<ArchConfig>,
    pub model: ModelOptions,
    pub loss: LossConfig,
    pub use_ids: bool,
    pub ids: IdsConfig,
    pub lr: f64,
    pub epochs: usize,
    /// Windows drawn from each source domain per iteration.
    pub batch_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub target: usize,
    pub standardize: bool,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "dsads".into(),
            arch: None,
            model: ModelOptions::default(),
            loss: LossConfig::default(),
            use_ids: true,
            ids: IdsConfig::default(),
            lr: 1e-3,
            epochs: 150,
            batch_size: 32,
            val_fraction: 0.2,
            seed: 0,
            target: 0,
            standardize: true,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    /// Defaults for a named preset. Dataset presets keep the general
    /// defaults; `synthetic` uses a short schedule sized for a laptop CPU.
    pub fn for_preset(name: &str) -> Result<Self> {
        ArchConfig::preset(name)?;
        let mut cfg = TrainConfig {
            preset: name.into(),
            ..TrainConfig::default()
        };
        if name == "synthetic" {
            cfg.lr = 1e-2;
            cfg.epochs = 30;
            cfg.batch_size = 16;
            cfg.loss.weights.beta = 0.03;
            cfg.loss.margin_grad = true;
            cfg.loss.cdpl_stopgrad = true;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be >= 2".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.ids.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "IDS density threshold must be > 0, got {}",
                self.ids.eps
            )));
        }
        self.loss.weights.validate()?;
        if !self.model.noncausal_branch && self.loss.weights.alpha > 0.0 {
            return Err(Error::InvalidArgument(
                "independence loss needs the non-causal branch".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }

    /// Architecture for a dataset with the given dimensions.
    pub fn arch_for(&self, channels: usize, width: usize, classes: usize, domains: usize) -> Result<ArchConfig> {
        let base = match &self.arch {
            Some(a) => a.clone(),
            None => ArchConfig::preset(&self.preset)?,
        };
        Ok(base.with_data(channels, width, classes, domains))
    }
}
