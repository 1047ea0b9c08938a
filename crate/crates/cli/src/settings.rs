//! Configuration layering: flag > config file > `CAUDG_SEED` (seed only) >
//! preset.

use std::fs;
use std::path::Path;

use caudg_core::data::WindowedDataset;
use caudg_core::model::PRESETS;
use caudg_core::pipeline::{TrainConfig, Variant};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::Knobs;
use crate::error::CliError;

pub const SEED_ENV: &str = "CAUDG_SEED";

/// A parsed `--config` file.
pub enum ConfigFile {
    /// Partial overrides merged onto the preset.
    Toml(toml::Table),
    /// The complete configuration recorded in a manifest.
    Manifest(serde_json::Value),
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let config = match v.get("config") {
                Some(c) => c.clone(),
                None => v,
            };
            return Ok(ConfigFile::Manifest(config));
        }
        toml::from_str(&text)
            .map(ConfigFile::Toml)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn get(&self, key: &str) -> Option<serde_json::Value> {
        match self {
            ConfigFile::Toml(t) => t.get(key).and_then(|v| serde_json::to_value(v).ok()),
            ConfigFile::Manifest(v) => v.get(key).cloned(),
        }
    }

    pub fn has_seed(&self) -> bool {
        self.get("seed").is_some()
    }

    pub fn preset(&self) -> Option<String> {
        self.get("preset").and_then(|v| v.as_str().map(String::from))
    }

    /// Applies the file on top of `base`.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, base: &T) -> Result<T, CliError> {
        match self {
            ConfigFile::Manifest(v) => serde_json::from_value(v.clone())
                .map_err(|e| CliError::Usage(format!("config in manifest: {e}"))),
            ConfigFile::Toml(over) => {
                let mut table = toml::Table::try_from(base).map_err(|e| CliError::Usage(e.to_string()))?;
                merge(&mut table, over, "")?;
                toml::Value::Table(table)
                    .try_into()
                    .map_err(|e| CliError::Usage(format!("config file: {e}")))
            }
        }
    }
}

/// Keys that may appear in a file although the base leaves them unset.
const OPTIONAL_KEYS: [&str; 1] = ["arch"];

fn merge(base: &mut toml::Table, over: &toml::Table, prefix: &str) -> Result<(), CliError> {
    for (k, v) in over {
        let path = format!("{prefix}{k}");
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &format!("{path}."))?,
            (Some(slot), v) => *slot = v.clone(),
            (None, v) if prefix.is_empty() && OPTIONAL_KEYS.contains(&k.as_str()) => {
                base.insert(k.clone(), v.clone());
            }
            (None, _) => return Err(CliError::Usage(format!("unknown config key {path:?}"))),
        }
    }
    Ok(())
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Preset named by the first word of the dataset's source description.
pub fn infer_preset(ds: &WindowedDataset) -> Result<String, CliError> {
    let first = ds.meta.source.split_whitespace().next().unwrap_or("");
    if PRESETS.contains(&first) {
        Ok(first.to_string())
    } else {
        Err(CliError::Usage(format!(
            "cannot infer a preset from dataset source {:?}; pass --preset",
            ds.meta.source
        )))
    }
}

/// Flags that a variant overrides, which would silently be ignored.
fn check_conflicts(k: &Knobs, v: Variant) -> Result<(), CliError> {
    let clash = |flag: &str| {
        Err(CliError::Usage(format!(
            "--ablation {v} overrides what {flag} sets; drop one of them"
        )))
    };
    let no_ids = matches!(v, Variant::WoIds | Variant::Erm);
    let no_ind = matches!(v, Variant::WoInd | Variant::WoBoth | Variant::Erm);
    let no_con = matches!(v, Variant::WoCon | Variant::WoBoth | Variant::Erm);
    if no_ids && k.ids_eps.is_some() {
        return clash("--ids-eps");
    }
    if no_ids && k.ids_max_draws.is_some() {
        return clash("--ids-max-draws");
    }
    if no_ind && k.alpha.is_some() {
        return clash("--alpha");
    }
    if no_con && k.beta.is_some() {
        return clash("--beta");
    }
    if matches!(v, Variant::WoCdpl | Variant::Erm) && k.cdpl_shared.is_some() {
        return clash("--cdpl-shared");
    }
    if matches!(v, Variant::Orth | Variant::Corr) && k.ind_measure.is_some() {
        return clash("--ind-measure");
    }
    Ok(())
}

/// Resolves the configuration before any variant is applied.
pub fn resolve_base(k: &Knobs, ds: &WindowedDataset) -> Result<TrainConfig, CliError> {
    let file = k.config.as_deref().map(ConfigFile::load).transpose()?;
    let preset = match (k.preset.clone(), file.as_ref().and_then(ConfigFile::preset)) {
        (Some(p), _) | (None, Some(p)) => p,
        (None, None) => infer_preset(ds)?,
    };
    let mut cfg = TrainConfig::for_preset(&preset).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(f) = &file {
        cfg = f.apply(&cfg)?;
        cfg.preset = preset;
    }
    match (k.seed, file.as_ref().is_some_and(ConfigFile::has_seed)) {
        (Some(s), _) => cfg.seed = s,
        (None, true) => {}
        (None, false) => {
            if let Some(s) = env_seed()? {
                cfg.seed = s;
            }
        }
    }
    if let Some(a) = k.alpha {
        cfg.loss.weights.alpha = a;
    }
    if let Some(b) = k.beta {
        cfg.loss.weights.beta = b;
    }
    if let Some(e) = k.ids_eps {
        cfg.ids.eps = e;
    }
    if let Some(n) = k.ids_max_draws {
        cfg.ids.max_draws = n;
    }
    if let Some(m) = k.loss_con_mode {
        cfg.loss.con_mode = m;
    }
    if let Some(m) = k.ind_measure {
        cfg.loss.measure = m;
    }
    if let Some(m) = k.cls_mode {
        cfg.loss.cls_mode = m;
    }
    if let Some(b) = k.cdpl_stopgrad {
        cfg.loss.cdpl_stopgrad = b;
    }
    if let Some(b) = k.cdpl_shared {
        cfg.model.cdpl_shared = b;
    }
    if let Some(b) = k.margin_grad {
        cfg.loss.margin_grad = b;
    }
    if let Some(n) = k.epochs {
        cfg.epochs = n;
    }
    if let Some(n) = k.batch_size {
        cfg.batch_size = n;
    }
    if let Some(lr) = k.lr {
        cfg.lr = lr;
    }
    if let Some(f) = k.val_fraction {
        cfg.val_fraction = f;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Resolves the configuration of a single-variant command.
pub fn resolve(k: &Knobs, variant: Option<Variant>, ds: &WindowedDataset) -> Result<TrainConfig, CliError> {
    let base = resolve_base(k, ds)?;
    let v = variant.unwrap_or(base.variant);
    check_conflicts(k, v)?;
    let cfg = v.apply(&base);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Conflict check for every variant of a sweep.
pub fn check_sweep(k: &Knobs, variants: &[Variant]) -> Result<(), CliError> {
    variants.iter().try_for_each(|&v| check_conflicts(k, v))
}
