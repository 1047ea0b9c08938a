//! Run directories: results, confusion matrices, checkpoints, embeddings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::train::{RunResult, TrainedModel};
use crate::data::{Standardizer, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::CaudgNet;
use crate::nn::Checkpoint;

pub const RESULTS_FILE: &str = "results.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const MODEL_DIR: &str = "model";

/// Contents of `results.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredRun {
    pub config: TrainConfig,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub result: RunResult,
}

/// Hex SHA-256 prefix of the configuration with the seed cleared.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    let json = serde_json::to_vec(&c).expect("config serializes");
    Sha256::digest(&json)[..6]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn run_dir(root: &Path, cfg: &TrainConfig) -> PathBuf {
    root.join(format!(
        "{}-t{}-{}-s{}",
        cfg.variant,
        cfg.target,
        config_hash(cfg),
        cfg.seed
    ))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_model(model: &TrainedModel, class_names: &[String], dir: &Path) -> Result<()> {
    let ck = model.net.to_checkpoint(serde_json::json!({
        "standardizer": model.standardizer,
        "class_names": class_names,
    }))?;
    ck.save(dir)
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let ck = Checkpoint::load(dir)?;
    let net = CaudgNet::from_checkpoint(&ck)?;
    let standardizer = match ck.meta.get("standardizer") {
        Some(v) => serde_json::from_value::<Standardizer>(v.clone())?,
        None => Standardizer::identity(net.config.in_channels),
    };
    Ok(TrainedModel { net, standardizer })
}

/// Writes `results.json`, `confusion.csv` and the selected checkpoint under
/// `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &TrainConfig,
    ds: &WindowedDataset,
    result: &RunResult,
    model: &TrainedModel,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stored = StoredRun {
        config: cfg.clone(),
        class_names: ds.meta.class_names.clone(),
        domain_names: ds.meta.domain_names.clone(),
        result: result.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&stored)?;
    json.push(b'\n');
    write(&dir.join(RESULTS_FILE), &json)?;
    write(
        &dir.join(CONFUSION_FILE),
        result.test.confusion.to_csv(&ds.meta.class_names).as_bytes(),
    )?;
    save_model(model, &ds.meta.class_names, &dir.join(MODEL_DIR))
}

pub fn read_run(dir: &Path) -> Result<StoredRun> {
    let path = dir.join(RESULTS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Every `results.json` below `root`, sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<(PathBuf, StoredRun)>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == RESULTS_FILE) {
                let run_dir = path.parent().expect("file has a parent").to_path_buf();
                let run = read_run(&run_dir)?;
                found.push((run_dir, run));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub rows: usize,
    pub dim: usize,
    pub dtype: String,
}

pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const EMBEDDINGS_META: &str = "embeddings.json";
pub const EMBEDDING_LABELS: &str = "labels.csv";

/// Writes causal features of the windows `idx` as a `[N, D]` little-endian
/// `f32` blob with a CSV of activity and domain labels.
pub fn export_embeddings(
    model: &TrainedModel,
    ds: &WindowedDataset,
    idx: &[usize],
    dir: &Path,
) -> Result<EmbeddingMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let feats = model.embed(ds, idx)?;
    let meta = EmbeddingMeta {
        rows: idx.len(),
        dim: model.net.feature_dim(),
        dtype: "f32le".into(),
    };
    let blob: Vec<u8> = feats.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    write(&dir.join(EMBEDDINGS_FILE), &blob)?;
    write(&dir.join(EMBEDDINGS_META), &serde_json::to_vec_pretty(&meta)?)?;
    let mut csv = String::from("index,label,domain\n");
    for &i in idx {
        csv.push_str(&format!("{i},{},{}\n", ds.labels[i], ds.domains[i]));
    }
    write(&dir.join(EMBEDDING_LABELS), csv.as_bytes())?;
    Ok(meta)
}
