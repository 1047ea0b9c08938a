//! Parameter checkpoints: a JSON manifest plus a flat little-endian `f64` blob.
//!
//! `checkpoint.json` lists every tensor with its id, shape, byte offset and
//! element count; `checkpoint.bin` holds the values back to back. Adam moments
//! live under their own `adam` key.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "checkpoint.bin";
const FORMAT: &str = "caudg-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub id: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Number of `f64` values.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamEntry {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<TensorEntry>,
    pub second_moment: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub params: Vec<TensorEntry>,
    #[serde(default)]
    pub buffers: Vec<TensorEntry>,
    #[serde(default)]
    pub adam: Option<AdamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<(String, Tensor)>,
    pub second_moment: Vec<(String, Tensor)>,
}

/// In-memory checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: Vec<(String, Tensor)>,
    /// Non-trainable state such as batch-norm running statistics.
    pub buffers: Vec<(String, Tensor)>,
    pub adam: Option<AdamSnapshot>,
}

impl Checkpoint {
    pub fn from_params(store: &ParamStore) -> Self {
        Checkpoint {
            params: store
                .iter()
                .map(|p| (p.id.clone(), p.value.clone()))
                .collect(),
            ..Default::default()
        }
    }

    pub fn with_adam(mut self, state: &AdamState, store: &ParamStore) -> Self {
        let names: Vec<String> = store.iter().map(|p| p.id.clone()).collect();
        self.adam = Some(AdamSnapshot {
            config: state.config,
            step: state.step,
            first_moment: names.iter().cloned().zip(state.first_moment.clone()).collect(),
            second_moment: names.into_iter().zip(state.second_moment.clone()).collect(),
        });
        self
    }

    pub fn param(&self, id: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == id).map(|(_, t)| t)
    }

    pub fn buffer(&self, id: &str) -> Option<&Tensor> {
        self.buffers.iter().find(|(n, _)| n == id).map(|(_, t)| t)
    }

    /// Drops every parameter, buffer and Adam moment whose id starts with one
    /// of `prefixes`.
    pub fn remove_prefixed(&mut self, prefixes: &[&str]) {
        let keep = |n: &String| !prefixes.iter().any(|p| n.starts_with(p));
        self.params.retain(|(n, _)| keep(n));
        self.buffers.retain(|(n, _)| keep(n));
        if let Some(a) = &mut self.adam {
            a.first_moment.retain(|(n, _)| keep(n));
            a.second_moment.retain(|(n, _)| keep(n));
        }
    }

    /// Copies values for every parameter of `store` found in the checkpoint.
    /// Missing ids are an error unless `allow_missing` is set.
    pub fn load_into(&self, store: &mut ParamStore, allow_missing: bool) -> Result<()> {
        for p in store.iter_mut() {
            match self.param(&p.id) {
                Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "checkpoint tensor {} has shape {:?}, model expects {:?}",
                        p.id,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None if allow_missing => {}
                None => {
                    return Err(Error::Format(format!(
                        "checkpoint is missing parameter {}",
                        p.id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob: Vec<u8> = Vec::new();
        let mut write = |list: &[(String, Tensor)]| -> Vec<TensorEntry> {
            list.iter()
                .map(|(id, t)| {
                    let offset = blob.len() as u64;
                    for v in t.data() {
                        blob.extend_from_slice(&v.to_le_bytes());
                    }
                    TensorEntry {
                        id: id.clone(),
                        shape: t.shape().to_vec(),
                        offset,
                        len: t.len(),
                    }
                })
                .collect()
        };
        let params = write(&self.params);
        let buffers = write(&self.buffers);
        let adam = self.adam.as_ref().map(|a| AdamEntry {
            config: a.config,
            step: a.step,
            first_moment: write(&a.first_moment),
            second_moment: write(&a.second_moment),
        });
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            version: VERSION,
            params,
            buffers,
            adam,
            meta: self.meta.clone(),
        };
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: CheckpointManifest = serde_json::from_slice(&text)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        let bpath = dir.join(BLOB_FILE);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let read = |entries: &[TensorEntry]| -> Result<Vec<(String, Tensor)>> {
            entries
                .iter()
                .map(|e| {
                    let start = e.offset as usize;
                    let end = start + e.len * 8;
                    if end > blob.len() || e.shape.iter().product::<usize>() != e.len {
                        return Err(Error::Format(format!(
                            "checkpoint entry {} does not fit the blob",
                            e.id
                        )));
                    }
                    let data = blob[start..end]
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Ok((e.id.clone(), Tensor::new(e.shape.clone(), data)?))
                })
                .collect()
        };
        let adam = match &manifest.adam {
            Some(a) => Some(AdamSnapshot {
                config: a.config,
                step: a.step,
                first_moment: read(&a.first_moment)?,
                second_moment: read(&a.second_moment)?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            meta: manifest.meta,
            params: read(&manifest.params)?,
            buffers: read(&manifest.buffers)?,
            adam,
        })
    }
}

impl AdamSnapshot {
    /// Rebuilds optimizer state aligned with `store`.
    pub fn restore(&self, store: &ParamStore) -> Result<AdamState> {
        let mut state = AdamState::new(self.config, store);
        state.step = self.step;
        for (i, p) in store.iter().enumerate() {
            let find = |list: &[(String, Tensor)]| {
                list.iter()
                    .find(|(n, _)| *n == p.id)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::Format(format!("no Adam moments for {}", p.id)))
            };
            state.first_moment[i] = find(&self.first_moment)?;
            state.second_moment[i] = find(&self.second_moment)?;
        }
        Ok(state)
    }
}
