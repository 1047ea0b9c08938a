//! On-disk windowed dataset directory.
//!
//! ```text
//! <dir>/meta.json     schema version, dimensions, names, counts
//! <dir>/data.f32      [N, C, 1, W] little-endian f32
//! <dir>/labels.u32    [N] little-endian u32
//! <dir>/domains.u32   [N] little-endian u32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, WindowedDataset};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.f32";
pub const LABELS_FILE: &str = "labels.u32";
pub const DOMAINS_FILE: &str = "domains.u32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CwdMeta {
    pub schema_version: u32,
    pub windows: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    pub source: String,
    pub class_counts: Vec<usize>,
    pub domain_counts: Vec<usize>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn expect_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(())
}

pub fn save_cwd(ds: &WindowedDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut domain_counts = vec![0; ds.num_domains()];
    for &d in &ds.domains {
        domain_counts[d as usize] += 1;
    }
    let meta = CwdMeta {
        schema_version: SCHEMA_VERSION,
        windows: ds.len(),
        channels: ds.meta.channels,
        height: 1,
        width: ds.meta.width,
        class_names: ds.meta.class_names.clone(),
        domain_names: ds.meta.domain_names.clone(),
        source: ds.meta.source.clone(),
        class_counts: ds.class_counts(),
        domain_counts,
    };
    let mut json = serde_json::to_vec_pretty(&meta)?;
    json.push(b'\n');
    write(&dir.join(META_FILE), &json)?;
    let data: Vec<u8> = ds.windows.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(&dir.join(DATA_FILE), &data)?;
    let labels: Vec<u8> = ds.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(&dir.join(LABELS_FILE), &labels)?;
    let domains: Vec<u8> = ds.domains.iter().flat_map(|v| v.to_le_bytes()).collect();
    write(&dir.join(DOMAINS_FILE), &domains)
}

pub fn load_cwd(dir: &Path) -> Result<WindowedDataset> {
    let meta_path = dir.join(META_FILE);
    let meta: CwdMeta = serde_json::from_slice(&read(&meta_path)?)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "{}: schema version {} (this build reads {SCHEMA_VERSION})",
            meta_path.display(),
            meta.schema_version
        )));
    }
    if meta.height != 1 {
        return Err(Error::Format(format!("height must be 1, got {}", meta.height)));
    }
    let n = meta.windows;
    let values = n
        .checked_mul(meta.channels)
        .and_then(|v| v.checked_mul(meta.width))
        .ok_or_else(|| Error::Format("window count overflows".into()))?;

    let path = dir.join(DATA_FILE);
    let bytes = read(&path)?;
    expect_len(&path, &bytes, values * 4)?;
    let windows = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();

    let u32s = |file: &str| -> Result<Vec<u32>> {
        let path = dir.join(file);
        let bytes = read(&path)?;
        expect_len(&path, &bytes, n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    };
    let labels = u32s(LABELS_FILE)?;
    let domains = u32s(DOMAINS_FILE)?;
    let ds = WindowedDataset::new(
        DatasetMeta {
            channels: meta.channels,
            width: meta.width,
            class_names: meta.class_names,
            domain_names: meta.domain_names,
            source: meta.source,
        },
        windows,
        labels,
        domains,
    )?;
    if ds.class_counts() != meta.class_counts {
        return Err(Error::Format(format!(
            "{}: class counts do not match the label file",
            meta_path.display()
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> WindowedDataset {
        WindowedDataset::new(
            DatasetMeta {
                channels: 2,
                width: 2,
                class_names: vec!["a".into(), "b".into()],
                domain_names: vec!["p0".into(), "p1".into()],
                source: "unit".into(),
            },
            vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0, 7.0, 8.0, 9.0, 1e-30],
            vec![1, 0],
            vec![0, 1],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        save_cwd(&ds, dir.path()).unwrap();
        let back = load_cwd(dir.path()).unwrap();
        assert_eq!(back.meta, ds.meta);
        let bits = |d: &WindowedDataset| d.windows.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
        assert_eq!((back.labels, back.domains), (ds.labels, ds.domains));
    }

    #[test]
    fn blob_sizes_match_counts() {
        let dir = tempfile::tempdir().unwrap();
        save_cwd(&tiny(), dir.path()).unwrap();
        let len = |f| fs::metadata(dir.path().join(f)).unwrap().len();
        assert_eq!(len(DATA_FILE), 2 * 2 * 2 * 4);
        assert_eq!(len(LABELS_FILE), 8);
    }

    #[test]
    fn corrupted_count_is_a_clean_error() {
        let dir = tempfile::tempdir().unwrap();
        save_cwd(&tiny(), dir.path()).unwrap();
        let p = dir.path().join(META_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"windows\": 2", "\"windows\": 3");
        fs::write(&p, text).unwrap();
        let err = load_cwd(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn future_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_cwd(&tiny(), dir.path()).unwrap();
        let p = dir.path().join(META_FILE);
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        fs::write(&p, text).unwrap();
        assert!(load_cwd(dir.path()).is_err());
    }
}
