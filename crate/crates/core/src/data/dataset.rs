use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub channels: usize,
    pub width: usize,
    pub class_names: Vec<String>,
    pub domain_names: Vec<String>,
    /// Free-form description of where the windows came from.
    pub source: String,
}

impl DatasetMeta {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }
}

/// Windowed sensor data, `[N, C, 1, W]` in single precision, with activity
/// and domain labels.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub meta: DatasetMeta,
    pub windows: Vec<f32>,
    pub labels: Vec<u32>,
    pub domains: Vec<u32>,
}

impl WindowedDataset {
    pub fn new(meta: DatasetMeta, windows: Vec<f32>, labels: Vec<u32>, domains: Vec<u32>) -> Result<Self> {
        let ds = WindowedDataset {
            meta,
            windows,
            labels,
            domains,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn window_len(&self) -> usize {
        self.meta.channels * self.meta.width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes()
    }

    pub fn num_domains(&self) -> usize {
        self.meta.num_domains()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let n = self.window_len();
        &self.windows[i * n..(i + 1) * n]
    }

    /// Checks the invariants: matching lengths, labels in range, every
    /// declared domain present, no NaN.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.meta.channels == 0 || self.meta.width == 0 {
            return Err(Error::Format("dataset has zero channels or width".into()));
        }
        if self.windows.len() != n * self.window_len() {
            return Err(Error::Format(format!(
                "{} values for {n} windows of {}x{}",
                self.windows.len(),
                self.meta.channels,
                self.meta.width
            )));
        }
        if self.domains.len() != n {
            return Err(Error::Format(format!(
                "{n} activity labels but {} domain labels",
                self.domains.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.num_classes()) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: self.num_classes(),
            });
        }
        let mut seen = vec![false; self.num_domains()];
        for &d in &self.domains {
            match seen.get_mut(d as usize) {
                Some(s) => *s = true,
                None => {
                    return Err(Error::Format(format!(
                        "domain label {d} out of range for {} domains",
                        self.num_domains()
                    )))
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!(
                "declared domain {:?} has no windows",
                self.meta.domain_names[missing]
            )));
        }
        if self.windows.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("dataset contains NaN values".into()));
        }
        Ok(())
    }

    /// Indices of windows in domain `d`.
    pub fn domain_indices(&self, d: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.domains[i] as usize == d).collect()
    }

    /// Per-class window counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// `[idx.len(), C, 1, W]` batch in double precision.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.window_len());
        for &i in idx {
            data.extend(self.window(i).iter().map(|&v| v as f64));
        }
        Tensor::new4(idx.len(), self.meta.channels, self.meta.width, data)
            .expect("window buffer matches shape")
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i] as usize).collect()
    }

    pub fn domains_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.domains[i] as usize).collect()
    }
}

/// Per-channel z-score parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits per-channel mean and standard deviation over the given windows.
    /// Channels with (near) zero spread get a unit scale.
    pub fn fit(ds: &WindowedDataset, idx: &[usize]) -> Self {
        let (c, w) = (ds.meta.channels, ds.meta.width);
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for &i in idx {
            for (ch, row) in ds.window(i).chunks(w).enumerate() {
                for &v in row {
                    let v = v as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let n = (idx.len() * w).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n - m * m).max(0.0).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, x: &mut Tensor) -> Result<()> {
        let (_, c, w) = x.dims4()?;
        if c != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} channels, batch has {c}",
                self.mean.len()
            )));
        }
        for (row, chunk) in x.data_mut().chunks_mut(w).enumerate() {
            let ch = row % c;
            let (m, s) = (self.mean[ch], self.std[ch]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(())
    }
}
