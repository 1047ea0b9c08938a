//! Sliding-window segmentation.

use crate::error::{Error, Result};

/// `round(width · (1 − overlap))`.
pub fn window_stride(width: usize, overlap: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let stride = (width as f64 * (1.0 - overlap)).round() as usize;
    if stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "width {width} with overlap {overlap} gives a zero stride"
        )));
    }
    Ok(stride)
}

/// Number of windows of `width` with `stride` that fit into `len` samples.
pub fn window_count(len: usize, width: usize, stride: usize) -> usize {
    if len < width || width == 0 {
        0
    } else {
        (len - width) / stride + 1
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Windows {
    /// `[N, C, 1, W]`, row-major.
    pub data: Vec<f32>,
    /// Majority label per window (empty when no per-step labels were given).
    pub labels: Vec<u32>,
    pub count: usize,
    /// Series shorter than one window.
    pub too_short: usize,
}

impl Windows {
    pub fn append(&mut self, other: Windows) {
        self.data.extend(other.data);
        self.labels.extend(other.labels);
        self.count += other.count;
        self.too_short += other.too_short;
    }
}

/// Most frequent label; ties go to the smallest label.
pub fn majority_label(labels: &[u32]) -> Option<u32> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(u32, usize)> = None;
    for run in sorted.chunk_by(|a, b| a == b) {
        if best.is_none_or(|(_, n)| run.len() > n) {
            best = Some((run[0], run.len()));
        }
    }
    best.map(|(l, _)| l)
}

/// Cuts a `[C, T]` row-major series into windows of `width` starting at
/// `0, stride, 2·stride, …`.
pub fn sliding_window(
    series: &[f32],
    channels: usize,
    width: usize,
    overlap: f64,
    step_labels: Option<&[u32]>,
) -> Result<Windows> {
    if channels == 0 || series.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "{} values do not form {channels} channels",
            series.len()
        )));
    }
    let t = series.len() / channels;
    if let Some(l) = step_labels {
        if l.len() != t {
            return Err(Error::Shape(format!(
                "{} step labels for a series of length {t}",
                l.len()
            )));
        }
    }
    let stride = window_stride(width, overlap)?;
    let n = window_count(t, width, stride);
    let mut out = Windows {
        data: Vec::with_capacity(n * channels * width),
        labels: Vec::with_capacity(if step_labels.is_some() { n } else { 0 }),
        count: n,
        too_short: usize::from(n == 0),
    };
    for k in 0..n {
        let start = k * stride;
        for c in 0..channels {
            out.data
                .extend_from_slice(&series[c * t + start..c * t + start + width]);
        }
        if let Some(l) = step_labels {
            out.labels
                .push(majority_label(&l[start..start + width]).expect("non-empty window"));
        }
    }
    Ok(out)
}
