//! UCI-HAR: `train/` and `test/` each hold `Inertial Signals/*_<split>.txt`
//! (rows of 128 readings at 50 Hz, consecutive rows overlapping by half),
//! `y_<split>.txt` and `subject_<split>.txt`.
//!
//! Consecutive rows with the same subject and activity are stitched back
//! into one series before resampling and windowing.

use std::path::Path;

use super::text::{parse_ints, parse_table, unwrap_dir};
use super::{Recording, StepLabels, G};
use crate::error::{Error, Result};

const ROW: usize = 128;
const SIGNALS: [&str; 6] = [
    "total_acc_x",
    "total_acc_y",
    "total_acc_z",
    "body_gyro_x",
    "body_gyro_y",
    "body_gyro_z",
];

fn read_split(root: &Path, split: &str, unit: usize) -> Result<Vec<Recording>> {
    let dir = root.join(split);
    let labels = parse_ints(&dir.join(format!("y_{split}.txt")))?;
    let subjects = parse_ints(&dir.join(format!("subject_{split}.txt")))?;
    let mut signals = Vec::with_capacity(SIGNALS.len());
    for name in SIGNALS {
        let path = dir.join("Inertial Signals").join(format!("{name}_{split}.txt"));
        let mut v = Vec::new();
        let rows = parse_table(&path, None, ROW, &mut v)?;
        if rows != labels.len() || rows != subjects.len() {
            return Err(Error::Format(format!(
                "{}: {rows} rows but {} labels and {} subjects",
                path.display(),
                labels.len(),
                subjects.len()
            )));
        }
        signals.push(v);
    }
    if let Some(&bad) = labels.iter().find(|&&l| !(1..=6).contains(&l)) {
        return Err(Error::Format(format!("{}: unknown activity {bad}", dir.display())));
    }
    let scale = [G, G, G, 1.0, 1.0, 1.0];
    let mut out = Vec::new();
    let mut start = 0;
    while start < labels.len() {
        let mut end = start + 1;
        while end < labels.len() && labels[end] == labels[start] && subjects[end] == subjects[start] {
            end += 1;
        }
        // first half of every row, then the whole last row
        let t = (end - start - 1) * ROW / 2 + ROW;
        let mut series = Vec::with_capacity(SIGNALS.len() * t);
        for (c, sig) in signals.iter().enumerate() {
            for r in start..end {
                let row = &sig[r * ROW..(r + 1) * ROW];
                let take = if r + 1 == end { ROW } else { ROW / 2 };
                series.extend(row[..take].iter().map(|v| v * scale[c]));
            }
        }
        let r = Recording {
            unit,
            channels: SIGNALS.len(),
            series,
            // labels 1..6 already follow the shared order
            labels: StepLabels::Constant(labels[start] as u32 - 1),
        };
        out.push(r.downsample(2));
        start = end;
    }
    Ok(out)
}

/// All six activities, accelerometer in m/s² and gyroscope in rad/s, 25 Hz.
pub(super) fn shared(raw: &Path, unit: usize) -> Result<Vec<Recording>> {
    let root = unwrap_dir(raw, "UCI HAR Dataset", "train");
    let mut out = read_split(&root, "train", unit)?;
    out.extend(read_split(&root, "test", unit)?);
    Ok(out)
}
