//! PAMAP2 protocol recordings: `Protocol/subject101.dat..subject109.dat`,
//! 54 space-separated columns at 100 Hz (timestamp, activity id, heart rate,
//! then 17 columns for each of the hand, chest and ankle units). Dropped
//! samples are written as `NaN`.
//!
//! Transient rows (activity 0) split a file into separate recordings; labels
//! are kept per step so windows take the majority label.

use std::path::{Path, PathBuf};

use super::text::{parse_table, unwrap_dir};
use super::{Recording, StepLabels};
use crate::error::Result;

pub const ACTIVITIES: [&str; 12] = [
    "lying",
    "sitting",
    "standing",
    "walking",
    "running",
    "cycling",
    "Nordic walking",
    "ascending stairs",
    "descending stairs",
    "vacuum cleaning",
    "ironing",
    "rope jumping",
];
const ACTIVITY_IDS: [usize; 12] = [1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24];

const COLUMNS: usize = 54;
const IMU_START: [usize; 3] = [3, 20, 37];

/// 16 g accelerometer, gyroscope and magnetometer of the three units.
fn channels() -> Vec<usize> {
    IMU_START
        .iter()
        .flat_map(|&s| (s + 1..s + 4).chain(s + 7..s + 13))
        .collect()
}

fn path(raw: &Path, subject: usize) -> PathBuf {
    let root = unwrap_dir(raw, "PAMAP2_Dataset", "Protocol");
    let dir = if root.join("Protocol").is_dir() {
        root.join("Protocol")
    } else {
        root
    };
    dir.join(format!("subject{}.dat", 101 + subject))
}

/// Replaces dropped samples with the previous reading (the first reading
/// for a leading gap, zero for a channel with none).
fn fill_gaps(series: &mut [f32], channels: usize) {
    let t = series.len() / channels;
    for row in series.chunks_mut(t.max(1)) {
        let first = row.iter().copied().find(|v| !v.is_nan()).unwrap_or(0.0);
        let mut last = first;
        for v in row.iter_mut() {
            if v.is_nan() {
                *v = last;
            } else {
                last = *v;
            }
        }
    }
}

/// Runs of consecutive rows whose activity maps to a label.
fn recordings(rows: &[f32], unit: usize, cols: &[usize], label_of: impl Fn(usize) -> Option<u32>) -> Vec<Recording> {
    let n = rows.len() / COLUMNS;
    let labels: Vec<Option<u32>> = (0..n).map(|i| label_of(rows[i * COLUMNS + 1] as usize)).collect();
    let scale = vec![1.0; cols.len()];
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if labels[i].is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && labels[i].is_some() {
            i += 1;
        }
        let steps = labels[start..i].iter().map(|l| l.expect("kept row")).collect();
        let mut r = Recording::from_rows(
            unit,
            &rows[start * COLUMNS..i * COLUMNS],
            COLUMNS,
            cols,
            &scale,
            StepLabels::PerStep(steps),
        );
        fill_gaps(&mut r.series, r.channels);
        out.push(r);
    }
    out
}

fn read_rows(raw: &Path, subject: usize) -> Result<Vec<f32>> {
    let mut rows = Vec::new();
    parse_table(&path(raw, subject), None, COLUMNS, &mut rows)?;
    Ok(rows)
}

pub(super) fn read(raw: &Path, subjects: &[usize]) -> Result<Vec<Recording>> {
    let cols = channels();
    let mut out = Vec::new();
    for &s in subjects {
        let rows = read_rows(raw, s)?;
        out.extend(recordings(&rows, s, &cols, |a| {
            ACTIVITY_IDS.iter().position(|&x| x == a).map(|k| k as u32)
        }));
    }
    Ok(out)
}

/// Chest accelerometer and gyroscope for the six shared activities at 25 Hz.
pub(super) fn shared(raw: &Path, unit: usize) -> Result<Vec<Recording>> {
    // walking, upstairs, downstairs, sitting, standing, lying
    const ACTIVITY: [usize; 6] = [4, 12, 13, 2, 3, 1];
    let chest = IMU_START[1];
    let cols: Vec<usize> = (chest + 1..chest + 4).chain(chest + 7..chest + 10).collect();
    let mut out = Vec::new();
    for s in 0..9 {
        let rows = read_rows(raw, s)?;
        let recs = recordings(&rows, unit, &cols, |a| {
            ACTIVITY.iter().position(|&x| x == a).map(|k| k as u32)
        });
        out.extend(recs.iter().map(|r| r.downsample(4)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_columns() {
        let c = channels();
        assert_eq!(c.len(), 27);
        assert_eq!(&c[..9], &[4, 5, 6, 10, 11, 12, 13, 14, 15]);
        assert_eq!(c[26], 49);
    }

    #[test]
    fn gaps_are_filled_forward() {
        let mut s = vec![f32::NAN, 1.0, f32::NAN, 3.0, f32::NAN, f32::NAN, f32::NAN, f32::NAN];
        fill_gaps(&mut s, 2);
        assert_eq!(s, vec![1.0, 1.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn transients_split_recordings() {
        let mut rows = vec![0.0f32; 6 * COLUMNS];
        for (i, a) in [1.0, 1.0, 0.0, 2.0, 24.0, 9.0].iter().enumerate() {
            rows[i * COLUMNS + 1] = *a;
        }
        let cols = channels();
        let recs = recordings(&rows, 3, &cols, |a| {
            ACTIVITY_IDS.iter().position(|&x| x == a).map(|k| k as u32)
        });
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].labels, StepLabels::PerStep(vec![0, 0]));
        assert_eq!(recs[1].labels, StepLabels::PerStep(vec![1, 11]));
        assert_eq!(recs[1].unit, 3);
    }
}
