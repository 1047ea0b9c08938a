//! Daily and Sports Activities: `a01..a19/p1..p8/s01..s60.txt`, 125 rows of
//! 45 comma-separated readings per segment at 25 Hz. Columns are five units
//! (torso, right arm, left arm, right leg, left leg), each with x, y, z of
//! accelerometer, gyroscope and magnetometer.
//!
//! The segments of one person doing one activity are consecutive pieces of
//! a single recording and are concatenated before windowing.

use std::path::{Path, PathBuf};

use super::text::{list_names, parse_table, unwrap_dir};
use super::{Recording, StepLabels};
use crate::error::{Error, Result};

pub const ACTIVITIES: [&str; 19] = [
    "sitting",
    "standing",
    "lying on back",
    "lying on right side",
    "ascending stairs",
    "descending stairs",
    "standing in an elevator",
    "moving around in an elevator",
    "walking in a parking lot",
    "walking on a treadmill",
    "walking on an inclined treadmill",
    "running on a treadmill",
    "exercising on a stepper",
    "exercising on a cross trainer",
    "cycling horizontally",
    "cycling vertically",
    "rowing",
    "jumping",
    "playing basketball",
];

const COLUMNS: usize = 45;
const PERSONS: usize = 8;
const UNIT_COLUMNS: usize = 9;

fn root(raw: &Path) -> PathBuf {
    unwrap_dir(raw, "data", "a01")
}

/// Time-major rows of every segment of `activity` by `person`, in segment order.
fn read_pair(root: &Path, activity: usize, person: usize) -> Result<Vec<f32>> {
    let dir = root.join(format!("a{:02}", activity + 1)).join(format!("p{}", person + 1));
    let segments: Vec<String> = list_names(&dir)?
        .into_iter()
        .filter(|n| n.starts_with('s') && n.ends_with(".txt"))
        .collect();
    if segments.is_empty() {
        return Err(Error::Missing(dir.join("s01.txt")));
    }
    let mut rows = Vec::new();
    for s in segments {
        parse_table(&dir.join(s), Some(','), COLUMNS, &mut rows)?;
    }
    Ok(rows)
}

/// One 45-channel recording per (activity, person); the unit is the person.
pub(super) fn by_person(raw: &Path, persons: &[usize]) -> Result<Vec<Recording>> {
    let root = root(raw);
    let cols: Vec<usize> = (0..COLUMNS).collect();
    let ones = vec![1.0; COLUMNS];
    let mut out = Vec::new();
    for a in 0..ACTIVITIES.len() {
        for &p in persons {
            let rows = read_pair(&root, a, p)?;
            out.push(Recording::from_rows(p, &rows, COLUMNS, &cols, &ones, StepLabels::Constant(a as u32)));
        }
    }
    Ok(out)
}

/// Nine channels per sensor unit; the unit is the body position.
pub(super) fn by_position(raw: &Path) -> Result<Vec<Recording>> {
    let root = root(raw);
    let ones = [1.0; UNIT_COLUMNS];
    let mut out = Vec::new();
    for a in 0..ACTIVITIES.len() {
        for p in 0..PERSONS {
            let rows = read_pair(&root, a, p)?;
            for pos in 0..COLUMNS / UNIT_COLUMNS {
                let cols: Vec<usize> = (pos * UNIT_COLUMNS..(pos + 1) * UNIT_COLUMNS).collect();
                out.push(Recording::from_rows(pos, &rows, COLUMNS, &cols, &ones, StepLabels::Constant(a as u32)));
            }
        }
    }
    Ok(out)
}

/// Torso accelerometer and gyroscope for the six shared activities.
pub(super) fn shared(raw: &Path, unit: usize) -> Result<Vec<Recording>> {
    // walking, upstairs, downstairs, sitting, standing, lying on back
    const ACTIVITY: [usize; 6] = [8, 4, 5, 0, 1, 2];
    let root = root(raw);
    let mut out = Vec::new();
    for (label, &a) in ACTIVITY.iter().enumerate() {
        for p in 0..PERSONS {
            let rows = read_pair(&root, a, p)?;
            out.push(Recording::from_rows(
                unit,
                &rows,
                COLUMNS,
                &[0, 1, 2, 3, 4, 5],
                &[1.0; 6],
                StepLabels::Constant(label as u32),
            ));
        }
    }
    Ok(out)
}
