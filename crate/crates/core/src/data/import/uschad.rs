//! USC-HAD: `Subject1..Subject14/a<activity>t<trial>.mat`, each holding a
//! `sensor_readings` matrix of T × 6 (accelerometer x, y, z in g, gyroscope
//! x, y, z in deg/s) sampled at 100 Hz.

use std::path::Path;

use super::text::{list_names, unwrap_dir};
use super::{Recording, StepLabels, G};
use crate::data::mat::read_mat_var;
use crate::error::{Error, Result};

pub const ACTIVITIES: [&str; 12] = [
    "walking forward",
    "walking left",
    "walking right",
    "walking upstairs",
    "walking downstairs",
    "running forward",
    "jumping up",
    "sitting",
    "standing",
    "sleeping",
    "elevator up",
    "elevator down",
];

const VARIABLE: &str = "sensor_readings";
const CHANNELS: usize = 6;

/// `a3t2.mat` → (3, 2).
fn parse_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('a')?.strip_suffix(".mat")?;
    let (a, t) = rest.split_once('t')?;
    Some((a.parse().ok()?, t.parse().ok()?))
}

/// `[6, T]` readings and the 1-based activity of every trial by `subject`.
fn read_subject(raw: &Path, subject: usize) -> Result<Vec<(usize, Vec<f32>)>> {
    let root = unwrap_dir(raw, "USC-HAD", "Subject1");
    let dir = root.join(format!("Subject{}", subject + 1));
    let mut trials: Vec<(usize, usize, String)> = list_names(&dir)?
        .into_iter()
        .filter_map(|n| parse_name(&n).map(|(a, t)| (a, t, n)))
        .collect();
    if trials.is_empty() {
        return Err(Error::Missing(dir.join("a1t1.mat")));
    }
    trials.sort();
    let mut out = Vec::new();
    for (a, _, name) in trials {
        let path = dir.join(&name);
        if !(1..=ACTIVITIES.len()).contains(&a) {
            return Err(Error::Format(format!("{}: unknown activity {a}", path.display())));
        }
        let m = read_mat_var(&path, VARIABLE)?;
        let series: Vec<f32> = if m.cols() == CHANNELS {
            m.data.iter().map(|&v| v as f32).collect()
        } else if m.rows() == CHANNELS {
            // stored as 6 × T: transpose the column-major data
            let t = m.cols();
            (0..CHANNELS)
                .flat_map(|c| (0..t).map(move |i| (c, i)))
                .map(|(c, i)| m.data[i * CHANNELS + c] as f32)
                .collect()
        } else {
            return Err(Error::Format(format!(
                "{}: {VARIABLE} is {:?}, expected T x {CHANNELS}",
                path.display(),
                m.dims
            )));
        };
        out.push((a, series));
    }
    Ok(out)
}

pub(super) fn read(raw: &Path, subjects: &[usize]) -> Result<Vec<Recording>> {
    let mut out = Vec::new();
    for &s in subjects {
        for (a, series) in read_subject(raw, s)? {
            out.push(Recording {
                unit: s,
                channels: CHANNELS,
                series,
                labels: StepLabels::Constant(a as u32 - 1),
            });
        }
    }
    Ok(out)
}

/// The six shared activities, converted to m/s² and rad/s at 25 Hz.
pub(super) fn shared(raw: &Path, unit: usize) -> Result<Vec<Recording>> {
    // walking forward, upstairs, downstairs, sitting, standing, sleeping
    const ACTIVITY: [usize; 6] = [1, 4, 5, 8, 9, 10];
    let deg = std::f32::consts::PI / 180.0;
    let scale = [G, G, G, deg, deg, deg];
    let mut out = Vec::new();
    for s in 0..14 {
        for (a, mut series) in read_subject(raw, s)? {
            let Some(label) = ACTIVITY.iter().position(|&x| x == a) else { continue };
            let t = series.len() / CHANNELS;
            for (c, row) in series.chunks_mut(t.max(1)).enumerate() {
                row.iter_mut().for_each(|v| *v *= scale[c]);
            }
            let r = Recording {
                unit,
                channels: CHANNELS,
                series,
                labels: StepLabels::Constant(label as u32),
            };
            out.push(r.downsample(4));
        }
    }
    Ok(out)
}
