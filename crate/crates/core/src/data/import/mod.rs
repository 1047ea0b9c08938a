//! Importers for the public activity-recognition recordings.
//!
//! Each importer reads the dataset's published directory layout, cuts the
//! recordings into windows and assigns domain labels from a [`SplitSpec`].
//!
//! | dataset | setting | window | domains |
//! |---|---|---|---|
//! | dsads | cross-person | 45×125 | persons {0,1} {2,3} {4,5} {6,7} |
//! | dsads | cross-position | 9×125 | torso, right arm, left arm, right leg, left leg |
//! | uschad | cross-person | 6×200 | subjects {1,11,2,0} {6,3,9,5} {7,13,8,10} {4,12} |
//! | pamap2 | cross-person | 27×200 | subjects {3,2,8} {1,5} {0,7} {4,6} |
//! | ucihar | cross-dataset | 6×50 | DSADS, USC-HAD, PAMAP2, UCI-HAR |
//! | dsads, uschad, pamap2 | one-to-one | as cross-person | subjects 0 to 7 |
//!
//! All windows overlap by half.

mod dsads;
mod pamap2;
mod text;
mod ucihar;
mod uschad;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, WindowedDataset};
use super::window::{majority_label, sliding_window, Windows};
use crate::error::{Error, Result};

pub const OVERLAP: f64 = 0.5;
/// Standard gravity, for converting readings in g.
const G: f32 = 9.806_65;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Dsads,
    Uschad,
    Pamap2,
    Ucihar,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Dsads,
        DatasetKind::Uschad,
        DatasetKind::Pamap2,
        DatasetKind::Ucihar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Dsads => "dsads",
            DatasetKind::Uschad => "uschad",
            DatasetKind::Pamap2 => "pamap2",
            DatasetKind::Ucihar => "ucihar",
        }
    }

    fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Dsads => "DSADS",
            DatasetKind::Uschad => "USC-HAD",
            DatasetKind::Pamap2 => "PAMAP2",
            DatasetKind::Ucihar => "UCI-HAR",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown dataset {s:?} (expected dsads, uschad, pamap2 or ucihar)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    CrossPerson,
    CrossPosition,
    CrossDataset,
    OneToOne,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::CrossPerson,
        Setting::CrossPosition,
        Setting::CrossDataset,
        Setting::OneToOne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::CrossPerson => "cross-person",
            Setting::CrossPosition => "cross-position",
            Setting::CrossDataset => "cross-dataset",
            Setting::OneToOne => "one-to-one",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown setting {s:?} (expected cross-person, cross-position, cross-dataset or one-to-one)"
                ))
            })
    }
}

pub const POSITIONS: [&str; 5] = ["torso", "right arm", "left arm", "right leg", "left leg"];

/// Which raw units (subjects, sensor positions or datasets) make up each
/// domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub setting: Setting,
    pub groups: Vec<Vec<usize>>,
}

impl SplitSpec {
    /// Rejects empty groups and units listed twice.
    pub fn new(setting: Setting, groups: Vec<Vec<usize>>) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("every domain needs at least one unit".into()));
        }
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("unit {} is in two domains", w[0])));
        }
        Ok(SplitSpec { setting, groups })
    }

    /// The grouping used for `dataset` under `setting`.
    pub fn preset(dataset: DatasetKind, setting: Setting) -> Result<Self> {
        use DatasetKind::*;
        use Setting::*;
        let groups = match (dataset, setting) {
            (Dsads, CrossPerson) => vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]],
            (Uschad, CrossPerson) => vec![vec![1, 11, 2, 0], vec![6, 3, 9, 5], vec![7, 13, 8, 10], vec![4, 12]],
            (Pamap2, CrossPerson) => vec![vec![3, 2, 8], vec![1, 5], vec![0, 7], vec![4, 6]],
            (Dsads, CrossPosition) => (0..5).map(|p| vec![p]).collect(),
            (Ucihar, CrossDataset) => (0..4).map(|p| vec![p]).collect(),
            (Dsads | Uschad | Pamap2, OneToOne) => (0..8).map(|p| vec![p]).collect(),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "no {setting} split for {dataset} (cross-position needs dsads, cross-dataset uses ucihar)"
                )))
            }
        };
        SplitSpec::new(setting, groups)
    }

    pub fn num_domains(&self) -> usize {
        self.groups.len()
    }

    pub fn domain_of(&self, unit: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&unit))
    }

    /// Every unit, ascending.
    pub fn units(&self) -> Vec<usize> {
        let mut u = self.groups.concat();
        u.sort_unstable();
        u
    }

    fn domain_names(&self) -> Vec<String> {
        self.groups
            .iter()
            .map(|g| {
                let ids: Vec<String> = g.iter().map(usize::to_string).collect();
                match self.setting {
                    Setting::CrossPosition => POSITIONS[g[0]].to_string(),
                    Setting::CrossDataset => DatasetKind::ALL[g[0]].display_name().to_string(),
                    _ if g.len() == 1 => format!("subject {}", ids[0]),
                    _ => format!("subjects {}", ids.join(",")),
                }
            })
            .collect()
    }
}

/// Window geometry of an import preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPreset {
    pub channels: usize,
    pub width: usize,
}

pub fn window_preset(dataset: DatasetKind, setting: Setting) -> Result<WindowPreset> {
    SplitSpec::preset(dataset, setting)?;
    let (channels, width) = match (dataset, setting) {
        (_, Setting::CrossDataset) => (6, 50),
        (DatasetKind::Dsads, Setting::CrossPosition) => (9, 125),
        (DatasetKind::Dsads, _) => (45, 125),
        (DatasetKind::Uschad, _) => (6, 200),
        (DatasetKind::Pamap2, _) => (27, 200),
        (DatasetKind::Ucihar, _) => unreachable!("ucihar only has the cross-dataset split"),
    };
    Ok(WindowPreset { channels, width })
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum StepLabels {
    Constant(u32),
    PerStep(Vec<u32>),
}

/// One continuous multichannel series, `[C, T]` channel-major.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Recording {
    pub unit: usize,
    pub channels: usize,
    pub series: Vec<f32>,
    pub labels: StepLabels,
}

impl Recording {
    /// Picks `cols` out of time-major rows of `stride` values, scaling
    /// column `k` by `scale[k]`.
    pub fn from_rows(unit: usize, rows: &[f32], stride: usize, cols: &[usize], scale: &[f32], labels: StepLabels) -> Self {
        debug_assert_eq!(cols.len(), scale.len());
        let t = rows.len() / stride;
        let mut series = Vec::with_capacity(cols.len() * t);
        for (&c, &s) in cols.iter().zip(scale) {
            series.extend((0..t).map(|i| rows[i * stride + c] * s));
        }
        Recording {
            unit,
            channels: cols.len(),
            series,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.series.len() / self.channels
    }

    /// Block-mean decimation by `factor`; per-step labels take the
    /// block's majority.
    pub fn downsample(&self, factor: usize) -> Recording {
        let t = self.len() / factor;
        let len = self.len();
        let mut series = Vec::with_capacity(self.channels * t);
        for c in 0..self.channels {
            let row = &self.series[c * len..(c + 1) * len];
            series.extend(
                row.chunks_exact(factor)
                    .take(t)
                    .map(|b| b.iter().sum::<f32>() / factor as f32),
            );
        }
        let labels = match &self.labels {
            StepLabels::Constant(l) => StepLabels::Constant(*l),
            StepLabels::PerStep(l) => StepLabels::PerStep(
                l.chunks_exact(factor)
                    .take(t)
                    .map(|b| majority_label(b).expect("non-empty block"))
                    .collect(),
            ),
        };
        Recording {
            unit: self.unit,
            channels: self.channels,
            series,
            labels,
        }
    }

    fn windows(&self, width: usize) -> Result<Windows> {
        match &self.labels {
            StepLabels::Constant(l) => {
                let mut w = sliding_window(&self.series, self.channels, width, OVERLAP, None)?;
                w.labels = vec![*l; w.count];
                Ok(w)
            }
            StepLabels::PerStep(l) => sliding_window(&self.series, self.channels, width, OVERLAP, Some(l)),
        }
    }
}

/// What an import produced, for reporting.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub recordings: usize,
    /// Recordings shorter than one window.
    pub too_short: usize,
    pub windows_per_domain: Vec<usize>,
}

/// Reads `raw_dir` with the preset for `dataset` under `setting`.
pub fn import_dataset(raw_dir: &Path, dataset: DatasetKind, setting: Setting) -> Result<WindowedDataset> {
    import_with_summary(raw_dir, dataset, setting).map(|(ds, _)| ds)
}

pub fn import_with_summary(
    raw_dir: &Path,
    dataset: DatasetKind,
    setting: Setting,
) -> Result<(WindowedDataset, ImportSummary)> {
    let spec = SplitSpec::preset(dataset, setting)?;
    let geometry = window_preset(dataset, setting)?;
    if !raw_dir.is_dir() {
        return Err(Error::Missing(raw_dir.to_path_buf()));
    }
    let (recordings, class_names) = match (dataset, setting) {
        (_, Setting::CrossDataset) => (cross_dataset(raw_dir)?, SHARED_ACTIVITIES.to_vec()),
        (DatasetKind::Dsads, Setting::CrossPosition) => {
            (dsads::by_position(raw_dir)?, dsads::ACTIVITIES.to_vec())
        }
        (DatasetKind::Dsads, _) => (dsads::by_person(raw_dir, &spec.units())?, dsads::ACTIVITIES.to_vec()),
        (DatasetKind::Uschad, _) => (uschad::read(raw_dir, &spec.units())?, uschad::ACTIVITIES.to_vec()),
        (DatasetKind::Pamap2, _) => (pamap2::read(raw_dir, &spec.units())?, pamap2::ACTIVITIES.to_vec()),
        (DatasetKind::Ucihar, _) => unreachable!("rejected by the split preset"),
    };
    let meta = DatasetMeta {
        channels: geometry.channels,
        width: geometry.width,
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
        domain_names: spec.domain_names(),
        source: format!("{dataset} {setting}"),
    };
    assemble(meta, &spec, &recordings)
}

/// Windows every recording and labels it with its unit's domain.
pub(crate) fn assemble(
    meta: DatasetMeta,
    spec: &SplitSpec,
    recordings: &[Recording],
) -> Result<(WindowedDataset, ImportSummary)> {
    let mut summary = ImportSummary {
        recordings: recordings.len(),
        too_short: 0,
        windows_per_domain: vec![0; spec.num_domains()],
    };
    let mut all = Windows::default();
    let mut domains = Vec::new();
    for r in recordings {
        if r.channels != meta.channels {
            return Err(Error::Shape(format!(
                "recording has {} channels, preset expects {}",
                r.channels, meta.channels
            )));
        }
        let Some(d) = spec.domain_of(r.unit) else { continue };
        let w = r.windows(meta.width)?;
        summary.windows_per_domain[d] += w.count;
        domains.extend(std::iter::repeat_n(d as u32, w.count));
        all.append(w);
    }
    summary.too_short = all.too_short;
    let ds = WindowedDataset::new(meta, all.data, all.labels, domains)?;
    Ok((ds, summary))
}

pub const SHARED_ACTIVITIES: [&str; 6] = ["walking", "walking upstairs", "walking downstairs", "sitting", "standing", "lying"];

/// Six shared activities at 25 Hz, accelerometer in m/s² and gyroscope in
/// rad/s, one unit per dataset. `raw_dir` holds `dsads/`, `uschad/`,
/// `pamap2/` and `ucihar/` in their own layouts.
fn cross_dataset(raw_dir: &Path) -> Result<Vec<Recording>> {
    let mut out = dsads::shared(&raw_dir.join("dsads"), 0)?;
    out.extend(uschad::shared(&raw_dir.join("uschad"), 1)?);
    out.extend(pamap2::shared(&raw_dir.join("pamap2"), 2)?);
    out.extend(ucihar::shared(&raw_dir.join("ucihar"), 3)?);
    Ok(out)
}
