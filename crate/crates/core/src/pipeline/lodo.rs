//! Leave-one-domain-out runs, ablations and seed aggregation.

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::metrics::{aggregate_seeds, MeanCi};
use super::train::{train, RunResult};
use crate::data::{lodo_partition, WindowedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LodoTable {
    pub variant: Variant,
    pub seed: u64,
    pub rows: Vec<RunResult>,
    pub avg_accuracy: f64,
    pub avg_macro_f1: f64,
}

impl LodoTable {
    pub fn from_rows(variant: Variant, seed: u64, rows: Vec<RunResult>) -> Self {
        let n = rows.len().max(1) as f64;
        let avg_accuracy = rows.iter().map(|r| r.test.accuracy).sum::<f64>() / n;
        let avg_macro_f1 = rows.iter().map(|r| r.test.macro_f1).sum::<f64>() / n;
        LodoTable {
            variant,
            seed,
            rows,
            avg_accuracy,
            avg_macro_f1,
        }
    }

    /// Per-target accuracy and macro-F1 (in percent) plus the average row.
    pub fn render(&self, domain_names: &[String]) -> String {
        let mut s = format!("{:<12} {:>9} {:>9}\n", "target", "acc", "macro-F1");
        for r in &self.rows {
            let name = domain_names
                .get(r.target)
                .cloned()
                .unwrap_or_else(|| r.target.to_string());
            s.push_str(&format!(
                "{:<12} {:>9.2} {:>9.2}\n",
                name,
                100.0 * r.test.accuracy,
                100.0 * r.test.macro_f1
            ));
        }
        s.push_str(&format!(
            "{:<12} {:>9.2} {:>9.2}\n",
            "AVG",
            100.0 * self.avg_accuracy,
            100.0 * self.avg_macro_f1
        ));
        s
    }
}

/// Called after every finished run, e.g. to persist it.
pub type RunHook<'a> = dyn FnMut(&TrainConfig, &RunResult, &crate::pipeline::train::TrainedModel) -> Result<()> + 'a;

/// Trains one model per held-out domain (all domains, or `targets`).
pub fn lodo_run(
    cfg: &TrainConfig,
    ds: &WindowedDataset,
    targets: Option<&[usize]>,
    hook: &mut RunHook,
) -> Result<LodoTable> {
    if ds.num_domains() < 2 {
        return Err(Error::InvalidArgument(
            "leave-one-domain-out needs at least 2 domains".into(),
        ));
    }
    let all: Vec<usize> = (0..ds.num_domains()).collect();
    let mut rows = Vec::new();
    for &t in targets.unwrap_or(&all) {
        let mut c = cfg.clone();
        c.target = t;
        let part = lodo_partition(ds, t, c.val_fraction, c.seed)?;
        let (res, model) = train(&c, ds, &part)?;
        hook(&c, &res, &model)?;
        rows.push(res);
    }
    Ok(LodoTable::from_rows(cfg.variant, cfg.seed, rows))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub label: String,
    pub tables: Vec<LodoTable>,
    /// AVG accuracy per seed.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// Present with two or more seeds.
    pub accuracy_ci: Option<MeanCi>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<28} {:>9} {:>9} {:>9}\n", "variant", "acc", "±95%", "macro-F1");
        for v in &self.variants {
            let ci = v
                .accuracy_ci
                .map(|c| format!("{:.2}", 100.0 * c.half_width))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!(
                "{:<28} {:>9.2} {:>9} {:>9.2}\n",
                v.label,
                100.0 * v.mean_accuracy,
                ci,
                100.0 * v.mean_macro_f1
            ));
        }
        s
    }
}

pub fn summarize(variant: Variant, tables: Vec<LodoTable>) -> Result<VariantSummary> {
    let accuracies: Vec<f64> = tables.iter().map(|t| t.avg_accuracy).collect();
    let n = tables.len().max(1) as f64;
    let mean_accuracy = accuracies.iter().sum::<f64>() / n;
    let mean_macro_f1 = tables.iter().map(|t| t.avg_macro_f1).sum::<f64>() / n;
    let accuracy_ci = if accuracies.len() >= 2 {
        Some(aggregate_seeds(&accuracies)?)
    } else {
        None
    };
    Ok(VariantSummary {
        variant,
        label: variant.label().to_string(),
        tables,
        accuracies,
        mean_accuracy,
        mean_macro_f1,
        accuracy_ci,
    })
}

/// One LODO sweep per (variant, seed) on top of `base`.
pub fn ablate(
    base: &TrainConfig,
    ds: &WindowedDataset,
    variants: &[Variant],
    seeds: &[u64],
    targets: Option<&[usize]>,
    hook: &mut RunHook,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
    }
    let mut out = Vec::new();
    for &v in variants {
        let mut tables = Vec::new();
        for &seed in seeds {
            let mut c = v.apply(base);
            c.seed = seed;
            tables.push(lodo_run(&c, ds, targets, hook)?);
        }
        out.push(summarize(v, tables)?);
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        variants: out,
    })
}
