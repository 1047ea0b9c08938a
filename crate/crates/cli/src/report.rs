//! Seed aggregation over stored runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use caudg_core::pipeline::outputs::{config_hash, StoredRun};
use caudg_core::pipeline::{aggregate_seeds, Variant};
use caudg_core::Result;

/// Mean over seeds with a 95% interval when there are at least two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub ci95: Option<f64>,
}

impl Stat {
    fn of(values: &[f64]) -> Result<Self> {
        if values.len() >= 2 {
            let a = aggregate_seeds(values)?;
            Ok(Stat {
                mean: a.mean,
                ci95: Some(a.half_width),
            })
        } else {
            Ok(Stat {
                mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
                ci95: None,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    /// `None` for the average over targets.
    pub target: Option<usize>,
    pub domain: String,
    pub seeds: usize,
    pub accuracy: Stat,
    pub macro_f1: Stat,
}

/// Runs sharing everything except target and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub variant: Variant,
    pub config: String,
    pub rows: Vec<Row>,
}

fn experiment_key(run: &StoredRun) -> String {
    let mut c = run.config.clone();
    c.target = 0;
    config_hash(&c)
}

pub fn build(runs: &[(PathBuf, StoredRun)]) -> Result<Vec<Group>> {
    // (variant, config) -> target -> seed -> (acc, f1)
    type Cells = BTreeMap<usize, BTreeMap<u64, (f64, f64)>>;
    let mut groups: BTreeMap<(Variant, String), (Vec<String>, Cells)> = BTreeMap::new();
    for (_, run) in runs {
        let key = (run.result.variant, experiment_key(run));
        let entry = groups.entry(key).or_insert_with(|| (run.domain_names.clone(), Cells::new()));
        entry
            .1
            .entry(run.result.target)
            .or_default()
            .insert(run.result.seed, (run.result.test.accuracy, run.result.test.macro_f1));
    }
    let mut out = Vec::new();
    for ((variant, config), (names, cells)) in groups {
        let mut rows = Vec::new();
        for (&t, by_seed) in &cells {
            let acc: Vec<f64> = by_seed.values().map(|v| v.0).collect();
            let f1: Vec<f64> = by_seed.values().map(|v| v.1).collect();
            rows.push(Row {
                target: Some(t),
                domain: names.get(t).cloned().unwrap_or_else(|| t.to_string()),
                seeds: acc.len(),
                accuracy: Stat::of(&acc)?,
                macro_f1: Stat::of(&f1)?,
            });
        }
        // seeds that cover every target of the group
        let complete: Vec<u64> = cells
            .values()
            .next()
            .map(|m| m.keys().copied().collect::<Vec<_>>())
            .unwrap_or_default()
            .into_iter()
            .filter(|s| cells.values().all(|m| m.contains_key(s)))
            .collect();
        if cells.len() > 1 && !complete.is_empty() {
            let n = cells.len() as f64;
            let mean_over_targets =
                |pick: fn(&(f64, f64)) -> f64, s: u64| cells.values().map(|m| pick(&m[&s])).sum::<f64>() / n;
            let acc: Vec<f64> = complete.iter().map(|&s| mean_over_targets(|v| v.0, s)).collect();
            let f1: Vec<f64> = complete.iter().map(|&s| mean_over_targets(|v| v.1, s)).collect();
            rows.push(Row {
                target: None,
                domain: "AVG".into(),
                seeds: complete.len(),
                accuracy: Stat::of(&acc)?,
                macro_f1: Stat::of(&f1)?,
            });
        }
        out.push(Group { variant, config, rows });
    }
    Ok(out)
}

fn pct(s: Stat) -> (String, String) {
    (
        format!("{:.2}", 100.0 * s.mean),
        s.ci95.map(|c| format!("{:.2}", 100.0 * c)).unwrap_or_else(|| "-".into()),
    )
}

pub fn render_text(groups: &[Group]) -> String {
    let mut s = String::new();
    for g in groups {
        s.push_str(&format!("{} [{} {}]\n", g.variant.label(), g.variant, g.config));
        s.push_str(&format!(
            "  {:<16} {:>5} {:>8} {:>7} {:>8} {:>7}\n",
            "target", "seeds", "acc", "±95%", "macro-F1", "±95%"
        ));
        for r in &g.rows {
            let (a, ac) = pct(r.accuracy);
            let (f, fc) = pct(r.macro_f1);
            s.push_str(&format!(
                "  {:<16} {:>5} {:>8} {:>7} {:>8} {:>7}\n",
                r.domain, r.seeds, a, ac, f, fc
            ));
        }
        s.push('\n');
    }
    s
}

fn quote(field: &str) -> String {
    format!("\"{}\"", field.replace('"', "\"\""))
}

/// Fractions at full precision; empty interval cells below two seeds.
pub fn render_csv(groups: &[Group]) -> String {
    let mut s = String::from("variant,config,target,domain,seeds,acc_mean,acc_ci95,macro_f1_mean,macro_f1_ci95\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for g in groups {
        for r in &g.rows {
            let target = r.target.map(|t| t.to_string()).unwrap_or_else(|| "avg".into());
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                g.variant,
                g.config,
                target,
                quote(&r.domain),
                r.seeds,
                r.accuracy.mean,
                opt(r.accuracy.ci95),
                r.macro_f1.mean,
                opt(r.macro_f1.ci95)
            ));
        }
    }
    s
}
