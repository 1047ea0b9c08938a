//! Classification metrics and seed aggregation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// `counts[true][pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { classes: k, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= classes || p >= classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    classes,
                });
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.counts[k][k]).sum()
    }

    /// Per-class support (row sums).
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// `2PR / (P + R)` per class; zero when undefined.
    pub fn f1_per_class(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let actual: u64 = self.counts[k].iter().sum();
                let predicted: u64 = self.counts.iter().map(|r| r[k]).sum();
                if tp == 0.0 {
                    return 0.0;
                }
                let p = tp / predicted as f64;
                let r = tp / actual as f64;
                2.0 * p * r / (p + r)
            })
            .collect()
    }

    pub fn macro_f1(&self) -> f64 {
        if self.classes == 0 {
            return 0.0;
        }
        self.f1_per_class().iter().sum::<f64>() / self.classes as f64
    }

    /// Header row of predicted classes, then one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let mut s = String::from("true\\pred");
        for k in 0..self.classes {
            s.push(',');
            s.push_str(&name(k));
        }
        s.push('\n');
        for (k, row) in self.counts.iter().enumerate() {
            s.push_str(&name(k));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Mean and two-sided 95% Student-t interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator).
    pub std: f64,
    pub half_width: f64,
}

pub fn aggregate_seeds(values: &[f64]) -> Result<MeanCi> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "confidence intervals need at least 2 values, got {n}"
        )));
    }
    // Shifting by the first value keeps identical inputs at exactly zero spread.
    let pivot = values[0];
    let shift = values.iter().map(|v| v - pivot).sum::<f64>() / n as f64;
    let mean = pivot + shift;
    let var = values.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(MeanCi {
        n,
        mean,
        std,
        half_width: t * std / (n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix::from_rows(vec![vec![2, 0], vec![0, 2]]).unwrap();
        assert_eq!(m.accuracy(), 1.0);
        assert_eq!(m.macro_f1(), 1.0);
    }

    #[test]
    fn hand_computed_macro_f1() {
        let m = ConfusionMatrix::from_rows(vec![vec![1, 1], vec![0, 2]]).unwrap();
        assert_eq!(m.accuracy(), 0.75);
        let f1 = m.f1_per_class();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1[1] - 0.8).abs() < 1e-15);
        assert!((m.macro_f1() - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn all_wrong() {
        let m = ConfusionMatrix::from_predictions(2, &[0, 0, 1], &[1, 1, 0]).unwrap();
        assert_eq!((m.accuracy(), m.macro_f1()), (0.0, 0.0));
    }

    #[test]
    fn unsupported_class_counts_as_zero() {
        let m = ConfusionMatrix::from_predictions(3, &[0, 1], &[0, 1]).unwrap();
        assert!((m.macro_f1() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn t_intervals() {
        let a = aggregate_seeds(&[90.0, 94.0]).unwrap();
        assert_eq!(a.mean, 92.0);
        assert!((a.std - 8f64.sqrt()).abs() < 1e-12);
        assert!((a.half_width - 25.412).abs() < 1e-2, "{}", a.half_width);
        let b = aggregate_seeds(&[80.0, 85.0, 90.0]).unwrap();
        assert!((b.half_width - 12.42).abs() < 1e-2, "{}", b.half_width);
        assert_eq!(aggregate_seeds(&[1.0, 1.0, 1.0]).unwrap().half_width, 0.0);
        assert!(aggregate_seeds(&[1.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = ConfusionMatrix::from_rows(vec![vec![1, 1], vec![0, 2]]).unwrap();
        let names = vec!["sit".to_string(), "walk".to_string()];
        assert_eq!(m.to_csv(&names), "true\\pred,sit,walk\nsit,1,1\nwalk,0,2\n");
    }
}
