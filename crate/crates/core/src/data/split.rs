//! Train / validation / test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::WindowedDataset;
use crate::error::{Error, Result};

/// Window indices of each partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Errors if any window index appears in more than one partition.
    pub fn check_disjoint(&self, n: usize) -> Result<()> {
        let mut owner = vec![0u8; n];
        for (tag, part) in [(1u8, &self.train), (2, &self.val), (3, &self.test)] {
            for &i in part {
                match owner.get_mut(i) {
                    Some(o) if *o == 0 => *o = tag,
                    Some(_) => {
                        return Err(Error::InvalidArgument(format!(
                            "window {i} appears in more than one partition"
                        )))
                    }
                    None => return Err(Error::InvalidArgument(format!("window {i} out of range"))),
                }
            }
        }
        Ok(())
    }
}

/// Test = every window of the target domains; the source windows are split
/// per class into train and validation.
pub fn source_target_partition(
    ds: &WindowedDataset,
    sources: &[usize],
    targets: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must be in [0, 1), got {val_fraction}"
        )));
    }
    for &d in sources.iter().chain(targets) {
        if d >= ds.num_domains() {
            return Err(Error::InvalidArgument(format!(
                "domain {d} not present (dataset has {} domains)",
                ds.num_domains()
            )));
        }
    }
    if let Some(d) = sources.iter().find(|d| targets.contains(d)) {
        return Err(Error::InvalidArgument(format!(
            "domain {d} is both a source and a target"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = Partition::default();
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for i in 0..ds.len() {
        let d = ds.domains[i] as usize;
        if targets.contains(&d) {
            part.test.push(i);
        } else if sources.contains(&d) {
            by_class[ds.labels[i] as usize].push(i);
        }
    }
    for mut pool in by_class {
        pool.shuffle(&mut rng);
        let n_val = (pool.len() as f64 * val_fraction).round() as usize;
        part.val.extend_from_slice(&pool[..n_val]);
        part.train.extend_from_slice(&pool[n_val..]);
    }
    part.train.sort_unstable();
    part.val.sort_unstable();
    Ok(part)
}

/// Leave-one-domain-out split with `target` held out.
pub fn lodo_partition(
    ds: &WindowedDataset,
    target: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if target >= ds.num_domains() {
        return Err(Error::InvalidArgument(format!(
            "target domain {target} not present (dataset has {} domains)",
            ds.num_domains()
        )));
    }
    let sources: Vec<usize> = (0..ds.num_domains()).filter(|&d| d != target).collect();
    source_target_partition(ds, &sources, &[target], val_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::DatasetMeta;

    fn ds() -> WindowedDataset {
        let n = 4 * 3 * 10;
        let labels = (0..n).map(|i| (i % 3) as u32).collect();
        let domains = (0..n).map(|i| (i / 30) as u32).collect();
        WindowedDataset::new(
            DatasetMeta {
                channels: 1,
                width: 1,
                class_names: vec!["a".into(), "b".into(), "c".into()],
                domain_names: (0..4).map(|d| d.to_string()).collect(),
                source: String::new(),
            },
            vec![0.0; n],
            labels,
            domains,
        )
        .unwrap()
    }

    #[test]
    fn target_only_in_test() {
        let d = ds();
        let p = lodo_partition(&d, 0, 0.2, 1).unwrap();
        assert!(p.test.iter().all(|&i| d.domains[i] == 0));
        assert_eq!(p.test.len(), 30);
        assert!(p.train.iter().chain(&p.val).all(|&i| d.domains[i] != 0));
        p.check_disjoint(d.len()).unwrap();
    }

    #[test]
    fn validation_share_is_twenty_percent() {
        let d = ds();
        let p = lodo_partition(&d, 2, 0.2, 7).unwrap();
        assert_eq!(p.val.len(), 18);
        assert_eq!(p.train.len(), 72);
    }

    #[test]
    fn same_seed_same_split() {
        let d = ds();
        assert_eq!(lodo_partition(&d, 1, 0.2, 3).unwrap(), lodo_partition(&d, 1, 0.2, 3).unwrap());
        assert_ne!(lodo_partition(&d, 1, 0.2, 3).unwrap(), lodo_partition(&d, 1, 0.2, 4).unwrap());
    }

    #[test]
    fn absent_target_is_rejected() {
        assert!(lodo_partition(&ds(), 4, 0.2, 0).is_err());
    }

    #[test]
    fn overlap_is_detected() {
        let p = Partition {
            train: vec![0, 1],
            val: vec![1],
            test: vec![],
        };
        assert!(p.check_disjoint(3).is_err());
    }
}
