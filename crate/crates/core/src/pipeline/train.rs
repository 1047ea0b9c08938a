//! Training loop and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use super::metrics::ConfusionMatrix;
use crate::data::{Partition, Standardizer, WindowedDataset};
use crate::error::{Error, Result};
use crate::ids::{IdsAugment, NoAugment, StyleAugment};
use crate::losses::{total_loss, LossBreakdown};
use crate::model::CaudgNet;
use crate::nn::{adam_step, AdamState, Graph};

/// Windows per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;
/// Offset separating the augmentation stream from the batch stream.
const IDS_STREAM: u64 = 0x1D5_5EED;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's iterations.
    pub loss: LossBreakdown,
    pub val_accuracy: f64,
    /// Share of style draws that hit the rejection cap.
    pub ids_fallback_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalResult {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        EvalResult {
            accuracy: confusion.accuracy(),
            macro_f1: confusion.macro_f1(),
            confusion,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub target: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test: EvalResult,
    pub param_count: usize,
    pub inference_param_count: usize,
    pub wall_clock_secs: f64,
}

/// Trained model with the input normalization it expects.
pub struct TrainedModel {
    pub net: CaudgNet,
    pub standardizer: Standardizer,
}

impl TrainedModel {
    pub fn batch(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<crate::Tensor> {
        let mut x = ds.batch(idx);
        self.standardizer.apply(&mut x)?;
        Ok(x)
    }

    pub fn predict(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(EVAL_CHUNK) {
            let logits = self.net.forward_infer(&self.batch(ds, chunk)?)?;
            let k = logits.shape()[1];
            out.extend(logits.data().chunks(k).map(argmax));
        }
        Ok(out)
    }

    pub fn evaluate(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<EvalResult> {
        if ds.meta.channels != self.net.config.in_channels || ds.meta.width != self.net.config.width {
            return Err(Error::Shape(format!(
                "model expects {}x{} windows, dataset has {}x{}",
                self.net.config.in_channels, self.net.config.width, ds.meta.channels, ds.meta.width
            )));
        }
        if ds.num_classes() != self.net.config.num_classes {
            return Err(Error::Shape(format!(
                "model predicts {} classes, dataset has {}",
                self.net.config.num_classes,
                ds.num_classes()
            )));
        }
        let pred = self.predict(ds, idx)?;
        let truth = ds.labels_of(idx);
        Ok(EvalResult::from_confusion(ConfusionMatrix::from_predictions(
            ds.num_classes(),
            &truth,
            &pred,
        )?))
    }

    /// Causal features `[idx.len(), D_feat]`, row-major.
    pub fn embed(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(idx.len() * self.net.feature_dim());
        for chunk in idx.chunks(EVAL_CHUNK) {
            out.extend_from_slice(self.net.embed(&self.batch(ds, chunk)?)?.data());
        }
        Ok(out)
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Source-domain index lists of the training partition.
fn per_domain(ds: &WindowedDataset, train: &[usize]) -> Vec<Vec<usize>> {
    let mut by = vec![Vec::new(); ds.num_domains()];
    for &i in train {
        by[ds.domains[i] as usize].push(i);
    }
    by.into_iter().filter(|v| !v.is_empty()).collect()
}

/// One epoch's batches: a chunk of `batch_size` windows from every source
/// domain per iteration, `ceil(min domain size / batch_size)` iterations.
pub fn epoch_batches(domains: &mut [Vec<usize>], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    for d in domains.iter_mut() {
        d.shuffle(rng);
    }
    let min = domains.iter().map(Vec::len).min().unwrap_or(0);
    let iters = min.div_ceil(batch_size);
    (0..iters)
        .map(|it| {
            let lo = it * batch_size;
            let hi = ((it + 1) * batch_size).min(min);
            domains.iter().flat_map(|d| d[lo..hi].iter().copied()).collect()
        })
        .collect()
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut m = LossBreakdown::default();
    for b in items {
        m.l_cls += b.l_cls / n;
        m.l_ind += b.l_ind / n;
        m.l_con += b.l_con / n;
        m.total += b.total / n;
        m.margin += b.margin / n;
    }
    if let Some(b) = items.first() {
        m.alpha = b.alpha;
        m.beta = b.beta;
    }
    m
}

/// One optimization step on a prepared batch; returns the loss breakdown.
pub fn train_step(
    net: &mut CaudgNet,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    augment: &mut dyn StyleAugment,
    x: &crate::Tensor,
    y: &[usize],
    d: &[usize],
) -> Result<LossBreakdown> {
    net.store.zero_grad();
    let mut g = Graph::new();
    let with_proj = net.options.cdpl;
    let out = net.forward_train(&mut g, x, augment, with_proj)?;
    let obj = total_loss(&mut g, &out, y, d, &cfg.loss)?;
    g.backward(obj.total, &mut net.store)?;
    adam_step(&mut net.store, adam).map_err(|e| match e {
        Error::NonFinite(what) => Error::Divergence(what),
        other => other,
    })?;
    Ok(obj.breakdown)
}

/// Trains on `part.train`, selects the epoch with the best validation
/// accuracy (earliest on ties) and evaluates it on `part.test`.
pub fn train(cfg: &TrainConfig, ds: &WindowedDataset, part: &Partition) -> Result<(RunResult, TrainedModel)> {
    let started = Instant::now();
    cfg.validate()?;
    part.check_disjoint(ds.len())?;
    if part.train.is_empty() {
        return Err(Error::InvalidArgument("training partition is empty".into()));
    }
    let arch = cfg.arch_for(ds.meta.channels, ds.meta.width, ds.num_classes(), ds.num_domains())?;
    let net = CaudgNet::build(arch, cfg.model, cfg.seed)?;
    let standardizer = if cfg.standardize {
        Standardizer::fit(ds, &part.train)
    } else {
        Standardizer::identity(ds.meta.channels)
    };
    let mut model = TrainedModel { net, standardizer };
    let mut adam = AdamState::new(cfg.adam(), &model.net.store);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = IdsAugment::new(cfg.ids, ChaCha8Rng::seed_from_u64(cfg.seed ^ IDS_STREAM));
    let mut none = NoAugment;
    let mut domains = per_domain(ds, &part.train);
    let val = if part.val.is_empty() { &part.train } else { &part.val };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 1..=cfg.epochs {
        let (samples_before, fallbacks_before) = (ids.samples, ids.fallbacks);
        let mut losses = Vec::new();
        for idx in epoch_batches(&mut domains, cfg.batch_size, &mut rng) {
            if idx.len() < 2 {
                continue;
            }
            let x = model.batch(ds, &idx)?;
            let augment: &mut dyn StyleAugment = if cfg.use_ids { &mut ids } else { &mut none };
            let b = train_step(
                &mut model.net,
                &mut adam,
                cfg,
                augment,
                &x,
                &ds.labels_of(&idx),
                &ds.domains_of(&idx),
            )?;
            losses.push(b);
        }
        let val_accuracy = model.evaluate(ds, val)?.accuracy;
        let drawn = ids.samples - samples_before;
        history.push(EpochRecord {
            epoch,
            loss: mean_breakdown(&losses),
            val_accuracy,
            ids_fallback_rate: if drawn == 0 {
                0.0
            } else {
                (ids.fallbacks - fallbacks_before) as f64 / drawn as f64
            },
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.net.store.flat_values()));
        }
    }
    let (best_epoch, best_val_accuracy, params) = best.expect("at least one epoch");
    model.net.store.set_flat_values(&params)?;
    let test = if part.test.is_empty() {
        EvalResult::from_confusion(ConfusionMatrix::new(ds.num_classes()))
    } else {
        model.evaluate(ds, &part.test)?
    };
    let result = RunResult {
        variant: cfg.variant,
        target: cfg.target,
        seed: cfg.seed,
        history,
        best_epoch,
        best_val_accuracy,
        test,
        param_count: model.net.param_count(),
        inference_param_count: model.net.inference_param_count(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((result, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_take_equal_chunks_per_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = vec![(0..10).collect::<Vec<_>>(), (10..17).collect()];
        let batches = epoch_batches(&mut d, 3, &mut rng);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![6, 6, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 14);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
