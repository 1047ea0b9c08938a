//! Separability oracles for the synthetic generator: class from shape alone,
//! domain from style statistics alone.

use caudg_core::data::synth::{class_waveform, DomainStyle};
use caudg_core::data::{synth_generate, SynthConfig, WindowedDataset};

const PHASES: usize = 72;

fn identity_style(channels: usize, noise: f64) -> DomainStyle {
    DomainStyle {
        gain: vec![1.0; channels],
        offset: vec![0.0; channels],
        angle: 0.0,
        noise,
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Accuracy of labelling each window with the class of its most similar
/// noiseless template over a grid of phases.
fn nearest_template_accuracy(cfg: &SynthConfig, ds: &WindowedDataset) -> f64 {
    let templates: Vec<(usize, Vec<f64>)> = cfg
        .classes
        .iter()
        .enumerate()
        .flat_map(|(k, wave)| {
            (0..PHASES).map(move |j| {
                let phase = j as f64 * std::f64::consts::TAU / PHASES as f64;
                (k, class_waveform(wave, cfg.channels, cfg.width, phase, wave.freq))
            })
        })
        .collect();
    let correct = (0..ds.len())
        .filter(|&i| {
            let x: Vec<f64> = ds.window(i).iter().map(|&v| v as f64).collect();
            let best = templates
                .iter()
                .max_by(|a, b| cosine(&x, &a.1).total_cmp(&cosine(&x, &b.1)))
                .unwrap();
            best.0 == ds.labels[i] as usize
        })
        .count();
    correct as f64 / ds.len() as f64
}

#[test]
fn noiseless_single_domain_is_perfectly_separable() {
    let mut cfg = SynthConfig::default();
    cfg.domains = vec![identity_style(cfg.channels, 0.0)];
    cfg.freq_jitter = 0.0;
    cfg.gain_jitter = 0.0;
    let ds = synth_generate(&cfg).unwrap();
    assert_eq!(nearest_template_accuracy(&cfg, &ds), 1.0);
}

#[test]
fn style_free_classes_are_recoverable_from_shape() {
    for seed in 0..5 {
        let mut cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let noise = cfg.domains[0].noise;
        cfg.domains = vec![identity_style(cfg.channels, noise)];
        let ds = synth_generate(&cfg).unwrap();
        let acc = nearest_template_accuracy(&cfg, &ds);
        assert!(acc > 0.95, "seed {seed}: {acc}");
    }
}

/// Per-channel mean and standard deviation of every window.
fn style_features(ds: &WindowedDataset) -> Vec<Vec<f64>> {
    (0..ds.len())
        .map(|i| {
            ds.window(i)
                .chunks(ds.meta.width)
                .flat_map(|row| {
                    let n = row.len() as f64;
                    let m = row.iter().map(|&v| v as f64).sum::<f64>() / n;
                    let v = row.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
                    [m, v.sqrt()]
                })
                .collect()
        })
        .collect()
}

/// Multinomial logistic regression by full-batch gradient descent on
/// standardized features; returns held-out accuracy.
fn linear_probe(x: &[Vec<f64>], y: &[usize], classes: usize, train: &[usize], test: &[usize]) -> f64 {
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| train.iter().map(|&i| x[i][j]).sum::<f64>() / train.len() as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = train.iter().map(|&i| (x[i][j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
            v.sqrt().max(1e-9)
        })
        .collect();
    let z = |i: usize| -> Vec<f64> { (0..d).map(|j| (x[i][j] - mean[j]) / sd[j]).chain([1.0]).collect() };
    let mut w = vec![vec![0.0; d + 1]; classes];
    let logits = |w: &[Vec<f64>], zi: &[f64]| -> Vec<f64> {
        w.iter().map(|wk| wk.iter().zip(zi).map(|(a, b)| a * b).sum()).collect()
    };
    for _ in 0..400 {
        let mut grad = vec![vec![0.0; d + 1]; classes];
        for &i in train {
            let zi = z(i);
            let l = logits(&w, &zi);
            let max = l.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..classes {
                let p = e[k] / s - f64::from(u8::from(k == y[i]));
                for j in 0..=d {
                    grad[k][j] += p * zi[j] / train.len() as f64;
                }
            }
        }
        for k in 0..classes {
            for j in 0..=d {
                w[k][j] -= 1.0 * grad[k][j];
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let l = logits(&w, &z(i));
            let pred = (0..classes).max_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
            pred == y[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn domains_are_recoverable_from_style_statistics() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let x = style_features(&ds);
        let y: Vec<usize> = ds.domains.iter().map(|&d| d as usize).collect();
        let train: Vec<usize> = (0..ds.len()).step_by(2).collect();
        let test: Vec<usize> = (1..ds.len()).step_by(2).collect();
        let acc = linear_probe(&x, &y, ds.num_domains(), &train, &test);
        assert!(acc > 0.90, "seed {seed}: {acc}");
    }
}

#[test]
fn every_domain_style_is_distinct() {
    let cfg = SynthConfig::default();
    for (i, a) in cfg.domains.iter().enumerate() {
        for b in &cfg.domains[i + 1..] {
            assert_ne!(a, b);
        }
    }
}
