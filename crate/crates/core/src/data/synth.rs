//! Synthetic multi-domain sensor data.
//!
//! Every window is a class waveform (shape carries the label) passed through
//! a domain style: a rotation mixing channels 0 and 1, a per-channel gain and
//! offset, and white noise. Styles change feature statistics but not shape.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetMeta, WindowedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWave {
    /// Cycles per window of the fundamental.
    pub freq: f64,
    /// Multiple of the fundamental used for the second component.
    pub harmonic: f64,
    /// Amplitude of the second component.
    pub harmonic_mix: f64,
    /// 0 gives a flat envelope, 1 a full Hann window.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    /// Rotation angle (radians) mixing channels 0 and 1.
    pub angle: f64,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub channels: usize,
    pub width: usize,
    pub classes: Vec<ClassWave>,
    pub domains: Vec<DomainStyle>,
    pub per_class_per_domain: usize,
    /// Relative jitter of the fundamental frequency per window.
    pub freq_jitter: f64,
    /// Per-window multiplicative jitter of the domain gain.
    pub gain_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let wave = |freq, harmonic, harmonic_mix, envelope| ClassWave {
            freq,
            harmonic,
            harmonic_mix,
            envelope,
        };
        let style = |gain: [f64; 3], offset: [f64; 3], angle, noise| DomainStyle {
            gain: gain.to_vec(),
            offset: offset.to_vec(),
            angle,
            noise,
        };
        SynthConfig {
            channels: 3,
            width: 32,
            classes: vec![
                wave(1.0, 3.0, 0.5, 0.0),
                wave(2.0, 2.0, 0.3, 0.5),
                wave(3.0, 2.0, 0.6, 0.0),
                wave(5.0, 0.5, 0.8, 0.8),
            ],
            domains: vec![
                style([0.3, 0.4, 0.3], [0.0, 0.0, 0.0], 0.0, 0.15),
                style([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 0.5, 0.15),
                style([1.8, 1.4, 2.2], [1.5, -1.0, -0.5], -0.5, 0.15),
                style([3.0, 2.5, 1.2], [0.5, 0.3, 0.3], 0.8, 0.15),
            ],
            per_class_per_domain: 60,
            freq_jitter: 0.05,
            gain_jitter: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 || self.width < 2 {
            return Err(Error::InvalidArgument(
                "synthetic data needs at least 2 channels and width 2".into(),
            ));
        }
        if self.classes.is_empty() || self.domains.is_empty() || self.per_class_per_domain == 0 {
            return Err(Error::InvalidArgument(
                "synthetic data needs classes, domains and samples".into(),
            ));
        }
        for (s, d) in self.domains.iter().enumerate() {
            if d.gain.len() != self.channels || d.offset.len() != self.channels {
                return Err(Error::InvalidArgument(format!(
                    "domain {s}: gain and offset need {} entries",
                    self.channels
                )));
            }
            if !(d.noise >= 0.0) {
                return Err(Error::InvalidArgument(format!("domain {s}: negative noise")));
            }
            if let Some(t) = self.domains[..s].iter().position(|o| o == d) {
                return Err(Error::InvalidArgument(format!("domains {t} and {s} share a style")));
            }
        }
        for (k, w) in self.classes.iter().enumerate() {
            if let Some(j) = self.classes[..k].iter().position(|o| o == w) {
                return Err(Error::InvalidArgument(format!("classes {j} and {k} share a waveform")));
            }
        }
        Ok(())
    }
}

/// Style-free waveform of class `wave` for every channel, `[C, W]`.
pub fn class_waveform(wave: &ClassWave, channels: usize, width: usize, phase: f64, freq: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(channels * width);
    for c in 0..channels {
        let ch_phase = phase + c as f64 * PI / 3.0;
        for t in 0..width {
            let u = t as f64 / width as f64;
            let env = 1.0 - wave.envelope * 0.5 * (1.0 - (2.0 * PI * u).cos());
            let v = (2.0 * PI * freq * u + ch_phase).sin()
                + wave.harmonic_mix * (2.0 * PI * freq * wave.harmonic * u + 2.0 * ch_phase).sin();
            out.push(env * v);
        }
    }
    out
}

/// Applies rotation, gain, offset and noise in place on a `[C, W]` window.
pub fn apply_style<R: Rng + ?Sized>(x: &mut [f64], width: usize, style: &DomainStyle, gain_scale: f64, rng: &mut R) {
    let (s, c) = style.angle.sin_cos();
    for t in 0..width {
        let (a, b) = (x[t], x[width + t]);
        x[t] = c * a - s * b;
        x[width + t] = s * a + c * b;
    }
    let noise = Normal::new(0.0, style.noise.max(0.0)).expect("finite noise");
    for (ch, row) in x.chunks_mut(width).enumerate() {
        let g = style.gain[ch] * gain_scale;
        for v in row.iter_mut() {
            *v = g * *v + style.offset[ch] + noise.sample(rng);
        }
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<WindowedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (c, w) = (cfg.channels, cfg.width);
    let n = cfg.classes.len() * cfg.domains.len() * cfg.per_class_per_domain;
    let mut windows = Vec::with_capacity(n * c * w);
    let mut labels = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    for (s, style) in cfg.domains.iter().enumerate() {
        for (k, wave) in cfg.classes.iter().enumerate() {
            for _ in 0..cfg.per_class_per_domain {
                let phase = rng.random_range(0.0..2.0 * PI);
                let freq = wave.freq * (1.0 + cfg.freq_jitter * rng.random_range(-1.0..1.0));
                let gain_scale = 1.0 + cfg.gain_jitter * rng.random_range(-1.0..1.0);
                let mut x = class_waveform(wave, c, w, phase, freq);
                apply_style(&mut x, w, style, gain_scale, &mut rng);
                windows.extend(x.iter().map(|&v| v as f32));
                labels.push(k as u32);
                domains.push(s as u32);
            }
        }
    }
    WindowedDataset::new(
        DatasetMeta {
            channels: c,
            width: w,
            class_names: (0..cfg.classes.len()).map(|k| format!("class{k}")).collect(),
            domain_names: (0..cfg.domains.len()).map(|s| format!("domain{s}")).collect(),
            source: format!("synthetic seed {}", cfg.seed),
        },
        windows,
        labels,
        domains,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
    }

    #[test]
    fn counts_and_domains() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.num_domains(), 4);
        assert_eq!(ds.len(), 4 * 4 * 60);
        assert!(ds.class_counts().iter().all(|&n| n == 240));
    }

    #[test]
    fn repeated_style_or_wave_is_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.domains[3] = cfg.domains[1].clone();
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.classes[0] = cfg.classes[2].clone();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bad_style_length_is_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.domains[0].gain.pop();
        assert!(synth_generate(&cfg).is_err());
    }
}
