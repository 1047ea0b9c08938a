//! Inhomogeneous domain sampling: re-style feature maps with low-density
//! samples of their own channel statistics.
//!
//! Per sample and channel, the spatial mean `μ` and standard deviation `σ` of a
//! `[B, C, 1, W]` map describe its "style". A Gaussian is fitted over the
//! batch's `μ` vectors (and separately over the `σ` vectors); every sample then
//! draws a new `μ̄`, `σ̄` from the tail of that Gaussian, i.e. a draw whose
//! density is below `ε`, and the map is renormalized:
//!
//! ```text
//! IDS(z) = σ̄ · (z − μ) / sqrt(σ² + 1e-6) + μ̄
//! ```
//!
//! Style statistics are constants for differentiation; gradients reach `z`
//! only through the per-channel scale.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Added to `σ²` in the normalization denominator.
pub const VARIANCE_RIDGE: f64 = 1e-6;
/// Lower clamp for sampled `σ̄`.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdsConfig {
    /// Density threshold a sampled style must fall below.
    pub eps: f64,
    /// Rejection-sampling budget per style vector.
    pub max_draws: usize,
}

impl Default for IdsConfig {
    fn default() -> Self {
        IdsConfig {
            eps: 1e-4,
            max_draws: 100,
        }
    }
}

/// Per-sample, per-channel spatial mean and (biased) variance, `[B, C, 1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleStats {
    pub batch: usize,
    pub channels: usize,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl StyleStats {
    pub fn shape(&self) -> [usize; 4] {
        [self.batch, self.channels, 1, 1]
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.sigma2.iter().map(|v| v.sqrt()).collect()
    }
}

pub fn spatial_stats(z: &Tensor) -> Result<StyleStats> {
    let (b, c, w) = z.dims4()?;
    let mut mu = Vec::with_capacity(b * c);
    let mut sigma2 = Vec::with_capacity(b * c);
    for row in z.data().chunks(w) {
        let m = row.iter().sum::<f64>() / w as f64;
        let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / w as f64;
        mu.push(m);
        sigma2.push(v);
    }
    Ok(StyleStats {
        batch: b,
        channels: c,
        mu,
        sigma2,
    })
}

/// Batch-level Gaussian over `C`-dimensional style vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleGaussian {
    pub mean: Vec<f64>,
    /// Row-major `C × C` covariance including the ridge.
    pub covariance: Vec<f64>,
    pub ridge: f64,
    /// Lower Cholesky factor of `covariance`.
    pub cholesky: Vec<f64>,
    /// Set when the full covariance could not be factorized and the diagonal
    /// was used instead.
    pub diagonal_fallback: bool,
    log_norm: f64,
}

impl StyleGaussian {
    /// Fits mean and `1/B` covariance over the rows of a `[B, C]` buffer and
    /// adds `max(1e-6, 1e-6·trace/C)` to the diagonal.
    pub fn fit(rows: &[f64], batch: usize, dim: usize) -> Result<Self> {
        if batch < 2 {
            return Err(Error::InvalidArgument(
                "fitting a style Gaussian needs at least 2 samples".into(),
            ));
        }
        if rows.len() != batch * dim || dim == 0 {
            return Err(Error::Shape(format!(
                "{} style values for {batch} samples of dimension {dim}",
                rows.len()
            )));
        }
        let bf = batch as f64;
        let mut mean = vec![0.0; dim];
        for r in rows.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bf);
        let mut cov = vec![0.0; dim * dim];
        for r in rows.chunks(dim) {
            for i in 0..dim {
                let di = r[i] - mean[i];
                for j in 0..dim {
                    cov[i * dim + j] += di * (r[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|v| *v /= bf);
        let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
        let ridge = (1e-6 * trace / dim as f64).max(1e-6);
        for i in 0..dim {
            cov[i * dim + i] += ridge;
        }
        Self::from_parts(mean, cov, ridge)
    }

    fn from_parts(mean: Vec<f64>, mut covariance: Vec<f64>, ridge: f64) -> Result<Self> {
        let dim = mean.len();
        let mut diagonal_fallback = false;
        let cholesky = match cholesky(&covariance, dim) {
            Some(l) => l,
            None => {
                diagonal_fallback = true;
                for i in 0..dim {
                    for j in 0..dim {
                        if i != j {
                            covariance[i * dim + j] = 0.0;
                        }
                    }
                }
                cholesky(&covariance, dim).ok_or_else(|| {
                    Error::NonFinite("style covariance diagonal".into())
                })?
            }
        };
        let log_det: f64 = (0..dim).map(|i| 2.0 * cholesky[i * dim + i].ln()).sum();
        let log_norm = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(StyleGaussian {
            mean,
            covariance,
            ridge,
            cholesky,
            diagonal_fallback,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.covariance).all(|v| v.is_finite()) && self.log_norm.is_finite()
    }

    /// Log of the `C`-dimensional Gaussian density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let dim = self.dim();
        // solve L y = x - mean
        let mut y = vec![0.0; dim];
        for i in 0..dim {
            let mut s = x[i] - self.mean[i];
            for k in 0..i {
                s -= self.cholesky[i * dim + k] * y[k];
            }
            y[i] = s / self.cholesky[i * dim + i];
        }
        self.log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&z)
    }

    /// `mean + L z`; the log-density of the result is `log_norm - |z|²/2`.
    fn transform(&self, z: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        (0..dim)
            .map(|i| {
                self.mean[i]
                    + (0..=i)
                        .map(|k| self.cholesky[i * dim + k] * z[k])
                        .sum::<f64>()
            })
            .collect()
    }
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// One accepted (or fallback) tail sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TailDraw {
    pub value: Vec<f64>,
    pub log_density: f64,
    pub draws_used: usize,
    /// True when no draw fell below the threshold and the lowest-density draw
    /// was returned instead.
    pub fallback: bool,
}

/// Rejection-samples `model` until a draw has density below `eps`.
pub fn sample_tail<R: Rng + ?Sized>(
    model: &StyleGaussian,
    eps: f64,
    rng: &mut R,
    max_draws: usize,
) -> Result<TailDraw> {
    if !model.is_finite() {
        return Err(Error::NonFinite("style Gaussian".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("density threshold must be > 0, got {eps}")));
    }
    let threshold = eps.ln();
    // Densities are ranked in the whitened space so only the kept draw is
    // mapped back through the Cholesky factor.
    let mut z = vec![0.0; model.dim()];
    let mut best: Option<(Vec<f64>, f64)> = None;
    for n in 1..=max_draws.max(1) {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let ld = model.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        if ld < threshold {
            return Ok(TailDraw {
                value: model.transform(&z),
                log_density: ld,
                draws_used: n,
                fallback: false,
            });
        }
        if best.as_ref().is_none_or(|(_, b)| ld < *b) {
            best = Some((z.clone(), ld));
        }
    }
    let (zb, log_density) = best.expect("at least one draw");
    Ok(TailDraw {
        value: model.transform(&zb),
        log_density,
        draws_used: max_draws.max(1),
        fallback: true,
    })
}

/// Sampled target styles, `[B, C, 1, 1]` each, plus rejection diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledStyle {
    pub batch: usize,
    pub channels: usize,
    pub mu_bar: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    pub mu_draws: Vec<TailDraw>,
    pub sigma_draws: Vec<TailDraw>,
}

impl SampledStyle {
    pub fn fallback_count(&self) -> usize {
        self.mu_draws
            .iter()
            .chain(&self.sigma_draws)
            .filter(|d| d.fallback)
            .count()
    }

    /// Style whose restyling map is the identity: `σ̄ = sqrt(σ² + ridge)`
    /// cancels the ridge in the denominator.
    pub fn identity(stats: &StyleStats) -> Self {
        SampledStyle {
            batch: stats.batch,
            channels: stats.channels,
            mu_bar: stats.mu.clone(),
            sigma_bar: stats.sigma2.iter().map(|s2| (s2 + VARIANCE_RIDGE).sqrt()).collect(),
            mu_draws: Vec::new(),
            sigma_draws: Vec::new(),
        }
    }
}

/// Fits the `μ` and `σ` Gaussians of a batch and draws one tail style per sample.
pub fn sample_styles<R: Rng + ?Sized>(
    stats: &StyleStats,
    config: &IdsConfig,
    rng: &mut R,
) -> Result<(SampledStyle, StyleGaussian, StyleGaussian)> {
    let (b, c) = (stats.batch, stats.channels);
    let mu_model = StyleGaussian::fit(&stats.mu, b, c)?;
    let sigma_model = StyleGaussian::fit(&stats.sigma(), b, c)?;
    let mut mu_bar = Vec::with_capacity(b * c);
    let mut sigma_bar = Vec::with_capacity(b * c);
    let mut mu_draws = Vec::with_capacity(b);
    let mut sigma_draws = Vec::with_capacity(b);
    for _ in 0..b {
        let d = sample_tail(&mu_model, config.eps, rng, config.max_draws)?;
        mu_bar.extend_from_slice(&d.value);
        mu_draws.push(d);
        let d = sample_tail(&sigma_model, config.eps, rng, config.max_draws)?;
        sigma_bar.extend(d.value.iter().map(|s| s.max(SIGMA_FLOOR)));
        sigma_draws.push(d);
    }
    Ok((
        SampledStyle {
            batch: b,
            channels: c,
            mu_bar,
            sigma_bar,
            mu_draws,
            sigma_draws,
        },
        mu_model,
        sigma_model,
    ))
}

/// Per-(sample, channel) coefficients of the restyling map `scale·z + shift`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ChannelAffine {
    pub fn restyle(stats: &StyleStats, sampled: &SampledStyle) -> Result<Self> {
        if stats.shape() != [sampled.batch, sampled.channels, 1, 1] {
            return Err(Error::Shape(format!(
                "style stats {:?} vs sampled style {:?}",
                stats.shape(),
                [sampled.batch, sampled.channels, 1, 1]
            )));
        }
        let scale: Vec<f64> = stats
            .sigma2
            .iter()
            .zip(&sampled.sigma_bar)
            .map(|(s2, sb)| sb / (s2 + VARIANCE_RIDGE).sqrt())
            .collect();
        let shift = scale
            .iter()
            .zip(&stats.mu)
            .zip(&sampled.mu_bar)
            .map(|((a, m), mb)| mb - a * m)
            .collect();
        Ok(ChannelAffine { scale, shift })
    }
}

/// `σ̄ (z − μ) / sqrt(σ² + 1e-6) + μ̄`.
pub fn ids_transform(z: &Tensor, stats: &StyleStats, sampled: &SampledStyle) -> Result<Tensor> {
    let (b, c, w) = z.dims4()?;
    if stats.shape() != [b, c, 1, 1] {
        return Err(Error::Shape(format!(
            "style stats {:?} do not match feature map {:?}",
            stats.shape(),
            z.shape()
        )));
    }
    let coef = ChannelAffine::restyle(stats, sampled)?;
    let mut out = z.data().to_vec();
    for (row, chunk) in out.chunks_mut(w).enumerate() {
        let (a, s) = (coef.scale[row], coef.shift[row]);
        chunk.iter_mut().for_each(|v| *v = a * *v + s);
    }
    Tensor::new(z.shape().to_vec(), out)
}

/// Result of a full IDS pass.
#[derive(Clone, Debug)]
pub struct IdsOutput {
    pub output: Tensor,
    pub stats: StyleStats,
    pub sampled: SampledStyle,
    pub mu_model: StyleGaussian,
    pub sigma_model: StyleGaussian,
}

/// Statistics → Gaussian fits → per-sample tail draws → restyle.
pub fn ids<R: Rng + ?Sized>(z: &Tensor, config: &IdsConfig, rng: &mut R) -> Result<IdsOutput> {
    let stats = spatial_stats(z)?;
    let (sampled, mu_model, sigma_model) = sample_styles(&stats, config, rng)?;
    let output = ids_transform(z, &stats, &sampled)?;
    Ok(IdsOutput {
        output,
        stats,
        sampled,
        mu_model,
        sigma_model,
    })
}

/// Produces the restyling applied to base feature maps during training.
pub trait StyleAugment {
    /// `None` means the augmented view is the original map.
    fn restyle(&mut self, z: &Tensor) -> Result<Option<ChannelAffine>>;
}

/// Leaves feature maps untouched.
pub struct NoAugment;

impl StyleAugment for NoAugment {
    fn restyle(&mut self, _z: &Tensor) -> Result<Option<ChannelAffine>> {
        Ok(None)
    }
}

/// IDS augmentation with its own random stream and running diagnostics.
pub struct IdsAugment<R> {
    pub config: IdsConfig,
    pub rng: R,
    pub samples: usize,
    pub fallbacks: usize,
}

impl<R: Rng> IdsAugment<R> {
    pub fn new(config: IdsConfig, rng: R) -> Self {
        IdsAugment {
            config,
            rng,
            samples: 0,
            fallbacks: 0,
        }
    }
}

impl<R: Rng> StyleAugment for IdsAugment<R> {
    fn restyle(&mut self, z: &Tensor) -> Result<Option<ChannelAffine>> {
        let stats = spatial_stats(z)?;
        let (sampled, _, _) = sample_styles(&stats, &self.config, &mut self.rng)?;
        self.samples += 2 * sampled.batch;
        self.fallbacks += sampled.fallback_count();
        Ok(Some(ChannelAffine::restyle(&stats, &sampled)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stats_of_constant_map() {
        let z = Tensor::full(&[2, 3, 1, 7], 5.0);
        let s = spatial_stats(&z).unwrap();
        assert!(s.mu.iter().all(|&m| m == 5.0));
        assert!(s.sigma2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_shape_matches_reference_example() {
        let z = Tensor::zeros(&[96, 32, 1, 58]);
        assert_eq!(spatial_stats(&z).unwrap().shape(), [96, 32, 1, 1]);
    }

    #[test]
    fn degenerate_batch_gives_ridge_covariance() {
        let rows = [1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let g = StyleGaussian::fit(&rows, 3, 2).unwrap();
        assert_eq!(g.mean, vec![1.0, 2.0]);
        assert_eq!(g.ridge, 1e-6);
        assert_eq!(g.covariance, vec![1e-6, 0.0, 0.0, 1e-6]);
    }

    #[test]
    fn two_point_fit() {
        let g = StyleGaussian::fit(&[0.0, 2.0], 2, 1).unwrap();
        assert_eq!(g.mean, vec![1.0]);
        assert!((g.covariance[0] - (1.0 + 1e-6)).abs() < 1e-15);
        assert!(StyleGaussian::fit(&[1.0], 1, 1).is_err());
    }

    #[test]
    fn infinite_threshold_accepts_first_draw() {
        let g = StyleGaussian::fit(&[0.0, 1.0, 2.0, 0.5, -1.0, 3.0], 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = sample_tail(&g, f64::INFINITY, &mut rng, 100).unwrap();
        assert_eq!(d.draws_used, 1);
        assert!(!d.fallback);
    }

    #[test]
    fn unreachable_threshold_falls_back_to_lowest_density() {
        let g = StyleGaussian::fit(&[0.0, 1.0, 2.0, 0.5], 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = sample_tail(&g, 1e-300, &mut rng, 10).unwrap();
        assert!(d.fallback);
        assert_eq!(d.draws_used, 10);
    }

    #[test]
    fn identity_restyle_reproduces_input() {
        let data: Vec<f64> = (0..2 * 3 * 16).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let z = Tensor::new4(2, 3, 16, data).unwrap();
        let stats = spatial_stats(&z).unwrap();
        let out = ids_transform(&z, &stats, &SampledStyle::identity(&stats)).unwrap();
        assert!(out.max_abs_diff(&z) < 1e-6);
    }

    #[test]
    fn constant_channel_maps_to_sampled_mean() {
        let z = Tensor::full(&[1, 1, 1, 5], 2.0);
        let stats = spatial_stats(&z).unwrap();
        let mut style = SampledStyle::identity(&stats);
        style.mu_bar = vec![-3.0];
        style.sigma_bar = vec![4.0];
        let out = ids_transform(&z, &stats, &style).unwrap();
        assert!(out.data().iter().all(|&v| v == -3.0));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let z = Tensor::zeros(&[2, 3, 1, 4]);
        let stats = spatial_stats(&Tensor::zeros(&[2, 2, 1, 4])).unwrap();
        let style = SampledStyle::identity(&stats);
        assert!(ids_transform(&z, &stats, &style).is_err());
    }
}
