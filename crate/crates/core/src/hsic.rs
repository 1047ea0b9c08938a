//! Independence measures between causal and non-causal feature batches.
//!
//! The main measure is the linear-kernel HSIC estimator
//! `trace(K H L H) / (B - 1)^2`, where `K` and `L` are cosine-similarity Gram
//! matrices of the row-normalized features and `H = I - 11ᵀ/B` centers them.
//! Orthogonality and cross-correlation penalties are provided for ablations.
//!
//! Every measure has a `*_with_grad` variant returning analytic gradients with
//! respect to both feature batches; the autodiff tape wraps those.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NORM_GUARD: f64 = 1e-12;
const CORR_RIDGE: f64 = 1e-8;

/// `H = I - (1/B) 11ᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CenteringMatrix {
    size: usize,
}

impl CenteringMatrix {
    pub fn new(size: usize) -> Self {
        CenteringMatrix { size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Dense row-major `B × B` matrix.
    pub fn dense(&self) -> Vec<f64> {
        let b = self.size;
        let inv = 1.0 / b as f64;
        let mut h = vec![-inv; b * b];
        for i in 0..b {
            h[i * b + i] += 1.0;
        }
        h
    }

    /// In place `M ← H M H` for a square `B × B` matrix.
    pub fn double_center(&self, m: &mut [f64]) {
        let b = self.size;
        let bf = b as f64;
        let row_means: Vec<f64> = (0..b)
            .map(|i| m[i * b..(i + 1) * b].iter().sum::<f64>() / bf)
            .collect();
        let col_means: Vec<f64> = (0..b)
            .map(|j| (0..b).map(|i| m[i * b + j]).sum::<f64>() / bf)
            .collect();
        let grand = row_means.iter().sum::<f64>() / bf;
        for i in 0..b {
            for j in 0..b {
                m[i * b + j] = (m[i * b + j] - row_means[i]) - col_means[j] + grand;
            }
        }
    }
}

/// Divides every row by its L2 norm (guarded by `1e-12`); zero rows stay zero.
pub fn row_normalize(f: &Tensor) -> Result<Tensor> {
    let (b, d) = f.dims2()?;
    let mut out = f.data().to_vec();
    for row in out.chunks_mut(d.max(1)).take(b) {
        let n = norm(row).max(NORM_GUARD);
        row.iter_mut().for_each(|v| *v /= n);
    }
    Tensor::matrix(b, d, out)
}

/// Pulls a gradient on the normalized rows back to the raw rows.
pub fn row_normalize_backward(f: &Tensor, grad_normalized: &[f64]) -> Vec<f64> {
    let (b, d) = f.dims2().expect("matrix");
    let mut g = vec![0.0; b * d];
    for r in 0..b {
        let x = f.row(r);
        let gn = &grad_normalized[r * d..(r + 1) * d];
        let raw = norm(x);
        let out = &mut g[r * d..(r + 1) * d];
        if raw > NORM_GUARD {
            let proj: f64 = x.iter().zip(gn).map(|(a, b)| a * b).sum::<f64>() / raw;
            for j in 0..d {
                out[j] = (gn[j] - x[j] / raw * proj) / raw;
            }
        } else {
            for j in 0..d {
                out[j] = gn[j] / NORM_GUARD;
            }
        }
    }
    g
}

/// Linear-kernel HSIC between two feature batches.
pub fn hsic(fc: &Tensor, fd: &Tensor) -> Result<f64> {
    let (b, nc, nd) = prepare_pair(fc, fd)?;
    let h = CenteringMatrix::new(b);
    let mut kc = gram(&nc, b);
    let mut lc = gram(&nd, b);
    h.double_center(&mut kc);
    h.double_center(&mut lc);
    Ok(frobenius_inner(&kc, &lc) / ((b - 1) * (b - 1)) as f64)
}

/// HSIC value together with its gradients w.r.t. `fc` and `fd`.
pub fn hsic_with_grad(fc: &Tensor, fd: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let (b, nc, nd) = prepare_pair(fc, fd)?;
    let h = CenteringMatrix::new(b);
    let mut kc = gram(&nc, b);
    let mut lc = gram(&nd, b);
    h.double_center(&mut kc);
    h.double_center(&mut lc);
    let scale = 1.0 / ((b - 1) * (b - 1)) as f64;
    let value = frobenius_inner(&kc, &lc) * scale;
    // d/dK = HLH·scale, and dK/dN contributes 2·(HLH)·N since HLH is symmetric.
    let g_nc = sym_times(&lc, &nc, b, 2.0 * scale);
    let g_nd = sym_times(&kc, &nd, b, 2.0 * scale);
    let gfc = row_normalize_backward(fc, g_nc.data());
    let gfd = row_normalize_backward(fd, g_nd.data());
    Ok((
        value,
        Tensor::new(fc.shape().to_vec(), gfc)?,
        Tensor::new(fd.shape().to_vec(), gfd)?,
    ))
}

/// Mean over samples of the squared inner product between each sample's
/// normalized causal and non-causal vectors. Requires equal feature widths.
pub fn orth_penalty(fc: &Tensor, fd: &Tensor) -> Result<f64> {
    orth_penalty_with_grad(fc, fd).map(|(v, _, _)| v)
}

pub fn orth_penalty_with_grad(fc: &Tensor, fd: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let (b, dc) = fc.dims2()?;
    let (bd, dd) = fd.dims2()?;
    if b != bd {
        return Err(batch_mismatch(fc, fd));
    }
    if dc != dd {
        return Err(Error::Shape(format!(
            "orthogonality penalty needs equal feature widths, got {:?} and {:?}",
            fc.shape(),
            fd.shape()
        )));
    }
    let nc = row_normalize(fc)?;
    let nd = row_normalize(fd)?;
    let mut value = 0.0;
    let mut g_nc = vec![0.0; b * dc];
    let mut g_nd = vec![0.0; b * dc];
    for r in 0..b {
        let ip: f64 = nc.row(r).iter().zip(nd.row(r)).map(|(a, b)| a * b).sum();
        value += ip * ip;
        let coef = 2.0 * ip / b as f64;
        for j in 0..dc {
            g_nc[r * dc + j] = coef * nd.row(r)[j];
            g_nd[r * dc + j] = coef * nc.row(r)[j];
        }
    }
    Ok((
        value / b as f64,
        Tensor::new(fc.shape().to_vec(), row_normalize_backward(fc, &g_nc))?,
        Tensor::new(fd.shape().to_vec(), row_normalize_backward(fd, &g_nd))?,
    ))
}

/// Mean squared entry of the cross-correlation matrix between per-dimension
/// standardized `fc` and `fd`.
pub fn corr_penalty(fc: &Tensor, fd: &Tensor) -> Result<f64> {
    corr_penalty_with_grad(fc, fd).map(|(v, _, _)| v)
}

pub fn corr_penalty_with_grad(fc: &Tensor, fd: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let (b, dc) = fc.dims2()?;
    let (bd, dd) = fd.dims2()?;
    if b != bd {
        return Err(batch_mismatch(fc, fd));
    }
    if b < 2 {
        return Err(Error::InvalidArgument(
            "correlation penalty needs a batch of at least 2".into(),
        ));
    }
    let (zc, sc) = standardize_columns(fc);
    let (zd, sd) = standardize_columns(fd);
    let bf = b as f64;
    // M = Zcᵀ Zd / B
    let mut m = vec![0.0; dc * dd];
    for r in 0..b {
        for i in 0..dc {
            let a = zc[r * dc + i];
            if a == 0.0 {
                continue;
            }
            for j in 0..dd {
                m[i * dd + j] += a * zd[r * dd + j];
            }
        }
    }
    m.iter_mut().for_each(|v| *v /= bf);
    let count = (dc * dd) as f64;
    let value = m.iter().map(|v| v * v).sum::<f64>() / count;
    let gm: Vec<f64> = m.iter().map(|v| 2.0 * v / count).collect();
    // dZc = Zd · gMᵀ / B, dZd = Zc · gM / B
    let mut gzc = vec![0.0; b * dc];
    let mut gzd = vec![0.0; b * dd];
    for r in 0..b {
        for i in 0..dc {
            for j in 0..dd {
                gzc[r * dc + i] += zd[r * dd + j] * gm[i * dd + j] / bf;
                gzd[r * dd + j] += zc[r * dc + i] * gm[i * dd + j] / bf;
            }
        }
    }
    Ok((
        value,
        Tensor::new(fc.shape().to_vec(), standardize_backward(&zc, &sc, &gzc, b, dc))?,
        Tensor::new(fd.shape().to_vec(), standardize_backward(&zd, &sd, &gzd, b, dd))?,
    ))
}

/// Column-wise z-scores with a ridged biased variance; returns the scores and
/// the per-column denominators.
fn standardize_columns(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, d) = x.dims2().expect("matrix");
    let bf = b as f64;
    let mut mean = vec![0.0; d];
    for r in 0..b {
        for j in 0..d {
            mean[j] += x.data()[r * d + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= bf);
    let mut var = vec![0.0; d];
    for r in 0..b {
        for j in 0..d {
            var[j] += (x.data()[r * d + j] - mean[j]).powi(2);
        }
    }
    let denom: Vec<f64> = var.iter().map(|v| (v / bf + CORR_RIDGE).sqrt()).collect();
    let mut z = vec![0.0; b * d];
    for r in 0..b {
        for j in 0..d {
            z[r * d + j] = (x.data()[r * d + j] - mean[j]) / denom[j];
        }
    }
    (z, denom)
}

fn standardize_backward(z: &[f64], denom: &[f64], gz: &[f64], b: usize, d: usize) -> Vec<f64> {
    let bf = b as f64;
    let mut gx = vec![0.0; b * d];
    for j in 0..d {
        let mean_g = (0..b).map(|r| gz[r * d + j]).sum::<f64>() / bf;
        let mean_gz = (0..b).map(|r| gz[r * d + j] * z[r * d + j]).sum::<f64>() / bf;
        for r in 0..b {
            gx[r * d + j] = (gz[r * d + j] - mean_g - z[r * d + j] * mean_gz) / denom[j];
        }
    }
    gx
}

fn prepare_pair(fc: &Tensor, fd: &Tensor) -> Result<(usize, Tensor, Tensor)> {
    let (b, _) = fc.dims2()?;
    let (bd, _) = fd.dims2()?;
    if b != bd {
        return Err(batch_mismatch(fc, fd));
    }
    if b < 2 {
        return Err(Error::InvalidArgument("HSIC needs a batch of at least 2".into()));
    }
    Ok((b, row_normalize(fc)?, row_normalize(fd)?))
}

fn batch_mismatch(fc: &Tensor, fd: &Tensor) -> Error {
    Error::Shape(format!(
        "feature batches disagree on batch size: {:?} vs {:?}",
        fc.shape(),
        fd.shape()
    ))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gram(n: &Tensor, b: usize) -> Vec<f64> {
    let mut k = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let v: f64 = n.row(i).iter().zip(n.row(j)).map(|(a, b)| a * b).sum();
            k[i * b + j] = v;
            k[j * b + i] = v;
        }
    }
    k
}

fn frobenius_inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `alpha · S · N` for symmetric `S: [B, B]` and `N: [B, D]`.
fn sym_times(s: &[f64], n: &Tensor, b: usize, alpha: f64) -> Tensor {
    let d = n.len() / b;
    let mut out = vec![0.0; b * d];
    for i in 0..b {
        let dst = &mut out[i * d..(i + 1) * d];
        for k in 0..b {
            let c = alpha * s[i * b + k];
            if c == 0.0 {
                continue;
            }
            for (o, v) in dst.iter_mut().zip(n.row(k)) {
                *o += c * v;
            }
        }
    }
    Tensor::matrix(b, d, out).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(b: usize, d: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(b, d, v.to_vec()).unwrap()
    }

    #[test]
    fn centering_matrix_properties() {
        for b in 1..7 {
            let h = CenteringMatrix::new(b).dense();
            let mut hh = vec![0.0; b * b];
            for i in 0..b {
                for j in 0..b {
                    assert!((h[i * b + j] - h[j * b + i]).abs() < 1e-15);
                    for k in 0..b {
                        hh[i * b + j] += h[i * b + k] * h[k * b + j];
                    }
                }
            }
            for (x, y) in hh.iter().zip(&h) {
                assert!((x - y).abs() < 1e-12);
            }
            for i in 0..b {
                let row_sum: f64 = h[i * b..(i + 1) * b].iter().sum();
                assert!(row_sum.abs() < 1e-12);
            }
            let tr: f64 = (0..b).map(|i| h[i * b + i]).sum();
            assert!((tr - (b as f64 - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn row_normalize_examples() {
        let n = row_normalize(&m(1, 2, &[3.0, 4.0])).unwrap();
        assert!((n.data()[0] - 0.6).abs() < 1e-15 && (n.data()[1] - 0.8).abs() < 1e-15);
        let unit = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(row_normalize(&unit).unwrap(), unit);
        let z = row_normalize(&m(1, 3, &[0.0; 3])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a = row_normalize(&m(1, 3, &[1.0, -2.0, 0.5])).unwrap();
        let b = row_normalize(&m(1, 3, &[7.0, -14.0, 3.5])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn hsic_of_constant_batch_is_zero() {
        let fc = m(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let fd = m(4, 3, &[0.3, -1.0, 2.0, 5.0, 1.0, 0.0, -2.0, 0.1, 0.4, 1.0, 1.0, 1.0]);
        assert!(hsic(&fc, &fd).unwrap().abs() <= 1e-12);
        assert!(hsic(&fd, &fc).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn hsic_of_orthonormal_rows() {
        let two = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!((hsic(&two, &two).unwrap() - 1.0).abs() <= 1e-12);
        let mut eye = vec![0.0; 25];
        for i in 0..5 {
            eye[i * 5 + i] = 1.0;
        }
        let five = m(5, 5, &eye);
        assert!((hsic(&five, &five).unwrap() - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn hsic_rejects_batch_mismatch() {
        assert!(hsic(&m(2, 1, &[1.0, 2.0]), &m(3, 1, &[1.0, 2.0, 3.0])).is_err());
        assert!(hsic(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])).is_err());
    }

    #[test]
    fn orth_examples() {
        let fc = m(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let fd = m(2, 2, &[0.0, 3.0, -1.0, 0.0]);
        assert_eq!(orth_penalty(&fc, &fd).unwrap(), 0.0);
        assert!((orth_penalty(&fc, &fc).unwrap() - 1.0).abs() < 1e-15);
        assert!(orth_penalty(&fc, &m(2, 1, &[1.0, 1.0])).is_err());
    }

    #[test]
    fn corr_constant_column_contributes_nothing() {
        let fc = m(3, 2, &[1.0, 5.0, 2.0, 5.0, 4.0, 5.0]);
        let fd = m(3, 1, &[0.5, -1.0, 2.0]);
        let full = corr_penalty(&fc, &fd).unwrap();
        let first = corr_penalty(&m(3, 1, &[1.0, 2.0, 4.0]), &fd).unwrap();
        // the constant column adds a zero entry to M, halving the mean
        assert!((full - first / 2.0).abs() < 1e-12);
        assert!(corr_penalty(&m(1, 1, &[1.0]), &m(1, 1, &[1.0])).is_err());
    }
}
