//! Forward and backward kernels for the layer catalogue.
//!
//! Each kernel is a plain function over [`Tensor`]s; the tape in
//! [`super::graph`] records which kernel produced a node and calls the
//! matching backward routine.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Valid (unpadded) 1-D convolution over the width axis.
///
/// `x` is `[B, C_in, 1, W]`, `weight` is `[C_out, C_in, 1, K]`, `bias` is `[C_out]`.
pub fn conv1d(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, c_in, w) = x.dims4()?;
    let (c_out, k) = conv_weight_dims(weight, c_in, x)?;
    if bias.len() != c_out {
        return Err(Error::Shape(format!(
            "conv bias has {} entries, kernel {:?} has {} output channels",
            bias.len(),
            weight.shape(),
            c_out
        )));
    }
    let w_out = conv_out_width(w, k, stride)?;
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; b * c_out * w_out];
    for bi in 0..b {
        for co in 0..c_out {
            let row = &mut out[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out];
            row.fill(bias.data()[co]);
            for ci in 0..c_in {
                let xin = &xd[(bi * c_in + ci) * w..(bi * c_in + ci + 1) * w];
                let ker = &wd[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                for (o, acc) in row.iter_mut().enumerate() {
                    let start = o * stride;
                    let mut s = 0.0;
                    for (kv, xv) in ker.iter().zip(&xin[start..start + k]) {
                        s += kv * xv;
                    }
                    *acc += s;
                }
            }
        }
    }
    Tensor::new4(b, c_out, w_out, out)
}

/// Gradients of [`conv1d`]: `(d_input, d_weight, d_bias)`. The input gradient is
/// skipped when `need_input` is false.
pub fn conv1d_backward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (b, c_in, w) = x.dims4()?;
    let (c_out, k) = conv_weight_dims(weight, c_in, x)?;
    let (_, _, w_out) = grad_out.dims4()?;
    let xd = x.data();
    let wd = weight.data();
    let gy = grad_out.data();
    let mut gx = if need_input { vec![0.0; xd.len()] } else { Vec::new() };
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; c_out];
    for bi in 0..b {
        for co in 0..c_out {
            let g = &gy[(bi * c_out + co) * w_out..(bi * c_out + co + 1) * w_out];
            gb[co] += g.iter().sum::<f64>();
            for ci in 0..c_in {
                let xoff = (bi * c_in + ci) * w;
                let koff = (co * c_in + ci) * k;
                let xin = &xd[xoff..xoff + w];
                let gker = &mut gw[koff..koff + k];
                for (o, &gv) in g.iter().enumerate() {
                    if gv == 0.0 {
                        continue;
                    }
                    let start = o * stride;
                    for (gk, xv) in gker.iter_mut().zip(&xin[start..start + k]) {
                        *gk += gv * xv;
                    }
                }
                if need_input {
                    let ker = &wd[koff..koff + k];
                    let gxin = &mut gx[xoff..xoff + w];
                    for (o, &gv) in g.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        let start = o * stride;
                        for (gxv, kv) in gxin[start..start + k].iter_mut().zip(ker) {
                            *gxv += gv * kv;
                        }
                    }
                }
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::new(x.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((
        gx,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

fn conv_weight_dims(weight: &Tensor, c_in: usize, x: &Tensor) -> Result<(usize, usize)> {
    match weight.shape()[..] {
        [c_out, wc, 1, k] if wc == c_in && c_out > 0 && k > 0 => Ok((c_out, k)),
        _ => Err(Error::Shape(format!(
            "conv kernel {:?} incompatible with input {:?}",
            weight.shape(),
            x.shape()
        ))),
    }
}

/// `floor((W - K) / stride) + 1`, or an error when the kernel does not fit.
pub fn conv_out_width(w: usize, k: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
    }
    if k == 0 || w < k {
        return Err(Error::Shape(format!(
            "conv kernel width {k} does not fit input width {w}"
        )));
    }
    Ok((w - k) / stride + 1)
}

/// `floor(W / width)`; the remainder is dropped.
pub fn pool_out_width(w: usize, width: usize) -> Result<usize> {
    if width == 0 {
        return Err(Error::InvalidArgument("pool width must be >= 1".into()));
    }
    if w < width {
        return Err(Error::Shape(format!(
            "pool width {width} exceeds input width {w}"
        )));
    }
    Ok(w / width)
}

/// Non-overlapping max pooling along width. Returns the pooled map and, for
/// every output element, the flat index of the input element that won
/// (first occurrence on ties).
pub fn maxpool1d(x: &Tensor, width: usize) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, w) = x.dims4()?;
    let w_out = pool_out_width(w, width)?;
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * w_out);
    let mut arg = Vec::with_capacity(b * c * w_out);
    for row in 0..b * c {
        let base = row * w;
        for o in 0..w_out {
            let start = base + o * width;
            let mut best = start;
            for i in start + 1..start + width {
                if xd[i] > xd[best] {
                    best = i;
                }
            }
            out.push(xd[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::new4(b, c, w_out, out)?, arg))
}

pub fn maxpool1d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&i, &gv) in argmax.iter().zip(grad_out.data()) {
        g[i] += gv;
    }
    gx
}

/// `x · Wᵀ + b` with `x: [B, D_in]`, `W: [D_out, D_in]`, `b: [D_out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, d_in) = x.dims2()?;
    let (d_out, wd_in) = weight.dims2()?;
    if wd_in != d_in || bias.len() != d_out {
        return Err(Error::Shape(format!(
            "linear layer weight {:?} / bias {:?} incompatible with input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let mut out = Vec::with_capacity(b * d_out);
    for r in 0..b {
        let xr = x.row(r);
        for o in 0..d_out {
            let wr = &weight.data()[o * d_in..(o + 1) * d_in];
            out.push(bias.data()[o] + dot(xr, wr));
        }
    }
    Tensor::matrix(b, d_out, out)
}

/// Gradients of [`linear`]: `(d_input, d_weight, d_bias)`.
pub fn linear_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (b, d_in) = x.dims2()?;
    let (d_out, _) = weight.dims2()?;
    let gy = grad_out.data();
    let wd = weight.data();
    let mut gw = vec![0.0; d_out * d_in];
    let mut gb = vec![0.0; d_out];
    let mut gx = if need_input { vec![0.0; b * d_in] } else { Vec::new() };
    for r in 0..b {
        let xr = x.row(r);
        for o in 0..d_out {
            let g = gy[r * d_out + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            axpy(g, xr, &mut gw[o * d_in..(o + 1) * d_in]);
            if need_input {
                axpy(g, &wd[o * d_in..(o + 1) * d_in], &mut gx[r * d_in..(r + 1) * d_in]);
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::matrix(b, d_in, gx)?)
    } else {
        None
    };
    Ok((
        gx,
        Tensor::matrix(d_out, d_in, gw)?,
        Tensor::new(vec![d_out], gb)?,
    ))
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Cached quantities from a training-mode batch-norm pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub x_hat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

/// Batch normalization over the rows of `x: [B, D]` using batch statistics.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, BatchNormCache)> {
    let (b, d) = x.dims2()?;
    check_bn_params(d, gamma, beta)?;
    if b < 2 {
        return Err(Error::InvalidArgument(
            "batch norm in train mode needs a batch of at least 2".into(),
        ));
    }
    let xd = x.data();
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    for r in 0..b {
        for j in 0..d {
            mean[j] += xd[r * d + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    for r in 0..b {
        for j in 0..d {
            let c = xd[r * d + j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= b as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0; b * d];
    let mut out = vec![0.0; b * d];
    for r in 0..b {
        for j in 0..d {
            let h = (xd[r * d + j] - mean[j]) * inv_std[j];
            x_hat[r * d + j] = h;
            out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    Ok((
        Tensor::matrix(b, d, out)?,
        BatchNormCache {
            x_hat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Gradients of [`batch_norm_train`]: `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_train_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, d) = grad_out.dims2()?;
    let gy = grad_out.data();
    let mut g_gamma = vec![0.0; d];
    let mut g_beta = vec![0.0; d];
    for r in 0..b {
        for j in 0..d {
            g_beta[j] += gy[r * d + j];
            g_gamma[j] += gy[r * d + j] * cache.x_hat[r * d + j];
        }
    }
    let bf = b as f64;
    let mut gx = vec![0.0; b * d];
    for r in 0..b {
        for j in 0..d {
            let dxh = gy[r * d + j] * gamma.data()[j];
            // sum(dxh) = gamma * g_beta, sum(dxh * x_hat) = gamma * g_gamma
            gx[r * d + j] = cache.inv_std[j] / bf
                * (bf * dxh
                    - gamma.data()[j] * g_beta[j]
                    - cache.x_hat[r * d + j] * gamma.data()[j] * g_gamma[j]);
        }
    }
    Ok((
        Tensor::matrix(b, d, gx)?,
        Tensor::new(vec![d], g_gamma)?,
        Tensor::new(vec![d], g_beta)?,
    ))
}

/// Batch normalization with fixed running statistics.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor> {
    let (b, d) = x.dims2()?;
    check_bn_params(d, gamma, beta)?;
    let mut out = Vec::with_capacity(b * d);
    for r in 0..b {
        for j in 0..d {
            let h = (x.data()[r * d + j] - running_mean[j]) / (running_var[j] + BN_EPS).sqrt();
            out.push(gamma.data()[j] * h + beta.data()[j]);
        }
    }
    Tensor::matrix(b, d, out)
}

fn check_bn_params(d: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.len() != d || beta.len() != d {
        return Err(Error::Shape(format!(
            "batch norm over {d} features given gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Mean softmax cross-entropy and the softmax probabilities.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            b
        )));
    }
    let mut probs = vec![0.0; b * k];
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: k,
            });
        }
        let z = logits.row(r);
        let (arg, &m) = z
            .iter()
            .enumerate()
            .fold((0, &z[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        let mut rest = 0.0;
        for (i, &v) in z.iter().enumerate() {
            let e = (v - m).exp();
            probs[r * k + i] = e;
            if i != arg {
                rest += e;
            }
        }
        let s = 1.0 + rest;
        probs[r * k..(r + 1) * k].iter_mut().for_each(|p| *p /= s);
        total += (m - z[y]) + rest.ln_1p();
    }
    Ok((total / b as f64, Tensor::matrix(b, k, probs)?))
}

pub fn softmax_cross_entropy_backward(probs: &Tensor, labels: &[usize]) -> Tensor {
    let (b, k) = probs.dims2().expect("matrix");
    let mut g = probs.data().to_vec();
    for (r, &y) in labels.iter().enumerate() {
        g[r * k + y] -= 1.0;
    }
    g.iter_mut().for_each(|v| *v /= b as f64);
    Tensor::matrix(b, k, g).expect("same shape")
}

/// Per-(sample, channel) affine map `scale · x + shift` on a `[B, C, 1, W]` map.
pub fn channel_affine(x: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
    let (b, c, w) = x.dims4()?;
    if scale.len() != b * c || shift.len() != b * c {
        return Err(Error::Shape(format!(
            "channel affine needs {} coefficients for {:?}, got {} / {}",
            b * c,
            x.shape(),
            scale.len(),
            shift.len()
        )));
    }
    let mut out = x.data().to_vec();
    for (row, chunk) in out.chunks_mut(w).enumerate() {
        chunk
            .iter_mut()
            .for_each(|v| *v = scale[row] * *v + shift[row]);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(b: usize, c: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new4(b, c, w, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let x = t4(1, 1, 3, &[1.0, 2.0, 3.0]);
        let k = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        let y = conv1d(&x, &k, &b, 1).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_of_zeros_is_bias() {
        let x = Tensor::zeros(&[2, 3, 1, 10]);
        let k = Tensor::full(&[4, 3, 1, 3], 0.7);
        let b = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = conv1d(&x, &k, &b, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 1, 4]);
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, b.data()[(i / 4) % 4]);
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[1, 2, 1, 8]);
        let k = Tensor::zeros(&[1, 3, 1, 2]);
        let b = Tensor::zeros(&[1]);
        let msg = conv1d(&x, &k, &b, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 3, 1, 2]") && msg.contains("[1, 2, 1, 8]"), "{msg}");
    }

    #[test]
    fn output_widths_follow_closed_form() {
        for w in 1..=64usize {
            for k in 1..=w {
                for stride in 1..=4 {
                    let x = Tensor::zeros(&[1, 1, 1, w]);
                    let ker = Tensor::zeros(&[1, 1, 1, k]);
                    let y = conv1d(&x, &ker, &Tensor::zeros(&[1]), stride).unwrap();
                    assert_eq!(y.shape()[3], (w - k) / stride + 1);
                }
            }
            for p in 1..=w {
                let (y, _) = maxpool1d(&Tensor::zeros(&[1, 1, 1, w]), p).unwrap();
                assert_eq!(y.shape()[3], w / p);
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let (y, _) = maxpool1d(&t4(1, 1, 4, &[1.0, 3.0, 2.0, 4.0]), 2).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        let (y, _) = maxpool1d(&t4(1, 1, 5, &[2.0; 5]), 2).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0]);
        let x = t4(1, 2, 3, &[1.0, -2.0, 3.0, 0.0, 5.0, -1.0]);
        let (y, _) = maxpool1d(&x, 1).unwrap();
        assert_eq!(y, x);
        assert!(maxpool1d(&x, 0).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = t4(1, 1, 2, &[1.0, 1.0]);
        let (y, arg) = maxpool1d(&x, 2).unwrap();
        assert_eq!(arg, vec![0]);
        let g = maxpool1d_backward(x.shape(), &arg, &Tensor::full(y.shape(), 1.0));
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn linear_examples() {
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let w = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().data(), &[12.0]);

        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!(linear(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);

        let b = Tensor::new(vec![2], vec![7.0, -1.0]).unwrap();
        let y = linear(&x, &Tensor::zeros(&[2, 2]), &b).unwrap();
        assert_eq!(y.data(), &[7.0, -1.0, 7.0, -1.0]);

        assert!(linear(&x, &Tensor::zeros(&[2, 3]), &b).is_err());
    }

    #[test]
    fn batch_norm_examples() {
        // already standardized per feature (biased variance = 1)
        let x = Tensor::matrix(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let (y, _) =
            batch_norm_train(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2])).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-5);

        let (y, _) =
            batch_norm_train(&x, &Tensor::zeros(&[2]), &Tensor::full(&[2], 3.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));

        let one = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(batch_norm_train(&one, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn batch_norm_recovers_gamma_beta_statistics() {
        let b = 50;
        let d = 3;
        let x: Vec<f64> = (0..b * d).map(|i| ((i * 37 % 101) as f64).sin() * 4.0 + 2.0).collect();
        let x = Tensor::matrix(b, d, x).unwrap();
        let gamma = Tensor::new(vec![d], vec![0.5, 2.0, 1.5]).unwrap();
        let beta = Tensor::new(vec![d], vec![-1.0, 0.0, 3.0]).unwrap();
        let (y, cache) = batch_norm_train(&x, &gamma, &beta).unwrap();
        for j in 0..d {
            let col: Vec<f64> = (0..b).map(|r| y.data()[r * d + j]).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64;
            // ridge shrinks the std by sqrt(var / (var + eps))
            let shrink = (cache.var[j] / (cache.var[j] + BN_EPS)).sqrt();
            assert!((mean - beta.data()[j]).abs() < 1e-6);
            assert!((var.sqrt() - gamma.data()[j] * shrink).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(&[4], -2.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&neg, &Tensor::full(&[4], 1.0));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, _) = softmax_cross_entropy(&Tensor::zeros(&[3, 4]), &[0, 1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);

        let logits = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2f64.exp())).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 1.3133).abs() < 1e-4);

        let logits = Tensor::matrix(1, 3, vec![50.0, 0.0, 0.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((0.0..1e-20).contains(&l));

        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
