//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records one forward pass. Every operation appends a node that
//! holds its output value and whatever it needs to compute its backward pass;
//! [`Graph::backward`] walks the nodes in reverse and accumulates (`+=`)
//! parameter gradients into the owning [`ParamStore`].

use serde::{Deserialize, Serialize};

use super::layers::{self, BatchNormCache};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::hsic;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Pairwise scalar measures between two feature matrices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMeasure {
    #[default]
    Hsic,
    Orth,
    Corr,
}

impl PairMeasure {
    pub fn name(self) -> &'static str {
        match self {
            PairMeasure::Hsic => "hsic",
            PairMeasure::Orth => "orth",
            PairMeasure::Corr => "corr",
        }
    }
}

impl std::str::FromStr for PairMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsic" => Ok(PairMeasure::Hsic),
            "orth" => Ok(PairMeasure::Orth),
            "corr" => Ok(PairMeasure::Corr),
            _ => Err(Error::InvalidArgument(format!(
                "unknown independence measure {s:?} (expected hsic, orth or corr)"
            ))),
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        inv_std: Vec<f64>,
        x_hat: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    /// Scalar function of two inputs whose gradients were computed eagerly.
    Pair {
        a: Var,
        b: Var,
        grad_a: Tensor,
        grad_b: Tensor,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<f64>,
    },
    RowL1 {
        a: Var,
        b: Var,
    },
    HingeBelow {
        x: Var,
        margin: f64,
    },
    Mean {
        x: Var,
    },
    MaxAll {
        inputs: Vec<Var>,
        input: usize,
        index: usize,
    },
    SubScalar {
        x: Var,
        s: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        k: f64,
    },
    StopGrad,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input leaf whose gradient is recorded (see [`Graph::grad`]).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.requires_grad)
    }

    /// Same value, but gradients stop here.
    pub fn stop_grad(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.push(v, Op::StopGrad, false)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let out = layers::conv1d(self.value(x), self.value(w), self.value(b), stride)?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv1d { x, w, b, stride }, ng))
    }

    pub fn maxpool1d(&mut self, x: Var, width: usize) -> Result<Var> {
        let (out, argmax) = layers::maxpool1d(self.value(x), width)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, ng))
    }

    /// `[B, ...]` → `[B, prod(...)]`, row-major.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let b = t.shape()[0];
        let rest = t.len() / b.max(1);
        let out = t.clone().reshape(vec![b, rest])?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape { x }, ng))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = layers::linear(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// Training-mode batch norm. Returns the output and the batch mean and
    /// biased variance so the caller can update running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (out, cache) =
            layers::batch_norm_train(self.value(x), self.value(gamma), self.value(beta))?;
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let ng = self.needs(&[x, gamma, beta]);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            ng,
        );
        Ok((v, mean, var))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var> {
        let out = layers::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
        )?;
        let (_, d) = self.value(x).dims2()?;
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v + layers::BN_EPS).sqrt())
            .collect();
        let x_hat = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - running_mean[i % d]) * inv_std[i % d])
            .collect();
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                x_hat,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = layers::relu(self.value(x));
        let ng = self.needs(&[x]);
        self.push(out, Op::Relu { x }, ng)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = layers::softmax_cross_entropy(self.value(logits), labels)?;
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Independence measure between two `[B, D]` feature matrices.
    pub fn pair_measure(&mut self, measure: PairMeasure, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (value, grad_a, grad_b) = match measure {
            PairMeasure::Hsic => hsic::hsic_with_grad(ta, tb)?,
            PairMeasure::Orth => hsic::orth_penalty_with_grad(ta, tb)?,
            PairMeasure::Corr => hsic::corr_penalty_with_grad(ta, tb)?,
        };
        let ng = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Pair {
                a,
                b,
                grad_a,
                grad_b,
            },
            ng,
        ))
    }

    /// `scale[b,c] · x + shift[b,c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: Vec<f64>, shift: &[f64]) -> Result<Var> {
        let out = layers::channel_affine(self.value(x), &scale, shift)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::ChannelAffine { x, scale }, ng))
    }

    /// Per-row L1 distance between two `[B, D]` matrices, as a `[B]` vector.
    pub fn row_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "L1 distance between {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (rows, d) = ta.dims2()?;
        let out: Vec<f64> = (0..rows)
            .map(|r| {
                ta.data()[r * d..(r + 1) * d]
                    .iter()
                    .zip(&tb.data()[r * d..(r + 1) * d])
                    .map(|(x, y)| (x - y).abs())
                    .sum()
            })
            .collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![rows], out)?, Op::RowL1 { a, b }, ng))
    }

    /// Elementwise `min(x - margin, 0)`, with `margin` held constant.
    pub fn hinge_below(&mut self, x: Var, margin: f64) -> Var {
        let out = self.value(x).map(|v| (v - margin).min(0.0));
        let ng = self.needs(&[x]);
        self.push(out, Op::HingeBelow { x, margin }, ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(&[x]);
        self.push(Tensor::scalar(m), Op::Mean { x }, ng)
    }

    /// Largest element over all `inputs`; the gradient goes to its first
    /// occurrence.
    pub fn max_all(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (k, v) in inputs.iter().enumerate() {
            for (i, &x) in self.value(*v).data().iter().enumerate() {
                if best.is_none_or(|(_, _, b)| x > b) {
                    best = Some((k, i, x));
                }
            }
        }
        let (input, index, m) =
            best.ok_or_else(|| Error::Shape("maximum of an empty set".into()))?;
        let ng = self.needs(inputs);
        Ok(self.push(
            Tensor::scalar(m),
            Op::MaxAll {
                inputs: inputs.to_vec(),
                input,
                index,
            },
            ng,
        ))
    }

    /// `x − s` for a scalar node `s`, broadcast over `x`.
    pub fn sub_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::Shape(format!(
                "expected a scalar, got shape {:?}",
                self.value(s).shape()
            )));
        }
        let k = self.value(s).item();
        let out = self.value(x).map(|v| v - k);
        let ng = self.needs(&[x, s]);
        Ok(self.push(out, Op::SubScalar { x, s }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, |x, y| x + y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values(a, b, |x, y| x - y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let ng = self.needs(&[x]);
        self.push(out, Op::Scale { x, k }, ng)
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Back-propagates from the scalar `loss`, adding parameter gradients into
    /// `store`. Gradients of intermediate nodes stay available via [`Graph::grad`].
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let needs = |v: &Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if p.requires_grad {
                    p.grad.add_assign(g);
                }
            }
            Op::Conv1d { x, w, b, stride } => {
                let (gx, gw, gb) = layers::conv1d_backward(
                    &nodes[x.0].value,
                    &nodes[w.0].value,
                    *stride,
                    g,
                    needs(x),
                )?;
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::MaxPool { x, argmax } => {
                acc(
                    *x,
                    layers::maxpool1d_backward(nodes[x.0].value.shape(), argmax, g),
                );
            }
            Op::Reshape { x } => {
                acc(*x, g.clone().reshape(nodes[x.0].value.shape().to_vec())?);
            }
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) =
                    layers::linear_backward(&nodes[x.0].value, &nodes[w.0].value, g, needs(x))?;
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*w, gw);
                acc(*b, gb);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let (gx, gg, gb) =
                    layers::batch_norm_train_backward(cache, &nodes[gamma.0].value, g)?;
                acc(*x, gx);
                acc(*gamma, gg);
                acc(*beta, gb);
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                inv_std,
                x_hat,
            } => {
                let d = inv_std.len();
                let gam = nodes[gamma.0].value.data();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for (i, &gv) in g.data().iter().enumerate() {
                    let j = i % d;
                    gx[i] = gv * gam[j] * inv_std[j];
                    gg[j] += gv * x_hat[i];
                    gb[j] += gv;
                }
                acc(*x, Tensor::new(g.shape().to_vec(), gx)?);
                acc(*gamma, Tensor::new(vec![d], gg)?);
                acc(*beta, Tensor::new(vec![d], gb)?);
            }
            Op::Relu { x } => acc(*x, layers::relu_backward(&nodes[x.0].value, g)),
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let gl = layers::softmax_cross_entropy_backward(probs, labels);
                acc(*logits, gl.map(|v| v * g.item()));
            }
            Op::Pair {
                a,
                b,
                grad_a,
                grad_b,
            } => {
                let s = g.item();
                acc(*a, grad_a.map(|v| v * s));
                acc(*b, grad_b.map(|v| v * s));
            }
            Op::ChannelAffine { x, scale } => {
                let (_, _, w) = nodes[x.0].value.dims4()?;
                let mut gx = g.data().to_vec();
                for (row, chunk) in gx.chunks_mut(w).enumerate() {
                    chunk.iter_mut().for_each(|v| *v *= scale[row]);
                }
                acc(*x, Tensor::new(g.shape().to_vec(), gx)?);
            }
            Op::RowL1 { a, b } => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let d = ta.shape()[1];
                let ga: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .enumerate()
                    .map(|(i, (x, y))| signum0(x - y) * g.data()[i / d])
                    .collect();
                let gb: Vec<f64> = ga.iter().map(|v| -v).collect();
                acc(*a, Tensor::new(ta.shape().to_vec(), ga)?);
                acc(*b, Tensor::new(tb.shape().to_vec(), gb)?);
            }
            Op::HingeBelow { x, margin } => {
                let gx = nodes[x.0]
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v - margin < 0.0 { gv } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), gx)?);
            }
            Op::Mean { x } => {
                let t = &nodes[x.0].value;
                acc(*x, Tensor::full(t.shape(), g.item() / t.len() as f64));
            }
            Op::MaxAll {
                inputs,
                input,
                index,
            } => {
                let v = inputs[*input];
                let mut gx = Tensor::zeros(nodes[v.0].value.shape());
                gx.data_mut()[*index] = g.item();
                acc(v, gx);
            }
            Op::SubScalar { x, s } => {
                acc(*x, g.clone());
                acc(*s, Tensor::scalar(-g.data().iter().sum::<f64>()));
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Scale { x, k } => acc(*x, g.map(|v| v * k)),
        }
        Ok(())
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let id = store
            .add("p", Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap())
            .unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let m = g.mean(p);
        let s = g.scale(m, 4.0);
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0; 4]);
    }

    #[test]
    fn backward_of_half_square_is_identity() {
        let mut store = ParamStore::new();
        let vals = vec![1.0, -2.0, 3.0];
        let id = store.add("p", Tensor::new(vec![1, 3], vals.clone()).unwrap()).unwrap();
        let mut g = Graph::new();
        let p = g.param(&store, id);
        // p·p / 2 as a 1×1 linear map of p onto itself
        let w = g.param(&store, id);
        let zero = g.constant(Tensor::zeros(&[1]));
        let pp = g.linear(p, w, zero).unwrap();
        let m = g.mean(pp);
        let half = g.scale(m, 0.5);
        g.backward(half, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &vals[..]);
    }

    #[test]
    fn gradients_accumulate() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::full(&[2], 1.0)).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new();
            let p = g.param(&store, id);
            let m = g.mean(p);
            g.backward(m, &mut store).unwrap();
        }
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0]);
        store.zero_grad();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut store = ParamStore::new();
        let mut other = Graph::new();
        let v = other.constant(Tensor::scalar(1.0));
        let mut empty = Graph::new();
        assert!(matches!(empty.backward(v, &mut store), Err(Error::NoForward)));
    }
}
