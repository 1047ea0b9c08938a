//! Training objective: `L = L_cls + α·L_ind + β·L_con`.
//!
//! * `L_cls`: activity cross-entropy on original and restyled causal features,
//!   plus domain cross-entropy on the non-causal features.
//! * `L_ind`: independence measure (HSIC by default) summed over the four
//!   (causal, non-causal) pairs drawn from {original, restyled}.
//! * `L_con`: per-sample L1 alignment of causal features with the projected
//!   features of the other view, minus a hinge that keeps non-causal features
//!   of the two views at least `m` apart.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BranchOutputs;
use crate::nn::{Graph, PairMeasure, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite value >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Sign of the second causal alignment term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConMode {
    /// Both causal terms are added.
    #[default]
    #[serde(rename = "symmetric-sum")]
    SymmetricSum,
    /// The second causal term is subtracted.
    #[serde(rename = "literal")]
    Literal,
}

/// Which (features, labels) pairs enter the classification loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClsMode {
    /// Activity CE on both views, domain CE on the original view.
    #[default]
    #[serde(rename = "default")]
    Default,
    /// Domain CE on the restyled view as well.
    #[serde(rename = "all-pairs")]
    AllPairs,
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", $what, " {:?} (expected {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(ConMode, "consistency mode", ConMode::SymmetricSum => "symmetric-sum", ConMode::Literal => "literal");
named_enum!(ClsMode, "classification mode", ClsMode::Default => "default", ClsMode::AllPairs => "all-pairs");

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub con_mode: ConMode,
    pub cls_mode: ClsMode,
    pub measure: PairMeasure,
    /// Stop gradients through the unprojected side of each alignment term.
    pub cdpl_stopgrad: bool,
    /// Let gradients flow through the batch margin `m` (to the sample that
    /// attains it). With a constant margin the hinge is unbounded below.
    #[serde(default)]
    pub margin_grad: bool,
}

/// Unweighted components and the weighted total of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_ind: f64,
    pub l_con: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
}

/// Graph handle of the total loss plus its logged breakdown.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn noncausal(out: &BranchOutputs) -> Result<(Var, Var)> {
    match (out.fd_x, out.fd_a) {
        (Some(x), Some(a)) => Ok((x, a)),
        _ => Err(Error::InvalidArgument(
            "model has no non-causal branch".into(),
        )),
    }
}

/// Sum of cross-entropies selected by `mode`. Restyled terms are dropped when
/// the forward pass did not restyle.
pub fn loss_cls(
    g: &mut Graph,
    out: &BranchOutputs,
    y: &[usize],
    d: &[usize],
    mode: ClsMode,
) -> Result<Var> {
    let mut total = g.softmax_cross_entropy(out.act_logits, y)?;
    if out.augmented {
        let t = g.softmax_cross_entropy(out.act_logits_aug, y)?;
        total = g.add(total, t)?;
    }
    if let Some(dom) = out.dom_logits {
        let t = g.softmax_cross_entropy(dom, d)?;
        total = g.add(total, t)?;
        if mode == ClsMode::AllPairs && out.augmented {
            let dom_a = out.dom_logits_aug.expect("set with dom_logits");
            let t = g.softmax_cross_entropy(dom_a, d)?;
            total = g.add(total, t)?;
        }
    }
    Ok(total)
}

/// `measure` summed over (Fc_x, Fd_x), (Fc_x, Fd_a), (Fc_a, Fd_x), (Fc_a, Fd_a).
pub fn loss_ind(g: &mut Graph, out: &BranchOutputs, measure: PairMeasure) -> Result<Var> {
    let (fd_x, fd_a) = noncausal(out)?;
    let mut total = None;
    for (c, n) in [(out.fc_x, fd_x), (out.fc_x, fd_a), (out.fc_a, fd_x), (out.fc_a, fd_a)] {
        let t = g.pair_measure(measure, c, n)?;
        total = Some(match total {
            None => t,
            Some(acc) => g.add(acc, t)?,
        });
    }
    Ok(total.expect("four terms"))
}

/// Causal and non-causal feature handles plus their projections, falling back
/// to the raw features when the model has no projection heads.
struct ConsistencyOperands {
    fc_x: Var,
    fc_a: Var,
    pc_x: Var,
    pc_a: Var,
    noncausal: Option<(Var, Var, Var, Var)>,
}

fn operands(out: &BranchOutputs) -> ConsistencyOperands {
    let pc_x = out.cdpl_c_x.unwrap_or(out.fc_x);
    let pc_a = out.cdpl_c_a.unwrap_or(out.fc_a);
    let noncausal = match (out.fd_x, out.fd_a) {
        (Some(dx), Some(da)) => Some((
            dx,
            da,
            out.cdpl_d_x.unwrap_or(dx),
            out.cdpl_d_a.unwrap_or(da),
        )),
        _ => None,
    };
    ConsistencyOperands {
        fc_x: out.fc_x,
        fc_a: out.fc_a,
        pc_x,
        pc_a,
        noncausal,
    }
}

fn noncausal_distances(g: &mut Graph, ops: &ConsistencyOperands) -> Result<Option<(Var, Var)>> {
    match ops.noncausal {
        Some((dx, da, pd_x, pd_a)) => {
            let d1 = g.row_l1(dx, pd_a)?;
            let d2 = g.row_l1(pd_x, da)?;
            Ok(Some((d1, d2)))
        }
        None => Ok(None),
    }
}

fn max_of(g: &Graph, vars: [Var; 2]) -> f64 {
    vars.iter()
        .flat_map(|v| g.value(*v).data().iter().copied())
        .fold(0.0, f64::max)
}

/// Largest per-sample L1 distance between non-causal features and the
/// projection of the other view. Zero without a non-causal branch.
pub fn batch_margin(g: &mut Graph, out: &BranchOutputs) -> Result<f64> {
    let ops = operands(out);
    Ok(match noncausal_distances(g, &ops)? {
        Some((d1, d2)) => max_of(g, [d1, d2]),
        None => 0.0,
    })
}

/// Consistency loss and the margin it used.
pub fn loss_con(g: &mut Graph, out: &BranchOutputs, cfg: &LossConfig) -> Result<(Var, f64)> {
    let ops = operands(out);
    let (fc_x, fc_a) = if cfg.cdpl_stopgrad {
        (g.stop_grad(ops.fc_x), g.stop_grad(ops.fc_a))
    } else {
        (ops.fc_x, ops.fc_a)
    };
    let c1 = g.row_l1(fc_x, ops.pc_a)?;
    let c2 = g.row_l1(ops.pc_x, fc_a)?;
    let mut per_sample = match cfg.con_mode {
        ConMode::SymmetricSum => g.add(c1, c2)?,
        ConMode::Literal => g.sub(c1, c2)?,
    };
    let mut margin = 0.0;
    if let Some((dx, da, pd_x, pd_a)) = ops.noncausal {
        let (dx, da) = if cfg.cdpl_stopgrad {
            (g.stop_grad(dx), g.stop_grad(da))
        } else {
            (dx, da)
        };
        let d1 = g.row_l1(dx, pd_a)?;
        let d2 = g.row_l1(pd_x, da)?;
        margin = max_of(g, [d1, d2]);
        let h = if cfg.margin_grad {
            let m = g.max_all(&[d1, d2])?;
            let hinge = |g: &mut Graph, d: Var| -> Result<Var> {
                // min(d - m, 0) = -relu(m - d)
                let diff = g.sub_scalar(d, m)?;
                let neg = g.scale(diff, -1.0);
                let r = g.relu(neg);
                Ok(g.scale(r, -1.0))
            };
            let h1 = hinge(g, d1)?;
            let h2 = hinge(g, d2)?;
            g.add(h1, h2)?
        } else {
            let h1 = g.hinge_below(d1, margin);
            let h2 = g.hinge_below(d2, margin);
            g.add(h1, h2)?
        };
        per_sample = g.sub(per_sample, h)?;
    }
    Ok((g.mean(per_sample), margin))
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("{name} is {v}")))
    }
}

/// Builds the weighted objective. Terms whose inputs exist are always
/// evaluated for logging; terms with zero weight stay out of the gradient.
pub fn total_loss(
    g: &mut Graph,
    out: &BranchOutputs,
    y: &[usize],
    d: &[usize],
    cfg: &LossConfig,
) -> Result<Objective> {
    cfg.weights.validate()?;
    let LossWeights { alpha, beta } = cfg.weights;
    let cls = loss_cls(g, out, y, d, cfg.cls_mode)?;
    let l_cls = finite("L_cls", g.scalar(cls))?;
    let mut total = cls;

    let mut l_ind = 0.0;
    if out.fd_x.is_some() {
        let ind = loss_ind(g, out, cfg.measure)?;
        l_ind = finite("L_ind", g.scalar(ind))?;
        if alpha > 0.0 {
            let t = g.scale(ind, alpha);
            total = g.add(total, t)?;
        }
    } else if alpha > 0.0 {
        return Err(Error::InvalidArgument(
            "independence weight is positive but the model has no non-causal branch".into(),
        ));
    }

    let (con, margin) = loss_con(g, out, cfg)?;
    let l_con = finite("L_con", g.scalar(con))?;
    if beta > 0.0 {
        let t = g.scale(con, beta);
        total = g.add(total, t)?;
    }

    let breakdown = LossBreakdown {
        l_cls,
        l_ind,
        l_con,
        total: l_cls + alpha * l_ind + beta * l_con,
        alpha,
        beta,
        margin,
    };
    finite("total loss", g.scalar(total))?;
    Ok(Objective { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Builds a `BranchOutputs` whose features are plain graph variables.
    fn outputs(g: &mut Graph, fc: [Tensor; 2], fd: [Tensor; 2], logits: [Tensor; 4]) -> BranchOutputs {
        let [fcx, fca] = fc.map(|t| g.variable(t));
        let [fdx, fda] = fd.map(|t| g.variable(t));
        let [a, aa, dl, dla] = logits.map(|t| g.variable(t));
        BranchOutputs {
            batch: g.value(fcx).shape()[0],
            base: fcx,
            base_aug: fca,
            augmented: true,
            fc_x: fcx,
            fc_a: fca,
            fd_x: Some(fdx),
            fd_a: Some(fda),
            cdpl_c_x: None,
            cdpl_c_a: None,
            cdpl_d_x: None,
            cdpl_d_a: None,
            act_logits: a,
            act_logits_aug: aa,
            dom_logits: Some(dl),
            dom_logits_aug: Some(dla),
        }
    }

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_closed_form() {
        let mut g = Graph::new();
        let b = 3;
        let z = |k: usize| Tensor::zeros(&[b, k]);
        let f = || Tensor::zeros(&[b, 2]);
        let out = outputs(&mut g, [f(), f()], [f(), f()], [z(19), z(19), z(4), z(4)]);
        let l = loss_cls(&mut g, &out, &[0, 5, 18], &[0, 1, 3], ClsMode::Default).unwrap();
        let expected = 2.0 * 19f64.ln() + 4f64.ln();
        assert!((g.scalar(l) - expected).abs() < 1e-12);
        assert!((expected - 7.276).abs() < 1e-3);
        let l = loss_cls(&mut g, &out, &[0, 5, 18], &[0, 1, 3], ClsMode::AllPairs).unwrap();
        assert!((g.scalar(l) - expected - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_pairs_sum_to_four() {
        let mut g = Graph::new();
        let e = || m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let z = || Tensor::zeros(&[2, 2]);
        let out = outputs(&mut g, [e(), e()], [e(), e()], [z(), z(), z(), z()]);
        let l = loss_ind(&mut g, &out, PairMeasure::Hsic).unwrap();
        assert!((g.scalar(l) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_noncausal_rows_are_independent() {
        let mut g = Graph::new();
        let c = || m(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let r = || m(3, 2, &[0.3, -1.0, 2.0, 0.5, -0.7, 0.1]);
        let z = || Tensor::zeros(&[3, 2]);
        let out = outputs(&mut g, [r(), r()], [c(), c()], [z(), z(), z(), z()]);
        let l = loss_ind(&mut g, &out, PairMeasure::Hsic).unwrap();
        assert!(g.scalar(l).abs() < 1e-12);
    }

    #[test]
    fn consistency_matches_scalar_oracle() {
        let mut g = Graph::new();
        let fcx = [0.5, -1.0, 2.0, 0.0];
        let fca = [0.0, -1.5, 1.0, 1.0];
        let fdx = [3.0, 1.0, -2.0, 0.5];
        let fda = [2.5, 1.0, 0.0, 0.5];
        let z = || Tensor::zeros(&[2, 2]);
        let out = outputs(
            &mut g,
            [m(2, 2, &fcx), m(2, 2, &fca)],
            [m(2, 2, &fdx), m(2, 2, &fda)],
            [z(), z(), z(), z()],
        );
        let l1 = |a: &[f64], b: &[f64], r: usize| -> f64 {
            (0..2).map(|j| (a[r * 2 + j] - b[r * 2 + j]).abs()).sum()
        };
        let nc: Vec<f64> = (0..2).map(|r| l1(&fdx, &fda, r)).collect();
        let margin = nc.iter().cloned().fold(0.0, f64::max);
        let mut sym = 0.0;
        let mut lit = 0.0;
        for r in 0..2 {
            let c = l1(&fcx, &fca, r);
            let hinge = 2.0 * (nc[r] - margin).min(0.0);
            sym += (c + c - hinge) / 2.0;
            lit += (c - c - hinge) / 2.0;
        }
        let sym_cfg = LossConfig::default();
        let lit_cfg = LossConfig {
            con_mode: ConMode::Literal,
            ..LossConfig::default()
        };
        let (v, mg) = loss_con(&mut g, &out, &sym_cfg).unwrap();
        assert_eq!(mg, margin);
        assert!((g.scalar(v) - sym).abs() < 1e-12);
        let (v, _) = loss_con(&mut g, &out, &lit_cfg).unwrap();
        assert!((g.scalar(v) - lit).abs() < 1e-12);
        let grad_cfg = LossConfig {
            margin_grad: true,
            ..LossConfig::default()
        };
        let (v, _) = loss_con(&mut g, &out, &grad_cfg).unwrap();
        assert!((g.scalar(v) - sym).abs() < 1e-12);
    }

    #[test]
    fn identical_views_leave_only_the_hinge() {
        let mut g = Graph::new();
        let f = || m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let z = || Tensor::zeros(&[2, 2]);
        let out = outputs(&mut g, [f(), f()], [f(), f()], [z(), z(), z(), z()]);
        let (v, margin) = loss_con(&mut g, &out, &LossConfig::default()).unwrap();
        assert_eq!(margin, 0.0);
        assert_eq!(g.scalar(v), 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut g = Graph::new();
        let f = || m(2, 2, &[1.0, 0.5, -3.0, 4.0]);
        let h = || m(2, 2, &[0.2, 2.0, 1.0, -1.0]);
        let l = || m(2, 2, &[0.3, -0.3, 1.0, 0.0]);
        let out = outputs(&mut g, [f(), h()], [h(), f()], [l(), l(), l(), l()]);
        let cfg = LossConfig::default();
        let obj = total_loss(&mut g, &out, &[0, 1], &[1, 0], &cfg).unwrap();
        let b = obj.breakdown;
        assert_eq!(b.total, b.l_cls + b.alpha * b.l_ind + b.beta * b.l_con);
        assert!((g.scalar(obj.total) - b.total).abs() < 1e-12);

        let cfg = LossConfig {
            weights: LossWeights { alpha: 0.0, beta: 0.0 },
            ..LossConfig::default()
        };
        let obj = total_loss(&mut g, &out, &[0, 1], &[1, 0], &cfg).unwrap();
        assert_eq!(g.scalar(obj.total), obj.breakdown.l_cls);
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(LossWeights { alpha: -1.0, beta: 0.0 }.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [ConMode::SymmetricSum, ConMode::Literal] {
            assert_eq!(m.to_string().parse::<ConMode>().unwrap(), m);
        }
        assert_eq!("all-pairs".parse::<ClsMode>().unwrap(), ClsMode::AllPairs);
        assert!("both".parse::<ClsMode>().is_err());
    }
}
