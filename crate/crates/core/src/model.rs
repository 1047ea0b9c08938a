//! Early-forking two-branch network.
//!
//! ```text
//!            ┌─ f_c ─ flatten ─ Fc ─ g_c ─ activity logits
//! x ─ f_b ─ ┤
//!            └─ f_d ─ flatten ─ Fd ─ g_d ─ domain logits
//! ```
//!
//! `f_b`, `f_c` and `f_d` are each conv → ReLU → max-pool. During training the
//! base map is also restyled (see [`crate::ids`]) and both branches run on the
//! restyled map too. A projection head (FC → BN → ReLU → FC) per branch feeds
//! the consistency loss. Inference uses `g_c ∘ f_c ∘ f_b` only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::StyleAugment;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{conv_out_width, pool_out_width, BN_MOMENTUM};
use crate::nn::{Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

/// Conv → ReLU → max-pool stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, pool: usize) -> Self {
        ConvSpec {
            filters,
            kernel,
            stride: 1,
            pool,
        }
    }

    fn out_width(&self, w: usize, stage: &str) -> Result<usize> {
        let stage_err = |e: Error| Error::InvalidArgument(format!("{stage} stage: {e}"));
        let conv = conv_out_width(w, self.kernel, self.stride).map_err(stage_err)?;
        let pooled = pool_out_width(conv, self.pool).map_err(stage_err)?;
        if pooled == 0 || self.filters == 0 {
            return Err(Error::InvalidArgument(format!(
                "{stage} stage: input width {w} leaves no output (kernel {}, stride {}, pool {}, filters {})",
                self.kernel, self.stride, self.pool, self.filters
            )));
        }
        Ok(pooled)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub width: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub base: ConvSpec,
    pub branch: ConvSpec,
    pub cdpl_hidden: usize,
}

pub const PRESETS: [&str; 5] = ["dsads", "uschad", "pamap2", "ucihar", "synthetic"];

impl ArchConfig {
    /// Named architecture preset. Data dimensions can be replaced afterwards
    /// with [`ArchConfig::with_data`].
    pub fn preset(name: &str) -> Result<Self> {
        let default_base = ConvSpec::new(16, 9, 2);
        let default_branch = ConvSpec::new(32, 9, 2);
        let cfg = match name {
            "dsads" => ArchConfig {
                in_channels: 45,
                width: 125,
                num_classes: 19,
                num_domains: 4,
                base: default_base,
                branch: default_branch,
                cdpl_hidden: 256,
            },
            // 200 → conv 25 → 176 → pool 3 → 58
            "uschad" => ArchConfig {
                in_channels: 6,
                width: 200,
                num_classes: 12,
                num_domains: 4,
                base: ConvSpec::new(32, 25, 3),
                branch: default_branch,
                cdpl_hidden: 256,
            },
            "pamap2" => ArchConfig {
                in_channels: 27,
                width: 200,
                num_classes: 12,
                num_domains: 4,
                base: default_base,
                branch: default_branch,
                cdpl_hidden: 256,
            },
            "ucihar" => ArchConfig {
                in_channels: 6,
                width: 50,
                num_classes: 6,
                num_domains: 4,
                base: default_base,
                branch: default_branch,
                cdpl_hidden: 128,
            },
            "synthetic" => ArchConfig {
                in_channels: 3,
                width: 32,
                num_classes: 4,
                num_domains: 4,
                base: ConvSpec::new(16, 5, 2),
                branch: ConvSpec::new(8, 5, 2),
                cdpl_hidden: 32,
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown architecture preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn with_data(
        mut self,
        in_channels: usize,
        width: usize,
        num_classes: usize,
        num_domains: usize,
    ) -> Self {
        self.in_channels = in_channels;
        self.width = width;
        self.num_classes = num_classes;
        self.num_domains = num_domains;
        self
    }

    pub fn base_width(&self) -> Result<usize> {
        self.base.out_width(self.width, "base")
    }

    pub fn branch_width(&self) -> Result<usize> {
        self.branch.out_width(self.base_width()?, "branch")
    }

    /// Flattened branch feature dimension `D_feat`.
    pub fn feature_dim(&self) -> Result<usize> {
        Ok(self.branch.filters * self.branch_width()?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input channels", self.in_channels),
            ("window width", self.width),
            ("number of classes", self.num_classes),
            ("number of domains", self.num_domains),
            ("projection hidden width", self.cdpl_hidden),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        self.feature_dim().map(|_| ())
    }
}

/// Structural switches used by the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Build `f_d` and `g_d`.
    pub noncausal_branch: bool,
    /// Build projection heads; without them the consistency loss compares raw
    /// branch features.
    pub cdpl: bool,
    /// One projection head for both branches.
    pub cdpl_shared: bool,
    /// `false` makes `f_d` reuse `f_c`'s parameters.
    pub early_fork: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            noncausal_branch: true,
            cdpl: true,
            cdpl_shared: false,
            early_fork: true,
        }
    }
}

impl ModelOptions {
    /// `g_c ∘ f_c ∘ f_b` only.
    pub fn erm() -> Self {
        ModelOptions {
            noncausal_branch: false,
            cdpl: false,
            cdpl_shared: false,
            early_fork: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LinIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Projection {
    prefix: String,
    fc1: LinIds,
    gamma: ParamId,
    beta: ParamId,
    fc2: LinIds,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

/// Parameter-id prefixes that only matter during training.
pub const TRAINING_ONLY_PREFIXES: [&str; 4] = ["branch_d.", "head_d.", "cdpl_c.", "cdpl_d."];
const INFERENCE_PREFIXES: [&str; 3] = ["base.", "branch_c.", "head_c."];

pub struct CaudgNet {
    pub config: ArchConfig,
    pub options: ModelOptions,
    pub store: ParamStore,
    base: ConvIds,
    branch_c: ConvIds,
    head_c: LinIds,
    branch_d: Option<ConvIds>,
    head_d: Option<LinIds>,
    cdpl_c: Option<Projection>,
    cdpl_d: Option<Projection>,
}

/// Graph handles for one training forward pass.
#[derive(Clone, Debug)]
pub struct BranchOutputs {
    pub batch: usize,
    pub base: Var,
    pub base_aug: Var,
    /// False when the augmentation was the identity; the `_a` handles then
    /// alias the originals.
    pub augmented: bool,
    pub fc_x: Var,
    pub fc_a: Var,
    pub fd_x: Option<Var>,
    pub fd_a: Option<Var>,
    pub cdpl_c_x: Option<Var>,
    pub cdpl_c_a: Option<Var>,
    pub cdpl_d_x: Option<Var>,
    pub cdpl_d_a: Option<Var>,
    pub act_logits: Var,
    pub act_logits_aug: Var,
    pub dom_logits: Option<Var>,
    pub dom_logits_aug: Option<Var>,
}

/// Caches one graph leaf per parameter.
struct Binder<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Binder<'a> {
    fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            vars: vec![None; store.len()],
        }
    }

    fn get(&mut self, g: &mut Graph, id: ParamId) -> Var {
        *self.vars[id.index()].get_or_insert_with(|| g.param(self.store, id))
    }
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn add_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_in: usize,
    spec: &ConvSpec,
) -> Result<ConvIds> {
    let w = he_normal(rng, &[spec.filters, c_in, 1, spec.kernel], c_in * spec.kernel);
    Ok(ConvIds {
        w: store.add(format!("{prefix}.conv.w"), w)?,
        b: store.add(format!("{prefix}.conv.b"), Tensor::zeros(&[spec.filters]))?,
    })
}

fn add_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) -> Result<LinIds> {
    Ok(LinIds {
        w: store.add(format!("{name}.w"), he_normal(rng, &[d_out, d_in], d_in))?,
        b: store.add(format!("{name}.b"), Tensor::zeros(&[d_out]))?,
    })
}

fn add_projection(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d: usize,
    hidden: usize,
) -> Result<Projection> {
    let fc1 = add_linear(store, rng, &format!("{prefix}.fc1"), d, hidden)?;
    let gamma = store.add(format!("{prefix}.bn.gamma"), Tensor::full(&[hidden], 1.0))?;
    let beta = store.add(format!("{prefix}.bn.beta"), Tensor::zeros(&[hidden]))?;
    let fc2 = add_linear(store, rng, &format!("{prefix}.fc2"), hidden, d)?;
    Ok(Projection {
        prefix: prefix.to_string(),
        fc1,
        gamma,
        beta,
        fc2,
        running_mean: vec![0.0; hidden],
        running_var: vec![1.0; hidden],
    })
}

impl CaudgNet {
    pub fn build(config: ArchConfig, options: ModelOptions, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let base = add_conv(&mut store, &mut rng, "base", config.in_channels, &config.base)?;
        let c_mid = config.base.filters;
        let branch_c = add_conv(&mut store, &mut rng, "branch_c", c_mid, &config.branch)?;
        let head_c = add_linear(&mut store, &mut rng, "head_c.fc", d, config.num_classes)?;
        let (mut branch_d, mut head_d) = (None, None);
        if options.noncausal_branch {
            if options.early_fork {
                branch_d = Some(add_conv(&mut store, &mut rng, "branch_d", c_mid, &config.branch)?);
            }
            head_d = Some(add_linear(
                &mut store,
                &mut rng,
                "head_d.fc",
                d,
                config.num_domains,
            )?);
        }
        let (mut cdpl_c, mut cdpl_d) = (None, None);
        if options.cdpl {
            cdpl_c = Some(add_projection(&mut store, &mut rng, "cdpl_c", d, config.cdpl_hidden)?);
            if options.noncausal_branch && !options.cdpl_shared {
                cdpl_d = Some(add_projection(&mut store, &mut rng, "cdpl_d", d, config.cdpl_hidden)?);
            }
        }
        Ok(CaudgNet {
            config,
            options,
            store,
            base,
            branch_c,
            head_c,
            branch_d,
            head_d,
            cdpl_c,
            cdpl_d,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim().expect("validated at build")
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (b, c, w) = x.dims4()?;
        if c != self.config.in_channels || w != self.config.width {
            return Err(Error::Shape(format!(
                "model expects [B, {}, 1, {}] windows, got {:?}",
                self.config.in_channels,
                self.config.width,
                x.shape()
            )));
        }
        Ok(b)
    }

    fn conv_stage(
        &self,
        g: &mut Graph,
        p: &mut Binder,
        x: Var,
        ids: ConvIds,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let w = p.get(g, ids.w);
        let b = p.get(g, ids.b);
        let y = g.conv1d(x, w, b, spec.stride)?;
        let y = g.relu(y);
        g.maxpool1d(y, spec.pool)
    }

    fn linear(&self, g: &mut Graph, p: &mut Binder, x: Var, ids: LinIds) -> Result<Var> {
        let w = p.get(g, ids.w);
        let b = p.get(g, ids.b);
        g.linear(x, w, b)
    }

    fn branch(&self, g: &mut Graph, p: &mut Binder, map: Var, ids: ConvIds) -> Result<Var> {
        let y = self.conv_stage(g, p, map, ids, &self.config.branch)?;
        g.flatten(y)
    }

    fn project(
        g: &mut Graph,
        p: &mut Binder,
        proj: &mut Projection,
        x: Var,
        train: bool,
    ) -> Result<Var> {
        let (w1, b1) = (p.get(g, proj.fc1.w), p.get(g, proj.fc1.b));
        let h = g.linear(x, w1, b1)?;
        let (gamma, beta) = (p.get(g, proj.gamma), p.get(g, proj.beta));
        let h = if train {
            let (h, mean, var) = g.batch_norm(h, gamma, beta)?;
            let b = g.value(h).shape()[0] as f64;
            for (r, m) in proj.running_mean.iter_mut().zip(&mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            // running variance tracks the unbiased estimate
            for (r, v) in proj.running_var.iter_mut().zip(&var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * b / (b - 1.0);
            }
            h
        } else {
            g.batch_norm_eval(h, gamma, beta, &proj.running_mean, &proj.running_var)?
        };
        let h = g.relu(h);
        let (w2, b2) = (p.get(g, proj.fc2.w), p.get(g, proj.fc2.b));
        g.linear(h, w2, b2)
    }

    /// Training forward pass on `[B, C_in, 1, W]` windows. `augment` supplies
    /// the restyling of the base map. Projection heads run only when
    /// `with_projections` is set (and the model has them).
    pub fn forward_train(
        &mut self,
        g: &mut Graph,
        x: &Tensor,
        augment: &mut dyn StyleAugment,
        with_projections: bool,
    ) -> Result<BranchOutputs> {
        let batch = self.check_input(x)?;
        let mut cdpl_c = self.cdpl_c.take();
        let mut cdpl_d = self.cdpl_d.take();
        let out = self.forward_train_inner(g, x, batch, augment, with_projections, &mut cdpl_c, &mut cdpl_d);
        self.cdpl_c = cdpl_c;
        self.cdpl_d = cdpl_d;
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_train_inner(
        &self,
        g: &mut Graph,
        x: &Tensor,
        batch: usize,
        augment: &mut dyn StyleAugment,
        with_projections: bool,
        cdpl_c: &mut Option<Projection>,
        cdpl_d: &mut Option<Projection>,
    ) -> Result<BranchOutputs> {
        let mut p = Binder::new(&self.store);
        let xv = g.constant(x.clone());
        let base = self.conv_stage(g, &mut p, xv, self.base, &self.config.base)?;
        let (base_aug, augmented) = match augment.restyle(g.value(base))? {
            Some(affine) => (g.channel_affine(base, affine.scale, &affine.shift)?, true),
            None => (base, false),
        };

        let fc_x = self.branch(g, &mut p, base, self.branch_c)?;
        let fc_a = if augmented {
            self.branch(g, &mut p, base_aug, self.branch_c)?
        } else {
            fc_x
        };
        let act_logits = self.linear(g, &mut p, fc_x, self.head_c)?;
        let act_logits_aug = if augmented {
            self.linear(g, &mut p, fc_a, self.head_c)?
        } else {
            act_logits
        };

        let (mut fd_x, mut fd_a, mut dom_logits, mut dom_logits_aug) = (None, None, None, None);
        if let Some(head_d) = self.head_d {
            let ids = self.branch_d.unwrap_or(self.branch_c);
            let dx = self.branch(g, &mut p, base, ids)?;
            let da = if augmented {
                self.branch(g, &mut p, base_aug, ids)?
            } else {
                dx
            };
            let lx = self.linear(g, &mut p, dx, head_d)?;
            let la = if augmented {
                self.linear(g, &mut p, da, head_d)?
            } else {
                lx
            };
            fd_x = Some(dx);
            fd_a = Some(da);
            dom_logits = Some(lx);
            dom_logits_aug = Some(la);
        }

        let (mut cdpl_c_x, mut cdpl_c_a, mut cdpl_d_x, mut cdpl_d_a) = (None, None, None, None);
        if with_projections {
            if let Some(proj) = cdpl_c.as_mut() {
                cdpl_c_x = Some(Self::project(g, &mut p, proj, fc_x, true)?);
                cdpl_c_a = Some(Self::project(g, &mut p, proj, fc_a, true)?);
            }
            if let (Some(dx), Some(da)) = (fd_x, fd_a) {
                let proj = if cdpl_d.is_some() { cdpl_d.as_mut() } else { cdpl_c.as_mut() };
                if let Some(proj) = proj {
                    cdpl_d_x = Some(Self::project(g, &mut p, proj, dx, true)?);
                    cdpl_d_a = Some(Self::project(g, &mut p, proj, da, true)?);
                }
            }
        }

        Ok(BranchOutputs {
            batch,
            base,
            base_aug,
            augmented,
            fc_x,
            fc_a,
            fd_x,
            fd_a,
            cdpl_c_x,
            cdpl_c_a,
            cdpl_d_x,
            cdpl_d_a,
            act_logits,
            act_logits_aug,
            dom_logits,
            dom_logits_aug,
        })
    }

    /// Applies a projection head to `[B, D_feat]` features outside of a
    /// training pass. `causal` selects the head; `train` selects batch vs.
    /// running statistics.
    pub fn cdpl(&mut self, g: &mut Graph, feature: Var, causal: bool, train: bool) -> Result<Var> {
        let use_d = !causal && self.cdpl_d.is_some();
        let slot = if use_d { &mut self.cdpl_d } else { &mut self.cdpl_c };
        let mut proj = slot
            .take()
            .ok_or_else(|| Error::InvalidArgument("model has no projection head".into()))?;
        let res = {
            let mut p = Binder::new(&self.store);
            Self::project(g, &mut p, &mut proj, feature, train)
        };
        if use_d {
            self.cdpl_d = Some(proj);
        } else {
            self.cdpl_c = Some(proj);
        }
        res
    }

    fn causal_features(&self, g: &mut Graph, x: &Tensor) -> Result<Var> {
        self.check_input(x)?;
        let mut p = Binder::new(&self.store);
        let xv = g.constant(x.clone());
        let base = self.conv_stage(g, &mut p, xv, self.base, &self.config.base)?;
        self.branch(g, &mut p, base, self.branch_c)
    }

    /// `g_c(f_c(f_b(x)))`, as `[B, K]` logits.
    pub fn forward_infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let f = self.causal_features(&mut g, x)?;
        let mut p = Binder::new(&self.store);
        let logits = self.linear(&mut g, &mut p, f, self.head_c)?;
        Ok(g.value(logits).clone())
    }

    /// Causal features `f_c(f_b(x))`, `[B, D_feat]`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let f = self.causal_features(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Parameters on the inference path.
    pub fn inference_params(&self) -> Vec<ParamId> {
        vec![
            self.base.w,
            self.base.b,
            self.branch_c.w,
            self.branch_c.b,
            self.head_c.w,
            self.head_c.b,
        ]
    }

    pub fn inference_param_count(&self) -> usize {
        self.store.count_values(&self.inference_params())
    }

    pub fn param_count(&self) -> usize {
        self.store.iter().map(|p| p.value.len()).sum()
    }

    fn projections(&self) -> impl Iterator<Item = &Projection> {
        self.cdpl_c.iter().chain(self.cdpl_d.iter())
    }

    /// Parameters, batch-norm buffers and architecture in one checkpoint.
    /// `extra` is merged into the metadata.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_params(&self.store);
        for proj in self.projections() {
            let h = proj.running_mean.len();
            ck.buffers.push((
                format!("{}.bn.running_mean", proj.prefix),
                Tensor::new(vec![h], proj.running_mean.clone())?,
            ));
            ck.buffers.push((
                format!("{}.bn.running_var", proj.prefix),
                Tensor::new(vec![h], proj.running_var.clone())?,
            ));
        }
        let mut meta = serde_json::json!({
            "arch": self.config,
            "options": self.options,
        });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra) {
            m.extend(extra);
        }
        ck.meta = meta;
        Ok(ck)
    }

    /// Rebuilds a model from a checkpoint. Training-only parts that were
    /// stripped from the checkpoint are left out of the rebuilt model.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ArchConfig = serde_json::from_value(
            ck.meta
                .get("arch")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no architecture".into()))?,
        )?;
        let mut options: ModelOptions = match ck.meta.get("options") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => ModelOptions::default(),
        };
        if ck.param("head_d.fc.w").is_none() {
            options.noncausal_branch = false;
        }
        if ck.param("cdpl_c.fc1.w").is_none() {
            options.cdpl = false;
        }
        let mut net = CaudgNet::build(config, options, 0)?;
        ck.load_into(&mut net.store, false)?;
        for proj in net.cdpl_c.iter_mut().chain(net.cdpl_d.iter_mut()) {
            if let Some(t) = ck.buffer(&format!("{}.bn.running_mean", proj.prefix)) {
                proj.running_mean = t.data().to_vec();
            }
            if let Some(t) = ck.buffer(&format!("{}.bn.running_var", proj.prefix)) {
                proj.running_var = t.data().to_vec();
            }
        }
        Ok(net)
    }

    /// Drops everything not needed by [`CaudgNet::forward_infer`].
    pub fn strip_for_inference(ck: &mut Checkpoint) {
        ck.remove_prefixed(&TRAINING_ONLY_PREFIXES);
        ck.adam = None;
    }

    /// True for parameter ids on the inference path.
    pub fn is_inference_param(name: &str) -> bool {
        INFERENCE_PREFIXES.iter().any(|p| name.starts_with(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::NoAugment;

    fn toy() -> ArchConfig {
        ArchConfig {
            in_channels: 2,
            width: 16,
            num_classes: 2,
            num_domains: 2,
            base: ConvSpec::new(3, 3, 2),
            branch: ConvSpec::new(2, 3, 1),
            cdpl_hidden: 4,
        }
    }

    fn input(b: usize, cfg: &ArchConfig) -> Tensor {
        let n = b * cfg.in_channels * cfg.width;
        let data = (0..n).map(|i| ((i * 7919) % 23) as f64 / 3.0 - 3.5).collect();
        Tensor::new4(b, cfg.in_channels, cfg.width, data).unwrap()
    }

    #[test]
    fn uschad_base_width_is_58() {
        let cfg = ArchConfig::preset("uschad").unwrap();
        assert_eq!(cfg.base_width().unwrap(), 58);
        assert_eq!(cfg.base.filters, 32);
    }

    #[test]
    fn presets_build() {
        for name in PRESETS {
            let cfg = ArchConfig::preset(name).unwrap();
            assert!(cfg.feature_dim().unwrap() > 0, "{name}");
        }
        assert!(ArchConfig::preset("nope").is_err());
    }

    #[test]
    fn dsads_forward_shapes() {
        let cfg = ArchConfig::preset("dsads").unwrap();
        let mut net = CaudgNet::build(cfg.clone(), ModelOptions::default(), 1).unwrap();
        let x = input(3, &cfg);
        let mut g = Graph::new();
        let out = net.forward_train(&mut g, &x, &mut NoAugment, true).unwrap();
        assert_eq!(g.value(out.act_logits).shape(), &[3, 19]);
        assert_eq!(g.value(out.dom_logits.unwrap()).shape(), &[3, 4]);
        let d = cfg.feature_dim().unwrap();
        assert_eq!(g.value(out.cdpl_d_a.unwrap()).shape(), &[3, d]);
    }

    #[test]
    fn too_narrow_window_names_the_stage() {
        let mut cfg = toy();
        cfg.width = 4;
        let err = CaudgNet::build(cfg, ModelOptions::default(), 0).err().unwrap();
        assert!(err.to_string().contains("branch"), "{err}");
    }

    #[test]
    fn identity_augment_aliases_features() {
        let cfg = toy();
        let mut net = CaudgNet::build(cfg.clone(), ModelOptions::default(), 2).unwrap();
        let mut g = Graph::new();
        let out = net.forward_train(&mut g, &input(4, &cfg), &mut NoAugment, false).unwrap();
        assert!(!out.augmented);
        assert_eq!(g.value(out.fc_x), g.value(out.fc_a));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = CaudgNet::build(toy(), ModelOptions::default(), 5).unwrap();
        let b = CaudgNet::build(toy(), ModelOptions::default(), 5).unwrap();
        assert_eq!(a.store.flat_values(), b.store.flat_values());
    }

    #[test]
    fn infer_matches_training_logits() {
        let cfg = toy();
        let mut net = CaudgNet::build(cfg.clone(), ModelOptions::default(), 3).unwrap();
        let x = input(4, &cfg);
        let mut g = Graph::new();
        let out = net.forward_train(&mut g, &x, &mut NoAugment, true).unwrap();
        assert_eq!(g.value(out.act_logits), &net.forward_infer(&x).unwrap());
    }

    #[test]
    fn inference_path_matches_erm_size() {
        let full = CaudgNet::build(toy(), ModelOptions::default(), 0).unwrap();
        let erm = CaudgNet::build(toy(), ModelOptions::erm(), 0).unwrap();
        assert_eq!(full.inference_param_count(), erm.param_count());
        assert!(full.param_count() > erm.param_count());
    }

    #[test]
    fn shared_trunk_has_no_branch_d() {
        let opts = ModelOptions {
            early_fork: false,
            ..ModelOptions::default()
        };
        let net = CaudgNet::build(toy(), opts, 0).unwrap();
        assert!(net.store.by_name("branch_d.conv.w").is_none());
        assert!(net.store.by_name("head_d.fc.w").is_some());
    }

    #[test]
    fn stripped_checkpoint_still_infers() {
        let cfg = toy();
        let net = CaudgNet::build(cfg.clone(), ModelOptions::default(), 4).unwrap();
        let x = input(2, &cfg);
        let mut ck = net.to_checkpoint(serde_json::json!({})).unwrap();
        CaudgNet::strip_for_inference(&mut ck);
        assert!(ck.params.iter().all(|(n, _)| CaudgNet::is_inference_param(n)));
        let back = CaudgNet::from_checkpoint(&ck).unwrap();
        assert_eq!(back.forward_infer(&x).unwrap(), net.forward_infer(&x).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let net = CaudgNet::build(toy(), ModelOptions::default(), 0).unwrap();
        assert!(net.forward_infer(&Tensor::zeros(&[1, 3, 1, 16])).is_err());
    }
}
