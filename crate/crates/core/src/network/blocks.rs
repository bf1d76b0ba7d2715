use std::collections::BTreeMap;

use super::{branch_shares, NetworkConfig, ParameterSet, Topology, BN_EPS, BN_MOMENTUM};
use crate::autodiff::{BatchNormMode, Graph, RunningStats, Tensor, Var};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Parameter name to graph node.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn new(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("parameter {name} is not bound")))
    }

    pub fn maybe(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Records every parameter as a leaf; `trainable` decides which ones track gradients.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParameterSet<T>, trainable: impl Fn(&str) -> bool) -> Bindings {
    Bindings::new(params.params.iter().map(|(name, t)| {
        let v = g.leaf(t.clone().with_requires_grad(trainable(name)));
        (name.clone(), v)
    }))
}

pub enum BnState<'a, T> {
    /// Batch statistics, folded into the running estimates.
    Train(&'a mut BTreeMap<String, RunningStats<T>>),
    /// As `Train`, except norms whose prefix satisfies the predicate use and
    /// keep their running estimates (frozen blocks stay a fixed function).
    TrainExcept(&'a mut BTreeMap<String, RunningStats<T>>, fn(&str) -> bool),
    Infer(&'a BTreeMap<String, RunningStats<T>>),
}

/// Everything a block needs to record itself on a graph.
pub struct Ctx<'a, T> {
    pub graph: &'a mut Graph<T>,
    pub vars: &'a Bindings,
    pub bn: BnState<'a, T>,
    pub slope: T,
}

impl<T: Scalar> Ctx<'_, T> {
    fn conv(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let w = self.vars.get(&format!("{name}.weight"))?;
        let b = self.vars.maybe(&format!("{name}.bias"));
        self.graph.conv1d(x, w, b, stride, padding)
    }

    fn conv_t(&mut self, name: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
        let w = self.vars.get(&format!("{name}.weight"))?;
        let b = self.vars.maybe(&format!("{name}.bias"));
        self.graph.conv_transpose1d(x, w, b, stride, padding)
    }

    fn batchnorm(&mut self, name: &str, x: Var) -> Result<Var> {
        let gamma = self.vars.get(&format!("{name}.gamma"))?;
        let beta = self.vars.get(&format!("{name}.beta"))?;
        let missing = || Error::Usage(format!("no running statistics for {name}"));
        let eps = T::lit(BN_EPS);
        let mode = match &mut self.bn {
            BnState::Train(stats) => BatchNormMode::Train {
                running: stats.get_mut(name).ok_or_else(missing)?,
                momentum: T::lit(BN_MOMENTUM),
            },
            BnState::TrainExcept(stats, frozen) if frozen(name) => BatchNormMode::Infer {
                running: stats.get(name).ok_or_else(missing)?,
            },
            BnState::TrainExcept(stats, _) => BatchNormMode::Train {
                running: stats.get_mut(name).ok_or_else(missing)?,
                momentum: T::lit(BN_MOMENTUM),
            },
            BnState::Infer(stats) => BatchNormMode::Infer {
                running: stats.get(name).ok_or_else(missing)?,
            },
        };
        self.graph.batchnorm1d(x, gamma, beta, eps, mode)
    }

    fn lrelu(&mut self, x: Var) -> Var {
        self.graph.leaky_relu(x, self.slope)
    }

    fn dims(&self, x: Var) -> Result<(usize, usize, usize)> {
        self.graph.value(x).dims3()
    }
}

/// Widens to `ensemble_channels` with a kernel-7 conv, then averages back to
/// one channel with a learned 1x1 conv.
pub fn ensemble_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
    let (_, c, _) = ctx.dims(x)?;
    if c != 1 {
        return Err(dim_err!("ensemble block expects 1 channel, got {c}"));
    }
    let h = ctx.conv("ens.conv", x, 1, 3)?;
    ctx.conv("ens.avg", h, 1, 0)
}

/// Lifts the single-channel signal to the base width.
pub fn stem_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
    let h = ctx.conv("stem", x, 1, 1)?;
    Ok(ctx.lrelu(h))
}

/// Parallel same-padded convs, concatenated, plus the input, then leaky ReLU.
pub fn ir_block_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, prefix: &str, x: Var, kernels: &[usize]) -> Result<Var> {
    let (_, c, _) = ctx.dims(x)?;
    if c < kernels.len() {
        return Err(Error::Config(format!(
            "{prefix}: {c} channels cannot feed {} branches",
            kernels.len()
        )));
    }
    let mut merged: Option<Var> = None;
    for (k, _) in kernels.iter().zip(branch_shares(c, kernels.len())) {
        let y = ctx.conv(&format!("{prefix}.branch{k}"), x, 1, k / 2)?;
        merged = Some(match merged {
            None => y,
            Some(m) => ctx.graph.concat_channels(m, y)?,
        });
    }
    let merged = merged.expect("at least one branch");
    let sum = ctx.graph.add(merged, x)?;
    Ok(ctx.lrelu(sum))
}

/// `[B, C, L] -> [B, 2C, L/2]`.
pub fn contraction_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, prefix: &str, x: Var, kernels: &[usize]) -> Result<Var> {
    let (_, _, l) = ctx.dims(x)?;
    if l % 2 != 0 {
        return Err(dim_err!("{prefix}: odd length {l}"));
    }
    let h = ctx.conv(&format!("{prefix}.conv"), x, 1, 1)?;
    let h = ctx.batchnorm(&format!("{prefix}.bn"), h)?;
    let h = ctx.lrelu(h);
    let h = ctx.conv(&format!("{prefix}.down"), h, 2, 1)?;
    ir_block_forward(ctx, &format!("{prefix}.ir"), h, kernels)
}

/// `[B, C, L]` with skip `[B, C/2, 2L]` -> `[B, C/2, 2L]`.
pub fn expansion_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: Var,
    skip: Var,
    kernels: &[usize],
) -> Result<Var> {
    let (b, c, l) = ctx.dims(x)?;
    let want = [b, c / 2, 2 * l];
    if c % 2 != 0 || ctx.graph.value(skip).shape() != want {
        return Err(dim_err!(
            "{prefix}: skip {:?} does not match {want:?}",
            ctx.graph.value(skip).shape()
        ));
    }
    let h = ctx.conv(&format!("{prefix}.conv"), x, 1, 1)?;
    let h = ctx.batchnorm(&format!("{prefix}.bn"), h)?;
    let h = ctx.lrelu(h);
    let h = ctx.conv_t(&format!("{prefix}.up"), h, 2, 1)?;
    let h = ir_block_forward(ctx, &format!("{prefix}.ir"), h, kernels)?;
    let cat = ctx.graph.concat_channels(h, skip)?;
    ctx.conv(&format!("{prefix}.merge"), cat, 1, 0)
}

/// Two kernel-3 convs with a leaky ReLU between, then a 1x1 projection to one channel.
pub fn denoising_forward<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
    let h = ctx.conv("db.conv1", x, 1, 1)?;
    let h = ctx.lrelu(h);
    let h = ctx.conv("db.conv2", h, 1, 1)?;
    ctx.conv("db.out", h, 1, 0)
}

/// Intermediate shapes recorded by [`network_forward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardTrace {
    pub encoder: Vec<Vec<usize>>,
    pub decoder: Vec<Vec<usize>>,
    /// `(expansion block, encoder stage, skip shape)` as actually wired.
    pub skips: Vec<(usize, usize, Vec<usize>)>,
}

/// Full network on `[B, 1, input_length]`, returning `[B, 1, input_length]`.
pub fn network_forward<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    topo: &Topology,
    x: Var,
    mut trace: Option<&mut ForwardTrace>,
) -> Result<Var> {
    let cfg = &topo.config;
    let (_, c, l) = ctx.dims(x)?;
    if c != 1 || l != cfg.input_length {
        return Err(dim_err!("network expects [B, 1, {}], got {c} x {l}", cfg.input_length));
    }
    let (left, right) = cfg.padding();
    let h = ctx.graph.pad_length(x, left, right)?;
    let h = ensemble_forward(ctx, h)?;
    let mut stages = vec![stem_forward(ctx, h)?];
    for i in 1..=cfg.depth {
        let prev = stages[i - 1];
        stages.push(contraction_forward(ctx, &format!("cb{i}"), prev, &cfg.ir_kernel_sizes)?);
    }
    if let Some(t) = trace.as_deref_mut() {
        t.encoder = stages.iter().map(|v| ctx.graph.value(*v).shape().to_vec()).collect();
    }
    let mut h = stages[cfg.depth];
    for j in 1..=cfg.depth {
        let stage = topo.skip_for(j);
        let skip = stages[stage];
        h = expansion_forward(ctx, &format!("eb{j}"), h, skip, &cfg.ir_kernel_sizes)?;
        if let Some(t) = trace.as_deref_mut() {
            t.skips.push((j, stage, ctx.graph.value(skip).shape().to_vec()));
            t.decoder.push(ctx.graph.value(h).shape().to_vec());
        }
    }
    let y = denoising_forward(ctx, h)?;
    ctx.graph.crop_length(y, left, cfg.input_length)
}

/// Inference on a batch of equal-length normalized signals.
pub fn bpnet_forward_batch<T: Scalar>(
    params: &ParameterSet<T>,
    config: &NetworkConfig,
    signals: &[&[T]],
) -> Result<Vec<Vec<T>>> {
    let topo = Topology::new(config)?;
    let len = config.input_length;
    if signals.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(s) = signals.iter().find(|s| s.len() != len) {
        return Err(dim_err!("input has {} samples, network expects {len}", s.len()));
    }
    let data: Vec<T> = signals.iter().flat_map(|s| s.iter().copied()).collect();
    let mut g = Graph::new();
    let vars = bind(&mut g, params, |_| false);
    let x = g.leaf(Tensor::new(&[signals.len(), 1, len], data)?);
    let mut ctx = Ctx {
        graph: &mut g,
        vars: &vars,
        bn: BnState::Infer(&params.running),
        slope: T::lit(config.leaky_slope),
    };
    let y = network_forward(&mut ctx, &topo, x, None)?;
    Ok(g.value(y).data().chunks(len).map(<[T]>::to_vec).collect())
}

/// Inference on one normalized signal of `input_length` samples.
pub fn bpnet_forward<T: Scalar>(params: &ParameterSet<T>, config: &NetworkConfig, ppg: &[T]) -> Result<Vec<T>> {
    Ok(bpnet_forward_batch(params, config, &[ppg])?.remove(0))
}
