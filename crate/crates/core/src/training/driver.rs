use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, lr_at, mae_loss, OptimizerState, TrainPlan, UpdatePolicy};
use crate::autodiff::{Graph, Tensor};
use crate::dataset::{fit_normalization, split_folds, EpisodeSet, NormalizationSpec, SignalKind};
use crate::error::{dim_err, Error, Result};
use crate::network::{
    bind, bpnet_forward_batch, build_bpnet, is_encoder, network_forward, BnState, Ctx, NetworkConfig, ParameterSet,
    Topology,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Pretrain,
    /// Fine-tuning with the encoder frozen.
    Frozen,
    /// Fine-tuning with the encoder at a scaled learning rate.
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Pretrain => "pretrain",
            Phase::Frozen => "frozen",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub fold: Option<usize>,
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    /// Mean MAE over the epoch's batches, normalized units.
    pub train_loss: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_mae_mmhg: f64,
    pub wall_time: Duration,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct KfoldOutcome<T> {
    pub best: ParameterSet<T>,
    pub best_fold: usize,
    /// Normalization fitted on the best fold's training split.
    pub norm: NormalizationSpec,
    pub reports: Vec<FoldReport>,
}

/// Inputs and targets of equal length, already normalized.
struct Pairs<T> {
    inputs: Vec<Vec<T>>,
    targets: Vec<Vec<T>>,
}

impl<T: Scalar> Pairs<T> {
    fn from_set(set: &EpisodeSet, target: SignalKind, length: usize) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Usage("no training episodes".into()));
        }
        let conv = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        let mut inputs = Vec::with_capacity(set.len());
        let mut targets = Vec::with_capacity(set.len());
        for (i, e) in set.episodes.iter().enumerate() {
            if e.len() != length {
                return Err(dim_err!(
                    "episode {i} has {} samples, network expects {length}",
                    e.len()
                ));
            }
            inputs.push(conv(&e.ppg));
            targets.push(conv(match target {
                SignalKind::Ppg => &e.ppg,
                SignalKind::Abp => &e.abp,
            }));
        }
        Ok(Self { inputs, targets })
    }

    fn refs(&self) -> (Vec<&[T]>, Vec<&[T]>) {
        (
            self.inputs.iter().map(Vec::as_slice).collect(),
            self.targets.iter().map(Vec::as_slice).collect(),
        )
    }
}

fn stack<T: Scalar>(rows: &[&[T]]) -> Result<Tensor<T>> {
    let len = rows.first().map_or(0, |r| r.len());
    Tensor::new(
        &[rows.len(), 1, len],
        rows.iter().flat_map(|r| r.iter().copied()).collect(),
    )
}

/// One Adam step on one batch. Returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    topo: &Topology,
    state: &mut OptimizerState<T>,
    inputs: &[&[T]],
    targets: &[&[T]],
    policy: UpdatePolicy,
    lr: f64,
) -> Result<f64> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(dim_err!("{} inputs for {} targets", inputs.len(), targets.len()));
    }
    let mut g = Graph::new();
    let vars = bind(&mut g, params, |n| policy.trainable(n));
    let x = g.leaf(stack(inputs)?);
    let y = g.leaf(stack(targets)?);
    let bn = match policy {
        UpdatePolicy::FreezeEncoder => BnState::TrainExcept(&mut params.running, is_encoder),
        _ => BnState::Train(&mut params.running),
    };
    let mut ctx = Ctx {
        graph: &mut g,
        vars: &vars,
        bn,
        slope: T::lit(topo.config.leaky_slope),
    };
    let pred = network_forward(&mut ctx, topo, x, None)?;
    let loss = mae_loss(&mut g, pred, y)?;
    let loss_value = g.value(loss).data()[0].as_f64();
    if !loss_value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {loss_value}")));
    }
    g.backward(loss)?;
    let grads: BTreeMap<String, Vec<T>> = vars
        .iter()
        .filter(|(name, _)| policy.trainable(name))
        .map(|(name, v)| {
            let n = g.value(v).numel();
            let grad = g.grad(v).map_or_else(|| vec![T::zero(); n], <[T]>::to_vec);
            (name.to_owned(), grad)
        })
        .collect();
    adam_step(params, &grads, state, policy, lr)?;
    Ok(loss_value)
}

/// Mean absolute error of inference-mode predictions, normalized units.
pub fn validation_mae<T: Scalar>(
    params: &ParameterSet<T>,
    config: &NetworkConfig,
    inputs: &[&[T]],
    targets: &[&[T]],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (xs, ys) in inputs.chunks(16).zip(targets.chunks(16)) {
        let preds = bpnet_forward_batch(params, config, xs)?;
        for (p, y) in preds.iter().zip(ys) {
            total += p
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (*a - *b).abs().as_f64())
                .sum::<f64>();
            count += p.len();
        }
    }
    if count == 0 {
        return Err(Error::Usage("empty validation set".into()));
    }
    Ok(total / count as f64)
}

/// Epoch loop over `schedule` (global epoch indices for the lr schedule).
/// Batches are reshuffled each epoch from `rng`.
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub fn run_epochs<T: Scalar>(
    params: &mut ParameterSet<T>,
    topo: &Topology,
    state: &mut OptimizerState<T>,
    plan: &TrainPlan,
    schedule: Range<usize>,
    policy: UpdatePolicy,
    phase: Phase,
    rng: &mut ChaCha8Rng,
    data: (&[&[T]], &[&[T]]),
    validation: Option<(&[&[T]], &[&[T]])>,
    hook: &mut dyn FnMut(&EpochRecord, &ParameterSet<T>),
) -> Result<Vec<EpochRecord>> {
    let (inputs, targets) = data;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut records = Vec::with_capacity(schedule.len());
    for epoch in schedule {
        let lr = lr_at(epoch, plan);
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(plan.batch_size) {
            let xs: Vec<&[T]> = batch.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<&[T]> = batch.iter().map(|&i| targets[i]).collect();
            loss_sum += train_step(params, topo, state, &xs, &ys, policy, lr)? * batch.len() as f64;
        }
        let val_mae = match validation {
            Some((vx, vy)) => Some(validation_mae(params, &topo.config, vx, vy)?),
            None => None,
        };
        let rec = EpochRecord {
            fold: None,
            phase,
            epoch,
            lr,
            train_loss: loss_sum / inputs.len() as f64,
            val_mae,
        };
        log::debug!(
            "{} epoch {} lr {:e} loss {:.6}",
            phase.name(),
            epoch,
            lr,
            rec.train_loss
        );
        hook(&rec, params);
        records.push(rec);
    }
    Ok(records)
}

fn pretrain_logged<T: Scalar>(
    config: &NetworkConfig,
    data: &EpisodeSet,
    plan: &TrainPlan,
    seed: u64,
) -> Result<(ParameterSet<T>, Vec<EpochRecord>)> {
    plan.validate()?;
    let pairs = Pairs::<T>::from_set(data, SignalKind::Ppg, config.input_length)?;
    let (topo, mut params) = build_bpnet::<T>(config, seed)?;
    let mut state = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys) = pairs.refs();
    let log = run_epochs(
        &mut params,
        &topo,
        &mut state,
        plan,
        0..plan.ssl.pretrain_epochs,
        UpdatePolicy::All,
        Phase::Pretrain,
        &mut rng,
        (&xs, &ys),
        None,
        &mut |_, _| {},
    )?;
    params.encoder_tags = params.encoder_names();
    Ok((params, log))
}

/// Trains the network to reproduce its (normalized) PPG input and tags the
/// encoder parameters for reuse.
pub fn pretrain_ssl<T: Scalar>(
    config: &NetworkConfig,
    data: &EpisodeSet,
    plan: &TrainPlan,
    seed: u64,
) -> Result<ParameterSet<T>> {
    Ok(pretrain_logged(config, data, plan, seed)?.0)
}

/// Fine-tunes a pretrained network on PPG -> ABP: the first
/// `plan.ssl.freeze_epochs` epochs with the encoder frozen, the rest with the
/// encoder at `lr * plan.ssl.finetune_lr_scale`.
pub fn finetune<T: Scalar>(
    pretrained: &ParameterSet<T>,
    config: &NetworkConfig,
    data: &EpisodeSet,
    plan: &TrainPlan,
    seed: u64,
) -> Result<ParameterSet<T>> {
    finetune_observed(pretrained, config, data, plan, seed, None, &mut |_, _| {}).map(|(p, _)| p)
}

/// [`finetune`] with optional validation data and a per-epoch observer.
#[allow(clippy::type_complexity)]
pub fn finetune_observed<T: Scalar>(
    pretrained: &ParameterSet<T>,
    config: &NetworkConfig,
    data: &EpisodeSet,
    plan: &TrainPlan,
    seed: u64,
    validation: Option<&EpisodeSet>,
    hook: &mut dyn FnMut(&EpochRecord, &ParameterSet<T>),
) -> Result<(ParameterSet<T>, Vec<EpochRecord>)> {
    plan.validate()?;
    let (topo, template) = build_bpnet::<T>(config, 0)?;
    let layout_matches = template.params.len() == pretrained.params.len()
        && template
            .params
            .iter()
            .all(|(k, t)| pretrained.params.get(k).is_some_and(|p| p.shape() == t.shape()));
    if !layout_matches {
        return Err(Error::Usage(
            "pretrained parameters do not match the network config".into(),
        ));
    }
    if pretrained.encoder_tags.is_empty() || pretrained.encoder_tags != template.encoder_names() {
        return Err(Error::Usage(
            "pretrained parameters lack a matching encoder tag set".into(),
        ));
    }
    let pairs = Pairs::<T>::from_set(data, SignalKind::Abp, config.input_length)?;
    let val = validation
        .map(|v| Pairs::<T>::from_set(v, SignalKind::Abp, config.input_length))
        .transpose()?;
    let (xs, ys) = pairs.refs();
    let val_refs = val.as_ref().map(Pairs::refs);
    let val_arg = val_refs.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));

    let mut params = pretrained.clone();
    let mut state = OptimizerState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = plan.ssl.freeze_epochs.min(plan.epochs);
    let mut log = run_epochs(
        &mut params,
        &topo,
        &mut state,
        plan,
        0..split,
        UpdatePolicy::FreezeEncoder,
        Phase::Frozen,
        &mut rng,
        (&xs, &ys),
        val_arg,
        hook,
    )?;
    log.extend(run_epochs(
        &mut params,
        &topo,
        &mut state,
        plan,
        split..plan.epochs,
        UpdatePolicy::ScaleEncoder(plan.ssl.finetune_lr_scale),
        Phase::Finetune,
        &mut rng,
        (&xs, &ys),
        val_arg,
        hook,
    )?);
    Ok((params, log))
}

/// Index of the smallest value; ties go to the lowest index and NaN never wins.
pub fn select_best(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

fn train_fold<T: Scalar>(
    data: &EpisodeSet,
    config: &NetworkConfig,
    plan: &TrainPlan,
    seed: u64,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<(ParameterSet<T>, NormalizationSpec, FoldReport)> {
    let started = Instant::now();
    let norm = fit_normalization(data, train_idx)?;
    let mut train = data.subset(train_idx);
    train.norm = Some(norm);
    let train = train.normalized()?;
    let mut val = data.subset(test_idx);
    val.norm = Some(norm);
    let val = val.normalized()?;

    let (params, mut log) = if plan.ssl.enabled {
        let (pre, mut log) = pretrain_logged::<T>(config, &train, plan, seed)?;
        let (p, tail) = finetune_observed(&pre, config, &train, plan, seed, Some(&val), &mut |_, _| {})?;
        log.extend(tail);
        (p, log)
    } else {
        let pairs = Pairs::<T>::from_set(&train, SignalKind::Abp, config.input_length)?;
        let vpairs = Pairs::<T>::from_set(&val, SignalKind::Abp, config.input_length)?;
        let (xs, ys) = pairs.refs();
        let (vx, vy) = vpairs.refs();
        let (topo, mut params) = build_bpnet::<T>(config, seed)?;
        let mut state = OptimizerState::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = run_epochs(
            &mut params,
            &topo,
            &mut state,
            plan,
            0..plan.epochs,
            UpdatePolicy::All,
            Phase::Train,
            &mut rng,
            (&xs, &ys),
            Some((&vx, &vy)),
            &mut |_, _| {},
        )?;
        (params, log)
    };
    for r in &mut log {
        r.fold = Some(fold);
    }
    let vpairs = Pairs::<T>::from_set(&val, SignalKind::Abp, config.input_length)?;
    let (vx, vy) = vpairs.refs();
    let val_mae = validation_mae(&params, config, &vx, &vy)?;
    let report = FoldReport {
        fold,
        train_loss: log.last().map_or(f64::NAN, |r| r.train_loss),
        val_mae,
        val_mae_mmhg: val_mae * norm.abp_std,
        wall_time: started.elapsed(),
        log,
    };
    log::info!(
        "fold {fold}: train loss {:.5}, val MAE {:.5} ({:.3} mmHg)",
        report.train_loss,
        report.val_mae,
        report.val_mae_mmhg
    );
    Ok((params, norm, report))
}

/// One network per contiguous fold, all from the same seed; the fold with the
/// lowest validation MAE wins (ties to the lowest index). Normalization is
/// fitted per fold on its training split only.
pub fn train_kfold<T: Scalar>(
    data: &EpisodeSet,
    config: &NetworkConfig,
    plan: &TrainPlan,
    seed: u64,
) -> Result<KfoldOutcome<T>> {
    plan.validate()?;
    config.validate()?;
    let folds = split_folds(data.len(), plan.folds)?;
    let mut results: Vec<Option<(ParameterSet<T>, NormalizationSpec)>> = Vec::with_capacity(folds.len());
    let mut reports = Vec::with_capacity(folds.len());
    if plan.parallel_folds {
        let outcomes: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = folds
                .iter()
                .enumerate()
                .map(|(i, f)| s.spawn(move || train_fold::<T>(data, config, plan, seed, i, &f.train, &f.test)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("fold thread panicked".into())))
                })
                .collect()
        });
        for o in outcomes {
            let (p, n, r) = o?;
            results.push(Some((p, n)));
            reports.push(r);
        }
    } else {
        let mut best_mae = f64::INFINITY;
        for (i, f) in folds.iter().enumerate() {
            let (p, n, r) = train_fold::<T>(data, config, plan, seed, i, &f.train, &f.test)?;
            // Only the running best is kept; later ties lose.
            if r.val_mae < best_mae || results.iter().all(Option::is_none) {
                best_mae = r.val_mae;
                results.iter_mut().for_each(|s| *s = None);
                results.push(Some((p, n)));
            } else {
                results.push(None);
            }
            reports.push(r);
        }
    }
    let maes: Vec<f64> = reports.iter().map(|r| r.val_mae).collect();
    let best_fold = select_best(&maes).unwrap_or(0);
    let (best, norm) = results[best_fold]
        .take()
        .ok_or_else(|| Error::Consistency("best fold parameters were discarded".into()))?;
    Ok(KfoldOutcome {
        best,
        best_fold,
        norm,
        reports,
    })
}

pub const LOG_HEADER: &str = "fold\tphase\tepoch\tlr\ttrain_loss\tval_mae";

/// Tab-separated training log, one row per epoch.
pub fn write_log<'a>(out: &mut impl Write, records: impl IntoIterator<Item = &'a EpochRecord>) -> Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in records {
        let fold = r.fold.map(|f| f.to_string()).unwrap_or_default();
        let val = r.val_mae.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{fold}\t{}\t{}\t{}\t{}\t{val}",
            r.phase.name(),
            r.epoch,
            r.lr,
            r.train_loss
        )?;
    }
    Ok(())
}
