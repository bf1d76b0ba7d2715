//! MAE loss, Adam, the step learning-rate schedule, self-supervised
//! pretraining with freeze-then-unfreeze fine-tuning, and k-fold training.

mod driver;

pub use driver::{
    finetune, finetune_observed, pretrain_ssl, run_epochs, select_best, train_kfold, train_step, validation_mae,
    write_log, EpochRecord, FoldReport, KfoldOutcome, Phase, LOG_HEADER,
};

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Var};
use crate::error::{dim_err, Error, Result};
use crate::network::{is_encoder, ParameterSet};
use crate::scalar::Scalar;

/// Mean of `|pred - target|` over every element.
pub fn mae_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(dim_err!(
            "prediction {:?} vs target {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        ));
    }
    let d = g.sub(pred, target)?;
    let a = g.abs(d);
    g.mean(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments per parameter. Each parameter keeps its own step count, so a
/// parameter that starts training late gets a fresh bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub hyper: AdamHyper,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
    pub steps: BTreeMap<String, u64>,
    /// Number of optimizer calls.
    pub t: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            steps: BTreeMap::new(),
            t: 0,
        }
    }
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self::new(AdamHyper::default())
    }
}

/// Which parameters move, and at what fraction of the base learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdatePolicy {
    All,
    FreezeEncoder,
    /// Encoder at `lr * scale`, everything else at `lr`.
    ScaleEncoder(f64),
}

impl UpdatePolicy {
    pub fn lr_scale(&self, name: &str) -> Option<f64> {
        match (self, is_encoder(name)) {
            (UpdatePolicy::FreezeEncoder, true) => None,
            (UpdatePolicy::ScaleEncoder(s), true) => Some(*s),
            _ => Some(1.0),
        }
    }

    pub fn trainable(&self, name: &str) -> bool {
        self.lr_scale(name).is_some()
    }
}

/// Bias-corrected Adam update of every trainable parameter. Frozen
/// parameters and their moments are left untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut OptimizerState<T>,
    policy: UpdatePolicy,
    lr: f64,
) -> Result<()> {
    let h = state.hyper;
    for (name, tensor) in params.params.iter() {
        if policy.trainable(name) {
            match grads.get(name) {
                Some(g) if g.len() == tensor.numel() => {}
                Some(g) => return Err(dim_err!("gradient for {name} has {} entries", g.len())),
                None => return Err(Error::Usage(format!("no gradient for trainable parameter {name}"))),
            }
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (T::lit(h.beta1), T::lit(h.beta2), T::lit(h.eps));
    let one = T::one();
    for (name, tensor) in params.params.iter_mut() {
        let Some(scale) = policy.lr_scale(name) else { continue };
        let g = &grads[name];
        let n = tensor.numel();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let t = state.steps.entry(name.clone()).or_insert(0);
        *t += 1;
        let c1 = one - b1.powi(*t as i32);
        let c2 = one - b2.powi(*t as i32);
        let step = T::lit(lr * scale);
        for (((w, gi), mi), vi) in tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * *gi;
            *vi = b2 * *vi + (one - b2) * *gi * *gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= step * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslPlan {
    pub enabled: bool,
    pub pretrain_epochs: usize,
    /// Leading fine-tuning epochs with the encoder frozen.
    pub freeze_epochs: usize,
    /// Encoder learning-rate multiplier once unfrozen.
    pub finetune_lr_scale: f64,
}

impl Default for SslPlan {
    fn default() -> Self {
        Self {
            enabled: false,
            pretrain_epochs: 50,
            freeze_epochs: 25,
            finetune_lr_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPlan {
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub folds: usize,
    pub ssl: SslPlan,
    /// Train folds on separate threads. Results are identical either way.
    pub parallel_folds: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1e-4,
            lr_drop_every: 100,
            lr_drop_factor: 10.0,
            batch_size: 8,
            folds: 10,
            ssl: SslPlan::default(),
            parallel_folds: false,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.lr_drop_every == 0 || self.lr_drop_factor.is_nan() || self.lr_drop_factor < 1.0 {
            return bad("schedule needs a positive period and a factor >= 1");
        }
        let s = self.ssl.finetune_lr_scale;
        if self.ssl.enabled && !(s.is_finite() && s > 0.0) {
            return bad("fine-tune scale must be positive");
        }
        Ok(())
    }
}

/// `lr / factor^floor(epoch / period)`.
pub fn lr_at(epoch: usize, plan: &TrainPlan) -> f64 {
    let drops = (epoch / plan.lr_drop_every) as i32;
    plan.lr / plan.lr_drop_factor.powi(drops)
}
