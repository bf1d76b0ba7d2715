//! Paired PPG/ABP episodes: validation, normalization, fold splitting, the
//! EPBN container, and a synthetic generator for desk-scale runs.

mod epbn;
mod synth;

pub use epbn::{load_episodes, read_episodes, store_episodes, write_episodes, EPBN_MAGIC, EPBN_VERSION, NRM_MARKER};
pub use synth::{synth_generate, SynthConfig};

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_FS: u16 = 125;
pub const EPISODE_SECONDS: usize = 10;
pub const EPISODE_LEN: usize = DEFAULT_FS as usize * EPISODE_SECONDS;

/// One paired recording. `abp` is in mmHg; `ppg` is in arbitrary sensor units.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub subject_id: String,
    pub fs: u16,
    pub ppg: Vec<f64>,
    pub abp: Vec<f64>,
}

impl Episode {
    pub fn new(subject_id: impl Into<String>, fs: u16, ppg: Vec<f64>, abp: Vec<f64>) -> Result<Self> {
        if ppg.len() != abp.len() {
            return Err(Error::Dimension(format!(
                "ppg has {} samples, abp has {}",
                ppg.len(),
                abp.len()
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            fs,
            ppg,
            abp,
        })
    }

    pub fn len(&self) -> usize {
        self.ppg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ppg.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / f64::from(self.fs)
    }
}

/// Exclusion bounds in mmHg. An episode is kept only when its maximum ABP lies
/// strictly inside `(sbp_min, sbp_max)` and its minimum strictly inside
/// `(dbp_min, dbp_max)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRanges {
    pub sbp_min: f64,
    pub sbp_max: f64,
    pub dbp_min: f64,
    pub dbp_max: f64,
}

impl Default for ValidationRanges {
    fn default() -> Self {
        Self {
            sbp_min: 80.0,
            sbp_max: 180.0,
            dbp_min: 60.0,
            dbp_max: 130.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Exclusion {
    Empty,
    NonFinite,
    SbpOutOfRange(f64),
    DbpOutOfRange(f64),
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exclusion::Empty => write!(f, "empty episode"),
            Exclusion::NonFinite => write!(f, "non-finite sample"),
            Exclusion::SbpOutOfRange(v) => write!(f, "SBP {v:.1} mmHg out of range"),
            Exclusion::DbpOutOfRange(v) => write!(f, "DBP {v:.1} mmHg out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Keep,
    Exclude(Exclusion),
}

impl Verdict {
    pub fn is_keep(&self) -> bool {
        matches!(self, Verdict::Keep)
    }
}

pub fn validate_episode(e: &Episode, r: &ValidationRanges) -> Verdict {
    if e.is_empty() {
        return Verdict::Exclude(Exclusion::Empty);
    }
    if e.abp.iter().chain(&e.ppg).any(|v| !v.is_finite()) {
        return Verdict::Exclude(Exclusion::NonFinite);
    }
    let sbp = e.abp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dbp = e.abp.iter().copied().fold(f64::INFINITY, f64::min);
    if !(sbp > r.sbp_min && sbp < r.sbp_max) {
        return Verdict::Exclude(Exclusion::SbpOutOfRange(sbp));
    }
    if !(dbp > r.dbp_min && dbp < r.dbp_max) {
        return Verdict::Exclude(Exclusion::DbpOutOfRange(dbp));
    }
    Verdict::Keep
}

/// Global affine normalization constants, fitted on training data only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub ppg_mean: f64,
    pub ppg_std: f64,
    pub abp_mean: f64,
    pub abp_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Ppg,
    Abp,
}

impl NormalizationSpec {
    pub const IDENTITY: Self = Self {
        ppg_mean: 0.0,
        ppg_std: 1.0,
        abp_mean: 0.0,
        abp_std: 1.0,
    };

    fn moments(&self, which: SignalKind) -> (f64, f64) {
        match which {
            SignalKind::Ppg => (self.ppg_mean, self.ppg_std),
            SignalKind::Abp => (self.abp_mean, self.abp_std),
        }
    }

    pub fn normalize_signal(&self, v: &[f64], which: SignalKind) -> Vec<f64> {
        let (m, s) = self.moments(which);
        v.iter().map(|x| (x - m) / s).collect()
    }

    pub fn denormalize(&self, v: &[f64], which: SignalKind) -> Vec<f64> {
        let (m, s) = self.moments(which);
        v.iter().map(|x| x * s + m).collect()
    }

    pub fn normalize(&self, e: &Episode) -> Episode {
        Episode {
            subject_id: e.subject_id.clone(),
            fs: e.fs,
            ppg: self.normalize_signal(&e.ppg, SignalKind::Ppg),
            abp: self.normalize_signal(&e.abp, SignalKind::Abp),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.ppg_std, self.abp_std].iter().all(|s| s.is_finite() && *s > 0.0)
            && self.ppg_mean.is_finite()
            && self.abp_mean.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateData(format!("invalid normalization {self:?}")))
        }
    }
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Per-signal mean and population standard deviation over the episodes at
/// `indices` (every sample of every selected episode).
pub fn fit_normalization(set: &EpisodeSet, indices: &[usize]) -> Result<NormalizationSpec> {
    let chosen: Vec<&Episode> = indices.iter().map(|&i| &set.episodes[i]).collect();
    if chosen.iter().all(|e| e.is_empty()) {
        return Err(Error::DegenerateData("no training samples".into()));
    }
    let (ppg_mean, ppg_std) = mean_std(chosen.iter().flat_map(|e| e.ppg.iter()));
    let (abp_mean, abp_std) = mean_std(chosen.iter().flat_map(|e| e.abp.iter()));
    let spec = NormalizationSpec {
        ppg_mean,
        ppg_std,
        abp_mean,
        abp_std,
    };
    if ppg_std == 0.0 || abp_std == 0.0 {
        return Err(Error::DegenerateData(format!(
            "zero variance in training data: {spec:?}"
        )));
    }
    spec.validate()?;
    Ok(spec)
}

/// Ordered, immutable collection of episodes sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
    pub provenance: String,
    pub norm: Option<NormalizationSpec>,
}

impl EpisodeSet {
    pub fn new(episodes: Vec<Episode>, provenance: impl Into<String>) -> Self {
        Self {
            episodes,
            provenance: provenance.into(),
            norm: None,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn fs(&self) -> u16 {
        self.episodes.first().map_or(DEFAULT_FS, |e| e.fs)
    }

    pub fn subject_count(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn subset(&self, indices: &[usize]) -> EpisodeSet {
        EpisodeSet {
            episodes: indices.iter().map(|&i| self.episodes[i].clone()).collect(),
            provenance: self.provenance.clone(),
            norm: self.norm,
        }
    }

    /// Applies the attached normalization to every episode.
    pub fn normalized(&self) -> Result<EpisodeSet> {
        let spec = self
            .norm
            .ok_or_else(|| Error::Usage("episode set has no normalization attached".into()))?;
        Ok(EpisodeSet {
            episodes: self.episodes.iter().map(|e| spec.normalize(e)).collect(),
            provenance: self.provenance.clone(),
            norm: self.norm,
        })
    }

    /// Splits into kept episodes and `(index, reason)` for excluded ones.
    pub fn validated(&self, r: &ValidationRanges) -> (EpisodeSet, Vec<(usize, Exclusion)>) {
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        for (i, e) in self.episodes.iter().enumerate() {
            match validate_episode(e, r) {
                Verdict::Keep => kept.push(e.clone()),
                Verdict::Exclude(why) => excluded.push((i, why)),
            }
        }
        (
            EpisodeSet {
                episodes: kept,
                provenance: self.provenance.clone(),
                norm: self.norm,
            },
            excluded,
        )
    }
}

/// One cross-validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` contiguous test blocks covering `0..n`; earlier blocks absorb the
/// remainder. Contiguity keeps neighbouring episodes (usually the same
/// subject) on the same side of a split.
pub fn split_folds(n: usize, k: usize) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Usage(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Usage(format!("{n} episodes cannot fill {k} folds")));
    }
    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let test: Vec<usize> = (start..start + size).collect();
        let train = (0..start).chain(start + size..n).collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}
