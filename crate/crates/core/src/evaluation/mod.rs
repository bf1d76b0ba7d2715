//! Blood-pressure extraction from ABP waveforms and the MAE, BHS and AAMI
//! evaluation standards.

mod report;

pub use report::{
    evaluate, evaluate_parallel, evaluate_with, predict_abp, report_from_triples, EvalReport, QuantityReport,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Systolic, mean and diastolic pressure of one episode, mmHg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpTriple<T> {
    pub sbp: T,
    pub map: T,
    pub dbp: T,
}

impl<T: Scalar> BpTriple<T> {
    pub fn get(&self, q: Quantity) -> T {
        match q {
            Quantity::Sbp => self.sbp,
            Quantity::Map => self.map,
            Quantity::Dbp => self.dbp,
        }
    }
}

/// SBP = max, MAP = mean, DBP = min over the episode.
pub fn extract_bp<T: Scalar>(abp: &[T]) -> Result<BpTriple<T>> {
    if abp.is_empty() {
        return Err(Error::DegenerateData("cannot extract BP from an empty waveform".into()));
    }
    let sbp = abp.iter().copied().fold(T::neg_infinity(), T::max);
    let dbp = abp.iter().copied().fold(T::infinity(), T::min);
    let mean = abp.iter().copied().sum::<T>() / T::from_usize_lossy(abp.len());
    // Rounding can push the mean of a near-constant waveform just outside [min, max].
    Ok(BpTriple {
        sbp,
        map: mean.max(dbp).min(sbp),
        dbp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Sbp,
    Map,
    Dbp,
}

impl Quantity {
    /// Row order of the printed tables.
    pub const ALL: [Quantity; 3] = [Quantity::Dbp, Quantity::Map, Quantity::Sbp];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::Sbp => "SBP",
            Quantity::Map => "MAP",
            Quantity::Dbp => "DBP",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Quantity::Sbp => "sbp",
            Quantity::Map => "map",
            Quantity::Dbp => "dbp",
        }
    }
}

/// Signed per-episode errors `predicted - truth` for one quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries<T> {
    errors: Vec<T>,
}

impl<T: Scalar> ErrorSeries<T> {
    pub fn new(errors: Vec<T>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::DegenerateData("error series needs at least one entry".into()));
        }
        Ok(Self { errors })
    }

    pub fn from_pairs(predicted: &[T], truth: &[T]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} references",
                predicted.len(),
                truth.len()
            )));
        }
        Self::new(predicted.iter().zip(truth).map(|(p, t)| *p - *t).collect())
    }

    pub fn errors(&self) -> &[T] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    fn n(&self) -> T {
        T::from_usize_lossy(self.errors.len())
    }

    /// Mean error.
    pub fn me(&self) -> T {
        self.errors.iter().copied().sum::<T>() / self.n()
    }

    /// Population standard deviation about the mean error.
    pub fn sd(&self) -> T {
        let me = self.me();
        (self.errors.iter().map(|e| (*e - me) * (*e - me)).sum::<T>() / self.n()).sqrt()
    }
}

/// `(1/N) * sum |e_i|`.
pub fn mae<T: Scalar>(errors: &ErrorSeries<T>) -> T {
    errors.errors.iter().map(|e| e.abs()).sum::<T>() / errors.n()
}

pub const BHS_BINS: [f64; 3] = [5.0, 10.0, 15.0];

/// Percentage of `|e_i|` strictly below each bin.
pub fn cumulative_pct<T: Scalar>(errors: &ErrorSeries<T>, bins: &[f64; 3]) -> [f64; 3] {
    let n = errors.len() as f64;
    bins.map(|b| {
        let hits = errors.errors.iter().filter(|e| e.abs().as_f64() < b).count();
        100.0 * hits as f64 / n
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Grade {
    A,
    B,
    C,
    /// Below every grade floor.
    D,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Grade::A => "A",
            Grade::B => "B",
            Grade::C => "C",
            Grade::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Grade::A),
            "B" => Ok(Grade::B),
            "C" => Ok(Grade::C),
            "D" => Ok(Grade::D),
            _ => Err(Error::Format(format!("unknown grade {s:?}"))),
        }
    }
}

/// Grade floors in percent for the `<5`, `<10` and `<15` mmHg bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BhsThresholds {
    pub bins: [f64; 3],
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub c: [f64; 3],
}

impl Default for BhsThresholds {
    fn default() -> Self {
        Self {
            bins: BHS_BINS,
            a: [60.0, 85.0, 95.0],
            b: [50.0, 75.0, 90.0],
            c: [40.0, 65.0, 85.0],
        }
    }
}

/// Highest grade whose three floors are all met.
pub fn bhs_grade(pcts: &[f64; 3], t: &BhsThresholds) -> Grade {
    let meets = |floor: &[f64; 3]| pcts.iter().zip(floor).all(|(p, f)| p >= f);
    if meets(&t.a) {
        Grade::A
    } else if meets(&t.b) {
        Grade::B
    } else if meets(&t.c) {
        Grade::C
    } else {
        Grade::D
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AamiCriteria {
    pub me_limit: f64,
    pub sd_limit: f64,
    pub min_subjects: usize,
}

impl Default for AamiCriteria {
    fn default() -> Self {
        Self {
            me_limit: 5.0,
            sd_limit: 8.0,
            min_subjects: 85,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AamiVerdict {
    Pass,
    Fail,
    /// Fewer subjects than the standard requires.
    NotApplicable,
}

impl AamiVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            AamiVerdict::Pass => "pass",
            AamiVerdict::Fail => "fail",
            AamiVerdict::NotApplicable => "n/a",
        }
    }
}

impl FromStr for AamiVerdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pass" => Ok(AamiVerdict::Pass),
            "fail" => Ok(AamiVerdict::Fail),
            "n/a" => Ok(AamiVerdict::NotApplicable),
            _ => Err(Error::Format(format!("unknown AAMI verdict {s:?}"))),
        }
    }
}

/// Verdict from summary statistics alone.
pub fn aami_verdict(me: f64, sd: f64, n_subjects: usize, c: &AamiCriteria) -> AamiVerdict {
    if n_subjects < c.min_subjects {
        AamiVerdict::NotApplicable
    } else if me.abs() <= c.me_limit && sd <= c.sd_limit {
        AamiVerdict::Pass
    } else {
        AamiVerdict::Fail
    }
}

pub fn aami_check<T: Scalar>(errors: &ErrorSeries<T>, n_subjects: usize, c: &AamiCriteria) -> AamiVerdict {
    aami_verdict(errors.me().as_f64(), errors.sd().as_f64(), n_subjects, c)
}
