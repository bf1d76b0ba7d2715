use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{
    aami_check, bhs_grade, cumulative_pct, extract_bp, mae, AamiCriteria, AamiVerdict, BhsThresholds, BpTriple,
    ErrorSeries, Grade, Quantity,
};
use crate::dataset::{Episode, EpisodeSet, NormalizationSpec, SignalKind};
use crate::error::{Error, Result};
use crate::network::{bpnet_forward, NetworkConfig, ParameterSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityReport {
    pub quantity: Quantity,
    pub mae: f64,
    pub me: f64,
    pub sd: f64,
    /// Cumulative percentages below 5, 10 and 15 mmHg.
    pub pct: [f64; 3],
    pub grade: Grade,
    pub aami: AamiVerdict,
}

/// Metrics for DBP, MAP and SBP, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub subjects: usize,
    pub rows: Vec<QuantityReport>,
}

impl EvalReport {
    pub fn row(&self, q: Quantity) -> &QuantityReport {
        self.rows
            .iter()
            .find(|r| r.quantity == q)
            .expect("report holds every quantity")
    }

    /// Plain-text tables in the layout of the BHS and AAMI summaries.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "episodes: {}  subjects: {}", self.episodes, self.subjects);
        let _ = writeln!(s);
        let _ = writeln!(s, "BHS  cumulative error percentage");
        let _ = writeln!(
            s,
            "{:<6}{:>10}{:>10}{:>10}{:>8}",
            "", "<5mmHg", "<10mmHg", "<15mmHg", "grade"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}{:>9.2}%{:>9.2}%{:>9.2}%{:>8}",
                r.quantity.label(),
                r.pct[0],
                r.pct[1],
                r.pct[2],
                r.grade
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "AAMI (mmHg)");
        let _ = writeln!(s, "{:<6}{:>10}{:>10}{:>10}{:>8}", "", "ME", "SD", "MAE", "passed");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6}{:>10.3}{:>10.3}{:>10.3}{:>8}",
                r.quantity.label(),
                r.me,
                r.sd,
                r.mae,
                r.aami.as_str()
            );
        }
        s
    }

    /// `key=value` lines; floats in shortest round-trip form.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "episodes={}", self.episodes);
        let _ = writeln!(s, "subjects={}", self.subjects);
        for r in &self.rows {
            let k = r.quantity.key();
            let _ = writeln!(s, "{k}.mae={:?}", r.mae);
            let _ = writeln!(s, "{k}.me={:?}", r.me);
            let _ = writeln!(s, "{k}.sd={:?}", r.sd);
            for (bin, p) in ["pct5", "pct10", "pct15"].iter().zip(r.pct) {
                let _ = writeln!(s, "{k}.{bin}={p:?}");
            }
            let _ = writeln!(s, "{k}.grade={}", r.grade);
            let _ = writeln!(s, "{k}.aami={}", r.aami.as_str());
        }
        s
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("report line without '=': {line}")))?;
            map.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("report lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("report key {k} is not a number")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("report key {k} is not a count")))
        };
        let mut rows = Vec::new();
        for q in Quantity::ALL {
            let k = q.key();
            rows.push(QuantityReport {
                quantity: q,
                mae: num(&format!("{k}.mae"))?,
                me: num(&format!("{k}.me"))?,
                sd: num(&format!("{k}.sd"))?,
                pct: [
                    num(&format!("{k}.pct5"))?,
                    num(&format!("{k}.pct10"))?,
                    num(&format!("{k}.pct15"))?,
                ],
                grade: get(&format!("{k}.grade"))?.parse()?,
                aami: get(&format!("{k}.aami"))?.parse()?,
            });
        }
        Ok(Self {
            episodes: count("episodes")?,
            subjects: count("subjects")?,
            rows,
        })
    }
}

/// Builds the full report from per-episode predicted and reference triples.
pub fn report_from_triples(
    predicted: &[BpTriple<f64>],
    truth: &[BpTriple<f64>],
    n_subjects: usize,
    bhs: &BhsThresholds,
    aami: &AamiCriteria,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(3);
    for q in Quantity::ALL {
        let p: Vec<f64> = predicted.iter().map(|t| t.get(q)).collect();
        let r: Vec<f64> = truth.iter().map(|t| t.get(q)).collect();
        let errors = ErrorSeries::from_pairs(&p, &r)?;
        let pct = cumulative_pct(&errors, &bhs.bins);
        rows.push(QuantityReport {
            quantity: q,
            mae: mae(&errors),
            me: errors.me(),
            sd: errors.sd(),
            pct,
            grade: bhs_grade(&pct, bhs),
            aami: aami_check(&errors, n_subjects, aami),
        });
    }
    Ok(EvalReport {
        episodes: predicted.len(),
        subjects: n_subjects,
        rows,
    })
}

/// Runs `predictor` (PPG episode -> ABP in mmHg) over `testset` on up to
/// `threads` threads and grades the result. The report does not depend on
/// the thread count.
pub fn evaluate_with<F>(testset: &EpisodeSet, threads: usize, predictor: F) -> Result<EvalReport>
where
    F: Fn(&Episode) -> Result<Vec<f64>> + Sync,
{
    if testset.is_empty() {
        return Err(Error::DegenerateData("empty test set".into()));
    }
    let one = |e: &Episode| -> Result<(BpTriple<f64>, BpTriple<f64>)> {
        let pred = predictor(e)?;
        Ok((extract_bp(&pred)?, extract_bp(&e.abp)?))
    };
    let threads = threads.clamp(1, testset.len());
    let pairs: Vec<(BpTriple<f64>, BpTriple<f64>)> = if threads == 1 {
        testset.episodes.iter().map(one).collect::<Result<_>>()?
    } else {
        let chunk = testset.len().div_ceil(threads);
        let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
            let handles: Vec<_> = testset
                .episodes
                .chunks(chunk)
                .map(|c| s.spawn(|| c.iter().map(one).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("evaluation thread panicked".into())))
                })
                .collect()
        });
        let mut all = Vec::with_capacity(testset.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let (pred, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    report_from_triples(
        &pred,
        &truth,
        testset.subject_count(),
        &BhsThresholds::default(),
        &AamiCriteria::default(),
    )
}

/// Normalizes `ppg` with `spec`, runs the network and maps the output back to mmHg.
pub fn predict_abp<T: Scalar>(
    params: &ParameterSet<T>,
    config: &NetworkConfig,
    spec: &NormalizationSpec,
    ppg: &[f64],
) -> Result<Vec<f64>> {
    let x: Vec<T> = spec
        .normalize_signal(ppg, SignalKind::Ppg)
        .into_iter()
        .map(T::lit)
        .collect();
    let y: Vec<f64> = bpnet_forward(params, config, &x)?.into_iter().map(T::as_f64).collect();
    Ok(spec.denormalize(&y, SignalKind::Abp))
}

/// [`evaluate`] with episodes fanned across `threads` threads.
pub fn evaluate_parallel<T: Scalar>(
    params: &ParameterSet<T>,
    config: &NetworkConfig,
    testset: &EpisodeSet,
    spec: &NormalizationSpec,
    threads: usize,
) -> Result<EvalReport> {
    evaluate_with(testset, threads, |e| predict_abp(params, config, spec, &e.ppg))
}

pub fn evaluate<T: Scalar>(
    params: &ParameterSet<T>,
    config: &NetworkConfig,
    testset: &EpisodeSet,
    spec: &NormalizationSpec,
) -> Result<EvalReport> {
    evaluate_parallel(params, config, testset, spec, 1)
}
