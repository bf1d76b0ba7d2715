//! Commands behind the `bpnet` binary. Each `cmd_*` is callable directly so
//! integration tests can drive the pipeline without spawning processes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bpnet::dataset::{
    load_episodes, store_episodes, synth_generate, Episode, EpisodeSet, SynthConfig, ValidationRanges,
};
use bpnet::evaluation::{evaluate_parallel, extract_bp, predict_abp, BpTriple, EvalReport};
use bpnet::network::{load_weights, save_weights, NetworkConfig, WeightFile};
use bpnet::training::{train_kfold, write_log, FoldReport, TrainPlan};
use bpnet::wavelet::{denoise, DenoiseConfig};
use bpnet::{Error, Result};

/// Process exit status for each failure class.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Depth(_) => 2,
        Error::Io(_) => 3,
        Error::Format(_) | Error::Dimension(_) | Error::Consistency(_) => 4,
        Error::Numeric(_) | Error::DegenerateData(_) => 5,
    }
}

/// `<path><suffix>`, keeping any existing extension.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_synth(n: usize, seed: u64, out: &Path) -> Result<EpisodeSet> {
    let set = synth_generate(n, seed, SynthConfig::default())?;
    store_episodes(out, &set)?;
    log::info!("wrote {} synthetic episodes to {}", set.len(), out.display());
    Ok(set)
}

/// Denoises the PPG channel of every episode; ABP is copied through.
pub fn cmd_denoise(input: &Path, out: &Path, config: &DenoiseConfig) -> Result<EpisodeSet> {
    let mut set = load_episodes(input)?;
    for e in &mut set.episodes {
        e.ppg = denoise(&e.ppg, config)?;
    }
    store_episodes(out, &set)?;
    Ok(set)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub depth: usize,
    pub base_channels: usize,
    pub plan: TrainPlan,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub best_fold: usize,
    pub excluded: usize,
    pub reports: Vec<FoldReport>,
    pub log_path: PathBuf,
}

/// Trains `k` folds, writes the best network with its normalization to
/// `out`, and the per-epoch log to `<out>.log.tsv`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let raw = load_episodes(&args.data)?;
    let (data, excluded) = raw.validated(&ValidationRanges::default());
    if !excluded.is_empty() {
        log::warn!("{} of {} episodes excluded by range checks", excluded.len(), raw.len());
    }
    let len = data
        .episodes
        .first()
        .map(Episode::len)
        .ok_or_else(|| Error::DegenerateData("no episodes left to train on".into()))?;
    let config = NetworkConfig::sized(args.depth, args.base_channels, len);
    config.validate()?;
    let outcome = train_kfold::<f64>(&data, &config, &args.plan, args.seed)?;
    save_weights(&args.out, &config, &outcome.best, Some(&outcome.norm))?;

    let log_path = sibling(&args.out, ".log.tsv");
    let mut w = BufWriter::new(File::create(&log_path)?);
    write_log(&mut w, outcome.reports.iter().flat_map(|r| &r.log))?;
    w.flush()?;
    Ok(TrainSummary {
        best_fold: outcome.best_fold,
        excluded: excluded.len(),
        reports: outcome.reports,
        log_path,
    })
}

pub fn render_folds(s: &TrainSummary) -> String {
    let mut out = String::from("fold  train_loss  val_mae  val_mae_mmHg  seconds\n");
    for r in &s.reports {
        let mark = if r.fold == s.best_fold { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:>4}  {:>10.5}  {:>7.5}  {:>12.3}  {:>7.1}{mark}",
            r.fold,
            r.train_loss,
            r.val_mae,
            r.val_mae_mmhg,
            r.wall_time.as_secs_f64()
        );
    }
    out
}

fn load_model(path: &Path) -> Result<(WeightFile<f64>, bpnet::dataset::NormalizationSpec)> {
    let w = load_weights::<f64>(path)?;
    let norm = w
        .norm
        .ok_or_else(|| Error::Format(format!("{} carries no normalization", path.display())))?;
    Ok((w, norm))
}

/// Writes the data with predicted ABP in place of the reference, and the
/// per-episode pressures to `<out>.bp.tsv`.
pub fn cmd_infer(weights: &Path, data: &Path, out: &Path) -> Result<Vec<BpTriple<f64>>> {
    let (w, norm) = load_model(weights)?;
    let mut set = load_episodes(data)?;
    let mut triples = Vec::with_capacity(set.len());
    for e in &mut set.episodes {
        e.abp = predict_abp(&w.params, &w.config, &norm, &e.ppg)?;
        triples.push(extract_bp(&e.abp)?);
    }
    set.norm = None;
    store_episodes(out, &set)?;
    fs::write(sibling(out, ".bp.tsv"), render_triples(&set, &triples))?;
    Ok(triples)
}

pub fn render_triples(set: &EpisodeSet, triples: &[BpTriple<f64>]) -> String {
    let mut s = String::from("episode\tsubject\tsbp\tmap\tdbp\n");
    for (i, (e, t)) in set.episodes.iter().zip(triples).enumerate() {
        let _ = writeln!(s, "{i}\t{}\t{:.3}\t{:.3}\t{:.3}", e.subject_id, t.sbp, t.map, t.dbp);
    }
    s
}

/// Grades the network on `data`. With `out`, writes `<out>.txt` (tables)
/// and `<out>.kv` (machine-readable).
pub fn cmd_evaluate(weights: &Path, data: &Path, out: Option<&Path>, threads: usize) -> Result<EvalReport> {
    let (w, norm) = load_model(weights)?;
    let set = load_episodes(data)?;
    let report = evaluate_parallel(&w.params, &w.config, &set, &norm, threads)?;
    if let Some(out) = out {
        fs::write(sibling(out, ".txt"), report.render_table())?;
        fs::write(sibling(out, ".kv"), report.to_kv())?;
    }
    Ok(report)
}

pub const WARMUP_RUNS: usize = 3;
pub const MIN_REPS: usize = 3;
/// Published latency on a Raspberry Pi 4 Model B, shown for comparison only.
pub const REFERENCE_MS_PER_SIGNAL_SECOND: f64 = 4.25;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub episodes: usize,
    pub reps: usize,
    /// Length of one timed signal.
    pub signal_seconds: f64,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub ms_per_signal_second: f64,
    /// Latency over signal duration.
    pub real_time_factor: f64,
}

impl BenchReport {
    pub fn from_samples(samples_ms: &[f64], episodes: usize, reps: usize, signal_seconds: f64) -> Result<Self> {
        if samples_ms.len() < reps || samples_ms.is_empty() {
            return Err(Error::Numeric(format!(
                "{} timed runs, need at least {reps}",
                samples_ms.len()
            )));
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean_ms = s.iter().sum::<f64>() / n as f64;
        let median_ms = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        // Nearest rank.
        let p95_ms = s[(0.95 * n as f64).ceil() as usize - 1];
        Ok(Self {
            episodes,
            reps,
            signal_seconds,
            mean_ms,
            median_ms,
            p95_ms,
            ms_per_signal_second: mean_ms / signal_seconds,
            real_time_factor: mean_ms / (signal_seconds * 1000.0),
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "episodes {}  reps {}  signal {:.2} s  warm-up {WARMUP_RUNS}",
            self.episodes, self.reps, self.signal_seconds
        );
        let _ = writeln!(
            s,
            "latency per episode: mean {:.3} ms  median {:.3} ms  p95 {:.3} ms",
            self.mean_ms, self.median_ms, self.p95_ms
        );
        let _ = writeln!(s, "{:.3} ms per signal-second", self.ms_per_signal_second);
        let _ = writeln!(s, "real-time factor {:.5}", self.real_time_factor);
        let _ = writeln!(
            s,
            "reference: {REFERENCE_MS_PER_SIGNAL_SECOND} ms per signal-second (Raspberry Pi 4 Model B)"
        );
        s
    }
}

/// Times the full PPG -> ABP transform (normalize, forward, denormalize) of
/// every episode `reps` times after [`WARMUP_RUNS`] untimed runs.
pub fn cmd_bench(weights: &Path, data: &Path, reps: usize) -> Result<BenchReport> {
    if reps < MIN_REPS {
        return Err(Error::Usage(format!("need at least {MIN_REPS} reps, got {reps}")));
    }
    let (w, norm) = load_model(weights)?;
    let set = load_episodes(data)?;
    let first = set
        .episodes
        .first()
        .ok_or_else(|| Error::DegenerateData("no episodes to time".into()))?;
    if set.episodes.iter().any(|e| e.len() != first.len()) {
        return Err(Error::Format("benchmark episodes differ in length".into()));
    }
    let run = |e: &Episode| predict_abp(&w.params, &w.config, &norm, &e.ppg);
    for _ in 0..WARMUP_RUNS {
        run(first)?;
    }
    let mut samples = Vec::with_capacity(set.len() * reps);
    for e in &set.episodes {
        for _ in 0..reps {
            let t = Instant::now();
            let y = run(e)?;
            samples.push(ms(t.elapsed()));
            std::hint::black_box(y);
        }
    }
    BenchReport::from_samples(&samples, set.len(), reps, first.duration_seconds())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
