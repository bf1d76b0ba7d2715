//! Deterministic synthetic PPG/ABP pairs.
//!
//! Each subject has a heart rate and a pressure pair tied to it; the ABP
//! waveform is a low-passed, saturated copy of the PPG pulse rescaled into
//! `[dbp, sbp]`, so the mapping is learnable but not linear.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Episode, EpisodeSet, DEFAULT_FS, EPISODE_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub fs: u16,
    pub length: usize,
    pub episodes_per_subject: usize,
    /// Standard deviation of additive PPG noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fs: DEFAULT_FS,
            length: EPISODE_LEN,
            episodes_per_subject: 2,
            noise: 0.05,
        }
    }
}

struct Subject {
    hr_hz: f64,
    sbp: f64,
    dbp: f64,
    harmonic: f64,
}

fn draw_subject(rng: &mut ChaCha8Rng) -> Subject {
    let hr_hz = rng.random_range(0.9..1.8);
    let t = (hr_hz - 0.9) / 0.9;
    let sbp = 105.0 + 40.0 * t + rng.random_range(-5.0..5.0);
    let dbp = 65.0 + 0.3 * (sbp - 105.0) + rng.random_range(0.0..8.0);
    Subject {
        hr_hz,
        sbp,
        dbp,
        harmonic: rng.random_range(0.3..0.6),
    }
}

/// `n` episodes drawn from a stream seeded by `seed`.
pub fn synth_generate(n: usize, seed: u64, cfg: SynthConfig) -> Result<EpisodeSet> {
    if n == 0 {
        return Err(Error::Usage("synthetic episode count must be positive".into()));
    }
    if cfg.fs == 0 || cfg.length < 2 || cfg.episodes_per_subject == 0 {
        return Err(Error::Config(format!("invalid synth config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let fs = f64::from(cfg.fs);
    let mut episodes = Vec::with_capacity(n);
    let mut subject = draw_subject(&mut rng);
    for i in 0..n {
        if i > 0 && i % cfg.episodes_per_subject == 0 {
            subject = draw_subject(&mut rng);
        }
        let hr = subject.hr_hz * rng.random_range(0.97..1.03);
        let phase = rng.random_range(0.0..TAU);
        let phase2 = rng.random_range(0.0..TAU);
        let drift = rng.random_range(0.0..TAU);
        let pulse: Vec<f64> = (0..cfg.length)
            .map(|k| {
                let t = k as f64 / fs;
                let theta = TAU * hr * t + phase;
                let amp = 1.0 + 0.1 * (TAU * 0.2 * t + drift).sin();
                amp * (theta.sin() + subject.harmonic * (2.0 * theta + phase2).sin())
            })
            .collect();
        let ppg: Vec<f64> = pulse
            .iter()
            .enumerate()
            .map(|(k, p)| p + 0.2 * (TAU * 0.1 * k as f64 / fs + drift).sin() + noise.sample(&mut rng))
            .collect();

        let mut state = pulse[0];
        let shaped: Vec<f64> = pulse
            .iter()
            .map(|p| {
                state += 0.35 * (p - state);
                (1.3 * state).tanh()
            })
            .collect();
        let lo = shaped.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = shaped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        let sbp = subject.sbp + rng.random_range(-2.0..2.0);
        let dbp = subject.dbp + rng.random_range(-2.0..2.0);
        let abp = shaped.iter().map(|s| dbp + (sbp - dbp) * (s - lo) / span).collect();

        episodes.push(Episode {
            subject_id: format!("synth{:05}", i / cfg.episodes_per_subject),
            fs: cfg.fs,
            ppg,
            abp,
        });
    }
    Ok(EpisodeSet::new(episodes, format!("synth n={n} seed={seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{validate_episode, ValidationRanges};

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = synth_generate(6, 7, SynthConfig::default()).unwrap();
        let b = synth_generate(6, 7, SynthConfig::default()).unwrap();
        let c = synth_generate(6, 8, SynthConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.episodes, c.episodes);
    }

    #[test]
    fn shape_and_ranges() {
        let set = synth_generate(40, 1, SynthConfig::default()).unwrap();
        assert_eq!(set.len(), 40);
        assert_eq!(set.subject_count(), 20);
        let r = ValidationRanges::default();
        for e in &set.episodes {
            assert_eq!(e.len(), 1250);
            assert_eq!(e.fs, 125);
            assert!(validate_episode(e, &r).is_keep());
            let sbp = e.abp.iter().copied().fold(f64::MIN, f64::max);
            let dbp = e.abp.iter().copied().fold(f64::MAX, f64::min);
            assert!(
                (70.0..=160.0).contains(&sbp) && (60.0..=160.0).contains(&dbp),
                "{sbp} {dbp}"
            );
        }
    }

    #[test]
    fn zero_count_is_usage_error() {
        assert!(matches!(
            synth_generate(0, 1, SynthConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn short_episodes() {
        let cfg = SynthConfig {
            length: 128,
            ..SynthConfig::default()
        };
        let set = synth_generate(3, 2, cfg).unwrap();
        assert!(set.episodes.iter().all(|e| e.len() == 128));
    }
}
