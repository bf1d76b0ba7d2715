//! Multi-level discrete wavelet transform and the PPG denoising chain.
//!
//! The filter bank is applied as a true convolution followed by keeping the
//! odd-indexed outputs. Two boundary treatments are available:
//!
//! * [`BoundaryMode::Symmetric`] extends the signal by half-sample mirroring.
//!   Level lengths follow `floor((n + taps - 1) / 2)`, so every level stays at
//!   least `taps - 1` long and deep decompositions of short episodes remain
//!   feasible. Reconstruction is exact, but the coefficients are redundant, so
//!   energy is not preserved.
//! * [`BoundaryMode::Periodization`] wraps the signal circularly. Lengths halve
//!   exactly (every level input must be even) and the transform is orthogonal.

mod denoise;
mod filters;
mod threshold;

pub use denoise::{denoise, mad_noise_scale, DenoiseConfig, NoiseEstimate, ThresholdRule};
pub use filters::{FilterBank, WaveletKind, DB8_SCALING};
pub use threshold::{rigrsure_threshold, soft_threshold, sure_risks};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    #[default]
    Symmetric,
    Periodization,
}

impl BoundaryMode {
    /// Length of one level's coefficient vectors for an input of length `n`.
    pub fn next_len(self, n: usize, taps: usize) -> Option<usize> {
        match self {
            BoundaryMode::Symmetric => (n >= 1).then(|| (n + taps - 1) / 2),
            BoundaryMode::Periodization => (n >= 2 && n.is_multiple_of(2)).then_some(n / 2),
        }
    }
}

/// Detail coefficients per level (`details[0]` is the finest band `d1`) plus the
/// final approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid<T> {
    pub details: Vec<Vec<T>>,
    pub approximation: Vec<T>,
    pub original_length: usize,
    pub levels: usize,
    pub boundary: BoundaryMode,
    pub wavelet: WaveletKind,
}

impl<T: Scalar> WaveletPyramid<T> {
    /// Detail band `level` (1-based).
    pub fn detail(&self, level: usize) -> &[T] {
        &self.details[level - 1]
    }

    pub fn detail_mut(&mut self, level: usize) -> &mut Vec<T> {
        &mut self.details[level - 1]
    }

    pub fn energy(&self) -> T {
        self.details
            .iter()
            .flatten()
            .chain(&self.approximation)
            .map(|c| *c * *c)
            .sum()
    }
}

/// Input lengths of each level, starting with the signal itself (`levels + 1` entries).
pub fn level_lengths(original: usize, levels: usize, boundary: BoundaryMode, taps: usize) -> Result<Vec<usize>> {
    if original < taps {
        return Err(Error::Depth(format!(
            "signal of length {original} is shorter than the {taps}-tap filter"
        )));
    }
    let mut lens = vec![original];
    for level in 1..=levels {
        let prev = *lens.last().expect("non-empty");
        let next = boundary.next_len(prev, taps).ok_or_else(|| {
            Error::Depth(format!(
                "cannot decompose length {prev} at level {level} with {boundary:?} boundary"
            ))
        })?;
        lens.push(next);
    }
    Ok(lens)
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

fn analysis_step<T: Scalar>(x: &[T], fb: &FilterBank<T>, boundary: BoundaryMode, out_len: usize) -> (Vec<T>, Vec<T>) {
    let n = x.len();
    let index = match boundary {
        BoundaryMode::Symmetric => mirror,
        BoundaryMode::Periodization => wrap,
    };
    let mut approx = vec![T::zero(); out_len];
    let mut detail = vec![T::zero(); out_len];
    for o in 0..out_len {
        let centre = (2 * o + 1) as isize;
        let (mut a, mut d) = (T::zero(), T::zero());
        for (j, (lo, hi)) in fb.dec_lo.iter().zip(&fb.dec_hi).enumerate() {
            let v = x[index(centre - j as isize, n)];
            a += *lo * v;
            d += *hi * v;
        }
        approx[o] = a;
        detail[o] = d;
    }
    (approx, detail)
}

fn synthesis_step<T: Scalar>(
    approx: &[T],
    detail: &[T],
    fb: &FilterBank<T>,
    boundary: BoundaryMode,
    out_len: usize,
) -> Vec<T> {
    let taps = fb.len() as isize;
    let mut x = vec![T::zero(); out_len];
    match boundary {
        BoundaryMode::Symmetric => {
            // Each output sample gathers every window that covers it.
            for (n, xn) in x.iter_mut().enumerate() {
                let lo = n / 2;
                let hi = ((n + fb.len()) / 2).min(approx.len());
                let mut acc = T::zero();
                for o in lo..hi {
                    let j = (2 * o + 1) as isize - n as isize;
                    if (0..taps).contains(&j) {
                        let j = j as usize;
                        acc += approx[o] * fb.dec_lo[j] + detail[o] * fb.dec_hi[j];
                    }
                }
                *xn = acc;
            }
        }
        BoundaryMode::Periodization => {
            for (o, (a, d)) in approx.iter().zip(detail).enumerate() {
                let centre = (2 * o + 1) as isize;
                for j in 0..fb.len() {
                    x[wrap(centre - j as isize, out_len)] += *a * fb.dec_lo[j] + *d * fb.dec_hi[j];
                }
            }
        }
    }
    x
}

/// Decomposes `signal` into `levels` detail bands plus an approximation.
pub fn dwt_decompose<T: Scalar>(
    signal: &[T],
    levels: usize,
    wavelet: WaveletKind,
    boundary: BoundaryMode,
) -> Result<WaveletPyramid<T>> {
    if levels == 0 {
        return Err(Error::Config("levels must be at least 1".into()));
    }
    let fb = FilterBank::new(wavelet);
    let lens = level_lengths(signal.len(), levels, boundary, fb.len())?;
    let mut details = Vec::with_capacity(levels);
    let mut current = signal.to_vec();
    for &out_len in &lens[1..] {
        let (a, d) = analysis_step(&current, &fb, boundary, out_len);
        details.push(d);
        current = a;
    }
    Ok(WaveletPyramid {
        details,
        approximation: current,
        original_length: signal.len(),
        levels,
        boundary,
        wavelet,
    })
}

/// Inverts [`dwt_decompose`]; exact when no coefficients were modified.
pub fn dwt_reconstruct<T: Scalar>(pyramid: &WaveletPyramid<T>) -> Result<Vec<T>> {
    let fb = FilterBank::new(pyramid.wavelet);
    if pyramid.details.len() != pyramid.levels {
        return Err(Error::Consistency(format!(
            "{} detail bands for {} levels",
            pyramid.details.len(),
            pyramid.levels
        )));
    }
    let lens = level_lengths(pyramid.original_length, pyramid.levels, pyramid.boundary, fb.len())
        .map_err(|e| Error::Consistency(e.to_string()))?;
    for (level, d) in pyramid.details.iter().enumerate() {
        if d.len() != lens[level + 1] {
            return Err(Error::Consistency(format!(
                "detail level {} has {} coefficients, expected {}",
                level + 1,
                d.len(),
                lens[level + 1]
            )));
        }
    }
    if pyramid.approximation.len() != lens[pyramid.levels] {
        return Err(Error::Consistency(format!(
            "approximation has {} coefficients, expected {}",
            pyramid.approximation.len(),
            lens[pyramid.levels]
        )));
    }
    let mut current = pyramid.approximation.clone();
    for level in (1..=pyramid.levels).rev() {
        current = synthesis_step(
            &current,
            &pyramid.details[level - 1],
            &fb,
            pyramid.boundary,
            lens[level - 1],
        );
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn level_lengths_follow_rule() {
        let lens = level_lengths(1250, 10, BoundaryMode::Symmetric, 16).unwrap();
        assert_eq!(lens, vec![1250, 632, 323, 169, 92, 53, 34, 24, 19, 17, 16]);
        let lens = level_lengths(1024, 10, BoundaryMode::Periodization, 16).unwrap();
        assert_eq!(lens.last(), Some(&1));
        assert!(matches!(
            level_lengths(1250, 2, BoundaryMode::Periodization, 16),
            Err(Error::Depth(_))
        ));
        assert!(matches!(
            level_lengths(10, 1, BoundaryMode::Symmetric, 16),
            Err(Error::Depth(_))
        ));
    }

    #[test]
    fn constant_signal_has_no_detail() {
        let x = vec![3.7f64; 1250];
        let p = dwt_decompose(&x, 10, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        for d in &p.details {
            assert!(d.iter().all(|c| c.abs() < 1e-10));
        }
    }

    #[test]
    fn round_trip_episode_length() {
        let x = random_signal(1250, 1);
        let p = dwt_decompose(&x, 10, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        let y = dwt_reconstruct(&p).unwrap();
        assert_eq!(y.len(), 1250);
        assert!(max_abs_diff(&x, &y) < 1e-8);
    }

    #[test]
    fn impulse_gives_subsampled_taps() {
        let n = 64;
        let c = 32;
        let mut x = vec![0.0; n];
        x[c] = 1.0;
        let p = dwt_decompose(&x, 1, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        let fb = FilterBank::<f64>::new(WaveletKind::Db8);
        // Direct full convolution, keep odd outputs.
        let full_lo: Vec<f64> = (0..n + 15)
            .map(|m| {
                (0..16)
                    .filter(|j| m >= *j && m - j < n)
                    .map(|j| fb.dec_lo[j] * x[m - j])
                    .sum()
            })
            .collect();
        let odd: Vec<f64> = full_lo.iter().skip(1).step_by(2).copied().collect();
        assert_eq!(odd.len(), p.approximation.len());
        assert!(max_abs_diff(&odd, &p.approximation) < 1e-15);
        // The impulse picks out the taps themselves.
        for (o, a) in p.approximation.iter().enumerate() {
            let j = 2 * o as isize + 1 - c as isize;
            let expect = if (0..16).contains(&j) {
                fb.dec_lo[j as usize]
            } else {
                0.0
            };
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn zero_pyramid_reconstructs_zero() {
        let x = random_signal(300, 2);
        let mut p = dwt_decompose(&x, 4, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        p.details.iter_mut().flatten().for_each(|c| *c = 0.0);
        p.approximation.iter_mut().for_each(|c| *c = 0.0);
        assert!(dwt_reconstruct(&p).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn corrupted_pyramid_is_rejected() {
        let x = random_signal(300, 3);
        let mut p = dwt_decompose(&x, 4, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        p.details[2].pop();
        assert!(matches!(dwt_reconstruct(&p), Err(Error::Consistency(_))));
        let mut p = dwt_decompose(&x, 4, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        p.details.pop();
        assert!(matches!(dwt_reconstruct(&p), Err(Error::Consistency(_))));
    }

    fn band_power_above(x: &[f64], frac: f64) -> f64 {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let n = buf.len();
        (0..=n / 2)
            .filter(|k| *k as f64 / n as f64 > frac)
            .map(|k| buf[k].norm_sqr())
            .sum()
    }

    #[test]
    fn zeroing_finest_band_low_passes() {
        let x = random_signal(1024, 4);
        let mut p = dwt_decompose(&x, 1, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        p.detail_mut(1).iter_mut().for_each(|c| *c = 0.0);
        let y = dwt_reconstruct(&p).unwrap();
        let before = band_power_above(&x, 0.25);
        let after = band_power_above(&y, 0.25);
        assert!(after < 0.1 * before, "upper-band power {after} vs {before}");
        assert!(band_power_above(&y, 0.0) < band_power_above(&x, 0.0));
    }

    #[test]
    fn periodized_transform_preserves_energy() {
        for (n, levels) in [(64, 6), (1024, 10), (4096, 8), (96, 5)] {
            let x = random_signal(n, n as u64);
            let p = dwt_decompose(&x, levels, WaveletKind::Db8, BoundaryMode::Periodization).unwrap();
            let ex: f64 = x.iter().map(|v| v * v).sum();
            assert!(((p.energy() - ex) / ex).abs() < 1e-6);
            let y = dwt_reconstruct(&p).unwrap();
            assert!(max_abs_diff(&x, &y) < 1e-8);
        }
    }

    #[test]
    fn f32_round_trip() {
        let x: Vec<f32> = random_signal(512, 5).iter().map(|v| *v as f32).collect();
        let p = dwt_decompose(&x, 5, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
        let y = dwt_reconstruct(&p).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn perfect_reconstruction(n in 64usize..=4096, levels in 1usize..=10, seed in any::<u64>()) {
                let x = random_signal(n, seed);
                let p = dwt_decompose(&x, levels, WaveletKind::Db8, BoundaryMode::Symmetric).unwrap();
                for (level, d) in p.details.iter().enumerate() {
                    let prev = if level == 0 { n } else { p.details[level - 1].len() };
                    prop_assert_eq!(d.len(), (prev + 15) / 2);
                }
                let y = dwt_reconstruct(&p).unwrap();
                prop_assert_eq!(y.len(), n);
                prop_assert!(max_abs_diff(&x, &y) < 1e-8);
            }

            #[test]
            fn parseval_periodized(k in 16usize..=64, levels in 1usize..=6, seed in any::<u64>()) {
                let n = k << levels;
                let x = random_signal(n, seed);
                let p = dwt_decompose(&x, levels, WaveletKind::Db8, BoundaryMode::Periodization).unwrap();
                let ex: f64 = x.iter().map(|v| v * v).sum();
                prop_assert!(((p.energy() - ex) / ex).abs() < 1e-6);
            }
        }
    }
}
