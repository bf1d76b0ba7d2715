use std::collections::BTreeSet;

use super::{dwt_decompose, dwt_reconstruct, rigrsure_threshold, soft_threshold};
use super::{BoundaryMode, WaveletKind, WaveletPyramid};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Where the noise scale fed to the threshold selector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseEstimate {
    /// `median(|d1|) / 0.6745` from the finest band (before it is zeroed),
    /// shared by all levels. White noise has the same scale in every band of
    /// an orthonormal filter bank, and `d1` is almost pure noise for PPG.
    #[default]
    FinestLevel,
    /// `median(|dj|) / 0.6745` for each band separately.
    PerLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdRule {
    #[default]
    RigrsureSoft,
    None,
}

/// Wavelet denoising pipeline settings.
///
/// The default decomposes ten db8 levels, drops the finest detail band and
/// the final approximation (the highest and lowest frequency content), and
/// soft-thresholds the remaining detail bands with SURE-selected thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub levels: usize,
    pub wavelet: WaveletKind,
    pub zero_detail_levels: BTreeSet<usize>,
    pub zero_approximation: bool,
    pub threshold_rule: ThresholdRule,
    pub noise_estimate: NoiseEstimate,
    pub boundary: BoundaryMode,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            levels: 10,
            wavelet: WaveletKind::Db8,
            zero_detail_levels: BTreeSet::from([1]),
            zero_approximation: true,
            threshold_rule: ThresholdRule::RigrsureSoft,
            noise_estimate: NoiseEstimate::FinestLevel,
            boundary: BoundaryMode::Symmetric,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        if let Some(bad) = self.zero_detail_levels.iter().find(|l| **l == 0 || **l > self.levels) {
            return Err(Error::Config(format!("zeroed level {bad} outside 1..={}", self.levels)));
        }
        Ok(())
    }

    pub fn decompose<T: Scalar>(&self, signal: &[T]) -> Result<WaveletPyramid<T>> {
        self.validate()?;
        dwt_decompose(signal, self.levels, self.wavelet, self.boundary)
    }
}

/// Robust noise estimate `median(|c|) / 0.6745`.
pub fn mad_noise_scale<T: Scalar>(coeffs: &[T]) -> T {
    if coeffs.is_empty() {
        return T::zero();
    }
    let mut mags: Vec<T> = coeffs.iter().map(|c| c.abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
    let n = mags.len();
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        (mags[n / 2 - 1] + mags[n / 2]) / T::lit(2.0)
    };
    median / T::lit(0.6745)
}

/// Decompose, zero the configured bands, threshold the remaining detail
/// bands, reconstruct. The output has the input's length.
pub fn denoise<T: Scalar>(signal: &[T], config: &DenoiseConfig) -> Result<Vec<T>> {
    let mut pyramid = config.decompose(signal)?;
    let finest_sigma = mad_noise_scale(pyramid.detail(1));
    for &level in &config.zero_detail_levels {
        pyramid.detail_mut(level).iter_mut().for_each(|c| *c = T::zero());
    }
    if config.zero_approximation {
        pyramid.approximation.iter_mut().for_each(|c| *c = T::zero());
    }
    if config.threshold_rule == ThresholdRule::RigrsureSoft {
        for level in 1..=config.levels {
            if config.zero_detail_levels.contains(&level) {
                continue;
            }
            let band = pyramid.detail_mut(level);
            let sigma = match config.noise_estimate {
                NoiseEstimate::FinestLevel => finest_sigma,
                NoiseEstimate::PerLevel => mad_noise_scale(band),
            };
            if sigma > T::zero() {
                let t = rigrsure_threshold(band, sigma);
                *band = soft_threshold(band, t);
            }
        }
    }
    dwt_reconstruct(&pyramid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rms(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    fn noisy_sine(seed: u64, sigma: f64) -> (Vec<f64>, Vec<f64>) {
        let fs = 125.0;
        let clean: Vec<f64> = (0..1250)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / fs).sin())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let noisy = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
        (clean, noisy)
    }

    #[test]
    fn removes_white_noise_from_slow_sine() {
        for seed in 0..10 {
            let (clean, noisy) = noisy_sine(seed, 0.3);
            let out = denoise(&noisy, &DenoiseConfig::default()).unwrap();
            assert_eq!(out.len(), noisy.len());
            let before = rms(&noisy, &clean);
            let after = rms(&out, &clean);
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn second_pass_changes_less() {
        let (_, noisy) = noisy_sine(1, 0.3);
        let cfg = DenoiseConfig::default();
        let once = denoise(&noisy, &cfg).unwrap();
        let twice = denoise(&once, &cfg).unwrap();
        assert!(rms(&once, &twice) < rms(&noisy, &once));
    }

    #[test]
    fn dc_is_removed() {
        let out: Vec<f64> = denoise(&vec![42.0; 1250], &DenoiseConfig::default()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = DenoiseConfig {
            levels: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.levels = 3;
        cfg.zero_detail_levels = BTreeSet::from([4]);
        assert!(matches!(denoise(&[0.0f64; 64], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn short_signal_is_depth_error() {
        assert!(matches!(
            denoise(&[1.0f64; 8], &DenoiseConfig::default()),
            Err(Error::Depth(_))
        ));
    }

    #[test]
    fn mad_of_known_values() {
        let s: f64 = mad_noise_scale(&[-3.0, 1.0, 2.0, -0.5]);
        assert!((s - 1.5 / 0.6745).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn length_preserved(x in prop::collection::vec(-5.0f64..5.0, 16..600), levels in 1usize..6) {
                let cfg = DenoiseConfig { levels, ..Default::default() };
                prop_assert_eq!(denoise(&x, &cfg).unwrap().len(), x.len());
            }
        }
    }
}
