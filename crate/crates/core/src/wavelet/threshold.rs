use crate::scalar::Scalar;

/// Stein's unbiased risk estimate for each candidate threshold `|c|_(k)`,
/// `k = 1..=N`, on the coefficients scaled by `1 / noise_scale`.
///
/// Returns `(sorted squared scaled coefficients, risks)`.
pub fn sure_risks<T: Scalar>(coeffs: &[T], noise_scale: T) -> (Vec<T>, Vec<T>) {
    let n = coeffs.len();
    let mut sq: Vec<T> = coeffs
        .iter()
        .map(|c| {
            let x = *c / noise_scale;
            x * x
        })
        .collect();
    sq.sort_by(|a, b| a.partial_cmp(b).expect("finite coefficients"));
    let nf = T::from_usize_lossy(n);
    let two = T::lit(2.0);
    let mut cum = T::zero();
    let risks = sq
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let k = T::from_usize_lossy(i + 1);
            cum += s;
            (nf - two * k + cum + (nf - k) * s) / nf
        })
        .collect();
    (sq, risks)
}

/// SURE-optimal soft threshold, returned in the units of `coeffs`.
///
/// Ties in the risk go to the smaller threshold. An empty input yields zero.
pub fn rigrsure_threshold<T: Scalar>(coeffs: &[T], noise_scale: T) -> T {
    if coeffs.is_empty() {
        return T::zero();
    }
    let (sq, risks) = sure_risks(coeffs, noise_scale);
    let mut best = 0;
    for (k, r) in risks.iter().enumerate() {
        if *r < risks[best] {
            best = k;
        }
    }
    sq[best].sqrt() * noise_scale
}

/// `sign(c) * max(|c| - t, 0)` elementwise.
pub fn soft_threshold<T: Scalar>(coeffs: &[T], t: T) -> Vec<T> {
    coeffs
        .iter()
        .map(|&c| {
            let m = c.abs() - t;
            if m > T::zero() {
                m.copysign(c)
            } else {
                T::zero()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Evaluates SURE(t) = N - 2 #{|x| <= t} + sum min(x^2, t^2) at every
    /// candidate and returns the smallest minimizer, in original units.
    fn brute_force(coeffs: &[f64], s: f64) -> f64 {
        let x: Vec<f64> = coeffs.iter().map(|c| c / s).collect();
        let mut cands: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = x.len() as f64;
        let mut best = (f64::INFINITY, 0.0);
        for &t in &cands {
            let below = x.iter().filter(|v| v.abs() <= t).count() as f64;
            let clip: f64 = x.iter().map(|v| (v * v).min(t * t)).sum();
            let risk = (n - 2.0 * below + clip) / n;
            if risk < best.0 - 1e-12 {
                best = (risk, t);
            }
        }
        best.1 * s
    }

    #[test]
    fn zeros_and_empty() {
        assert_eq!(rigrsure_threshold(&[0.0f64; 16], 1.0), 0.0);
        assert_eq!(rigrsure_threshold::<f64>(&[], 1.0), 0.0);
    }

    #[test]
    fn matches_brute_force_on_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for _ in 0..20 {
            let c: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
            let t = rigrsure_threshold(&c, 1.0);
            assert!((t - brute_force(&c, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn spike_survives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c: Vec<f64> = (0..63)
            .map(|_| 1e-3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        c.push(100.0);
        let t = rigrsure_threshold(&c, 1.0);
        assert!(t < 100.0);
        assert!((t - brute_force(&c, 1.0)).abs() < 1e-12);
        assert!(soft_threshold(&[100.0], t)[0] > 0.0);
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(&[3.0, -0.5, -4.0], 1.0), vec![2.0, 0.0, -3.0]);
        let c = [1.5, -2.0, 0.0];
        assert_eq!(soft_threshold(&c, 0.0), c.to_vec());
    }

    #[test]
    fn threshold_scales_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        let scaled: Vec<f64> = c.iter().map(|v| v * 4.0).collect();
        let a = rigrsure_threshold(&c, 1.0) * 4.0;
        let b = rigrsure_threshold(&scaled, 4.0);
        assert!((a - b).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn equals_brute_force(c in prop::collection::vec(-10.0f64..10.0, 1..=256), s in 0.1f64..5.0) {
                let t = rigrsure_threshold(&c, s);
                prop_assert!((t - brute_force(&c, s)).abs() < 1e-9 * s.max(1.0));
            }
        }
    }
}
