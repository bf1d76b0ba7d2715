//! Central finite-difference gradient checking.
//!
//! Only forward evaluation is used for the numeric side, so the check stays
//! independent of the backward rules it verifies.
//!
//! A probe whose `±step` perturbation moves any leaky ReLU or abs input across
//! zero straddles a kink, where a central difference does not estimate the
//! derivative. Such probes are retried with steps 10 and 100 times smaller and
//! counted in `skipped_kinks` if every attempt straddles.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen entries per leaf.
    pub max_entries_per_leaf: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: DEFAULT_FLOOR,
            max_entries_per_leaf: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: Option<Worst>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass of `f` against central differences of its forward pass.
///
/// `f` receives a fresh graph and one [`Var`] per leaf and must return a scalar.
pub fn check<F>(leaves: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut graph = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| graph.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut graph, &vars)?;
    let base_signature = graph.kink_signature();
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| graph.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vs: Vec<Var> = perturbed.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vs)?;
        Ok((g.value(out).data()[0], g.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.numel();
        let indices: Vec<usize> = match opts.max_entries_per_leaf {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in indices {
            let orig = leaf.data()[idx];
            let mut numeric = None;
            for shrink in [1.0, 0.1, 0.01] {
                let h = opts.step * shrink;
                work[li].data_mut()[idx] = orig + h;
                let (up, sig_up) = eval(&work)?;
                work[li].data_mut()[idx] = orig - h;
                let (down, sig_down) = eval(&work)?;
                work[li].data_mut()[idx] = orig;
                if sig_up == base_signature && sig_down == base_signature {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped_kinks += 1;
                continue;
            };
            let a = analytic[li].get(idx).copied().unwrap_or(0.0);
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some(Worst {
                    leaf: li,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Random tensor with entries uniform in `[-1, 1)`.
pub fn random_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_sum(g: &mut Graph<f64>, v: &[Var]) -> Result<Var> {
        let a = g.abs(v[0]);
        Ok(g.sum(a))
    }

    #[test]
    fn near_kink_probe_is_retried() {
        let x = Tensor::new(&[2], vec![3e-6, -0.5]).unwrap();
        let r = check(&[x], abs_sum, GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, 2);
        assert_eq!(r.skipped_kinks, 0);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn probe_at_kink_is_skipped() {
        let x = Tensor::new(&[2], vec![0.0, 0.25]).unwrap();
        let r = check(&[x], abs_sum, GradCheckOptions::default()).unwrap();
        assert_eq!((r.checked, r.skipped_kinks), (1, 1));
    }

    #[test]
    fn wrong_gradient_is_caught() {
        // The detached copy adds to the forward value but not to the backward pass.
        let x = Tensor::new(&[3], vec![0.3, -0.7, 1.1]).unwrap();
        let r = check(
            &[x],
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let s = g.sum(sq);
                let k = g.leaf(Tensor::scalar(2.0));
                let detached = g.leaf(g.value(s).clone());
                let extra = g.mul(detached, k)?;
                g.add(s, extra)
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err > 0.5);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
