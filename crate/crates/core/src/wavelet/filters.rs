use crate::scalar::Scalar;

/// Daubechies scaling filter with 8 vanishing moments (16 taps, extremal
/// phase), normalized to sum to sqrt(2). Obtained by spectral factorization of
/// the Daubechies polynomial in 50-digit arithmetic, keeping the roots inside
/// the unit circle; agrees with the standard published db8 table.
pub const DB8_SCALING: [f64; 16] = [
    0.054_415_842_243_104_01,
    0.312_871_590_914_299_97,
    0.675_630_736_297_289_8,
    0.585_354_683_654_206_7,
    -0.015_829_105_256_349_306,
    -0.284_015_542_961_546_9,
    0.000_472_484_573_913_282_8,
    0.128_747_426_620_478_46,
    -0.017_369_301_001_807_546,
    -0.044_088_253_930_794_75,
    0.013_981_027_917_398_282,
    0.008_746_094_047_405_777,
    -0.004_870_352_993_451_574,
    -0.000_391_740_373_376_947_05,
    0.000_675_449_406_450_569_4,
    -0.000_117_476_784_124_769_53,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaveletKind {
    #[default]
    Db8,
}

impl WaveletKind {
    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Db8 => "db8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "db8" => Some(WaveletKind::Db8),
            _ => None,
        }
    }
}

/// Orthogonal analysis filter pair. Synthesis uses the same taps (the
/// transform is its own adjoint).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub dec_lo: Vec<T>,
    pub dec_hi: Vec<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(kind: WaveletKind) -> Self {
        let scaling: &[f64] = match kind {
            WaveletKind::Db8 => &DB8_SCALING,
        };
        let f = scaling.len();
        let dec_lo: Vec<f64> = scaling.iter().rev().copied().collect();
        let dec_hi = (0..f)
            .map(|k| {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                sign * dec_lo[f - 1 - k]
            })
            .collect::<Vec<f64>>();
        Self {
            dec_lo: dec_lo.into_iter().map(T::lit).collect(),
            dec_hi: dec_hi.into_iter().map(T::lit).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn db8_is_orthonormal_with_eight_vanishing_moments() {
        let fb = FilterBank::<f64>::new(WaveletKind::Db8);
        assert_eq!(fb.len(), 16);
        let sum: f64 = fb.dec_lo.iter().sum();
        assert!((sum - 2f64.sqrt()).abs() < 1e-14);
        for shift in 0..8 {
            let lo: f64 = (0..16 - 2 * shift)
                .map(|k| fb.dec_lo[k] * fb.dec_lo[k + 2 * shift])
                .sum();
            let hi: f64 = (0..16 - 2 * shift)
                .map(|k| fb.dec_hi[k] * fb.dec_hi[k + 2 * shift])
                .sum();
            let expect = if shift == 0 { 1.0 } else { 0.0 };
            assert!((lo - expect).abs() < 1e-14 && (hi - expect).abs() < 1e-14);
        }
        for p in 0..8 {
            let m: f64 = fb.dec_hi.iter().enumerate().map(|(k, h)| h * (k as f64).powi(p)).sum();
            let scale = (16f64).powi(p);
            assert!(m.abs() / scale < 1e-11, "moment {p}: {m}");
        }
    }
}
