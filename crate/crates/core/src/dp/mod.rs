//! The private O-D release: per-cell Laplace noise with scale `T/ε`,
//! round-half-up, then suppression of everything below τ. Also private
//! regional population counts and the privacy ledger.
//!
//! Noise for a cell is a pure function of `(seed, day, row, col)`, so a
//! release reproduces exactly from its inputs regardless of scheduling.

mod ledger;

pub use ledger::{PrivacyLedger, Protection, Release};

use crate::cdr::PopulationVector;
use crate::od::ODMatrix;
use crate::rng::{centered_uniform, derive_seed, tag};
use crate::stats::round_half_up;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maps a uniform draw on (−1/2, 1/2) to a Laplace(0, `scale`) variate by
/// inverting the CDF: `−scale · sgn(u) · ln(1 − 2|u|)`.
#[inline]
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    -scale * u.signum() * (-2.0 * u.abs()).ln_1p()
}

/// One Laplace(0, `scale`) draw keyed by `key`.
pub fn laplace_sample(scale: f64, key: &[u64]) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Param(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok(laplace_from_uniform(centered_uniform(key), scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseParams {
    pub epsilon: f64,
    /// Sensitivity bound T: max trips one element (trip or person) adds.
    pub cap: u32,
    /// Suppression threshold τ.
    pub tau: u64,
    pub seed: u64,
}

impl ReleaseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Param(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.cap < 1 {
            return Err(Error::Param("trip cap T must be at least 1".into()));
        }
        Ok(())
    }

    /// Laplace scale λ = T/ε.
    pub fn scale(&self) -> f64 {
        self.cap as f64 / self.epsilon
    }
}

/// A released matrix with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateODMatrix {
    matrix: ODMatrix,
    pub params: ReleaseParams,
}

impl PrivateODMatrix {
    /// Wraps an already-released matrix (e.g. one read back from disk).
    pub fn from_parts(matrix: ODMatrix, params: ReleaseParams) -> Self {
        Self { matrix, params }
    }

    pub fn matrix(&self) -> &ODMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ODMatrix {
        self.matrix
    }
}

/// Noisy value of one cell before rounding: `value + Lap(T/ε)`.
#[inline]
pub fn noisy_cell(value: u64, params: &ReleaseParams, day: u32, row: usize, col: usize) -> f64 {
    let u = centered_uniform(&[params.seed, tag::CELL_NOISE, day as u64, row as u64, col as u64]);
    value as f64 + laplace_from_uniform(u, params.scale())
}

/// Rounds half up, then zeroes anything below τ or below zero.
#[inline]
pub fn post_process(noisy: f64, tau: u64) -> u64 {
    let r = round_half_up(noisy);
    if r < 0.0 || r < tau as f64 {
        0
    } else {
        r as u64
    }
}

/// Released value of one off-diagonal cell. [`privatize`] is this applied to
/// every off-diagonal cell.
#[inline]
pub fn privatize_cell(value: u64, params: &ReleaseParams, day: u32, row: usize, col: usize) -> u64 {
    post_process(noisy_cell(value, params, day, row, col), params.tau)
}

/// Releases `matrix` under ε-DP with sensitivity T. For person-level
/// protection the caller must already have capped each subscriber's trips
/// at T.
pub fn privatize(matrix: &ODMatrix, params: ReleaseParams) -> Result<PrivateODMatrix> {
    params.validate()?;
    let k = matrix.k();
    let mut out = ODMatrix::zeros(matrix.day, matrix.level, k);
    for (a, b, value) in matrix.off_diagonal() {
        out.set(a, b, privatize_cell(value, &params, matrix.day, a, b));
    }
    Ok(PrivateODMatrix { matrix: out, params })
}

/// Private population counts: Laplace(1/ε) per region (one person has one
/// home), rounded half up and clamped to at least 1.
pub fn privatize_population(pop: &PopulationVector, epsilon: f64, seed: u64) -> Result<PopulationVector> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Param(format!("epsilon must be positive, got {epsilon}")));
    }
    let counts = pop
        .counts
        .iter()
        .enumerate()
        .map(|(region, &n)| {
            let u = centered_uniform(&[seed, tag::POPULATION_NOISE, pop.level.number() as u64, region as u64]);
            let v = round_half_up(n as f64 + laplace_from_uniform(u, 1.0 / epsilon));
            v.max(1.0) as u64
        })
        .collect();
    Ok(PopulationVector {
        level: pop.level,
        counts,
    })
}

/// Seed for all releases at one ε under a master seed. Releases at different
/// ε get independent noise.
pub fn release_seed(seed: u64, epsilon: f64) -> u64 {
    derive_seed(seed, &[tag::RELEASE, epsilon.to_bits()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::AdminLevel;
    use proptest::prelude::*;

    fn params(epsilon: f64, cap: u32, tau: u64, seed: u64) -> ReleaseParams {
        ReleaseParams {
            epsilon,
            cap,
            tau,
            seed,
        }
    }

    #[test]
    fn zero_uniform_maps_to_zero() {
        assert_eq!(laplace_from_uniform(0.0, 3.0), 0.0);
        assert!(laplace_from_uniform(0.25, 1.0) > 0.0);
        assert!((laplace_from_uniform(0.25, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((laplace_from_uniform(-0.25, 1.0) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(laplace_sample(0.0, &[1]).is_err());
        assert!(laplace_sample(-1.0, &[1]).is_err());
        assert!(laplace_sample(1.0, &[1]).is_ok());
    }

    #[test]
    fn empirical_std_and_tail() {
        let n = 1_000_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let x = laplace_sample(2.0, &[11, i]).unwrap();
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((std - 2.0 * 2f64.sqrt()).abs() < 0.02, "std {std}");

        let tail = (0..n)
            .filter(|&i| laplace_sample(1.0, &[12, i]).unwrap().abs() > 3.0)
            .count();
        let freq = tail as f64 / n as f64;
        assert!((freq - (-3f64).exp()).abs() < 0.002, "tail {freq}");
    }

    #[test]
    fn tie_rounding_and_suppression() {
        assert_eq!(post_process(2.5, 0), 3);
        assert_eq!(post_process(-2.5, 0), 0);
        assert_eq!(post_process(14.5, 15), 15);
        assert_eq!(post_process(14.49, 15), 0);
        assert_eq!(post_process(-0.4, 0), 0);
    }

    #[test]
    fn parameters_are_validated() {
        let m = ODMatrix::zeros(0, AdminLevel::Admin2, 3);
        assert!(privatize(&m, params(0.0, 1, 15, 1)).is_err());
        assert!(privatize(&m, params(-1.0, 1, 15, 1)).is_err());
        assert!(privatize(&m, params(f64::NAN, 1, 15, 1)).is_err());
        assert!(privatize(&m, params(1.0, 0, 15, 1)).is_err());
        assert!(privatize_population(
            &PopulationVector {
                level: AdminLevel::Admin2,
                counts: vec![1]
            },
            0.0,
            1
        )
        .is_err());
    }

    #[test]
    fn empty_cell_suppression_frequency() {
        // M = 0, τ = 15, ε = 0.1, T = 1
        let p0 = params(0.1, 1, 15, 0);
        let n = 1_000_000u64;
        let suppressed = (0..n)
            .filter(|&s| privatize_cell(0, &ReleaseParams { seed: s, ..p0 }, 0, 0, 1) == 0)
            .count();
        let freq = suppressed as f64 / n as f64;
        let expected = 1.0 - 0.5 * (-1.45f64).exp();
        assert!((freq - expected).abs() < 0.002, "{freq} vs {expected}");
    }

    #[test]
    fn pre_rounding_noise_moments() {
        let p0 = params(0.5, 2, 0, 0);
        let lambda = p0.scale();
        let n = 1_000_000u64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for s in 0..n {
            let z = noisy_cell(100, &ReleaseParams { seed: s, ..p0 }, 3, 1, 2) - 100.0;
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        let sigma = 2f64.sqrt() * lambda;
        assert!(mean.abs() < 3.0 * sigma / 1e3, "mean {mean}");
        assert!((std / sigma - 1.0).abs() < 0.01, "std {std}");
    }

    #[test]
    fn population_noise() {
        let pop = PopulationVector {
            level: AdminLevel::Admin2,
            counts: vec![1_000_000, 0, 5],
        };
        let mut within = 0;
        for seed in 0..2000 {
            let p = privatize_population(&pop, 1.0, seed).unwrap();
            if p.counts[0].abs_diff(1_000_000) <= 30 {
                within += 1;
            }
            assert!(p.counts[1] >= 1);
        }
        assert!(within as f64 / 2000.0 >= 0.999);
        assert_eq!(
            privatize_population(&pop, 1.0, 77).unwrap(),
            privatize_population(&pop, 1.0, 77).unwrap()
        );
    }

    fn arb_matrix() -> impl Strategy<Value = ODMatrix> {
        (2usize..7).prop_flat_map(|k| {
            prop::collection::vec(0u64..200, k * k).prop_map(move |mut c| {
                for a in 0..k {
                    c[a * k + a] = 0;
                }
                ODMatrix::from_counts(4, AdminLevel::Admin3, k, c).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn output_structure(m in arb_matrix(), eps in 0.01f64..5.0, cap in 1u32..5, tau in 0u64..40, seed in any::<u64>()) {
            let p = params(eps, cap, tau, seed);
            let out = privatize(&m, p).unwrap();
            let r = out.matrix();
            prop_assert!(r.same_shape(&m));
            for a in 0..m.k() {
                prop_assert_eq!(r.get(a, a), 0);
            }
            for (_, _, v) in r.off_diagonal() {
                prop_assert!(v == 0 || v >= tau);
            }
            prop_assert_eq!(&privatize(&m, p).unwrap(), &out);
        }
    }
}
