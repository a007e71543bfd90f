//! Closed-form privacy-accuracy calculators for the private O-D release:
//! tail probabilities for suppression and cell error, exact ε selection for
//! a target error tolerance, and the moment-based ε / τ heuristics.
//!
//! The four tail functions return the closed forms as published. Two of them
//! do not describe the rounded release exactly; the `exact_*` companions
//! compute the probabilities of the actual round-half-up mechanism:
//!
//! * non-suppression: `round(M + η) ≥ τ` holds iff `η ≥ τ − 0.5 − M`, so the
//!   exact probability is `1 − ½·exp(ε/T·(τ − 0.5 − M))`; the closed form
//!   uses `τ + 0.5` and understates it.
//! * difference error: the closed form is exact for the difference of the
//!   *unrounded* noises, `P(|η₂ − η₁| ≥ α + 1)`. Rounding each release first
//!   makes large differences more likely.

mod lambert;

pub use lambert::lambert_w_lower;

use crate::stats::round_half_up;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of a single-cell tail question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailQuery {
    pub alpha: u64,
    pub epsilon: f64,
    pub cap: u32,
    pub tau: u64,
    pub cell_value: u64,
}

impl TailQuery {
    fn rate(&self) -> Result<f64> {
        rate(self.epsilon, self.cap)
    }
}

/// `ε / T`, validated.
fn rate(epsilon: f64, cap: u32) -> Result<f64> {
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if cap < 1 {
        return Err(Error::Domain("trip cap T must be at least 1".into()));
    }
    Ok(epsilon / cap as f64)
}

/// Probability that a cell suppressed before noising (`M < τ`) is still
/// suppressed after: `1 − ½·exp(−ε/T·(τ − 0.5 − M))`.
pub fn prob_suppression_preserved(q: &TailQuery) -> Result<f64> {
    let r = q.rate()?;
    if q.cell_value >= q.tau {
        return Err(Error::Domain(format!(
            "cell value {} is not below tau {}",
            q.cell_value, q.tau
        )));
    }
    let gap = q.tau as f64 - 0.5 - q.cell_value as f64;
    Ok(1.0 - 0.5 * (-r * gap).exp())
}

/// Probability that a cell at or above τ stays unsuppressed, as published:
/// `1 − ½·exp(ε/T·(τ + 0.5 − M))`. See [`exact_prob_nonsuppression_preserved`].
pub fn prob_nonsuppression_preserved(q: &TailQuery) -> Result<f64> {
    let r = q.rate()?;
    if q.cell_value < q.tau {
        return Err(Error::Domain(format!(
            "cell value {} is below tau {}",
            q.cell_value, q.tau
        )));
    }
    Ok(1.0 - 0.5 * (r * (q.tau as f64 + 0.5 - q.cell_value as f64)).exp())
}

/// Exact non-suppression probability under round-half-up:
/// `1 − ½·exp(ε/T·(τ − 0.5 − M))` for `M ≥ τ`.
pub fn exact_prob_nonsuppression_preserved(q: &TailQuery) -> Result<f64> {
    let r = q.rate()?;
    if q.cell_value < q.tau {
        return Err(Error::Domain(format!(
            "cell value {} is below tau {}",
            q.cell_value, q.tau
        )));
    }
    Ok(1.0 - 0.5 * (r * (q.tau as f64 - 0.5 - q.cell_value as f64)).exp())
}

/// Probability that an unsuppressed cell is off by more than α:
/// `exp(−ε/T·(α + 0.5))`.
pub fn prob_error_exceeds(alpha: u64, epsilon: f64, cap: u32) -> Result<f64> {
    let r = rate(epsilon, cap)?;
    Ok((-r * (alpha as f64 + 0.5)).exp())
}

/// Probability that the change of a cell between two releases is off by more
/// than α, as published: `exp(−x)·(x + 2)/2` with `x = ε/T·(α + 1)`.
pub fn prob_diff_error_exceeds(alpha: u64, epsilon: f64, cap: u32) -> Result<f64> {
    let r = rate(epsilon, cap)?;
    let x = r * (alpha as f64 + 1.0);
    Ok((-x).exp() * (x + 2.0) / 2.0)
}

/// `P(|round(η₂) − round(η₁)| > α)` for independent η ~ Lap(T/ε), by direct
/// summation over the distribution of the rounded noise.
pub fn exact_prob_diff_error_exceeds(alpha: u64, epsilon: f64, cap: u32) -> Result<f64> {
    let r = rate(epsilon, cap)?;
    // R = round(η) is symmetric with
    //   P(R = 0) = 1 − e^{−r/2},  P(R = n) = ½·e^{−r(|n| − ½)}·(1 − e^{−r}),
    // and tail S(j) = P(R ≥ j) = ½e^{−r(j − ½)} for j ≥ 1, 1 − ½e^{r(j − ½)} for j ≤ 0.
    let pmf = |n: i64| -> f64 {
        if n == 0 {
            -(-0.5 * r).exp_m1()
        } else {
            0.5 * (-r * (n.unsigned_abs() as f64 - 0.5)).exp() * -(-r).exp_m1()
        }
    };
    let tail = |j: i64| -> f64 {
        if j >= 1 {
            0.5 * (-r * (j as f64 - 0.5)).exp()
        } else {
            1.0 - 0.5 * (r * (j as f64 - 0.5)).exp()
        }
    };
    let m = alpha as i64 + 1;
    let reach = (60.0 / r).ceil() as i64 + 2;
    // P(R₂ − R₁ ≥ m) = Σₙ P(R₁ = n)·S(n + m); symmetric in sign.
    let one_side: f64 = (-reach - m..=reach).map(|n| pmf(n) * tail(n + m)).sum();
    Ok((2.0 * one_side).min(1.0))
}

/// Target accuracy: error at most α with probability at least 1 − β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonQuery {
    pub alpha: u64,
    pub beta: f64,
    pub cap: u32,
}

/// Smallest ε with `prob_error_exceeds(α, ε, T) ≤ β`:
/// `−T·ln(β)/(α + 0.5)`. Callers restricted to an ε grid should round up.
pub fn epsilon_for_static(q: &EpsilonQuery) -> Result<f64> {
    if !(q.beta > 0.0 && q.beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1), got {}", q.beta)));
    }
    if q.cap < 1 {
        return Err(Error::Domain("trip cap T must be at least 1".into()));
    }
    Ok(-(q.cap as f64) * q.beta.ln() / (q.alpha as f64 + 0.5))
}

/// Largest β accepted by [`epsilon_for_dynamic`]: ½e⁻¹.
pub fn dynamic_beta_limit() -> f64 {
    0.5 * (-1.0f64).exp()
}

/// Smallest ε with `prob_diff_error_exceeds(α, ε, T) ≤ β`:
/// `T/(α + 1)·(−2 − W₋₁(−2β·e⁻²))`, for β ∈ (0, ½e⁻¹].
pub fn epsilon_for_dynamic(q: &EpsilonQuery) -> Result<f64> {
    let limit = dynamic_beta_limit();
    if !(q.beta > 0.0 && q.beta <= limit) {
        return Err(Error::Domain(format!(
            "beta must lie in (0, {limit:.6}], got {}",
            q.beta
        )));
    }
    if q.cap < 1 {
        return Err(Error::Domain("trip cap T must be at least 1".into()));
    }
    let w = lambert_w_lower(-2.0 * q.beta * (-2.0f64).exp())?;
    Ok(q.cap as f64 / (q.alpha as f64 + 1.0) * (-2.0 - w))
}

/// ε at which the noise standard deviation √2·T/ε equals α.
pub fn heuristic_epsilon(alpha: f64, cap: u32) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok(std::f64::consts::SQRT_2 * cap as f64 / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    Unchanged,
    Minus,
    Plus,
}

impl std::str::FromStr for TauMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unchanged" | "same" | "=" => Ok(TauMode::Unchanged),
            "minus" | "-" => Ok(TauMode::Minus),
            "plus" | "+" => Ok(TauMode::Plus),
            other => Err(Error::Param(format!("unknown tau mode {other:?}"))),
        }
    }
}

/// Suppression threshold from an existing standard `s`: `s`, or `s ∓ √2/ε`
/// rounded half up (and floored at 0).
pub fn heuristic_tau(s: u64, epsilon: f64, mode: TauMode) -> Result<u64> {
    if !(epsilon > 0.0) || epsilon.is_nan() {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let shift = std::f64::consts::SQRT_2 / epsilon;
    let v = match mode {
        TauMode::Unchanged => return Ok(s),
        TauMode::Minus => round_half_up(s as f64 - shift),
        TauMode::Plus => round_half_up(s as f64 + shift),
    };
    Ok(v.max(0.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{laplace_from_uniform, noisy_cell, ReleaseParams};
    use crate::rng::centered_uniform;
    use crate::stats::round_half_up;

    fn q(alpha: u64, epsilon: f64, cap: u32, tau: u64, cell_value: u64) -> TailQuery {
        TailQuery {
            alpha,
            epsilon,
            cap,
            tau,
            cell_value,
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Frequency of `pred` on the rounded noisy value of a cell.
    fn mc_cell(value: u64, epsilon: f64, cap: u32, n: u64, pred: impl Fn(f64) -> bool) -> f64 {
        let base = ReleaseParams {
            epsilon,
            cap,
            tau: 0,
            seed: 0,
        };
        let hits = (0..n)
            .filter(|&s| {
                pred(round_half_up(noisy_cell(
                    value,
                    &ReleaseParams { seed: s, ..base },
                    0,
                    0,
                    1,
                )))
            })
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn suppression_preserved_examples() {
        let p = prob_suppression_preserved(&q(0, 0.1, 1, 15, 0)).unwrap();
        assert!(close(p, 1.0 - 0.5 * (-1.45f64).exp(), 1e-12));
        assert!(close(p, 0.88272, 1e-5));
        let mc = mc_cell(0, 0.1, 1, 1_000_000, |v| v < 15.0);
        assert!(close(mc, p, 0.002), "mc {mc} vs {p}");

        assert!(close(
            prob_suppression_preserved(&q(0, 100.0, 1, 15, 14)).unwrap(),
            1.0,
            1e-12
        ));
        assert!(close(
            prob_suppression_preserved(&q(0, 1e-9, 1, 1, 0)).unwrap(),
            0.5,
            1e-6
        ));
        assert!(prob_suppression_preserved(&q(0, 1.0, 1, 15, 15)).is_err());
    }

    #[test]
    fn nonsuppression_preserved_examples() {
        let p = prob_nonsuppression_preserved(&q(0, 0.5, 1, 15, 30)).unwrap();
        assert!(close(p, 1.0 - 0.5 * (-7.25f64).exp(), 1e-12));
        let mc = mc_cell(30, 0.5, 1, 1_000_000, |v| v >= 15.0);
        assert!(close(mc, p, 0.002), "mc {mc} vs {p}");

        let at_tau = prob_nonsuppression_preserved(&q(0, 1.0, 1, 15, 15)).unwrap();
        assert!(close(at_tau, 1.0 - 0.5 * 0.5f64.exp(), 1e-12));
        assert!(close(at_tau, 0.17564, 1e-5));
        assert!(close(
            prob_nonsuppression_preserved(&q(0, 1.0, 1, 15, 500)).unwrap(),
            1.0,
            1e-12
        ));
        assert!(prob_nonsuppression_preserved(&q(0, 1.0, 1, 15, 14)).is_err());
    }

    #[test]
    fn exact_nonsuppression_matches_simulation_at_boundary() {
        let exact = exact_prob_nonsuppression_preserved(&q(0, 1.0, 1, 15, 15)).unwrap();
        let mc = mc_cell(15, 1.0, 1, 1_000_000, |v| v >= 15.0);
        assert!(close(mc, exact, 0.002), "mc {mc} vs exact {exact}");
        // the published form is far off at M = τ
        assert!(exact - prob_nonsuppression_preserved(&q(0, 1.0, 1, 15, 15)).unwrap() > 0.5);
    }

    #[test]
    fn error_exceeds_examples() {
        let p = prob_error_exceeds(10, 0.285, 1).unwrap();
        assert!(close(p, (-2.9925f64).exp(), 1e-12));
        assert!(close(p, 0.0501, 1e-4));
        let mc = mc_cell(1000, 0.285, 1, 1_000_000, |v| (v - 1000.0).abs() > 10.0);
        assert!(close(mc, p, 0.002));

        let p0 = prob_error_exceeds(0, 1.0, 1).unwrap();
        assert!(close(p0, 0.60653, 1e-5));
        let mc0 = mc_cell(1000, 1.0, 1, 1_000_000, |v| (v - 1000.0).abs() > 0.0);
        assert!(close(mc0, p0, 0.002));
        assert!(prob_error_exceeds(3, 1e6, 1).unwrap() < 1e-100);
    }

    #[test]
    fn diff_error_closed_form_is_the_unrounded_tail() {
        let p = prob_diff_error_exceeds(0, 1.0, 1).unwrap();
        assert!(close(p, (-1.0f64).exp() * 1.5, 1e-12));
        assert!(close(p, 0.55181, 1e-5));
        let p5 = prob_diff_error_exceeds(5, 0.5, 1).unwrap();
        assert!(close(p5, (-3.0f64).exp() * 2.5, 1e-12));
        assert!(close(p5, 0.12447, 1e-5));
        assert!(close(prob_diff_error_exceeds(0, 1e-9, 1).unwrap(), 1.0, 1e-8));

        // The closed form is the tail of the unrounded difference |η₂ − η₁| ≥ α + 1.
        let n = 1_000_000u64;
        let hits = (0..n)
            .filter(|&i| {
                let a = laplace_from_uniform(centered_uniform(&[1, i]), 2.0);
                let b = laplace_from_uniform(centered_uniform(&[2, i]), 2.0);
                (a - b).abs() >= 6.0
            })
            .count();
        let want = prob_diff_error_exceeds(5, 0.5, 1).unwrap();
        assert!(close(hits as f64 / n as f64, want, 0.002));
    }

    #[test]
    fn exact_diff_matches_rounded_simulation() {
        for (alpha, eps, cap) in [(0u64, 1.0, 1u32), (5, 0.5, 1), (3, 1.0, 5)] {
            let lambda = cap as f64 / eps;
            let n = 1_000_000u64;
            let hits = (0..n)
                .filter(|&i| {
                    let a = round_half_up(laplace_from_uniform(centered_uniform(&[3, i]), lambda));
                    let b = round_half_up(laplace_from_uniform(centered_uniform(&[4, i]), lambda));
                    (a - b).abs() > alpha as f64
                })
                .count();
            let exact = exact_prob_diff_error_exceeds(alpha, eps, cap).unwrap();
            assert!(
                close(hits as f64 / n as f64, exact, 0.002),
                "{alpha} {eps} {cap}: {exact}"
            );
        }
        // values checked against an independent double sum in Python
        assert!(close(
            exact_prob_diff_error_exceeds(0, 1.0, 1).unwrap(),
            0.7601801774695459,
            1e-12
        ));
        assert!(close(
            exact_prob_diff_error_exceeds(5, 0.5, 1).unwrap(),
            0.15271658859080406,
            1e-12
        ));
    }

    #[test]
    fn static_epsilon_examples() {
        let e = epsilon_for_static(&EpsilonQuery {
            alpha: 10,
            beta: 0.05,
            cap: 1,
        })
        .unwrap();
        assert!(close(e, -(0.05f64).ln() / 10.5, 1e-15));
        assert_eq!(format!("{e:.3}"), "0.285");
        let e5 = epsilon_for_static(&EpsilonQuery {
            alpha: 10,
            beta: 0.05,
            cap: 5,
        })
        .unwrap();
        assert!(close(e5, 5.0 * e, 1e-12));
        assert!(close(e5, 1.426, 1e-3));
        assert!(
            epsilon_for_static(&EpsilonQuery {
                alpha: 10,
                beta: 1.0 - 1e-12,
                cap: 1
            })
            .unwrap()
                < 1e-11
        );
        assert!(epsilon_for_static(&EpsilonQuery {
            alpha: 10,
            beta: 0.0,
            cap: 1
        })
        .is_err());
        assert!(epsilon_for_static(&EpsilonQuery {
            alpha: 10,
            beta: 1.0,
            cap: 1
        })
        .is_err());
    }

    #[test]
    fn dynamic_epsilon_examples() {
        let e = epsilon_for_dynamic(&EpsilonQuery {
            alpha: 10,
            beta: 0.05,
            cap: 1,
        })
        .unwrap();
        assert!(close(e, 0.374, 1e-3), "{e}");
        let e2 = epsilon_for_dynamic(&EpsilonQuery {
            alpha: 10,
            beta: 0.05,
            cap: 2,
        })
        .unwrap();
        assert!(close(e2, 2.0 * e, 1e-12));

        let beta = dynamic_beta_limit();
        for (alpha, cap) in [(0u64, 1u32), (7, 3)] {
            let e = epsilon_for_dynamic(&EpsilonQuery { alpha, beta, cap }).unwrap();
            let back = prob_diff_error_exceeds(alpha, e, cap).unwrap();
            assert!(close(back / beta, 1.0, 1e-9));
        }
        assert!(epsilon_for_dynamic(&EpsilonQuery {
            alpha: 1,
            beta: beta * 1.0001,
            cap: 1
        })
        .is_err());
        assert!(epsilon_for_dynamic(&EpsilonQuery {
            alpha: 1,
            beta: 0.0,
            cap: 1
        })
        .is_err());
    }

    #[test]
    fn heuristics() {
        assert!(close(heuristic_epsilon(10.0, 1).unwrap(), 0.14, 0.005));
        assert!(close(heuristic_epsilon(50.0, 1).unwrap(), 0.028, 0.0005));
        assert!(close(
            heuristic_epsilon(std::f64::consts::SQRT_2, 1).unwrap(),
            1.0,
            1e-15
        ));
        assert!(heuristic_epsilon(0.0, 1).is_err());

        assert_eq!(heuristic_tau(15, 0.5, TauMode::Unchanged).unwrap(), 15);
        assert_eq!(heuristic_tau(15, 0.5, TauMode::Plus).unwrap(), 18);
        assert_eq!(heuristic_tau(1, 0.1, TauMode::Minus).unwrap(), 0);
        assert_eq!(heuristic_tau(15, 0.5, TauMode::Minus).unwrap(), 12);
    }

    #[test]
    fn tails_monotone_in_epsilon_and_cap() {
        let eps = [0.05, 0.1, 0.3, 0.5, 1.0, 2.0];
        for cap in [1u32, 2, 5] {
            for w in eps.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                assert!(prob_error_exceeds(4, hi, cap).unwrap() <= prob_error_exceeds(4, lo, cap).unwrap());
                assert!(prob_diff_error_exceeds(4, hi, cap).unwrap() <= prob_diff_error_exceeds(4, lo, cap).unwrap());
                // failure probabilities of the suppression tails: 1 − p
                let s = |e| 1.0 - prob_suppression_preserved(&q(0, e, cap, 15, 3)).unwrap();
                assert!(s(hi) <= s(lo));
                let ns = |e| 1.0 - prob_nonsuppression_preserved(&q(0, e, cap, 15, 40)).unwrap();
                assert!(ns(hi) <= ns(lo));
            }
            assert!(prob_error_exceeds(4, 0.5, cap + 1).unwrap() >= prob_error_exceeds(4, 0.5, cap).unwrap());
            assert!(prob_diff_error_exceeds(4, 0.5, cap + 1).unwrap() >= prob_diff_error_exceeds(4, 0.5, cap).unwrap());
        }
    }
}
