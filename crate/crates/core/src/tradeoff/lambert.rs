//! Lower real branch W₋₁ of the Lambert-W function.

use crate::{Error, Result};

/// W₋₁(x): the solution y ≤ −1 of `y·eʸ = x`, for x ∈ [−1/e, 0).
///
/// Bisection on `g(y) = y + ln(−y) − ln(−x)`, which is increasing on
/// (−∞, −1] and stays well scaled for x near 0⁻, followed by guarded Halley
/// steps on `y·eʸ − x`.
pub fn lambert_w_lower(x: f64) -> Result<f64> {
    let branch_point = -(-1.0f64).exp();
    if !(x < 0.0) || x.is_nan() {
        return Err(Error::Domain(format!("W₋₁ is defined on [-1/e, 0), got {x}")));
    }
    if x < branch_point {
        if branch_point - x <= 4.0 * f64::EPSILON * branch_point.abs() {
            return Ok(-1.0);
        }
        return Err(Error::Domain(format!("W₋₁ is defined on [-1/e, 0), got {x}")));
    }
    let log_neg_x = (-x).ln();
    let g = |y: f64| y + (-y).ln() - log_neg_x;

    let mut hi = -1.0;
    if g(hi) <= 0.0 {
        return Ok(-1.0);
    }
    // g(2L − 1) = L − 1 + ln(1 − 2L) < 0 for every L = ln(−x) ≤ −1.
    let mut lo = 2.0 * log_neg_x - 1.0;
    debug_assert!(g(lo) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut y = 0.5 * (lo + hi);

    // Halley on f(y) = y eʸ − x; keep the iterate inside the bracket.
    for _ in 0..4 {
        let ey = y.exp();
        let f = y * ey - x;
        if f == 0.0 {
            break;
        }
        let fp = ey * (y + 1.0);
        if fp == 0.0 {
            break;
        }
        let step = f / (fp - (y + 2.0) * f / (2.0 * (y + 1.0)));
        let next = y - step;
        if !next.is_finite() || next < lo - 1e-12 * lo.abs() || next > hi + 1e-12 * hi.abs() {
            break;
        }
        if (next * next.exp() - x).abs() >= f.abs() {
            break;
        }
        y = next;
    }
    Ok(y.min(-1.0))
}
