//! Small numeric helpers shared across modules.

/// Rounds to the nearest integer, sending exact halves toward +∞
/// (`2.5 → 3`, `-2.5 → -2`).
#[inline]
pub fn round_half_up(x: f64) -> f64 {
    let f = x.floor();
    if x - f >= 0.5 {
        f + 1.0
    } else {
        f
    }
}

/// Lower median: the element of rank ⌈n/2⌉ in sorted order. `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

/// Nearest-rank percentile: the ⌈p·n/100⌉-th order statistic (1-based).
pub fn nearest_rank<T: Copy + Ord>(values: &[T], p: f64) -> Option<T> {
    if values.is_empty() || !(p > 0.0 && p <= 100.0) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    // Subtract a hair so that exact products like 90·100/100 are not bumped
    // up by floating-point noise.
    let rank = ((p * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(v[rank - 1])
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_round_toward_positive_infinity() {
        assert_eq!(round_half_up(2.5), 3.0);
        assert_eq!(round_half_up(-2.5), -2.0);
        assert_eq!(round_half_up(-2.6), -3.0);
        assert_eq!(round_half_up(0.49999999999999994), 0.0);
        assert_eq!(round_half_up(-0.5), 0.0);
    }

    #[test]
    fn lower_median_picks_lower_middle() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&[]), None);
    }

    #[test]
    fn nearest_rank_matches_definition() {
        let v: Vec<u32> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 90.0), Some(90));
        assert_eq!(nearest_rank(&v, 99.0), Some(99));
        assert_eq!(nearest_rank(&v, 100.0), Some(100));
        assert_eq!(nearest_rank(&v, 0.5), Some(1));
        assert_eq!(nearest_rank(&[1u32, 1, 1, 1], 99.0), Some(1));
        assert_eq!(nearest_rank(&v, 0.0), None);
    }
}
