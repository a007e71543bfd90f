//! Daily non-private O-D matrices, per-subscriber trip capping and the error
//! and suppression statistics used to compare releases.

use crate::cdr::{SubscriberId, TripRecord};
use crate::dp::PrivateODMatrix;
use crate::rng::{self, tag};
use crate::stats::{lower_median, nearest_rank};
use crate::{AdminLevel, Error, Result};
use rand::seq::index;
use std::collections::HashMap;

/// k×k daily trip counts, row = origin, column = destination. The diagonal is
/// structurally zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ODMatrix {
    pub day: u32,
    pub level: AdminLevel,
    k: usize,
    counts: Vec<u64>,
}

impl ODMatrix {
    pub fn zeros(day: u32, level: AdminLevel, k: usize) -> Self {
        Self {
            day,
            level,
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds from row-major counts. Fails on a wrong length or a non-zero
    /// diagonal entry.
    pub fn from_counts(day: u32, level: AdminLevel, k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Dimension(format!(
                "expected {} counts for k = {k}, got {}",
                k * k,
                counts.len()
            )));
        }
        if let Some(a) = (0..k).find(|&a| counts[a * k + a] != 0) {
            return Err(Error::Input(format!("diagonal entry ({a},{a}) must be zero")));
        }
        Ok(Self { day, level, k, counts })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, origin: usize, destination: usize) -> u64 {
        self.counts[origin * self.k + destination]
    }

    /// Sets an off-diagonal cell. Panics on the diagonal.
    pub fn set(&mut self, origin: usize, destination: usize, value: u64) {
        assert_ne!(origin, destination, "diagonal is structurally zero");
        self.counts[origin * self.k + destination] = value;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row(&self, origin: usize) -> &[u64] {
        &self.counts[origin * self.k..(origin + 1) * self.k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Off-diagonal cells as `(origin, destination, count)`, row-major.
    pub fn off_diagonal(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let k = self.k;
        (0..k).flat_map(move |a| {
            (0..k)
                .filter(move |&b| b != a)
                .map(move |b| (a, b, self.counts[a * k + b]))
        })
    }

    pub fn same_shape(&self, other: &ODMatrix) -> bool {
        self.day == other.day && self.level == other.level && self.k == other.k
    }
}

/// Counts trips of `day` and `level` into a k×k matrix. Trips of other days
/// or levels are ignored.
pub fn build_od(trips: &[TripRecord], day: u32, level: AdminLevel, k: usize) -> Result<ODMatrix> {
    let mut m = ODMatrix::zeros(day, level, k);
    for t in trips.iter().filter(|t| t.day == day && t.level == level) {
        for id in [t.origin, t.destination] {
            if id as usize >= k {
                return Err(Error::Bounds { id, k });
            }
        }
        if t.origin == t.destination {
            continue;
        }
        m.counts[t.origin as usize * k + t.destination as usize] += 1;
    }
    Ok(m)
}

/// Builds one matrix per day in `0..num_days`, in a single pass.
pub fn build_daily(trips: &[TripRecord], level: AdminLevel, k: usize, num_days: u32) -> Result<Vec<ODMatrix>> {
    let mut out: Vec<ODMatrix> = (0..num_days).map(|d| ODMatrix::zeros(d, level, k)).collect();
    for t in trips.iter().filter(|t| t.level == level) {
        for id in [t.origin, t.destination] {
            if id as usize >= k {
                return Err(Error::Bounds { id, k });
            }
        }
        if let Some(m) = out.get_mut(t.day as usize) {
            if t.origin != t.destination {
                m.counts[t.origin as usize * k + t.destination as usize] += 1;
            }
        }
    }
    Ok(out)
}

/// Limits every subscriber to at most `cap` trips, keeping a uniformly random
/// subset of size `cap` from anyone with more. Kept trips stay in input order.
///
/// The input should be a single (day, level) slice. The choice for each
/// subscriber depends only on `seed` and that subscriber's handle.
pub fn cap_trips(trips: &[TripRecord], cap: u32, seed: u64) -> Result<Vec<TripRecord>> {
    if cap < 1 {
        return Err(Error::Param("trip cap T must be at least 1".into()));
    }
    let mut by_subscriber: HashMap<SubscriberId, Vec<usize>> = HashMap::new();
    for (i, t) in trips.iter().enumerate() {
        by_subscriber.entry(t.subscriber).or_default().push(i);
    }
    let mut keep = vec![false; trips.len()];
    for (s, idx) in &by_subscriber {
        if idx.len() <= cap as usize {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            let mut r = rng::stream(seed, &[tag::CAP, s.0 as u64]);
            for j in index::sample(&mut r, idx.len(), cap as usize) {
                keep[idx[j]] = true;
            }
        }
    }
    Ok(trips.iter().zip(keep).filter_map(|(t, k)| k.then_some(*t)).collect())
}

/// Nearest-rank percentile of trips per subscriber-day (zero days excluded),
/// used as the cap T. Always ≥ 1.
pub fn t_from_percentile(trips: &[TripRecord], p: f64) -> Result<u32> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Param(format!("percentile must lie in (0, 100], got {p}")));
    }
    if trips.is_empty() {
        return Err(Error::Param("cannot take a percentile of an empty trip set".into()));
    }
    let mut per_day: HashMap<(SubscriberId, u32, AdminLevel), u32> = HashMap::new();
    for t in trips {
        *per_day.entry((t.subscriber, t.day, t.level)).or_default() += 1;
    }
    let counts: Vec<u32> = per_day.into_values().collect();
    Ok(nearest_rank(&counts, p).expect("non-empty").max(1))
}

/// Per-cell and median absolute / relative error of a release.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub median_abs_error: f64,
    pub median_rel_error: f64,
    pub per_cell_abs: Vec<f64>,
    pub per_cell_rel: Vec<f64>,
}

/// Compares a release against its source over all off-diagonal cells.
/// Relative error is `2|M̂ − M| / (M̂ + M)`, taken as 0 where both are 0.
pub fn error_stats(nonprivate: &ODMatrix, private: &PrivateODMatrix) -> Result<ErrorStats> {
    let released = private.matrix();
    if !nonprivate.same_shape(released) {
        return Err(Error::Dimension(format!(
            "non-private (day {}, level {}, k {}) vs private (day {}, level {}, k {})",
            nonprivate.day,
            nonprivate.level,
            nonprivate.k,
            released.day,
            released.level,
            released.k()
        )));
    }
    let mut per_cell_abs = Vec::with_capacity(nonprivate.k * nonprivate.k.saturating_sub(1));
    let mut per_cell_rel = Vec::with_capacity(per_cell_abs.capacity());
    for ((a, b, m), (_, _, mhat)) in nonprivate.off_diagonal().zip(released.off_diagonal()) {
        debug_assert!(a != b);
        let abs = (mhat as f64 - m as f64).abs();
        let denom = (mhat + m) as f64;
        per_cell_abs.push(abs);
        per_cell_rel.push(if denom == 0.0 { 0.0 } else { 2.0 * abs / denom });
    }
    Ok(ErrorStats {
        median_abs_error: lower_median(&per_cell_abs).unwrap_or(0.0),
        median_rel_error: lower_median(&per_cell_rel).unwrap_or(0.0),
        per_cell_abs,
        per_cell_rel,
    })
}

/// Share of off-diagonal cells with a count below `threshold`.
pub fn suppressed_share(matrix: &ODMatrix, threshold: f64) -> f64 {
    let cells = matrix.k * matrix.k.saturating_sub(1);
    if cells == 0 {
        return 0.0;
    }
    let below = matrix
        .off_diagonal()
        .filter(|&(_, _, c)| (c as f64) < threshold)
        .count();
    below as f64 / cells as f64
}
