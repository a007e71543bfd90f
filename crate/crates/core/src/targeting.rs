//! Post-shock out-migration totals and top-k destination targeting scores.

use crate::od::ODMatrix;
use crate::{AdminLevel, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Affected regions `A` and the consecutive days following a shock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShockWindow {
    pub affected: BTreeSet<u32>,
    pub days: Vec<u32>,
    pub level: AdminLevel,
}

impl ShockWindow {
    /// Window over `first..=last`.
    pub fn new(affected: impl IntoIterator<Item = u32>, first: u32, last: u32, level: AdminLevel) -> Result<Self> {
        if last < first {
            return Err(Error::Input(format!("window ends ({last}) before it starts ({first})")));
        }
        let w = Self {
            affected: affected.into_iter().collect(),
            days: (first..=last).collect(),
            level,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.affected.is_empty() {
            return Err(Error::Input("affected region set is empty".into()));
        }
        if self.days.is_empty() {
            return Err(Error::Input("window has no days".into()));
        }
        if self.days.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Input("window days must be consecutive".into()));
        }
        Ok(())
    }

    fn check_regions(&self, k: usize) -> Result<()> {
        match self.affected.iter().find(|&&a| a as usize >= k) {
            Some(&id) => Err(Error::Bounds { id, k }),
            None => Ok(()),
        }
    }

    /// The matrix for each window day, in window order.
    fn select<'a>(&self, matrices: &'a [ODMatrix]) -> Result<Vec<&'a ODMatrix>> {
        self.validate()?;
        self.days
            .iter()
            .map(|&d| {
                let m = matrices
                    .iter()
                    .find(|m| m.day == d && m.level == self.level)
                    .ok_or_else(|| Error::Input(format!("no admin-{} matrix for window day {d}", self.level)))?;
                self.check_regions(m.k())?;
                Ok(m)
            })
            .collect()
    }
}

/// Trips from `A` to regions outside `A` on one matrix.
fn out_trips(matrix: &ODMatrix, affected: &BTreeSet<u32>) -> u64 {
    affected
        .iter()
        .map(|&a| {
            matrix
                .row(a as usize)
                .iter()
                .enumerate()
                .filter(|(b, _)| !affected.contains(&(*b as u32)))
                .map(|(_, &c)| c)
                .sum::<u64>()
        })
        .sum()
}

/// Σ over window days, origins in `A` and destinations outside `A`.
pub fn total_out_migration(matrices: &[ODMatrix], window: &ShockWindow) -> Result<u64> {
    Ok(window
        .select(matrices)?
        .into_iter()
        .map(|m| out_trips(m, &window.affected))
        .sum())
}

/// `|private − nonprivate| / nonprivate`.
pub fn percent_error(private_total: u64, nonprivate_total: u64) -> Result<f64> {
    if nonprivate_total == 0 {
        return Err(Error::Domain("non-private total is zero".into()));
    }
    Ok(private_total.abs_diff(nonprivate_total) as f64 / nonprivate_total as f64)
}

/// Destinations outside `A` ranked by inflow from `A` (descending, ties by
/// ascending id). Zero-inflow destinations are never returned.
pub fn top_k_regions(matrix: &ODMatrix, affected: &BTreeSet<u32>, k: usize) -> Vec<u32> {
    let n = matrix.k();
    let mut inflow: Vec<(u64, u32)> = (0..n as u32)
        .filter(|b| !affected.contains(b))
        .map(|b| {
            let total = affected
                .iter()
                .filter(|&&a| (a as usize) < n)
                .map(|&a| matrix.get(a as usize, b as usize))
                .sum();
            (total, b)
        })
        .filter(|&(total, _)| total > 0)
        .collect();
    inflow.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    inflow.into_iter().take(k).map(|(_, b)| b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetingReport {
    pub total_out_private: u64,
    pub total_out_nonprivate: u64,
    pub percent_error: Option<f64>,
    pub k: usize,
    pub topk_private: Vec<Vec<u32>>,
    pub topk_nonprivate: Vec<Vec<u32>>,
    pub topk_accuracy: f64,
}

/// `Σ_d |top_k(private_d) ∩ top_k(nonprivate_d)| / (|days|·k)`.
pub fn topk_accuracy(private: &[ODMatrix], nonprivate: &[ODMatrix], window: &ShockWindow, k: usize) -> Result<f64> {
    Ok(topk_lists(private, nonprivate, window, k)?.2)
}

#[allow(clippy::type_complexity)]
fn topk_lists(
    private: &[ODMatrix],
    nonprivate: &[ODMatrix],
    window: &ShockWindow,
    k: usize,
) -> Result<(Vec<Vec<u32>>, Vec<Vec<u32>>, f64)> {
    if k == 0 {
        return Err(Error::Param("k must be at least 1".into()));
    }
    let p = window.select(private)?;
    let t = window.select(nonprivate)?;
    let mut hits = 0usize;
    let (mut lp, mut lt) = (Vec::new(), Vec::new());
    for (pm, tm) in p.into_iter().zip(t) {
        if pm.k() != tm.k() {
            return Err(Error::Dimension(format!(
                "day {}: k differs ({} vs {})",
                pm.day,
                pm.k(),
                tm.k()
            )));
        }
        let a = top_k_regions(pm, &window.affected, k);
        let b = top_k_regions(tm, &window.affected, k);
        hits += a.iter().filter(|r| b.contains(r)).count();
        lp.push(a);
        lt.push(b);
    }
    let acc = hits as f64 / (window.days.len() * k) as f64;
    Ok((lp, lt, acc))
}

/// Everything a targeting comparison reports for one `k`.
pub fn targeting_report(
    private: &[ODMatrix],
    nonprivate: &[ODMatrix],
    window: &ShockWindow,
    k: usize,
) -> Result<TargetingReport> {
    let total_out_private = total_out_migration(private, window)?;
    let total_out_nonprivate = total_out_migration(nonprivate, window)?;
    let (topk_private, topk_nonprivate, topk_accuracy) = topk_lists(private, nonprivate, window, k)?;
    Ok(TargetingReport {
        total_out_private,
        total_out_nonprivate,
        percent_error: percent_error(total_out_private, total_out_nonprivate).ok(),
        k,
        topk_private,
        topk_nonprivate,
        topk_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{privatize, ReleaseParams};
    use proptest::prelude::*;

    fn m(day: u32, k: usize, cells: &[(usize, usize, u64)]) -> ODMatrix {
        let mut x = ODMatrix::zeros(day, AdminLevel::Admin2, k);
        for &(a, b, v) in cells {
            x.set(a, b, v);
        }
        x
    }

    fn set(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn totals() {
        let w = ShockWindow::new([0], 0, 0, AdminLevel::Admin2).unwrap();
        assert_eq!(total_out_migration(&[m(0, 3, &[])], &w).unwrap(), 0);
        assert_eq!(
            total_out_migration(&[m(0, 3, &[(0, 1, 5), (0, 2, 7), (1, 0, 9)])], &w).unwrap(),
            12
        );

        let w = ShockWindow::new([0, 1], 3, 4, AdminLevel::Admin2).unwrap();
        let ms = [
            m(3, 3, &[(0, 1, 100), (0, 2, 4), (1, 2, 6)]),
            m(4, 3, &[(1, 2, 1), (2, 0, 50)]),
            m(5, 3, &[(0, 2, 1000)]),
        ];
        assert_eq!(total_out_migration(&ms, &w).unwrap(), 11);
        let missing = ShockWindow::new([0], 5, 6, AdminLevel::Admin2).unwrap();
        assert!(matches!(total_out_migration(&ms, &missing), Err(Error::Input(_))));
        let oob = ShockWindow::new([7], 3, 3, AdminLevel::Admin2).unwrap();
        assert!(matches!(total_out_migration(&ms, &oob), Err(Error::Bounds { .. })));
        assert!(ShockWindow::new([], 0, 1, AdminLevel::Admin2).is_err());
    }

    #[test]
    fn percent_errors() {
        assert!((percent_error(48_725, 49_994).unwrap() - 0.0254).abs() < 5e-5);
        // printed as 1.98%: 993 / 49,994 = 1.986%, truncated rather than rounded
        assert!((percent_error(49_001, 49_994).unwrap() - 0.0198).abs() < 1e-4);
        assert_eq!(percent_error(7, 7).unwrap(), 0.0);
        assert!((percent_error(90, 100).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(percent_error(5, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn top_k_ties_and_truncation() {
        let x = m(0, 5, &[(0, 1, 100), (0, 3, 50), (0, 2, 50), (0, 4, 10), (1, 2, 1000)]);
        assert_eq!(top_k_regions(&x, &set(&[0]), 3), vec![1, 2, 3]);
        assert_eq!(top_k_regions(&m(0, 4, &[]), &set(&[0]), 3), Vec::<u32>::new());
        assert_eq!(top_k_regions(&m(0, 4, &[(0, 2, 1)]), &set(&[0]), 3), vec![2]);
        // inflow is counted from A only, summed over all of A
        let y = m(0, 4, &[(0, 2, 3), (1, 2, 3), (0, 3, 5), (2, 3, 100)]);
        assert_eq!(top_k_regions(&y, &set(&[0, 1]), 2), vec![2, 3]);
    }

    #[test]
    fn accuracy_denominator() {
        let w = ShockWindow::new([0], 0, 6, AdminLevel::Admin2).unwrap();
        let truth: Vec<ODMatrix> = (0..7).map(|d| m(d, 6, &[(0, 1, 30), (0, 2, 20), (0, 3, 10)])).collect();
        assert_eq!(topk_accuracy(&truth, &truth, &w, 3).unwrap(), 1.0);

        // two days each lose one of the three true destinations: 19/21
        let mut private = truth.clone();
        for d in [2usize, 5] {
            private[d] = m(d as u32, 6, &[(0, 1, 30), (0, 2, 20), (0, 4, 15)]);
        }
        let acc = topk_accuracy(&private, &truth, &w, 3).unwrap();
        assert_eq!(acc, 19.0 / 21.0);
        assert_eq!(format!("{:.2}", 100.0 * acc), "90.48");
        assert!((acc - 0.9047).abs() < 1e-4);
        private[6] = m(6, 6, &[(0, 1, 30), (0, 2, 20), (0, 5, 1)]);
        let acc = topk_accuracy(&private, &truth, &w, 3).unwrap();
        assert_eq!(acc, 18.0 / 21.0);
        assert!((acc - 0.8571).abs() < 1e-4);
    }

    #[test]
    fn suppression_biases_totals_downward() {
        // every cross-A cell is in [1, τ)
        let truth = m(0, 4, &[(0, 1, 5), (0, 2, 10), (0, 3, 14), (1, 0, 3)]);
        let w = ShockWindow::new([0], 0, 0, AdminLevel::Admin2).unwrap();
        let t = total_out_migration(std::slice::from_ref(&truth), &w).unwrap();
        let n = 4000u64;
        let mean = (0..n)
            .map(|s| {
                let p = privatize(
                    &truth,
                    ReleaseParams {
                        epsilon: 0.5,
                        cap: 1,
                        tau: 15,
                        seed: s,
                    },
                )
                .unwrap();
                total_out_migration(&[p.into_matrix()], &w).unwrap() as f64
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean < t as f64, "{mean} vs {t}");
    }

    proptest! {
        #[test]
        fn additive_and_quantized(
            cells in prop::collection::vec(0u64..50, 7 * 25),
            split in 1usize..7,
            k in 1usize..5,
        ) {
            let ms: Vec<ODMatrix> = (0..7).map(|d| {
                let mut c = cells[d * 25..(d + 1) * 25].to_vec();
                (0..5).for_each(|a| c[a * 5 + a] = 0);
                ODMatrix::from_counts(d as u32, AdminLevel::Admin2, 5, c).unwrap()
            }).collect();
            let whole = ShockWindow::new([0, 1], 0, 6, AdminLevel::Admin2).unwrap();
            let left = ShockWindow::new([0, 1], 0, split as u32 - 1, AdminLevel::Admin2).unwrap();
            let right = ShockWindow::new([0, 1], split as u32, 6, AdminLevel::Admin2).unwrap();
            prop_assert_eq!(
                total_out_migration(&ms, &whole).unwrap(),
                total_out_migration(&ms, &left).unwrap() + total_out_migration(&ms, &right).unwrap()
            );

            let other: Vec<ODMatrix> = ms.iter().rev().enumerate().map(|(d, x)| {
                ODMatrix::from_counts(d as u32, AdminLevel::Admin2, 5, x.counts().to_vec()).unwrap()
            }).collect();
            let acc = topk_accuracy(&other, &ms, &whole, k).unwrap();
            let units = acc * (7 * k) as f64;
            prop_assert!((units - units.round()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&acc));

            // trips inside A do not change the ranking
            let mut bumped = ms[0].clone();
            bumped.set(0, 1, bumped.get(0, 1) + 999);
            prop_assert_eq!(top_k_regions(&bumped, &whole.affected, k), top_k_regions(&ms[0], &whole.affected, k));
        }
    }
}
