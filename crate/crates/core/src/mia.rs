//! Membership-inference harness: for each target subscriber, an L1-penalized
//! logistic-regression adversary learns to tell from a day's released matrix
//! whether that subscriber travelled on that day. Attack strength is the test
//! AUC, averaged over targets.

use crate::cdr::{SubscriberId, TripRecord};
use crate::dp::{privatize, release_seed, ReleaseParams};
use crate::od::{build_daily, ODMatrix};
use crate::rng::{self, tag};
use crate::{AdminLevel, Error, Result};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

pub const PENALTY_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// One (day, features, label) observation for a single target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaInstance {
    pub day: u32,
    pub features: Vec<f64>,
    pub label: bool,
}

/// First day of the test period: the first `⌈d/2⌉` days train.
pub fn split_point(num_days: u32) -> u32 {
    num_days.div_ceil(2)
}

/// Days on which `subscriber` made at least one trip.
fn travel_days(trips: &[TripRecord], subscriber: SubscriberId) -> BTreeSet<u32> {
    trips
        .iter()
        .filter(|t| t.subscriber == subscriber)
        .map(|t| t.day)
        .collect()
}

fn features_for(matrix: &ODMatrix, weekday: bool) -> Vec<f64> {
    let mut f: Vec<f64> = matrix.counts().iter().map(|&c| c as f64).collect();
    if weekday {
        let mut one_hot = [0.0; 7];
        one_hot[(matrix.day % 7) as usize] = 1.0;
        f.extend_from_slice(&one_hot);
    }
    f
}

/// Labels every day by whether `subscriber` travelled, with that day's matrix
/// as features, and splits at day `split`. `matrices[d]` must be day `d`.
pub fn build_instances(
    trips: &[TripRecord],
    matrices: &[ODMatrix],
    subscriber: SubscriberId,
    split: u32,
    weekday: bool,
) -> Result<(Vec<MiaInstance>, Vec<MiaInstance>)> {
    let travelled = travel_days(trips, subscriber);
    if let Some(&d) = travelled.iter().find(|&&d| d as usize >= matrices.len()) {
        return Err(Error::Input(format!("no matrix covers trip day {d}")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (d, m) in matrices.iter().enumerate() {
        if m.day as usize != d {
            return Err(Error::Input(format!("matrix at position {d} is for day {}", m.day)));
        }
        let inst = MiaInstance {
            day: m.day,
            features: features_for(m, weekday),
            label: travelled.contains(&m.day),
        };
        if m.day < split {
            train.push(inst);
        } else {
            test.push(inst);
        }
    }
    Ok((train, test))
}

/// Uniform sample of `count` subscribers having at least `min_trips` trips on
/// each side of the split, in ascending id order. The flag is `true` when
/// fewer than `count` were eligible and all of them were returned.
pub fn sample_targets(
    trips: &[TripRecord],
    count: usize,
    min_trips: u32,
    split: u32,
    seed: u64,
) -> (Vec<SubscriberId>, bool) {
    let mut per: BTreeMap<SubscriberId, (u32, u32)> = BTreeMap::new();
    for t in trips {
        let e = per.entry(t.subscriber).or_default();
        if t.day < split {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let eligible: Vec<SubscriberId> = per
        .into_iter()
        .filter(|(_, (a, b))| *a >= min_trips && *b >= min_trips)
        .map(|(s, _)| s)
        .collect();
    if eligible.len() <= count {
        let saturated = eligible.len() < count;
        return (eligible, saturated);
    }
    let mut r = rng::stream(seed, &[tag::MIA, 0]);
    let mut picked: Vec<SubscriberId> = index::sample(&mut r, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort();
    (picked, false)
}

/// Indices to keep: every positive plus an equal-size uniform sample of the
/// negatives (all of them if there are fewer). `None` without positives.
pub fn balance_indices(labels: &[bool], seed: u64) -> Option<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut keep = pos.clone();
    if neg.len() <= pos.len() {
        keep.extend(&neg);
    } else {
        let mut r = rng::stream(seed, &[tag::MIA, 1]);
        keep.extend(index::sample(&mut r, neg.len(), pos.len()).into_iter().map(|i| neg[i]));
    }
    keep.sort_unstable();
    Some(keep)
}

/// Balanced subset in original order. `None` without positives.
pub fn balance(instances: &[MiaInstance], seed: u64) -> Option<Vec<MiaInstance>> {
    let labels: Vec<bool> = instances.iter().map(|i| i.label).collect();
    balance_indices(&labels, seed).map(|keep| keep.into_iter().map(|i| instances[i].clone()).collect())
}

/// Mann–Whitney AUC with ties counted as ½. `None` unless both classes occur.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&o| labels[o]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub cv_folds: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            cv_folds: 3,
            max_iter: 2000,
            tol: 1e-6,
        }
    }
}

/// Logistic model on standardized features. Dropped (constant) features
/// carry no weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub lambda: f64,
    pub intercept: f64,
    /// One weight per input feature; zero for dropped ones.
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LogisticModel {
    /// Linear score `b + wᵀz`; the predicted probability is its logistic.
    pub fn score(&self, features: &[f64]) -> f64 {
        let mut z = self.intercept;
        for (j, &x) in features.iter().enumerate() {
            let w = self.weights[j];
            if w != 0.0 {
                z += w * (x - self.mean[j]) / self.scale[j];
            }
        }
        z
    }

    pub fn scores(&self, rows: &[&[f64]]) -> Vec<f64> {
        rows.iter().map(|r| self.score(r)).collect()
    }
}

/// Dense standardized design over the non-constant columns.
struct Design {
    n: usize,
    cols: Vec<usize>,
    x: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Design {
    fn new(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut cols = Vec::new();
        for j in 0..p {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
            mean[j] = m;
            if var > 1e-12 {
                scale[j] = var.sqrt();
                cols.push(j);
            }
        }
        let mut x = Vec::with_capacity(n * cols.len());
        for r in rows {
            x.extend(cols.iter().map(|&j| (r[j] - mean[j]) / scale[j]));
        }
        Self {
            n,
            cols,
            x,
            mean,
            scale,
        }
    }

    fn p(&self) -> usize {
        self.cols.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p()..(i + 1) * self.p()]
    }

    /// Largest eigenvalue of `[1 X]ᵀ[1 X]`, by power iteration.
    fn spectral_norm_sq(&self) -> f64 {
        let p = self.p();
        let mut v = vec![1.0 / ((p + 1) as f64).sqrt(); p + 1];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let xv: Vec<f64> = (0..self.n)
                .map(|i| v[p] + self.row(i).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let mut w = vec![0.0; p + 1];
            for (i, &s) in xv.iter().enumerate() {
                for (wj, &xj) in w.iter_mut().zip(self.row(i)) {
                    *wj += xj * s;
                }
                w[p] += s;
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = norm;
            v = w.into_iter().map(|a| a / norm).collect();
            if (next - lambda).abs() <= 1e-9 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ISTA on mean logistic loss + λ‖w‖₁ (intercept unpenalized), warm-started
/// from `(b, w)`. Stops when the gradient mapping's sup-norm is below `tol`.
fn ista(d: &Design, y: &[f64], lambda: f64, b: &mut f64, w: &mut [f64], step: f64, opts: &FitOptions) {
    let (n, p) = (d.n, d.p());
    let mut grad = vec![0.0; p];
    for _ in 0..opts.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for i in 0..n {
            let row = d.row(i);
            let z = *b + row.iter().zip(w.iter()).map(|(a, c)| a * c).sum::<f64>();
            let r = (sigmoid(z) - y[i]) / n as f64;
            gb += r;
            for (g, &x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let mut moved = (gb).abs();
        *b -= step * gb;
        let thresh = step * lambda;
        for (wj, &g) in w.iter_mut().zip(&grad) {
            let u = *wj - step * g;
            let next = u.signum() * (u.abs() - thresh).max(0.0);
            moved = moved.max((*wj - next).abs() / step);
            *wj = next;
        }
        if moved <= opts.tol {
            break;
        }
    }
}

/// Fits one model per λ in `grid` (descending λ, warm-started) on `rows`.
fn fit_path(rows: &[&[f64]], labels: &[bool], grid: &[f64], opts: &FitOptions) -> Vec<LogisticModel> {
    let d = Design::new(rows);
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let l = d.spectral_norm_sq() / (4.0 * d.n as f64);
    let step = if l > 0.0 { 1.0 / (1.05 * l) } else { 1.0 };
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));

    let total = rows.first().map_or(0, |r| r.len());
    let mut b = 0.0;
    let mut w = vec![0.0; d.p()];
    let mut out: Vec<Option<LogisticModel>> = vec![None; grid.len()];
    for gi in order {
        ista(&d, &y, grid[gi], &mut b, &mut w, step, opts);
        let mut weights = vec![0.0; total];
        for (k, &j) in d.cols.iter().enumerate() {
            weights[j] = w[k];
        }
        out[gi] = Some(LogisticModel {
            lambda: grid[gi],
            intercept: b,
            weights,
            mean: d.mean.clone(),
            scale: d.scale.clone(),
        });
    }
    out.into_iter().map(|m| m.expect("every grid point fitted")).collect()
}

/// Fits at a fixed penalty.
pub fn fit_logreg_l1(rows: &[&[f64]], labels: &[bool], lambda: f64, opts: &FitOptions) -> Result<LogisticModel> {
    check_training_set(rows, labels, 1)?;
    Ok(fit_path(rows, labels, &[lambda], opts).remove(0))
}

fn check_training_set(rows: &[&[f64]], labels: &[bool], min_per_class: usize) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::Dimension("rows and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos < min_per_class || labels.len() - pos < min_per_class {
        return Err(Error::Input(format!(
            "need at least {min_per_class} instances per class, got {pos} positive / {} negative",
            labels.len() - pos
        )));
    }
    Ok(())
}

/// L1 logistic regression with λ chosen by mean validation AUC over
/// contiguous folds (rows must be in time order). Ties go to the larger λ.
pub fn train_logreg_l1(rows: &[&[f64]], labels: &[bool], grid: &[f64], opts: &FitOptions) -> Result<LogisticModel> {
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Param("penalty grid must be non-empty and non-negative".into()));
    }
    let folds = opts.cv_folds.max(2);
    check_training_set(rows, labels, folds)?;
    let n = rows.len();
    let mut auc_sum = vec![0.0; grid.len()];
    let mut auc_cnt = vec![0usize; grid.len()];
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let train_idx: Vec<usize> = (0..lo).chain(hi..n).collect();
        let tr_rows: Vec<&[f64]> = train_idx.iter().map(|&i| rows[i]).collect();
        let tr_lab: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
        if tr_lab.iter().all(|&l| l) || tr_lab.iter().all(|&l| !l) {
            continue;
        }
        let models = fit_path(&tr_rows, &tr_lab, grid, opts);
        for (g, m) in models.iter().enumerate() {
            let s = m.scores(&rows[lo..hi]);
            if let Some(a) = auc(&s, &labels[lo..hi]) {
                auc_sum[g] += a;
                auc_cnt[g] += 1;
            }
        }
    }
    let mean = |g: usize| {
        if auc_cnt[g] > 0 {
            auc_sum[g] / auc_cnt[g] as f64
        } else {
            f64::NEG_INFINITY
        }
    };
    let best = (0..grid.len())
        .max_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(grid[a].total_cmp(&grid[b])))
        .expect("non-empty grid");
    fit_logreg_l1(rows, labels, grid[best], opts)
}

/// Trips and matrices an attack runs against. Without explicit matrices the
/// non-private features are the daily matrices built from `trips`.
#[derive(Debug, Clone)]
pub struct MiaCorpus {
    pub trips: Vec<TripRecord>,
    pub level: AdminLevel,
    pub k: usize,
    pub num_days: u32,
    pub matrices: Option<Vec<ODMatrix>>,
}

impl MiaCorpus {
    fn nonprivate(&self) -> Result<Vec<ODMatrix>> {
        match &self.matrices {
            Some(m) => {
                if m.len() != self.num_days as usize {
                    return Err(Error::Input(format!("{} matrices for {} days", m.len(), self.num_days)));
                }
                Ok(m.clone())
            }
            None => {
                let trips: Vec<TripRecord> = self.trips.iter().copied().filter(|t| t.level == self.level).collect();
                build_daily(&trips, self.level, self.k, self.num_days)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaConfig {
    pub targets: usize,
    pub min_trips: u32,
    pub epsilons: Vec<f64>,
    pub cap: u32,
    pub tau: u64,
    pub seed: u64,
    pub penalty_grid: Vec<f64>,
    pub fit: FitOptions,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self {
            targets: 100,
            min_trips: 10,
            epsilons: vec![0.1, 0.5, 1.0],
            cap: 1,
            tau: 15,
            seed: 0,
            penalty_grid: PENALTY_GRID.to_vec(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaSetting {
    /// `None` for the non-private setting.
    pub epsilon: Option<f64>,
    pub train_private: bool,
    pub test_private: bool,
    pub weekday: bool,
}

impl MiaSetting {
    /// Non-private, then for each ε private/private and non-private/private;
    /// each without and with weekday features.
    pub fn all(epsilons: &[f64]) -> Vec<MiaSetting> {
        let mut base = vec![(None, false, false)];
        for &e in epsilons {
            base.push((Some(e), true, true));
            base.push((Some(e), false, true));
        }
        base.into_iter()
            .flat_map(|(epsilon, train_private, test_private)| {
                [false, true].map(|weekday| MiaSetting {
                    epsilon,
                    train_private,
                    test_private,
                    weekday,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaResult {
    pub setting: MiaSetting,
    /// Per target, in target order; `None` when the target was skipped.
    pub aucs: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaReport {
    pub targets: Vec<SubscriberId>,
    pub saturated: bool,
    pub results: Vec<MiaResult>,
}

fn private_series(matrices: &[ODMatrix], epsilon: f64, cfg: &MiaConfig) -> Result<Vec<ODMatrix>> {
    let seed = release_seed(cfg.seed, epsilon);
    matrices
        .iter()
        .map(|m| {
            privatize(
                m,
                ReleaseParams {
                    epsilon,
                    cap: cfg.cap,
                    tau: cfg.tau,
                    seed,
                },
            )
            .map(|p| p.into_matrix())
        })
        .collect()
}

/// Runs every setting of [`MiaSetting::all`] against the same targets and the
/// same balanced days.
pub fn run_attack(corpus: &MiaCorpus, cfg: &MiaConfig) -> Result<MiaReport> {
    run_settings(corpus, cfg, &MiaSetting::all(&cfg.epsilons))
}

pub fn run_settings(corpus: &MiaCorpus, cfg: &MiaConfig, settings: &[MiaSetting]) -> Result<MiaReport> {
    if corpus.num_days < 4 {
        return Err(Error::Input(format!("need at least 4 days, got {}", corpus.num_days)));
    }
    let nonprivate = corpus.nonprivate()?;
    let mut private: Vec<(u64, Vec<ODMatrix>)> = Vec::new();
    for s in settings {
        if let Some(e) = s.epsilon {
            if !private.iter().any(|(b, _)| *b == e.to_bits()) {
                private.push((e.to_bits(), private_series(&nonprivate, e, cfg)?));
            }
        }
    }
    let series = |s: &MiaSetting, private_side: bool| -> &[ODMatrix] {
        match s.epsilon {
            Some(e) if private_side => &private.iter().find(|(b, _)| *b == e.to_bits()).expect("privatized").1,
            _ => &nonprivate,
        }
    };

    let split = split_point(corpus.num_days);
    let trips: Vec<TripRecord> = corpus
        .trips
        .iter()
        .copied()
        .filter(|t| t.level == corpus.level)
        .collect();
    let (targets, saturated) = sample_targets(&trips, cfg.targets, cfg.min_trips, split, cfg.seed);
    let mut by_target: BTreeMap<SubscriberId, BTreeSet<u32>> = targets.iter().map(|&s| (s, BTreeSet::new())).collect();
    for t in &trips {
        if let Some(days) = by_target.get_mut(&t.subscriber) {
            days.insert(t.day);
        }
    }

    let per_target: Vec<Vec<Option<f64>>> = targets
        .par_iter()
        .map(|s| {
            let travelled = &by_target[s];
            let labels: Vec<bool> = (0..corpus.num_days).map(|d| travelled.contains(&d)).collect();
            let tseed = rng::derive_seed(cfg.seed, &[tag::MIA, 2, s.0 as u64]);
            let train_days = balance_indices(&labels[..split as usize], rng::derive_seed(tseed, &[0]));
            let test_days = balance_indices(&labels[split as usize..], rng::derive_seed(tseed, &[1]))
                .map(|v| v.into_iter().map(|i| i + split as usize).collect::<Vec<_>>());
            settings
                .iter()
                .map(|setting| {
                    let (train_days, test_days) = (train_days.as_ref()?, test_days.as_ref()?);
                    let train_src = series(setting, setting.train_private);
                    let test_src = series(setting, setting.test_private);
                    let tr: Vec<Vec<f64>> = train_days
                        .iter()
                        .map(|&d| features_for(&train_src[d], setting.weekday))
                        .collect();
                    let te: Vec<Vec<f64>> = test_days
                        .iter()
                        .map(|&d| features_for(&test_src[d], setting.weekday))
                        .collect();
                    let tr_rows: Vec<&[f64]> = tr.iter().map(Vec::as_slice).collect();
                    let te_rows: Vec<&[f64]> = te.iter().map(Vec::as_slice).collect();
                    let tr_lab: Vec<bool> = train_days.iter().map(|&d| labels[d]).collect();
                    let te_lab: Vec<bool> = test_days.iter().map(|&d| labels[d]).collect();
                    let model = train_logreg_l1(&tr_rows, &tr_lab, &cfg.penalty_grid, &cfg.fit).ok()?;
                    auc(&model.scores(&te_rows), &te_lab)
                })
                .collect()
        })
        .collect();

    let results = settings
        .iter()
        .enumerate()
        .map(|(i, &setting)| {
            let aucs: Vec<Option<f64>> = per_target.iter().map(|r| r[i]).collect();
            let done: Vec<f64> = aucs.iter().flatten().copied().collect();
            MiaResult {
                setting,
                skipped: aucs.len() - done.len(),
                mean_auc: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
                aucs,
            }
        })
        .collect();
    Ok(MiaReport {
        targets,
        saturated,
        results,
    })
}
