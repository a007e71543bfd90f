//! Mobility-coupled SIR metapopulation model, prevalence-triggered
//! intervention decisions and the scorer that compares decisions driven by
//! private matrices against those driven by the true ones.

use crate::od::ODMatrix;
use crate::rng::{self, tag};
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryForm {
    /// `dR = μ·I/N`
    PaperPrinted,
    /// `dR = μ·I`
    PerCapita,
}

impl std::str::FromStr for RecoveryForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper-printed" | "paper_printed" | "printed" => Ok(RecoveryForm::PaperPrinted),
            "per-capita" | "per_capita" => Ok(RecoveryForm::PerCapita),
            other => Err(Error::Param(format!("unknown recovery form {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub beta: f64,
    pub alpha_mix: f64,
    pub mu: f64,
    pub dt: f64,
    pub threshold: f64,
    pub recovery_form: RecoveryForm,
}

impl Default for SirParams {
    fn default() -> Self {
        Self {
            beta: 0.10,
            alpha_mix: 1.0,
            mu: 0.04,
            dt: 1.0,
            threshold: 0.2,
            recovery_form: RecoveryForm::PaperPrinted,
        }
    }
}

impl SirParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.beta) || !ok(self.mu) || !ok(self.alpha_mix) {
            return Err(Error::Param(
                "beta, mu and alpha_mix must be finite and non-negative".into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Param(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Param(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Compartment values for every region at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirState {
    pub day: u32,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

impl SirState {
    pub fn k(&self) -> usize {
        self.n.len()
    }

    /// Prevalence `I/N` per region; regions with `N = 0` report 0.
    pub fn prevalence(&self) -> Vec<f64> {
        self.i
            .iter()
            .zip(&self.n)
            .map(|(&i, &n)| if n > 0.0 { i / n } else { 0.0 })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let k = self.n.len();
        if self.s.len() != k || self.i.len() != k || self.r.len() != k {
            return Err(Error::Dimension("SIR compartments differ in length".into()));
        }
        if let Some(n) = self.n.iter().find(|n| !(n.is_finite() && **n >= 0.0)) {
            return Err(Error::Numeric(format!("invalid region population {n}")));
        }
        Ok(())
    }
}

/// One explicit-Euler step driven by the day's mobility matrix.
///
/// Regions with `N = 0` are inert and contribute nothing to mixing.
pub fn sir_step(state: &SirState, matrix: &ODMatrix, params: &SirParams) -> Result<SirState> {
    state.check()?;
    let k = state.k();
    if matrix.k() != k {
        return Err(Error::Dimension(format!(
            "matrix is {0}×{0}, state has {k} regions",
            matrix.k()
        )));
    }
    let frac: Vec<f64> = (0..k)
        .map(|j| if state.n[j] > 0.0 { state.i[j] / state.n[j] } else { 0.0 })
        .collect();

    let mut next = SirState {
        day: state.day + 1,
        s: vec![0.0; k],
        i: vec![0.0; k],
        r: vec![0.0; k],
        n: state.n.clone(),
    };
    for a in 0..k {
        let n = state.n[a];
        if n == 0.0 {
            continue;
        }
        let (s, i, r) = (state.s[a], state.i[a], state.r[a]);
        let row = matrix.row(a);
        let (mut imported, mut outflow) = (0.0, 0.0);
        for (j, &m) in row.iter().enumerate() {
            if m > 0 {
                imported += m as f64 * frac[j];
                outflow += m as f64;
            }
        }
        let ds = -params.beta * s * i / n - params.alpha_mix * params.beta * s * imported / (n + outflow);
        let dr = match params.recovery_form {
            RecoveryForm::PaperPrinted => params.mu * i / n,
            RecoveryForm::PerCapita => params.mu * i,
        };
        let s1 = (s + ds * params.dt).clamp(0.0, n);
        let r1 = (r + dr * params.dt).clamp(0.0, n - s1);
        next.s[a] = s1;
        next.r[a] = r1;
        next.i[a] = (n - s1 - r1).max(0.0);
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Region(u32),
    /// A region drawn uniformly from `0..k`.
    Random {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialInfection {
    pub origin: Origin,
    pub fraction: f64,
}

impl InitialInfection {
    pub fn at(region: u32) -> Self {
        Self {
            origin: Origin::Region(region),
            fraction: 0.01,
        }
    }

    pub fn random(seed: u64) -> Self {
        Self {
            origin: Origin::Random { seed },
            fraction: 0.01,
        }
    }

    pub fn resolve_origin(&self, k: usize) -> Result<u32> {
        match self.origin {
            Origin::Region(r) if (r as usize) < k => Ok(r),
            Origin::Region(r) => Err(Error::Bounds { id: r, k }),
            Origin::Random { .. } if k == 0 => Err(Error::Input("no regions to seed".into())),
            Origin::Random { seed } => Ok(rng::stream(seed, &[tag::SIR]).gen_range(0..k as u32)),
        }
    }

    pub fn initial_state(&self, populations: &[f64]) -> Result<SirState> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Param(format!(
                "initial fraction must lie in (0, 1], got {}",
                self.fraction
            )));
        }
        let k = populations.len();
        let origin = self.resolve_origin(k)? as usize;
        let mut state = SirState {
            day: 0,
            s: populations.to_vec(),
            i: vec![0.0; k],
            r: vec![0.0; k],
            n: populations.to_vec(),
        };
        state.check()?;
        state.i[origin] = self.fraction * populations[origin];
        state.s[origin] = populations[origin] - state.i[origin];
        Ok(state)
    }
}

/// Runs one step per matrix; the trajectory has `matrices.len() + 1` states.
pub fn simulate(
    init: &InitialInfection,
    matrices: &[ODMatrix],
    populations: &[f64],
    params: &SirParams,
) -> Result<Vec<SirState>> {
    params.validate()?;
    let k = populations.len();
    for (t, m) in matrices.iter().enumerate() {
        if m.k() != k {
            return Err(Error::Dimension(format!(
                "matrix {t} has k = {}, populations have {k}",
                m.k()
            )));
        }
        if t > 0 && m.day != matrices[t - 1].day + 1 {
            return Err(Error::Dimension(format!(
                "matrix days must be consecutive: {} follows {}",
                m.day,
                matrices[t - 1].day
            )));
        }
    }
    let mut trajectory = Vec::with_capacity(matrices.len() + 1);
    trajectory.push(init.initial_state(populations)?);
    for m in matrices {
        let next = sir_step(trajectory.last().expect("non-empty"), m, params)?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Per-region, per-day intervention flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSeries {
    /// `decisions[region][day]`
    pub decisions: Vec<Vec<bool>>,
}

impl DecisionSeries {
    pub fn k(&self) -> usize {
        self.decisions.len()
    }

    pub fn num_days(&self) -> usize {
        self.decisions.first().map_or(0, Vec::len)
    }
}

/// Flags every region-day whose prevalence is at least `threshold`.
pub fn decide(trajectory: &[SirState], threshold: f64) -> Result<DecisionSeries> {
    let first = trajectory
        .first()
        .ok_or_else(|| Error::Input("empty trajectory".into()))?;
    let mut decisions = vec![Vec::with_capacity(trajectory.len()); first.k()];
    for state in trajectory {
        if state.k() != decisions.len() {
            return Err(Error::Dimension("trajectory states differ in region count".into()));
        }
        for (row, p) in decisions.iter_mut().zip(state.prevalence()) {
            row.push(p >= threshold);
        }
    }
    Ok(DecisionSeries { decisions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Regions contributing to the summary.
    pub regions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionScores {
    pub per_region: Vec<RegionScore>,
    pub accuracy: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
}

fn summarize(values: impl Iterator<Item = f64>) -> Option<MeanStd> {
    let v: Vec<f64> = values.collect();
    crate::stats::mean_std(&v).map(|(mean, std)| MeanStd {
        mean,
        std,
        regions: v.len(),
    })
}

/// Scores `private` against `nonprivate` as ground truth, region by region.
pub fn score_decisions(private: &DecisionSeries, nonprivate: &DecisionSeries) -> Result<DecisionScores> {
    let shape = |d: &DecisionSeries| (d.k(), d.num_days());
    if shape(private) != shape(nonprivate) || private.decisions.iter().any(|r| r.len() != nonprivate.num_days()) {
        return Err(Error::Dimension(format!(
            "decision shapes differ: {:?} vs {:?}",
            shape(private),
            shape(nonprivate)
        )));
    }
    let per_region: Vec<RegionScore> = private
        .decisions
        .iter()
        .zip(&nonprivate.decisions)
        .map(|(p, t)| {
            let (mut tp, mut fp, mut fneg, mut agree) = (0u64, 0u64, 0u64, 0u64);
            for (&p, &t) in p.iter().zip(t) {
                match (p, t) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
                agree += u64::from(p == t);
            }
            let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
            RegionScore {
                accuracy: ratio(agree, p.len() as u64).unwrap_or(1.0),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fneg),
            }
        })
        .collect();
    Ok(DecisionScores {
        accuracy: summarize(per_region.iter().map(|r| r.accuracy)),
        precision: summarize(per_region.iter().filter_map(|r| r.precision)),
        recall: summarize(per_region.iter().filter_map(|r| r.recall)),
        per_region,
    })
}
