//! tune, simulate-sir, target, mia and report.

use super::pipeline::shape;
use super::{
    check_epsilons, create_dir, fmt_opt, require_file, MiaArgs, ReportArgs, SimulateSirArgs, TableFormat, TargetArgs,
    TuneArgs,
};
use crate::dp::{privatize, privatize_population, release_seed, PrivateODMatrix, ReleaseParams};
use crate::epi::{decide, score_decisions, simulate, InitialInfection, Origin, RecoveryForm, SirParams, SirState};
use crate::io::{self, KvConfig, MatrixSidecar, ReleaseSidecar};
use crate::mia::{run_attack, MiaConfig, MiaCorpus};
use crate::od::{error_stats, suppressed_share, ODMatrix};
use crate::targeting::{targeting_report, top_k_regions, ShockWindow};
use crate::tradeoff::{dynamic_beta_limit, epsilon_for_dynamic, epsilon_for_static, heuristic_epsilon, EpsilonQuery};
use crate::{Error, Result};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One line of the ε tuning table. Empty cells mean the formula does not
/// apply (β above the dynamic limit, α = 0 for the heuristic).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneRow {
    pub alpha: u64,
    pub beta: f64,
    pub cap: u32,
    pub epsilon_static: f64,
    pub epsilon_dynamic: Option<f64>,
    pub epsilon_heuristic: Option<f64>,
}

pub fn tune_table(alphas: &[u64], betas: &[f64], caps: &[u32]) -> Result<Vec<TuneRow>> {
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        return Err(Error::Param(format!("beta must lie in (0, 1), got {b}")));
    }
    if caps.contains(&0) {
        return Err(Error::Param("T must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &cap in caps {
        for &alpha in alphas {
            for &beta in betas {
                let q = EpsilonQuery { alpha, beta, cap };
                rows.push(TuneRow {
                    alpha,
                    beta,
                    cap,
                    epsilon_static: epsilon_for_static(&q)?,
                    epsilon_dynamic: (beta <= dynamic_beta_limit())
                        .then(|| epsilon_for_dynamic(&q))
                        .transpose()?,
                    epsilon_heuristic: heuristic_epsilon(alpha as f64, cap).ok(),
                });
            }
        }
    }
    Ok(rows)
}

const TUNE_HEADER: [&str; 6] = [
    "alpha",
    "beta",
    "T",
    "epsilon_static",
    "epsilon_dynamic",
    "epsilon_heuristic",
];

fn write_tune_csv<W: Write>(rows: &[TuneRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TUNE_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.beta.to_string(),
            r.cap.to_string(),
            r.epsilon_static.to_string(),
            fmt_opt(r.epsilon_dynamic),
            fmt_opt(r.epsilon_heuristic),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tune_text<W: Write>(rows: &[TuneRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "{:>6} {:>8} {:>4} {:>14} {:>15} {:>17}",
        TUNE_HEADER[0], TUNE_HEADER[1], TUNE_HEADER[2], TUNE_HEADER[3], TUNE_HEADER[4], TUNE_HEADER[5]
    )?;
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    for r in rows {
        writeln!(
            out,
            "{:>6} {:>8} {:>4} {:>14} {:>15} {:>17}",
            r.alpha,
            r.beta,
            r.cap,
            cell(Some(r.epsilon_static)),
            cell(r.epsilon_dynamic),
            cell(r.epsilon_heuristic)
        )?;
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::Input(format!("csv write failed: {other:?}")),
    }
}

pub(super) fn tune(a: &TuneArgs) -> Result<()> {
    let rows = tune_table(&a.alpha, &a.beta, &a.caps)?;
    let emit = |w: &mut dyn Write| match a.format {
        TableFormat::Csv => write_tune_csv(&rows, w),
        TableFormat::Text => write_tune_text(&rows, w),
    };
    match &a.out {
        Some(p) => io::atomic_write(p, |w| emit(w)),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            emit(&mut lock)
        }
    }
}

fn load_matrices_checked(path: &Path) -> Result<(MatrixSidecar, Vec<ODMatrix>)> {
    require_file(path, "matrix file")?;
    io::load_matrices(path)
}

/// Private copies of `matrices` at one ε, keyed exactly as `privatize` keys them.
fn private_series(matrices: &[ODMatrix], epsilon: f64, cap: u32, tau: u64, seed: u64) -> Result<Vec<ODMatrix>> {
    let params = ReleaseParams {
        epsilon,
        cap,
        tau,
        seed: release_seed(seed, epsilon),
    };
    matrices
        .iter()
        .map(|m| privatize(m, params).map(PrivateODMatrix::into_matrix))
        .collect()
}

fn write_trajectory(path: &Path, traj: &[SirState]) -> Result<()> {
    io::atomic_write(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["day", "region", "s", "i", "r", "n"]).map_err(csv_err)?;
        for st in traj {
            for j in 0..st.k() {
                c.write_record([
                    st.day.to_string(),
                    j.to_string(),
                    st.s[j].to_string(),
                    st.i[j].to_string(),
                    st.r[j].to_string(),
                    st.n[j].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        c.flush()?;
        Ok(())
    })
}

pub(super) fn simulate_sir(a: &SimulateSirArgs) -> Result<()> {
    require_file(&a.scenario, "scenario file")?;
    require_file(&a.populations, "populations file")?;
    let sc = KvConfig::load(&a.scenario)?;
    let defaults = SirParams::default();
    let params = SirParams {
        beta: sc.get("beta")?.unwrap_or(defaults.beta),
        alpha_mix: sc.get("alpha_mix")?.unwrap_or(defaults.alpha_mix),
        mu: sc.get("mu")?.unwrap_or(defaults.mu),
        dt: sc.get("dt")?.unwrap_or(defaults.dt),
        threshold: sc.get("threshold")?.unwrap_or(defaults.threshold),
        recovery_form: sc
            .get::<RecoveryForm>("recovery_form")?
            .unwrap_or(defaults.recovery_form),
    };
    params.validate().map_err(|e| Error::Config(e.to_string()))?;
    let seed: u64 = sc.require("seed")?;
    let origin = match sc.raw("origin").unwrap_or("random") {
        "random" => Origin::Random { seed },
        v => Origin::Region(v.parse().map_err(|_| Error::Config(format!("invalid origin {v:?}")))?),
    };
    let init = InitialInfection {
        origin,
        fraction: sc.get("fraction")?.unwrap_or(0.01),
    };
    let epsilons: Vec<f64> = sc.list("epsilons")?.unwrap_or_default();
    check_epsilons(&epsilons).or_else(|e| if epsilons.is_empty() { Ok(()) } else { Err(e) })?;
    let tau: u64 = sc.get("tau")?.unwrap_or(15);
    let cap_override: Option<u32> = sc.get("t")?;
    let private_pops: bool = sc.get("private_populations")?.unwrap_or(true);
    sc.finish()?;

    let (meta, matrices) = load_matrices_checked(&a.matrices)?;
    let cap = cap_override.or(meta.cap).unwrap_or(1);
    let pops = io::read_populations(
        io::open(&a.populations)?,
        &a.populations.display().to_string(),
        meta.level,
    )?;
    if pops.k() != meta.k {
        return Err(Error::Dimension(format!(
            "populations have {} regions, matrices {}",
            pops.k(),
            meta.k
        )));
    }
    let origin_region = init.resolve_origin(meta.k)?;
    let as_f64 = |c: &[u64]| c.iter().map(|&x| x as f64).collect::<Vec<f64>>();

    create_dir(&a.out_dir)?;
    let truth = simulate(&init, &matrices, &as_f64(&pops.counts), &params)?;
    let truth_decisions = decide(&truth, params.threshold)?;
    write_trajectory(&a.out_dir.join("trajectory_nonprivate.csv"), &truth)?;

    let mut rows = vec![(
        "non-private".to_string(),
        score_decisions(&truth_decisions, &truth_decisions)?,
    )];
    for &eps in &epsilons {
        let pm = private_series(&matrices, eps, cap, tau, seed)?;
        let n = if private_pops {
            privatize_population(&pops, eps, release_seed(seed, eps))?.counts
        } else {
            pops.counts.clone()
        };
        let traj = simulate(&init, &pm, &as_f64(&n), &params)?;
        write_trajectory(&a.out_dir.join(format!("trajectory_eps_{eps}.csv")), &traj)?;
        rows.push((
            eps.to_string(),
            score_decisions(&decide(&traj, params.threshold)?, &truth_decisions)?,
        ));
    }

    io::atomic_write(&a.out_dir.join("sir_metrics.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "epsilon",
            "origin",
            "accuracy_mean",
            "accuracy_std",
            "precision_mean",
            "precision_std",
            "precision_regions",
            "recall_mean",
            "recall_std",
            "recall_regions",
        ])
        .map_err(csv_err)?;
        for (label, s) in &rows {
            let f = |m: Option<crate::epi::MeanStd>| {
                [
                    fmt_opt(m.map(|x| x.mean)),
                    fmt_opt(m.map(|x| x.std)),
                    m.map_or(0, |x| x.regions).to_string(),
                ]
            };
            let [am, asd, _] = f(s.accuracy);
            let [pm, psd, pn] = f(s.precision);
            let [rm, rsd, rn] = f(s.recall);
            c.write_record([
                label.clone(),
                origin_region.to_string(),
                am,
                asd,
                pm,
                psd,
                pn,
                rm,
                rsd,
                rn,
            ])
            .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })
}

pub(super) fn target(a: &TargetArgs) -> Result<()> {
    require_file(&a.window, "window file")?;
    let cfg = KvConfig::load(&a.window)?;
    let affected: Vec<u32> = cfg
        .list("affected")?
        .ok_or_else(|| Error::Config("window needs `affected`".into()))?;
    let first: u32 = cfg.require("first_day")?;
    let last: u32 = cfg.require("last_day")?;
    let ks: Vec<usize> = cfg.list("k")?.unwrap_or_else(|| vec![3]);
    let epsilons: Vec<f64> = cfg
        .list("epsilons")?
        .ok_or_else(|| Error::Config("window needs `epsilons`".into()))?;
    check_epsilons(&epsilons)?;
    let tau: u64 = cfg.get("tau")?.unwrap_or(15);
    let cap_override: Option<u32> = cfg.get("t")?;
    let seed: u64 = cfg.require("seed")?;
    let sweep_max: usize = cfg.get("sweep_max")?.unwrap_or(10);
    cfg.finish()?;
    if ks.is_empty() || ks.contains(&0) || sweep_max == 0 {
        return Err(Error::Config("k values must be at least 1".into()));
    }

    let (meta, matrices) = load_matrices_checked(&a.matrices)?;
    let window = ShockWindow::new(affected, first, last, meta.level).map_err(|e| Error::Config(e.to_string()))?;
    let cap = cap_override.or(meta.cap).unwrap_or(1);
    let in_window: Vec<ODMatrix> = matrices.into_iter().filter(|m| window.days.contains(&m.day)).collect();

    create_dir(&a.out_dir)?;
    let mut main_rows = Vec::new();
    let mut sweep_rows = Vec::new();
    for &eps in &epsilons {
        let private = private_series(&in_window, eps, cap, tau, seed)?;
        for &k in &ks {
            main_rows.push((eps, k, targeting_report(&private, &in_window, &window, k)?));
        }
        for k in 1..=sweep_max {
            let r = targeting_report(&private, &in_window, &window, k)?;
            let shortfall = r.topk_private.iter().filter(|l| l.len() < k).count();
            sweep_rows.push((eps, k, r.topk_accuracy, shortfall));
        }
    }

    io::atomic_write(&a.out_dir.join("targeting.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "epsilon",
            "level",
            "k",
            "total_out_nonprivate",
            "total_out_private",
            "percent_error",
            "topk_accuracy",
        ])
        .map_err(csv_err)?;
        for (eps, k, r) in &main_rows {
            c.write_record([
                eps.to_string(),
                meta.level.to_string(),
                k.to_string(),
                r.total_out_nonprivate.to_string(),
                r.total_out_private.to_string(),
                fmt_opt(r.percent_error),
                r.topk_accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })?;
    io::atomic_write(&a.out_dir.join("topk_sweep.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["epsilon", "k", "topk_accuracy", "days_with_fewer_than_k"])
            .map_err(csv_err)?;
        for (eps, k, acc, short) in &sweep_rows {
            c.write_record([eps.to_string(), k.to_string(), acc.to_string(), short.to_string()])
                .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })?;
    // per-day non-private ranking, for reference
    io::atomic_write(&a.out_dir.join("topk_nonprivate.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["day", "rank", "region"]).map_err(csv_err)?;
        let kmax = ks.iter().copied().max().unwrap_or(3);
        for m in &in_window {
            for (rank, region) in top_k_regions(m, &window.affected, kmax).into_iter().enumerate() {
                c.write_record([m.day.to_string(), (rank + 1).to_string(), region.to_string()])
                    .map_err(csv_err)?;
            }
        }
        c.flush()?;
        Ok(())
    })
}

pub(super) fn mia(a: &MiaArgs) -> Result<()> {
    check_epsilons(&a.epsilon)?;
    if a.cap == 0 {
        return Err(Error::Param("T must be at least 1".into()));
    }
    require_file(&a.trips, "trips file")?;
    let (k, days) = shape(&a.trips, a.report.as_ref(), a.level, a.k, a.days)?;
    let (trips, names) = io::read_trips(io::open(&a.trips)?, &a.trips.display().to_string())?;
    let matrices = match &a.matrices {
        Some(p) => {
            let (meta, m) = load_matrices_checked(p)?;
            if meta.level != a.level || meta.k != k || meta.first_day != 0 || m.len() != days as usize {
                return Err(Error::Config(format!(
                    "{} does not cover admin-{} days 0..{days} with k = {k}",
                    p.display(),
                    a.level
                )));
            }
            Some(m)
        }
        None => None,
    };
    let corpus = MiaCorpus {
        trips: trips.into_iter().filter(|t| t.level == a.level).collect(),
        level: a.level,
        k,
        num_days: days,
        matrices,
    };
    let cfg = MiaConfig {
        targets: a.targets,
        min_trips: a.min_trips,
        epsilons: a.epsilon.clone(),
        cap: a.cap,
        tau: a.tau,
        seed: a.seed,
        ..MiaConfig::default()
    };
    let report = run_attack(&corpus, &cfg)?;
    if report.saturated {
        log::warn!("only {} eligible targets", report.targets.len());
    }

    create_dir(&a.out_dir)?;
    let label = |s: &crate::mia::MiaSetting| -> (String, &'static str, &'static str) {
        let side = |p: bool| if p { "private" } else { "non-private" };
        (
            s.epsilon.map_or_else(|| "non-private".to_string(), |e| e.to_string()),
            side(s.train_private),
            side(s.test_private),
        )
    };
    io::atomic_write(&a.out_dir.join("mia_table.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "epsilon",
            "train",
            "test",
            "counts_only",
            "counts_weekday",
            "targets_scored",
        ])
        .map_err(csv_err)?;
        for pair in report.results.chunks(2) {
            let (eps, train, test) = label(&pair[0].setting);
            let scored = pair[0].aucs.len() - pair[0].skipped;
            c.write_record([
                eps,
                train.to_string(),
                test.to_string(),
                fmt_opt(pair[0].mean_auc),
                fmt_opt(pair.get(1).and_then(|r| r.mean_auc)),
                scored.to_string(),
            ])
            .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })?;
    io::atomic_write(&a.out_dir.join("mia_aucs.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["subscriber", "epsilon", "train", "test", "weekday", "auc"])
            .map_err(csv_err)?;
        for r in &report.results {
            let (eps, train, test) = label(&r.setting);
            for (s, auc) in report.targets.iter().zip(&r.aucs) {
                c.write_record([
                    names.name(*s).to_string(),
                    eps.clone(),
                    train.to_string(),
                    test.to_string(),
                    r.setting.weekday.to_string(),
                    fmt_opt(*auc),
                ])
                .map_err(csv_err)?;
            }
        }
        c.flush()?;
        Ok(())
    })
}

type ReleaseFiles = Vec<(ReleaseSidecar, PathBuf)>;

/// Released matrices found under a privatize output directory, by ε.
fn scan_releases(dir: &Path) -> Result<Vec<(f64, ReleaseFiles)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(eps) = name.strip_prefix("eps_").and_then(|s| s.parse::<f64>().ok()) else {
            continue;
        };
        let mut files = Vec::new();
        let sub = entry.path();
        for f in std::fs::read_dir(&sub).map_err(|e| Error::io(&sub, e))? {
            let p = f.map_err(|e| Error::io(&sub, e))?.path();
            if p.extension().is_some_and(|x| x == "csv") {
                let side: ReleaseSidecar = io::read_json(&io::sidecar_path(&p))?;
                files.push((side, p));
            }
        }
        files.sort_by_key(|(s, _)| s.day);
        out.push((eps, files));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

#[derive(Debug, Serialize)]
struct EpsilonSummary {
    epsilon: f64,
    releases: usize,
    mean_median_abs_error: f64,
    mean_median_rel_error: f64,
    mean_suppressed_share: f64,
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    level: crate::AdminLevel,
    k: usize,
    days: usize,
    threshold: f64,
    nonprivate_mean_suppressed_share: f64,
    epsilons: Vec<EpsilonSummary>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub(super) fn report(a: &ReportArgs) -> Result<()> {
    for p in [&a.matrices, &io::sidecar_path(&a.matrices)] {
        if !p.is_file() {
            return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
        }
    }
    if !a.private_dir.is_dir() {
        return Err(Error::io(&a.private_dir, std::io::ErrorKind::NotFound.into()));
    }
    let tune_rows = tune_table(&a.alpha, &a.beta, &a.caps)?;
    let (meta, matrices) = io::load_matrices(&a.matrices)?;
    let releases = scan_releases(&a.private_dir)?;

    let mut err_rows = Vec::new();
    let mut sup_rows = Vec::new();
    let mut summaries = Vec::new();
    let base_shares: Vec<f64> = matrices.iter().map(|m| suppressed_share(m, a.threshold)).collect();
    for (m, s) in matrices.iter().zip(&base_shares) {
        sup_rows.push((String::new(), m.day, *s));
    }
    for (eps, files) in &releases {
        let (mut abs, mut rel, mut shares) = (Vec::new(), Vec::new(), Vec::new());
        for (side, path) in files {
            if side.level != meta.level || side.k != meta.k {
                return Err(Error::Input(format!(
                    "{} does not match the matrix level or k",
                    path.display()
                )));
            }
            let truth = matrices
                .iter()
                .find(|m| m.day == side.day)
                .ok_or_else(|| Error::Input(format!("no non-private matrix for day {}", side.day)))?;
            let released = io::read_matrices(
                io::open(path)?,
                &path.display().to_string(),
                side.k,
                side.level,
                side.day,
                side.day,
            )?
            .remove(0);
            let share = suppressed_share(&released, a.threshold);
            let params = ReleaseParams {
                epsilon: side.epsilon,
                cap: side.cap,
                tau: side.tau,
                seed: side.seed,
            };
            let stats = error_stats(truth, &PrivateODMatrix::from_parts(released, params))?;
            err_rows.push((*eps, side.day, stats.median_abs_error, stats.median_rel_error));
            sup_rows.push((eps.to_string(), side.day, share));
            abs.push(stats.median_abs_error);
            rel.push(stats.median_rel_error);
            shares.push(share);
        }
        summaries.push(EpsilonSummary {
            epsilon: *eps,
            releases: files.len(),
            mean_median_abs_error: mean(&abs),
            mean_median_rel_error: mean(&rel),
            mean_suppressed_share: mean(&shares),
        });
    }

    create_dir(&a.out_dir)?;
    io::atomic_write(&a.out_dir.join("error_stats.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["epsilon", "day", "median_abs_error", "median_rel_error"])
            .map_err(csv_err)?;
        for (e, d, ab, re) in &err_rows {
            c.write_record([e.to_string(), d.to_string(), ab.to_string(), re.to_string()])
                .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })?;
    io::atomic_write(&a.out_dir.join("suppression.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["epsilon", "day", "threshold", "suppressed_share"])
            .map_err(csv_err)?;
        for (e, d, s) in &sup_rows {
            c.write_record([e.clone(), d.to_string(), a.threshold.to_string(), s.to_string()])
                .map_err(csv_err)?;
        }
        c.flush()?;
        Ok(())
    })?;
    io::atomic_write(&a.out_dir.join("tune.csv"), |w| write_tune_csv(&tune_rows, w))?;
    io::write_json(
        &a.out_dir.join("summary.json"),
        &ReportSummary {
            level: meta.level,
            k: meta.k,
            days: matrices.len(),
            threshold: a.threshold,
            nonprivate_mean_suppressed_share: mean(&base_shares),
            epsilons: summaries,
        },
    )
}
