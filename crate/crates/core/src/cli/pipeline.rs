//! synth → ingest → build → privatize.

use super::{
    check_epsilons, contributions_file_name, create_dir, matrix_file_name, release_path, require_file, BuildArgs,
    IngestArgs, PrivatizeArgs, SynthArgs,
};
use crate::cdr::{
    extract_trips, format_timestamp, infer_homes, parse_cdr, regional_populations, SynthConfig, SyntheticCorpus,
    TowerMap,
};
use crate::dp::{privatize as release, release_seed, PrivacyLedger, Release, ReleaseParams};
use crate::io::{self, MatrixSidecar, ReleaseSidecar};
use crate::od::{build_daily, cap_trips, t_from_percentile};
use crate::rng::{derive_seed, tag};
use crate::{AdminLevel, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub(super) fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::new(a.k, a.days, a.subscribers, a.mobility, a.seed);
    cfg.events_per_day = a.events_per_day;
    if let Some(d) = a.start_date {
        cfg.start_date = d;
    }
    let corpus = SyntheticCorpus::new(cfg)?;
    create_dir(&a.out_dir)?;
    io::atomic_write(&a.out_dir.join("towers.csv"), |w| corpus.towers().write_csv(w))?;
    io::atomic_write(&a.out_dir.join("cdr.csv"), |w| corpus.write_csv(w))?;
    io::write_json(&a.out_dir.join("synth.json"), corpus.config())?;
    log::info!("wrote synthetic corpus to {}", a.out_dir.display());
    Ok(())
}

/// Summary written by `ingest`; later commands read k and the day count from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub events: usize,
    pub skipped_unknown_tower: u64,
    pub subscribers: usize,
    pub first_timestamp: Option<String>,
    pub num_days: u32,
    pub k_admin2: usize,
    pub k_admin3: usize,
    pub trips_admin2: usize,
    pub trips_admin3: usize,
    pub homes_admin2: usize,
    pub homes_admin3: usize,
}

impl IngestReport {
    pub fn k(&self, level: AdminLevel) -> usize {
        match level {
            AdminLevel::Admin2 => self.k_admin2,
            AdminLevel::Admin3 => self.k_admin3,
        }
    }
}

pub(super) fn ingest(a: &IngestArgs) -> Result<()> {
    require_file(&a.towers, "tower file")?;
    require_file(&a.cdr, "CDR file")?;
    let towers = TowerMap::from_csv(io::open(&a.towers)?, &a.towers.display().to_string())?;
    let log = parse_cdr(io::open(&a.cdr)?, &towers, &a.cdr.display().to_string())?;
    if log.skipped_unknown_tower > 0 {
        log::warn!("skipped {} rows with unknown towers", log.skipped_unknown_tower);
    }
    let num_days = match (log.first_date(), log.last_date()) {
        (Some(f), Some(l)) => (l - f).num_days() as u32 + 1,
        _ => 0,
    };

    let mut trips = Vec::new();
    let mut pops = Vec::new();
    let mut counts = [(0usize, 0usize); 2];
    for (i, level) in AdminLevel::ALL.into_iter().enumerate() {
        let t = extract_trips(&log, &towers, level);
        let homes = infer_homes(&log, &towers, level);
        counts[i] = (t.len(), homes.len());
        pops.push(regional_populations(&homes, towers.k(level))?);
        trips.extend(t);
    }
    let report = IngestReport {
        events: log.events.len(),
        skipped_unknown_tower: log.skipped_unknown_tower,
        subscribers: log.subscribers.len(),
        first_timestamp: log
            .events
            .iter()
            .map(|e| e.timestamp)
            .min()
            .map(|t| format_timestamp(&t)),
        num_days,
        k_admin2: towers.k(AdminLevel::Admin2),
        k_admin3: towers.k(AdminLevel::Admin3),
        trips_admin2: counts[0].0,
        trips_admin3: counts[1].0,
        homes_admin2: counts[0].1,
        homes_admin3: counts[1].1,
    };

    create_dir(&a.out_dir)?;
    io::atomic_write(&a.out_dir.join("trips.csv"), |w| {
        io::write_trips(&trips, &log.subscribers, w)
    })?;
    let refs: Vec<_> = pops.iter().collect();
    io::atomic_write(&a.out_dir.join("populations.csv"), |w| io::write_populations(&refs, w))?;
    io::write_json(&a.out_dir.join("ingest_report.json"), &report)?;
    log::info!(
        "{} events, {} + {} trips",
        report.events,
        report.trips_admin2,
        report.trips_admin3
    );
    Ok(())
}

/// k and day count from explicit flags, falling back to an ingest report.
pub(super) fn shape(
    trips: &Path,
    report: Option<&PathBuf>,
    level: AdminLevel,
    k: Option<usize>,
    days: Option<u32>,
) -> Result<(usize, u32)> {
    if let (Some(k), Some(d)) = (k, days) {
        return Ok((k, d));
    }
    let path = match report {
        Some(p) => p.clone(),
        None => trips.with_file_name("ingest_report.json"),
    };
    require_file(&path, "ingest report (or pass --k and --days)")?;
    let r: IngestReport = io::read_json(&path)?;
    Ok((k.unwrap_or(r.k(level)), days.unwrap_or(r.num_days)))
}

pub(super) fn build(a: &BuildArgs) -> Result<()> {
    require_file(&a.trips, "trips file")?;
    let (k, days) = shape(&a.trips, a.report.as_ref(), a.level, a.k, a.days)?;
    let (all, names) = io::read_trips(io::open(&a.trips)?, &a.trips.display().to_string())?;
    let mut trips: Vec<_> = all.into_iter().filter(|t| t.level == a.level).collect();

    let cap = match (a.cap, a.cap_percentile) {
        (Some(t), _) => Some(t),
        (None, Some(p)) => Some(t_from_percentile(&trips, p)?),
        (None, None) => None,
    };
    if let Some(t) = cap {
        let seed = a
            .seed
            .ok_or_else(|| Error::Config("--seed is required when capping".into()))?;
        let mut by_day: BTreeMap<u32, Vec<_>> = BTreeMap::new();
        for t in trips {
            by_day.entry(t.day).or_default().push(t);
        }
        let capped: Result<Vec<Vec<_>>> = by_day
            .into_par_iter()
            .map(|(day, slice)| cap_trips(&slice, t, derive_seed(seed, &[tag::CAP, day as u64])))
            .collect();
        trips = capped?.into_iter().flatten().collect();
        log::info!("capped at T = {t}");
    }
    if let Some(t) = trips.iter().find(|t| t.day >= days) {
        return Err(Error::Input(format!(
            "trip on day {} beyond the {days}-day range",
            t.day
        )));
    }
    let matrices = build_daily(&trips, a.level, k, days)?;

    create_dir(&a.out_dir)?;
    let csv = a.out_dir.join(matrix_file_name(a.level));
    let refs: Vec<_> = matrices.iter().collect();
    io::atomic_write(&csv, |w| io::write_matrices(&refs, w))?;
    let meta = MatrixSidecar {
        k,
        level: a.level,
        first_day: 0,
        last_day: days.saturating_sub(1),
        cap,
    };
    io::write_json(&io::sidecar_path(&csv), &meta)?;
    let rows = io::contributions(&trips, &names);
    io::atomic_write(&a.out_dir.join(contributions_file_name(a.level)), |w| {
        io::write_contributions(&rows, w)
    })?;
    Ok(())
}

pub fn release_id(level: AdminLevel, day: u32, p: &ReleaseParams) -> String {
    format!(
        "admin{level}/day{day}/eps{}/T{}/tau{}/seed{}",
        p.epsilon, p.cap, p.tau, p.seed
    )
}

pub(super) fn privatize(a: &PrivatizeArgs) -> Result<()> {
    check_epsilons(&a.epsilon)?;
    if a.cap == Some(0) {
        return Err(Error::Param("T must be at least 1".into()));
    }
    require_file(&a.matrices, "matrix file")?;
    let (meta, matrices) = io::load_matrices(&a.matrices)?;
    let cap = a.cap.or(meta.cap).unwrap_or(1);
    if let Some(built) = meta.cap {
        if cap < built {
            return Err(Error::Config(format!(
                "T = {cap} is below the cap the matrices were built with ({built})"
            )));
        }
    }

    let contrib_path = a
        .contributions
        .clone()
        .unwrap_or_else(|| a.matrices.with_file_name(contributions_file_name(meta.level)));
    let contributions = if contrib_path.is_file() {
        io::read_contributions(io::open(&contrib_path)?, &contrib_path.display().to_string())?
    } else if a.contributions.is_some() {
        return Err(Error::Config(format!(
            "contributions file not found: {}",
            contrib_path.display()
        )));
    } else {
        log::warn!("no contributions file; ledger entries will not attribute trips");
        BTreeMap::new()
    };

    create_dir(&a.out_dir)?;
    let ledger_path = a.ledger.clone().unwrap_or_else(|| a.out_dir.join("ledger.jsonl"));
    let mut ledger = if ledger_path.is_file() {
        PrivacyLedger::read_jsonl(io::open(&ledger_path)?, &ledger_path.display().to_string())?
    } else {
        PrivacyLedger::new()
    };

    let jobs: Vec<(f64, usize)> = a
        .epsilon
        .iter()
        .flat_map(|&e| (0..matrices.len()).map(move |i| (e, i)))
        .collect();
    let released: Vec<(f64, usize, ReleaseParams, crate::od::ODMatrix)> = jobs
        .par_iter()
        .map(|&(epsilon, i)| {
            let params = ReleaseParams {
                epsilon,
                cap,
                tau: a.tau,
                seed: release_seed(a.seed, epsilon),
            };
            release(&matrices[i], params).map(|p| (epsilon, i, params, p.into_matrix()))
        })
        .collect::<Result<_>>()?;

    let mut new_entries = Vec::new();
    for (epsilon, i, params, m) in &released {
        let day = matrices[*i].day;
        let path = release_path(&a.out_dir, *epsilon, day);
        create_dir(path.parent().expect("release path has a parent"))?;
        io::atomic_write(&path, |w| io::write_matrices(&[m], w))?;
        let side = ReleaseSidecar {
            epsilon: *epsilon,
            cap,
            tau: a.tau,
            seed: params.seed,
            level: meta.level,
            day,
            k: meta.k,
        };
        io::write_json(&io::sidecar_path(&path), &side)?;

        let entry = Release {
            id: release_id(meta.level, day, params),
            epsilon: *epsilon,
            cap,
            level: meta.level,
            day,
            contributions: contributions.get(&day).cloned().unwrap_or_default(),
        };
        match ledger.get(&entry.id) {
            Some(existing) if *existing == entry => {}
            Some(_) => return Err(Error::Conflict(entry.id)),
            None => {
                ledger.append(entry.clone())?;
                new_entries.push(entry);
            }
        }
    }

    if !new_entries.is_empty() {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ledger_path)
            .map_err(|e| Error::io(&ledger_path, e))?;
        let mut w = std::io::BufWriter::new(f);
        for e in &new_entries {
            PrivacyLedger::write_entry(e, &mut w)?;
        }
        w.flush().map_err(|e| Error::io(&ledger_path, e))?;
    }
    log::info!(
        "{} releases written, {} new ledger entries",
        released.len(),
        new_entries.len()
    );
    Ok(())
}
