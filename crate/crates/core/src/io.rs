//! File interchange: trips, long-form matrices and their JSON sidecars,
//! population and contribution tables, key = value config files, and atomic
//! output.

use crate::cdr::{check_header, csv_error, csv_write_error, Interner, PopulationVector, SubscriberId, TripRecord};
use crate::od::ODMatrix;
use crate::{AdminLevel, Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const TRIPS_HEADER: [&str; 5] = ["subscriber", "day", "origin", "destination", "level"];
pub const MATRIX_HEADER: [&str; 5] = ["day", "level", "origin", "destination", "count"];
pub const POPULATION_HEADER: [&str; 3] = ["level", "region", "count"];
pub const CONTRIBUTIONS_HEADER: [&str; 3] = ["subscriber", "day", "trips"];

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Writes `path` via a temporary file in the same directory, renamed into
/// place only after `body` succeeds.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut tempfile::NamedTempFile>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(&mut tmp);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Input(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| Error::parse(&path.display().to_string(), e.line() as u64, e.to_string()))
}

#[derive(Debug, Deserialize)]
struct TripRow {
    subscriber: String,
    day: u32,
    origin: u32,
    destination: u32,
    level: u8,
}

pub fn write_trips<W: Write>(trips: &[TripRecord], names: &Interner, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIPS_HEADER).map_err(csv_write_error)?;
    for t in trips {
        w.write_record([
            names.name(t.subscriber),
            &t.day.to_string(),
            &t.origin.to_string(),
            &t.destination.to_string(),
            &t.level.to_string(),
        ])
        .map_err(csv_write_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trips CSV, interning subscriber names in order of appearance.
pub fn read_trips<R: Read>(reader: R, source_name: &str) -> Result<(Vec<TripRecord>, Interner)> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &TRIPS_HEADER, source_name)?;
    let mut names = Interner::new();
    let mut trips = Vec::new();
    for (i, row) in rdr.deserialize::<TripRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| csv_error(e, source_name, line))?;
        let level = AdminLevel::try_from(row.level).map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        if row.origin == row.destination {
            return Err(Error::parse(source_name, line, "trip origin equals destination"));
        }
        if row.subscriber.is_empty() {
            return Err(Error::parse(source_name, line, "empty subscriber"));
        }
        trips.push(TripRecord {
            subscriber: names.intern(&row.subscriber),
            day: row.day,
            origin: row.origin,
            destination: row.destination,
            level,
        });
    }
    Ok((trips, names))
}

/// Metadata stored next to a non-private matrix CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSidecar {
    pub k: usize,
    pub level: AdminLevel,
    pub first_day: u32,
    pub last_day: u32,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u32>,
}

/// Metadata stored next to one released matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseSidecar {
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub cap: u32,
    pub tau: u64,
    pub seed: u64,
    pub level: AdminLevel,
    pub day: u32,
    pub k: usize,
}

/// `<stem>.json` next to a matrix CSV.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

/// Long form, one row per non-zero cell, matrices in the given order.
pub fn write_matrices<W: Write>(matrices: &[&ODMatrix], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MATRIX_HEADER).map_err(csv_write_error)?;
    for m in matrices {
        let (day, level) = (m.day.to_string(), m.level.to_string());
        for (a, b, c) in m.off_diagonal().filter(|&(_, _, c)| c > 0) {
            w.write_record([&day, &level, &a.to_string(), &b.to_string(), &c.to_string()])
                .map_err(csv_write_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CellRow {
    day: u32,
    level: u8,
    origin: u32,
    destination: u32,
    count: u64,
}

/// Reads a long-form matrix CSV into one dense matrix per day of
/// `first..=last`; omitted cells are zero.
pub fn read_matrices<R: Read>(
    reader: R,
    source_name: &str,
    k: usize,
    level: AdminLevel,
    first: u32,
    last: u32,
) -> Result<Vec<ODMatrix>> {
    if last < first {
        return Err(Error::Config(format!(
            "{source_name}: day range {first}..={last} is empty"
        )));
    }
    let mut out: Vec<ODMatrix> = (first..=last).map(|d| ODMatrix::zeros(d, level, k)).collect();
    let mut seen = HashSet::new();
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &MATRIX_HEADER, source_name)?;
    for (i, row) in rdr.deserialize::<CellRow>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| csv_error(e, source_name, line))?;
        let bad = |msg: String| Error::parse(source_name, line, msg);
        if r.level != level.number() {
            return Err(bad(format!("level {} where {} expected", r.level, level)));
        }
        if r.day < first || r.day > last {
            return Err(bad(format!("day {} outside {first}..={last}", r.day)));
        }
        if r.origin as usize >= k || r.destination as usize >= k {
            return Err(bad(format!("region out of range for k = {k}")));
        }
        if r.origin == r.destination {
            return Err(bad("diagonal cell".into()));
        }
        if !seen.insert((r.day, r.origin, r.destination)) {
            return Err(bad("duplicate cell".into()));
        }
        out[(r.day - first) as usize].set(r.origin as usize, r.destination as usize, r.count);
    }
    Ok(out)
}

/// Reads a matrix CSV using its sidecar for shape and day range.
pub fn load_matrices(csv_path: &Path) -> Result<(MatrixSidecar, Vec<ODMatrix>)> {
    let meta: MatrixSidecar = read_json(&sidecar_path(csv_path))?;
    let m = read_matrices(
        open(csv_path)?,
        &csv_path.display().to_string(),
        meta.k,
        meta.level,
        meta.first_day,
        meta.last_day,
    )?;
    Ok((meta, m))
}

pub fn write_populations<W: Write>(pops: &[&PopulationVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POPULATION_HEADER).map_err(csv_write_error)?;
    for p in pops {
        for (region, count) in p.counts.iter().enumerate() {
            w.write_record([p.level.to_string(), region.to_string(), count.to_string()])
                .map_err(csv_write_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the rows for `level`; regions must be dense `0..k`.
pub fn read_populations<R: Read>(reader: R, source_name: &str, level: AdminLevel) -> Result<PopulationVector> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &POPULATION_HEADER, source_name)?;
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<(u8, u32, u64)>().enumerate() {
        let line = i as u64 + 2;
        let (lv, region, count) = row.map_err(|e| csv_error(e, source_name, line))?;
        if lv != level.number() {
            continue;
        }
        if counts.insert(region, count).is_some() {
            return Err(Error::parse(source_name, line, format!("duplicate region {region}")));
        }
    }
    if counts.keys().copied().ne(0..counts.len() as u32) {
        return Err(Error::parse(
            source_name,
            1,
            format!("admin-{level} regions are not dense 0..k"),
        ));
    }
    Ok(PopulationVector {
        level,
        counts: counts.into_values().collect(),
    })
}

/// Per subscriber-day trip counts after capping, sorted by (day, subscriber name).
pub fn contributions(trips: &[TripRecord], names: &Interner) -> Vec<(String, u32, u32)> {
    let mut counts: BTreeMap<(u32, SubscriberId), u32> = BTreeMap::new();
    for t in trips {
        *counts.entry((t.day, t.subscriber)).or_default() += 1;
    }
    let mut rows: Vec<(String, u32, u32)> = counts
        .into_iter()
        .map(|((day, s), n)| (names.name(s).to_string(), day, n))
        .collect();
    rows.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    rows
}

pub fn write_contributions<W: Write>(rows: &[(String, u32, u32)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONTRIBUTIONS_HEADER).map_err(csv_write_error)?;
    for (s, d, n) in rows {
        w.write_record([s.as_str(), &d.to_string(), &n.to_string()])
            .map_err(csv_write_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Contributions grouped by day: `day → (subscriber → trips)`.
pub fn read_contributions<R: Read>(reader: R, source_name: &str) -> Result<BTreeMap<u32, BTreeMap<String, u32>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &CONTRIBUTIONS_HEADER, source_name)?;
    let mut out: BTreeMap<u32, BTreeMap<String, u32>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<(String, u32, u32)>().enumerate() {
        let line = i as u64 + 2;
        let (s, d, n) = row.map_err(|e| csv_error(e, source_name, line))?;
        if out.entry(d).or_default().insert(s, n).is_some() {
            return Err(Error::parse(source_name, line, "duplicate subscriber-day"));
        }
    }
    Ok(out)
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_kv(text: &str, source_name: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(source_name, i as u64 + 1, format!("expected key = value, got {line:?}")))?;
        let key = k.trim().to_ascii_lowercase();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("{source_name}: duplicate key {key:?}")));
        }
    }
    Ok(out)
}

/// Typed access to a parsed key = value file, tracking unused keys.
pub struct KvConfig {
    source: String,
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<HashSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        Ok(Self {
            source: source_name.to_string(),
            map: parse_kv(text, source_name)?,
            used: Default::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("{}: invalid value {v:?} for {key}", self.source)))
            })
            .transpose()
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("{}: missing key {key:?}", self.source)))
    }

    /// Comma- or space-separated list.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Config(format!("{}: invalid list item {s:?} for {key}", self.source)))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails on keys never looked up.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.map.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(Error::Config(format!("{}: unknown key {k:?}", self.source))),
            None => Ok(()),
        }
    }
}
