//! Call-detail-record ingestion: parsing, tower geolocation, home inference,
//! regional populations and inter-region trip extraction.

mod synth;

pub use synth::{SynthConfig, SyntheticCorpus};

use crate::{AdminLevel, Error, Result};
use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;

pub const CDR_HEADER: [&str; 5] = ["timestamp", "caller_id", "callee_id", "duration_s", "tower_id"];
pub const TOWER_HEADER: [&str; 3] = ["tower_id", "admin2_id", "admin3_id"];

/// Dense handle for a subscriber, issued by an [`Interner`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubscriberId(pub u32);

/// Index into a [`TowerMap`]. Tower ids are sorted on load, so comparing
/// handles compares tower ids lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TowerId(pub u32);

/// Maps opaque subscriber identifiers to dense handles and back.
#[derive(Debug, Default, Clone)]
pub struct Interner {
    index: HashMap<Box<str>, u32>,
    names: Vec<Box<str>>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> SubscriberId {
        if let Some(&id) = self.index.get(name) {
            return SubscriberId(id);
        }
        let id = self.names.len() as u32;
        self.names.push(name.into());
        self.index.insert(name.into(), id);
        SubscriberId(id)
    }

    pub fn get(&self, name: &str) -> Option<SubscriberId> {
        self.index.get(name).map(|&id| SubscriberId(id))
    }

    pub fn name(&self, id: SubscriberId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone)]
struct TowerEntry {
    id: Box<str>,
    admin2: u32,
    admin3: u32,
}

/// Tower → (admin-2 region, admin-3 region) lookup.
#[derive(Debug, Clone)]
pub struct TowerMap {
    entries: Vec<TowerEntry>,
    index: HashMap<Box<str>, u32>,
    k2: usize,
    k3: usize,
}

impl TowerMap {
    /// Builds a map from `(tower_id, admin2, admin3)` triples. Region ids must
    /// be dense (`0..k` all present) at both levels.
    pub fn new<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32, u32)>,
        S: Into<String>,
    {
        let mut entries: Vec<TowerEntry> = rows
            .into_iter()
            .map(|(id, admin2, admin3)| TowerEntry {
                id: id.into().into_boxed_str(),
                admin2,
                admin3,
            })
            .collect();
        if entries.is_empty() {
            return Err(Error::Input("tower map is empty".into()));
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Input(format!("tower {:?} listed twice", w[0].id)));
            }
        }
        let k2 = dense_count(entries.iter().map(|e| e.admin2), "admin2")?;
        let k3 = dense_count(entries.iter().map(|e| e.admin3), "admin3")?;
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i as u32))
            .collect();
        Ok(Self { entries, index, k2, k3 })
    }

    /// Reads the tower CSV (`tower_id,admin2_id,admin3_id`).
    pub fn from_csv<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        check_header(&mut rdr, &TOWER_HEADER, source_name)?;
        let mut rows = Vec::new();
        let mut record = csv::StringRecord::new();
        loop {
            let line = rdr.position().line() + 1;
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(csv_error(e, source_name, line)),
            }
            let line = record.position().map_or(line, |p| p.line());
            if record.len() != 3 {
                return Err(Error::parse(source_name, line, "expected 3 fields"));
            }
            let id = record[0].trim();
            if id.is_empty() {
                return Err(Error::parse(source_name, line, "empty tower_id"));
            }
            let a2 = record[1]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::parse(source_name, line, format!("bad admin2_id {:?}", &record[1])))?;
            let a3 = record[2]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::parse(source_name, line, format!("bad admin3_id {:?}", &record[2])))?;
            rows.push((id.to_string(), a2, a3));
        }
        Self::new(rows)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(TOWER_HEADER).map_err(csv_write_error)?;
        for e in &self.entries {
            wtr.write_record([&*e.id, &e.admin2.to_string(), &e.admin3.to_string()])
                .map_err(csv_write_error)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn lookup(&self, tower: &str) -> Option<TowerId> {
        self.index.get(tower).map(|&i| TowerId(i))
    }

    pub fn tower_name(&self, tower: TowerId) -> &str {
        &self.entries[tower.0 as usize].id
    }

    #[inline]
    pub fn region(&self, tower: TowerId, level: AdminLevel) -> u32 {
        let e = &self.entries[tower.0 as usize];
        match level {
            AdminLevel::Admin2 => e.admin2,
            AdminLevel::Admin3 => e.admin3,
        }
    }

    /// Number of regions at `level`.
    pub fn k(&self, level: AdminLevel) -> usize {
        match level {
            AdminLevel::Admin2 => self.k2,
            AdminLevel::Admin3 => self.k3,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn dense_count(ids: impl Iterator<Item = u32>, what: &str) -> Result<usize> {
    let mut seen: Vec<bool> = Vec::new();
    for id in ids {
        let i = id as usize;
        if i >= seen.len() {
            seen.resize(i + 1, false);
        }
        seen[i] = true;
    }
    if let Some(gap) = seen.iter().position(|s| !s) {
        return Err(Error::Input(format!(
            "{what} region ids are not dense: id {gap} has no tower (max id {})",
            seen.len() - 1
        )));
    }
    Ok(seen.len())
}

/// One call or text, located at the caller's serving tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdrEvent {
    pub timestamp: NaiveDateTime,
    pub caller: SubscriberId,
    pub callee: SubscriberId,
    pub duration_s: u32,
    pub tower: TowerId,
}

/// Parsed CDR stream: events in file order plus the identifier table.
#[derive(Debug, Clone, Default)]
pub struct CdrLog {
    pub events: Vec<CdrEvent>,
    pub subscribers: Interner,
    /// Rows dropped because their tower is missing from the tower map.
    pub skipped_unknown_tower: u64,
}

impl CdrLog {
    /// Calendar date of the earliest event; day index 0.
    pub fn first_date(&self) -> Option<NaiveDate> {
        self.events.iter().map(|e| e.timestamp.date()).min()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.events.iter().map(|e| e.timestamp.date()).max()
    }
}

/// Parses `YYYY-MM-DDThh:mm:ss` (an optional trailing `Z` is tolerated).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    let b = s.as_bytes();
    if b.len() != 19
        || b[4] != b'-'
        || b[7] != b'-'
        || !(b[10] == b'T' || b[10] == b' ')
        || b[13] != b':'
        || b[16] != b':'
    {
        return None;
    }
    let num = |r: std::ops::Range<usize>| -> Option<u32> {
        let mut v = 0u32;
        for &c in &b[r] {
            if !c.is_ascii_digit() {
                return None;
            }
            v = v * 10 + (c - b'0') as u32;
        }
        Some(v)
    };
    let date = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?;
    let time = NaiveTime::from_hms_opt(num(11..13)?, num(14..16)?, num(17..19)?)?;
    Some(NaiveDateTime::new(date, time))
}

/// Formats a timestamp in the ingest format.
pub fn format_timestamp(t: &NaiveDateTime) -> String {
    use chrono::Datelike;
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}",
        t.year(),
        t.month(),
        t.day(),
        t.hour(),
        t.minute(),
        t.second()
    )
}

/// Parses a CDR CSV stream. Rows naming a tower absent from `towers` are
/// skipped and counted; any other malformed row aborts with its line number.
pub fn parse_cdr<R: Read>(reader: R, towers: &TowerMap, source_name: &str) -> Result<CdrLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .buffer_capacity(1 << 20)
        .from_reader(reader);
    check_header(&mut rdr, &CDR_HEADER, source_name)?;

    let mut log = CdrLog::default();
    let mut record = csv::StringRecord::new();
    loop {
        let fallback_line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, source_name, fallback_line)),
        }
        let line = record.position().map_or(fallback_line, |p| p.line());
        if record.len() != 5 {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected 5 fields, found {}", record.len()),
            ));
        }
        let timestamp = parse_timestamp(&record[0])
            .ok_or_else(|| Error::parse(source_name, line, format!("invalid timestamp {:?}", &record[0])))?;
        let caller = record[1].trim();
        if caller.is_empty() {
            return Err(Error::parse(source_name, line, "empty caller_id"));
        }
        let duration: i64 = record[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(source_name, line, format!("invalid duration {:?}", &record[3])))?;
        if duration < 0 {
            return Err(Error::parse(source_name, line, format!("negative duration {duration}")));
        }
        let duration_s = u32::try_from(duration)
            .map_err(|_| Error::parse(source_name, line, format!("duration {duration} too large")))?;
        let Some(tower) = towers.lookup(record[4].trim()) else {
            log.skipped_unknown_tower += 1;
            continue;
        };
        let caller = log.subscribers.intern(caller);
        let callee = log.subscribers.intern(record[2].trim());
        log.events.push(CdrEvent {
            timestamp,
            caller,
            callee,
            duration_s,
            tower,
        });
    }
    Ok(log)
}

pub(crate) fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], source_name: &str) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(e, source_name, 1))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::parse(
            source_name,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error, source_name: &str, line: u64) -> Error {
    let line = e.position().map_or(line, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::parse(source_name, line, format!("{other:?}")),
    }
}

pub(crate) fn csv_write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::Input(format!("csv write failed: {other:?}")),
    }
}

/// True for the night window [20:00, 06:00) on the timestamp's own clock.
#[inline]
pub fn is_night(t: &NaiveDateTime) -> bool {
    let h = t.hour();
    !(6..20).contains(&h)
}

/// Inferred home region per subscriber handle, `None` if never seen at night.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Homes {
    pub level: AdminLevel,
    pub by_subscriber: Vec<Option<u32>>,
}

impl Homes {
    pub fn get(&self, s: SubscriberId) -> Option<u32> {
        self.by_subscriber.get(s.0 as usize).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubscriberId, u32)> + '_ {
        self.by_subscriber
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.map(|r| (SubscriberId(i as u32), r)))
    }

    pub fn len(&self) -> usize {
        self.by_subscriber.iter().filter(|h| h.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Home = region of the tower a subscriber used most often at night.
/// Ties go to the lexicographically smallest tower id.
pub fn infer_homes(log: &CdrLog, towers: &TowerMap, level: AdminLevel) -> Homes {
    let mut night: Vec<(SubscriberId, TowerId)> = log
        .events
        .iter()
        .filter(|e| is_night(&e.timestamp))
        .map(|e| (e.caller, e.tower))
        .collect();
    night.sort_unstable();

    let mut by_subscriber = vec![None; log.subscribers.len()];
    let mut best: Option<(SubscriberId, TowerId, usize)> = None;
    let mut i = 0;
    while i < night.len() {
        let (s, t) = night[i];
        let mut j = i;
        while j < night.len() && night[j] == (s, t) {
            j += 1;
        }
        let count = j - i;
        match best {
            // Same subscriber: towers arrive in ascending order, so only a
            // strictly larger count may replace the current best.
            Some((bs, _, bc)) if bs == s => {
                if count > bc {
                    best = Some((s, t, count));
                }
            }
            _ => {
                if let Some((bs, bt, _)) = best {
                    by_subscriber[bs.0 as usize] = Some(towers.region(bt, level));
                }
                best = Some((s, t, count));
            }
        }
        i = j;
    }
    if let Some((bs, bt, _)) = best {
        by_subscriber[bs.0 as usize] = Some(towers.region(bt, level));
    }
    Homes { level, by_subscriber }
}

/// Population counts `N_1..N_k` for one admin level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationVector {
    pub level: AdminLevel,
    pub counts: Vec<u64>,
}

impl PopulationVector {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn regional_populations(homes: &Homes, k: usize) -> Result<PopulationVector> {
    let mut counts = vec![0u64; k];
    for (_, region) in homes.iter() {
        let slot = counts.get_mut(region as usize).ok_or(Error::Bounds { id: region, k })?;
        *slot += 1;
    }
    Ok(PopulationVector {
        level: homes.level,
        counts,
    })
}

/// One observed movement between two distinct regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripRecord {
    pub subscriber: SubscriberId,
    pub day: u32,
    pub origin: u32,
    pub destination: u32,
    pub level: AdminLevel,
}

/// Extracts trips with day 0 at the log's earliest event date.
pub fn extract_trips(log: &CdrLog, towers: &TowerMap, level: AdminLevel) -> Vec<TripRecord> {
    match log.first_date() {
        Some(origin) => extract_trips_from(log, towers, level, origin),
        None => Vec::new(),
    }
}

/// Scans each subscriber's time-ordered events and emits a trip for every
/// consecutive pair in different regions, dated by the later event.
/// Trips dated before `origin` are dropped.
pub fn extract_trips_from(log: &CdrLog, towers: &TowerMap, level: AdminLevel, origin: NaiveDate) -> Vec<TripRecord> {
    let mut order: Vec<u32> = (0..log.events.len() as u32).collect();
    // Stable: equal timestamps keep input order.
    order.sort_by_key(|&i| {
        let e = &log.events[i as usize];
        (e.caller, e.timestamp)
    });

    let mut trips = Vec::new();
    for pair in order.windows(2) {
        let prev = &log.events[pair[0] as usize];
        let next = &log.events[pair[1] as usize];
        if prev.caller != next.caller {
            continue;
        }
        let from = towers.region(prev.tower, level);
        let to = towers.region(next.tower, level);
        if from == to {
            continue;
        }
        let day = (next.timestamp.date() - origin).num_days();
        if day < 0 {
            continue;
        }
        trips.push(TripRecord {
            subscriber: next.caller,
            day: day as u32,
            origin: from,
            destination: to,
            level,
        });
    }
    trips
}
