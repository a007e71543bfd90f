//! Append-only record of releases and the composition arithmetic over it.
//!
//! Trip-level loss for a subscriber is `Σ ε_r · n_r` (group privacy over the
//! `n_r` trips they contributed to release r); person-level loss is `Σ ε_r`.

use crate::{AdminLevel, Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

/// What counts as one element of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protection {
    TripLevel,
    IndividualLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub id: String,
    pub epsilon: f64,
    pub cap: u32,
    pub level: AdminLevel,
    pub day: u32,
    /// Post-capping trips each subscriber contributed to this release.
    pub contributions: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Default)]
pub struct PrivacyLedger {
    releases: Vec<Release>,
    ids: HashSet<String>,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn releases(&self) -> &[Release] {
        &self.releases
    }

    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Release> {
        if !self.ids.contains(id) {
            return None;
        }
        self.releases.iter().find(|r| r.id == id)
    }

    /// Records a release. Ids are unique; a second append with the same id
    /// is a conflict.
    pub fn append(&mut self, release: Release) -> Result<()> {
        if !(release.epsilon > 0.0 && release.epsilon.is_finite()) {
            return Err(Error::Param(format!(
                "release epsilon must be positive, got {}",
                release.epsilon
            )));
        }
        if self.ids.contains(&release.id) {
            return Err(Error::Conflict(release.id));
        }
        self.ids.insert(release.id.clone());
        self.releases.push(release);
        Ok(())
    }

    /// Total ε spent by all releases (sequential composition).
    pub fn total_epsilon(&self) -> f64 {
        self.releases.iter().map(|r| r.epsilon).sum()
    }

    /// Cumulative loss for one subscriber. A subscriber the ledger has never
    /// seen contributed nothing and has loss 0.
    pub fn individual_loss(&self, subscriber: &str, protection: Protection) -> f64 {
        let known = self.releases.iter().any(|r| r.contributions.contains_key(subscriber));
        if !known {
            return 0.0;
        }
        match protection {
            Protection::TripLevel => self
                .releases
                .iter()
                .map(|r| r.epsilon * r.contributions.get(subscriber).copied().unwrap_or(0) as f64)
                .sum(),
            Protection::IndividualLevel => self.total_epsilon(),
        }
    }

    /// Reads a JSON-lines ledger. Blank lines are ignored.
    pub fn read_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Self> {
        let mut ledger = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let release: Release =
                serde_json::from_str(&line).map_err(|e| Error::parse(source_name, i as u64 + 1, e.to_string()))?;
            ledger.append(release)?;
        }
        Ok(ledger)
    }

    /// Serializes one release as a single JSON line.
    pub fn write_entry<W: Write>(release: &Release, mut out: W) -> Result<()> {
        let line = serde_json::to_string(release).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(out, "{line}")?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.releases {
            Self::write_entry(r, &mut out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn release(id: &str, epsilon: f64, contributions: &[(&str, u32)]) -> Release {
        Release {
            id: id.into(),
            epsilon,
            cap: 1,
            level: AdminLevel::Admin2,
            day: 0,
            contributions: contributions.iter().map(|(s, n)| (s.to_string(), *n)).collect(),
        }
    }

    #[test]
    fn composition_sums_epsilons() {
        let mut l = PrivacyLedger::new();
        l.append(release("a", 0.5, &[])).unwrap();
        assert_eq!(l.total_epsilon(), 0.5);
        let mut l = PrivacyLedger::new();
        for (i, e) in [0.1, 0.5, 1.0].into_iter().enumerate() {
            l.append(release(&i.to_string(), e, &[])).unwrap();
        }
        assert!((l.total_epsilon() - 1.6).abs() < 1e-12);
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn duplicate_ids_conflict() {
        let mut l = PrivacyLedger::new();
        l.append(release("x", 0.5, &[])).unwrap();
        assert!(matches!(l.append(release("x", 0.5, &[])), Err(Error::Conflict(_))));
        assert!(matches!(l.append(release("y", 0.0, &[])), Err(Error::Param(_))));
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn per_subscriber_losses() {
        let mut l = PrivacyLedger::new();
        // 14 trips spread over 305 daily releases at ε = 0.5
        for day in 0..305u32 {
            let n = u32::from(day < 14);
            let mut r = release(&format!("d{day}"), 0.5, &[("s", n), ("idle", 0)]);
            r.day = day;
            l.append(r).unwrap();
        }
        assert_eq!(l.individual_loss("s", Protection::TripLevel), 7.0);
        assert_eq!(l.individual_loss("s", Protection::IndividualLevel), 152.5);
        assert_eq!(l.individual_loss("idle", Protection::TripLevel), 0.0);
        assert_eq!(l.individual_loss("nobody", Protection::IndividualLevel), 0.0);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut l = PrivacyLedger::new();
        l.append(release("a", 0.1, &[("s1", 2)])).unwrap();
        l.append(release("b", 1.0, &[("s2", 1)])).unwrap();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 2);
        let back = PrivacyLedger::read_jsonl(buf.as_slice(), "ledger").unwrap();
        assert_eq!(back.releases(), l.releases());
    }
}
