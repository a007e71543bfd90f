//! Differentially private origin-destination (O-D) mobility matrices built
//! from call detail records, plus the tooling around them: privacy-accuracy
//! calculators, a mobility-coupled SIR simulator, aid-targeting metrics and a
//! membership-inference harness for stress-testing releases.
//!
//! The pipeline is
//! `cdr` (events → trips, homes, populations) → `od` (daily matrices, capping)
//! → `dp` (Laplace release, ledger) → downstream evaluators (`epi`,
//! `targeting`, `mia`). `tradeoff` holds the closed-form calculators.

pub mod cdr;
pub mod cli;
pub mod dp;
pub mod epi;
pub mod error;
pub mod io;
pub mod mia;
pub mod od;
pub mod rng;
pub mod stats;
pub mod targeting;
pub mod tradeoff;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Administrative subdivision level a region id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AdminLevel {
    Admin2,
    Admin3,
}

impl AdminLevel {
    pub const ALL: [AdminLevel; 2] = [AdminLevel::Admin2, AdminLevel::Admin3];

    pub fn number(self) -> u8 {
        match self {
            AdminLevel::Admin2 => 2,
            AdminLevel::Admin3 => 3,
        }
    }
}

impl TryFrom<u8> for AdminLevel {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(AdminLevel::Admin2),
            3 => Ok(AdminLevel::Admin3),
            other => Err(Error::Param(format!("admin level must be 2 or 3, got {other}"))),
        }
    }
}

impl From<AdminLevel> for u8 {
    fn from(l: AdminLevel) -> u8 {
        l.number()
    }
}

impl fmt::Display for AdminLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl std::str::FromStr for AdminLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches("admin");
        let n: u8 = trimmed
            .parse()
            .map_err(|_| Error::Param(format!("invalid admin level {s:?}")))?;
        AdminLevel::try_from(n)
    }
}
