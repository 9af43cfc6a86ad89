use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::record::{Difficulty, QaRecord};

/// Curriculum selector over difficulty scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// difficulty < threshold
    Easy(f64),
    /// difficulty > threshold
    Hard(f64),
    Full,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StageError {
    #[error("records without a difficulty score: {}", .0.join(", "))]
    MissingDifficulty(Vec<String>),
    #[error("invalid selector {0:?} (expected easy:<t>, hard:<t> or full with t in [0, 1])")]
    InvalidSelector(String),
}

impl Selector {
    pub fn threshold(&self) -> Option<f64> {
        match *self {
            Selector::Easy(t) | Selector::Hard(t) => Some(t),
            Selector::Full => None,
        }
    }

    fn keeps(&self, difficulty: f64) -> bool {
        match *self {
            Selector::Easy(t) => difficulty < t,
            Selector::Hard(t) => difficulty > t,
            Selector::Full => true,
        }
    }
}

impl FromStr for Selector {
    type Err = StageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StageError::InvalidSelector(s.to_owned());
        if s == "full" {
            return Ok(Selector::Full);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let t: f64 = value.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(bad());
        }
        match kind {
            "easy" => Ok(Selector::Easy(t)),
            "hard" => Ok(Selector::Hard(t)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Easy(t) => write!(f, "easy:{t}"),
            Selector::Hard(t) => write!(f, "hard:{t}"),
            Selector::Full => f.write_str("full"),
        }
    }
}

impl serde::Serialize for Selector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Keeps the records the selector admits, in input order. Records marked
/// unscored are skipped by `Easy`/`Hard`; records with no difficulty at all
/// are an error for those selectors.
pub fn select_stage(records: &[QaRecord], selector: Selector) -> Result<Vec<QaRecord>, StageError> {
    if selector == Selector::Full {
        return Ok(records.to_vec());
    }
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.difficulty.is_none())
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(StageError::MissingDifficulty(missing));
    }
    Ok(records
        .iter()
        .filter(|r| match r.difficulty {
            Some(Difficulty::Scored(d)) => selector.keeps(d),
            _ => false,
        })
        .cloned()
        .collect())
}
