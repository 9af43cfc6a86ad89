use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::record::QaRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Downsample over-threshold categories to `floor(T)` records.
    #[default]
    Cap,
    /// Remove over-threshold categories entirely.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ThresholdFormula {
    /// `T = μ + θ·σ`
    #[default]
    #[serde(rename = "sigma")]
    MeanPlusSigma,
    /// `T = θ·μ`
    #[serde(rename = "mu")]
    MeanTimes,
}

impl ThresholdFormula {
    pub fn threshold(self, mean: f64, std_dev: f64, theta: f64) -> f64 {
        match self {
            ThresholdFormula::MeanPlusSigma => mean + theta * std_dev,
            ThresholdFormula::MeanTimes => theta * mean,
        }
    }
}

macro_rules! str_enum {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown value {other:?}")),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

str_enum!(BalanceMode, "cap" => BalanceMode::Cap, "drop" => BalanceMode::Drop);
str_enum!(ThresholdFormula, "sigma" => ThresholdFormula::MeanPlusSigma, "mu" => ThresholdFormula::MeanTimes);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BalanceError {
    #[error("theta must be a finite number > 0, got {0}")]
    InvalidTheta(f64),
    #[error("records without a category: {}", .0.join(", "))]
    Uncategorized(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub category: String,
    pub original: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Descending original count, then category name.
    pub categories: Vec<CategoryCounts>,
    pub mean: f64,
    /// Population standard deviation of the per-category counts.
    pub std_dev: f64,
    pub threshold: f64,
    pub theta: f64,
    pub formula: ThresholdFormula,
    pub mode: BalanceMode,
    pub seed: u64,
    pub original_total: usize,
    pub retained_total: usize,
}

/// Exact per-category counts, descending by count then by name.
/// Records without a category are not counted.
pub fn category_histogram(records: &[QaRecord]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for cat in records.iter().filter_map(|r| r.category.as_deref()) {
        *counts.entry(cat).or_default() += 1;
    }
    let mut out: Vec<(String, usize)> =
        counts.into_iter().map(|(c, n)| (c.to_owned(), n)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn check_categories(records: &[QaRecord]) -> Result<(), BalanceError> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.category.is_none())
        .map(|r| r.id.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(BalanceError::Uncategorized(missing))
    }
}

/// Caps or drops categories whose count exceeds the statistical threshold.
///
/// Capping keeps, per category, the `floor(T)` records with the smallest
/// seeded key `SHA-256(seed_le ‖ id)[..8]`, which is a uniform sample without
/// replacement. Retained records keep their input order.
pub fn balance_categories(
    records: &[QaRecord],
    theta: f64,
    mode: BalanceMode,
    formula: ThresholdFormula,
    seed: u64,
) -> Result<(Vec<QaRecord>, BalanceReport), BalanceError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(BalanceError::InvalidTheta(theta));
    }
    check_categories(records)?;
    let histogram = category_histogram(records);
    let (mean, std_dev) = mean_and_population_std(histogram.iter().map(|(_, n)| *n as f64));
    let threshold = formula.threshold(mean, std_dev, theta);
    let kept = apply_threshold(records, threshold, mode, seed)?;

    let retained = category_histogram(&kept)
        .into_iter()
        .collect::<BTreeMap<String, usize>>();
    let categories = histogram
        .into_iter()
        .map(|(category, original)| CategoryCounts {
            retained: retained.get(&category).copied().unwrap_or(0),
            category,
            original,
        })
        .collect();
    let report = BalanceReport {
        categories,
        mean,
        std_dev,
        threshold,
        theta,
        formula,
        mode,
        seed,
        original_total: records.len(),
        retained_total: kept.len(),
    };
    Ok((kept, report))
}

/// Applies a fixed threshold `T`: categories with count `> T` are capped to
/// `floor(T)` (or dropped). Re-applying the same `T` to the output is a no-op.
pub fn apply_threshold(
    records: &[QaRecord],
    threshold: f64,
    mode: BalanceMode,
    seed: u64,
) -> Result<Vec<QaRecord>, BalanceError> {
    check_categories(records)?;
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        members
            .entry(r.category.as_deref().unwrap())
            .or_default()
            .push(i);
    }
    let mut keep = vec![true; records.len()];
    for idx in members.values() {
        if idx.len() as f64 <= threshold {
            continue;
        }
        let quota = match mode {
            BalanceMode::Drop => 0,
            BalanceMode::Cap => threshold.floor().max(0.0) as usize,
        };
        let mut ranked: Vec<(u64, &str, usize)> = idx
            .iter()
            .map(|&i| (sample_key(seed, &records[i].id), records[i].id.as_str(), i))
            .collect();
        ranked.sort_unstable();
        for &(_, _, i) in &ranked[quota.min(ranked.len())..] {
            keep[i] = false;
        }
    }
    Ok(records
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(r, _)| r.clone())
        .collect())
}

fn sample_key(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn mean_and_population_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}
