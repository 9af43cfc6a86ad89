//! Multi-stage training configuration and per-stage data manifests.
//!
//! Each stage draws from a named dataset, optionally balances it by
//! category, then applies its curriculum selector. Balancing runs before
//! selection so that stages sharing a dataset, balance parameters and seed
//! see nested record sets (an easy stage is a subset of the full stage).
//! Trainer hyperparameters are copied into the manifest untouched.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::curation::{
    balance_categories, select_stage, BalanceError, BalanceMode, BalanceReport, Selector,
    StageError, ThresholdFormula,
};
use crate::dfa::Preset;
use crate::record::QaRecord;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("duplicate stage name {0:?}")]
    DuplicateStage(String),
    #[error("stage {stage:?} names predecessor {predecessor:?}, which is not an earlier stage")]
    DanglingPredecessor { stage: String, predecessor: String },
    #[error("stage {stage:?} uses undeclared dataset {dataset:?}")]
    UndeclaredDataset { stage: String, dataset: String },
    #[error("stages {0:?} and {1:?} write the same manifest path")]
    ManifestClash(String, String),
    #[error("dataset {0:?} was not provided")]
    MissingData(String),
    #[error("stage {stage:?}: {source}")]
    Balance {
        stage: String,
        #[source]
        source: BalanceError,
    },
    #[error("stage {stage:?}: {source}")]
    Select {
        stage: String,
        #[source]
        source: StageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSpec {
    pub theta: f64,
    #[serde(default)]
    pub mode: BalanceMode,
    #[serde(default)]
    pub formula: ThresholdFormula,
}

fn full_selector() -> Selector {
    Selector::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub kind: StageKind,
    #[serde(default)]
    pub predecessor: Option<String>,
    pub dataset: String,
    #[serde(default = "full_selector")]
    pub selector: Selector,
    #[serde(default)]
    pub balance: Option<BalanceSpec>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub hyperparameters: Map<String, Value>,
    /// Where the CLI writes this stage's manifest, relative to the config.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Dataset name → QA JSONL path, relative to the config.
    pub datasets: BTreeMap<String, PathBuf>,
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::SchemaVersion(self.schema_version));
        }
        let mut names = HashSet::new();
        let mut manifests: BTreeMap<&PathBuf, &str> = BTreeMap::new();
        for stage in &self.stages {
            if let Some(pred) = &stage.predecessor {
                if !names.contains(pred.as_str()) {
                    return Err(PipelineError::DanglingPredecessor {
                        stage: stage.name.clone(),
                        predecessor: pred.clone(),
                    });
                }
            }
            if !names.insert(stage.name.as_str()) {
                return Err(PipelineError::DuplicateStage(stage.name.clone()));
            }
            if !self.datasets.contains_key(&stage.dataset) {
                return Err(PipelineError::UndeclaredDataset {
                    stage: stage.name.clone(),
                    dataset: stage.dataset.clone(),
                });
            }
            if let Some(other) = manifests.insert(&stage.manifest, &stage.name) {
                return Err(PipelineError::ManifestClash(
                    other.to_owned(),
                    stage.name.clone(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    #[serde(flatten)]
    pub spec: BalanceSpec,
    pub report: BalanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub schema_version: u32,
    pub stage: String,
    pub kind: StageKind,
    pub predecessor: Option<String>,
    pub dataset: String,
    pub selector: Selector,
    pub balance: Option<BalanceSummary>,
    pub preset: Option<Preset>,
    pub seed: u64,
    pub hyperparameters: Map<String, Value>,
    pub record_count: usize,
    /// SHA-256 over the record ids, each followed by `\n`.
    pub content_hash: String,
    pub record_ids: Vec<String>,
}

impl StageManifest {
    /// Pretty JSON with a trailing newline; byte-stable for equal inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn content_hash<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolves every stage's record set. `datasets` maps the config's dataset
/// names to loaded records.
pub fn emit_manifests(
    config: &PipelineConfig,
    datasets: &BTreeMap<String, Vec<QaRecord>>,
) -> Result<Vec<StageManifest>, PipelineError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.stages.len());
    for stage in &config.stages {
        let records = datasets
            .get(&stage.dataset)
            .ok_or_else(|| PipelineError::MissingData(stage.dataset.clone()))?;
        let (pool, balance) = match stage.balance {
            Some(spec) => {
                let (kept, report) =
                    balance_categories(records, spec.theta, spec.mode, spec.formula, config.seed)
                        .map_err(|source| PipelineError::Balance {
                        stage: stage.name.clone(),
                        source,
                    })?;
                (kept, Some(BalanceSummary { spec, report }))
            }
            None => (records.clone(), None),
        };
        let selected =
            select_stage(&pool, stage.selector).map_err(|source| PipelineError::Select {
                stage: stage.name.clone(),
                source,
            })?;
        let record_ids: Vec<String> = selected.into_iter().map(|r| r.id).collect();
        out.push(StageManifest {
            schema_version: SCHEMA_VERSION,
            stage: stage.name.clone(),
            kind: stage.kind,
            predecessor: stage.predecessor.clone(),
            dataset: stage.dataset.clone(),
            selector: stage.selector,
            balance,
            preset: stage.preset,
            seed: config.seed,
            hyperparameters: stage.hyperparameters.clone(),
            record_count: record_ids.len(),
            content_hash: content_hash(record_ids.iter().map(String::as_str)),
            record_ids,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::sample;

    fn config(json: &str) -> PipelineConfig {
        serde_json::from_str(json).unwrap()
    }

    fn data(n: usize) -> BTreeMap<String, Vec<QaRecord>> {
        let records = (0..n)
            .map(|i| {
                sample(
                    &format!("r{i}"),
                    Some(if i % 3 == 0 { "x" } else { "y" }),
                    Some(i as f64 / n as f64),
                )
            })
            .collect();
        BTreeMap::from([("train".to_owned(), records)])
    }

    #[test]
    fn single_full_stage_keeps_every_id() {
        let c = config(
            r#"{"schema_version":1,"datasets":{"train":"t.jsonl"},
                "stages":[{"name":"sft","kind":"sft","dataset":"train","manifest":"sft.json"}]}"#,
        );
        let d = data(10);
        let m = emit_manifests(&c, &d).unwrap();
        assert_eq!(m.len(), 1);
        let ids: Vec<&str> = d["train"].iter().map(|r| r.id.as_str()).collect();
        assert_eq!(m[0].record_ids, ids);
        assert_eq!(m[0].content_hash, content_hash(ids));
    }

    #[test]
    fn dangling_predecessor_is_a_config_error() {
        let c = config(
            r#"{"schema_version":1,"datasets":{"train":"t.jsonl"},
                "stages":[{"name":"grpo","kind":"grpo","predecessor":"warmup","dataset":"train","manifest":"g.json"}]}"#,
        );
        assert_eq!(
            emit_manifests(&c, &data(3)).unwrap_err(),
            PipelineError::DanglingPredecessor {
                stage: "grpo".into(),
                predecessor: "warmup".into()
            }
        );
    }

    #[test]
    fn config_validation() {
        let base = r#"{"schema_version":1,"datasets":{"train":"t.jsonl"},"stages":[
            {"name":"a","kind":"sft","dataset":"train","manifest":"a.json"},
            {"name":"a","kind":"sft","dataset":"train","manifest":"b.json"}]}"#;
        assert_eq!(
            config(base).validate().unwrap_err(),
            PipelineError::DuplicateStage("a".into())
        );
        let v2 = base.replace("\"schema_version\":1", "\"schema_version\":2");
        assert_eq!(
            config(&v2).validate().unwrap_err(),
            PipelineError::SchemaVersion(2)
        );
        let undeclared = base
            .replace(
                "\"dataset\":\"train\",\"manifest\":\"b.json\"",
                "\"dataset\":\"dev\",\"manifest\":\"b.json\"",
            )
            .replace(
                "\"name\":\"a\",\"kind\":\"sft\",\"dataset\":\"dev\"",
                "\"name\":\"b\",\"kind\":\"sft\",\"dataset\":\"dev\"",
            );
        assert!(matches!(
            config(&undeclared).validate(),
            Err(PipelineError::UndeclaredDataset { .. })
        ));
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"datasets":{},"stages":[]}"#).is_err());
    }

    #[test]
    fn unscored_data_propagates_selector_error() {
        let c = config(
            r#"{"schema_version":1,"datasets":{"train":"t.jsonl"},
                "stages":[{"name":"easy","kind":"grpo","dataset":"train","selector":"easy:0.3","manifest":"e.json"}]}"#,
        );
        let mut d = data(4);
        d.get_mut("train").unwrap()[2].difficulty = None;
        assert!(matches!(
            emit_manifests(&c, &d),
            Err(PipelineError::Select { .. })
        ));
    }

    #[test]
    fn hyperparameters_are_verbatim() {
        let c = config(
            r#"{"schema_version":1,"datasets":{"train":"t.jsonl"},
                "stages":[{"name":"sft","kind":"sft","dataset":"train","manifest":"s.json",
                "hyperparameters":{"lr":2e-5,"lora_rank":8,"zeta":"z","alpha":16}}]}"#,
        );
        let m = emit_manifests(&c, &data(2)).unwrap();
        let keys: Vec<&String> = m[0].hyperparameters.keys().collect();
        assert_eq!(keys, ["lr", "lora_rank", "zeta", "alpha"]);
        let back: StageManifest = serde_json::from_str(&m[0].to_json()).unwrap();
        assert_eq!(back.hyperparameters["lr"].as_f64(), Some(2e-5));
    }
}
