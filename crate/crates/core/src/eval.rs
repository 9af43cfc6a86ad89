//! Top-1 exact-match evaluation and majority-vote ensembling.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::letter::Letter;
use crate::record::{QaRecord, RecordError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction for unknown record id {0}")]
    UnknownId(String),
    #[error("record id {id} predicted more than once by {model}")]
    DuplicateId { id: String, model: String },
    #[error("prediction sets cover different record ids: {0}")]
    Coverage(String),
    #[error("no prediction sets to ensemble")]
    NoModels,
    #[error("{0}")]
    Reference(String),
}

impl From<RecordError> for EvalError {
    fn from(e: RecordError) -> Self {
        EvalError::Reference(e.to_string())
    }
}

/// `letter` is `None` for an abstention; serialized as `"ABSTAIN"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(with = "letter_or_abstain")]
    pub letter: Option<Letter>,
    pub model: String,
}

mod letter_or_abstain {
    use super::Letter;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Letter>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(l) => s.collect_str(l),
            None => s.serialize_str("ABSTAIN"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Letter>, D::Error> {
        let raw = Option::<String>::deserialize(d)?;
        match raw.as_deref() {
            None | Some("ABSTAIN") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PartScore {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Keyed by part number; records without a part are only in the totals.
    pub parts: BTreeMap<u8, PartScore>,
    pub total: usize,
    pub correct: usize,
    pub abstained: usize,
    /// Reference ids with no prediction (counted incorrect).
    pub missing: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(preds: &[Prediction], refs: &[QaRecord]) -> Result<EvalReport, EvalError> {
    let gold: HashMap<&str, (Letter, Option<u8>)> = refs
        .iter()
        .map(|r| Ok((r.id.as_str(), (r.answer_letter()?, r.part))))
        .collect::<Result<_, EvalError>>()?;
    let mut predicted: HashMap<&str, Option<Letter>> = HashMap::new();
    for p in preds {
        if !gold.contains_key(p.id.as_str()) {
            return Err(EvalError::UnknownId(p.id.clone()));
        }
        if predicted.insert(p.id.as_str(), p.letter).is_some() {
            return Err(EvalError::DuplicateId {
                id: p.id.clone(),
                model: p.model.clone(),
            });
        }
    }

    let mut parts: BTreeMap<u8, PartScore> = BTreeMap::new();
    let (mut correct, mut abstained) = (0, 0);
    let mut missing = Vec::new();
    for r in refs {
        let (answer, part) = gold[r.id.as_str()];
        let hit = match predicted.get(r.id.as_str()) {
            Some(Some(l)) => *l == answer,
            Some(None) => {
                abstained += 1;
                false
            }
            None => {
                missing.push(r.id.clone());
                false
            }
        };
        correct += hit as usize;
        if let Some(p) = part {
            let score = parts.entry(p).or_default();
            score.total += 1;
            score.correct += hit as usize;
        }
    }
    for score in parts.values_mut() {
        score.accuracy = ratio(score.correct, score.total);
    }
    Ok(EvalReport {
        accuracy: ratio(correct, refs.len()),
        parts,
        total: refs.len(),
        correct,
        abstained,
        missing,
    })
}

/// Per-record plurality vote over `pred_sets`.
///
/// Abstentions do not vote unless every model abstained. Ties go to the
/// letter whose best-ranked voter comes first in `priority`; models absent
/// from `priority` rank after it in set order. Output follows the id order
/// of the first set.
pub fn majority_vote(
    pred_sets: &[Vec<Prediction>],
    priority: &[String],
    ensemble_tag: &str,
) -> Result<Vec<Prediction>, EvalError> {
    let first = pred_sets.first().ok_or(EvalError::NoModels)?;
    let mut indexed: Vec<HashMap<&str, &Prediction>> = Vec::with_capacity(pred_sets.len());
    for set in pred_sets {
        let mut map = HashMap::new();
        for p in set {
            if map.insert(p.id.as_str(), p).is_some() {
                return Err(EvalError::DuplicateId {
                    id: p.id.clone(),
                    model: p.model.clone(),
                });
            }
        }
        indexed.push(map);
    }
    let ids: HashSet<&str> = indexed[0].keys().copied().collect();
    for (k, map) in indexed.iter().enumerate().skip(1) {
        let other: HashSet<&str> = map.keys().copied().collect();
        if other != ids {
            let mut diff: Vec<&str> = ids.symmetric_difference(&other).copied().collect();
            diff.sort_unstable();
            return Err(EvalError::Coverage(format!(
                "set {k} differs on {}",
                diff.join(", ")
            )));
        }
    }

    let rank_of = |set_index: usize, model: &str| -> usize {
        priority
            .iter()
            .position(|m| m == model)
            .unwrap_or(priority.len() + set_index)
    };

    let mut out = Vec::with_capacity(first.len());
    for p in first {
        let id = p.id.as_str();
        // letter -> (votes, best rank)
        let mut tally: BTreeMap<Letter, (usize, usize)> = BTreeMap::new();
        for (k, map) in indexed.iter().enumerate() {
            let vote = map[id];
            if let Some(l) = vote.letter {
                let rank = rank_of(k, &vote.model);
                let entry = tally.entry(l).or_insert((0, usize::MAX));
                entry.0 += 1;
                entry.1 = entry.1.min(rank);
            }
        }
        let winner = tally
            .into_iter()
            .max_by(|(_, (va, ra)), (_, (vb, rb))| va.cmp(vb).then(rb.cmp(ra)))
            .map(|(l, _)| l);
        out.push(Prediction {
            id: id.to_owned(),
            letter: winner,
            model: ensemble_tag.to_owned(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::sample;

    fn pred(id: &str, letter: Option<Letter>, model: &str) -> Prediction {
        Prediction {
            id: id.into(),
            letter,
            model: model.into(),
        }
    }

    fn refs_with(answers: &[Letter]) -> Vec<QaRecord> {
        answers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut r = sample(&format!("q{i}"), None, None);
                r.answer = r.choices[l.index()].clone();
                r
            })
            .collect()
    }

    #[test]
    fn half_correct() {
        let refs = refs_with(&[Letter::A, Letter::C]);
        let preds = [
            pred("q0", Some(Letter::A), "m"),
            pred("q1", Some(Letter::B), "m"),
        ];
        let report = evaluate(&preds, &refs).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.parts[&3].accuracy, 0.5);
    }

    #[test]
    fn missing_and_abstained_count_as_wrong() {
        let refs = refs_with(&[Letter::A, Letter::B, Letter::C]);
        let preds = [pred("q0", Some(Letter::A), "m"), pred("q1", None, "m")];
        let report = evaluate(&preds, &refs).unwrap();
        assert_eq!((report.correct, report.abstained, report.total), (1, 1, 3));
        assert_eq!(report.missing, vec!["q2".to_owned()]);
    }

    #[test]
    fn validation_errors() {
        let refs = refs_with(&[Letter::A]);
        assert_eq!(
            evaluate(&[pred("zz", Some(Letter::A), "m")], &refs).unwrap_err(),
            EvalError::UnknownId("zz".into())
        );
        assert!(matches!(
            evaluate(
                &[
                    pred("q0", Some(Letter::A), "m"),
                    pred("q0", Some(Letter::B), "m")
                ],
                &refs
            ),
            Err(EvalError::DuplicateId { .. })
        ));
    }

    #[test]
    fn plurality_and_tie_break() {
        let sets = vec![
            vec![pred("x", Some(Letter::A), "m1")],
            vec![pred("x", Some(Letter::A), "m2")],
            vec![pred("x", Some(Letter::B), "m3")],
        ];
        assert_eq!(
            majority_vote(&sets, &[], "ens").unwrap()[0].letter,
            Some(Letter::A)
        );

        let tie = vec![
            vec![pred("x", Some(Letter::B), "m2")],
            vec![pred("x", Some(Letter::A), "m1")],
        ];
        let priority = ["m1".to_owned(), "m2".to_owned()];
        assert_eq!(
            majority_vote(&tie, &priority, "ens").unwrap()[0].letter,
            Some(Letter::A)
        );
        // without a priority list, set order decides
        assert_eq!(
            majority_vote(&tie, &[], "ens").unwrap()[0].letter,
            Some(Letter::B)
        );
    }

    #[test]
    fn abstentions_only_win_unanimously() {
        let sets = vec![
            vec![pred("x", None, "m1"), pred("y", None, "m1")],
            vec![pred("x", None, "m2"), pred("y", Some(Letter::D), "m2")],
        ];
        let out = majority_vote(&sets, &[], "ens").unwrap();
        assert_eq!(out[0].letter, None);
        assert_eq!(out[1].letter, Some(Letter::D));
    }

    #[test]
    fn coverage_mismatch() {
        let sets = vec![vec![pred("x", None, "m1")], vec![pred("y", None, "m2")]];
        assert!(matches!(
            majority_vote(&sets, &[], "e"),
            Err(EvalError::Coverage(_))
        ));
        assert_eq!(
            majority_vote(&[], &[], "e").unwrap_err(),
            EvalError::NoModels
        );
    }

    #[test]
    fn single_model_is_identity() {
        let set = vec![pred("a", Some(Letter::C), "m"), pred("b", None, "m")];
        let out = majority_vote(std::slice::from_ref(&set), &[], "m").unwrap();
        assert_eq!(out, set);
    }

    #[test]
    fn abstain_serialization() {
        let line = serde_json::to_string(&pred("a", None, "m")).unwrap();
        assert_eq!(line, r#"{"id":"a","letter":"ABSTAIN","model":"m"}"#);
        let back: Prediction =
            serde_json::from_str(r#"{"id":"a","letter":null,"model":"m"}"#).unwrap();
        assert_eq!(back.letter, None);
        assert!(
            serde_json::from_str::<Prediction>(r#"{"id":"a","letter":"E","model":"m"}"#).is_err()
        );
    }
}
