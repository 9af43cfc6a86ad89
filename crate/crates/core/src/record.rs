//! Question/answer records shared by curation, rewards and evaluation.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::letter::Letter;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("record {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
}

/// Difficulty label. `Unscored` marks records the scorer could not label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Difficulty {
    Scored(f64),
    Unscored(UnscoredMarker),
}

/// Serialized as the string `"unscored"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnscoredMarker {
    Unscored,
}

impl Difficulty {
    pub const UNSCORED: Difficulty = Difficulty::Unscored(UnscoredMarker::Unscored);

    pub fn score(self) -> Option<f64> {
        match self {
            Difficulty::Scored(d) => Some(d),
            Difficulty::Unscored(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    pub audio_ref: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<u8>,
    pub dataset: String,
}

impl QaRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        let invalid = |reason: String| RecordError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.choices.len() < 2 {
            return Err(invalid(format!(
                "needs at least 2 choices, has {}",
                self.choices.len()
            )));
        }
        if !self.choices.contains(&self.answer) {
            return Err(invalid(format!("answer {:?} is not a choice", self.answer)));
        }
        if let Some(Difficulty::Scored(d)) = self.difficulty {
            if !(0.0..=1.0).contains(&d) {
                return Err(invalid(format!("difficulty {d} outside [0, 1]")));
            }
        }
        if let Some(p) = self.part {
            if !(1..=3).contains(&p) {
                return Err(invalid(format!("part {p} outside 1..=3")));
            }
        }
        Ok(())
    }

    pub fn difficulty_score(&self) -> Option<f64> {
        self.difficulty.and_then(Difficulty::score)
    }

    /// Letter of the correct choice; only defined for up to four choices.
    pub fn answer_letter(&self) -> Result<Letter, RecordError> {
        let idx = self
            .choices
            .iter()
            .position(|c| *c == self.answer)
            .ok_or_else(|| RecordError::Invalid {
                id: self.id.clone(),
                reason: format!("answer {:?} is not a choice", self.answer),
            })?;
        Letter::from_index(idx).ok_or_else(|| RecordError::Invalid {
            id: self.id.clone(),
            reason: format!("answer is choice {} but only A-D are lettered", idx + 1),
        })
    }
}

/// Reads and validates a QA JSONL stream; ids must be unique.
pub fn read_records(reader: impl BufRead) -> Result<Vec<QaRecord>, RecordError> {
    let records: Vec<QaRecord> = jsonl::read_jsonl(reader)?;
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(RecordError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

#[cfg(test)]
pub(crate) fn sample(id: &str, category: Option<&str>, difficulty: Option<f64>) -> QaRecord {
    QaRecord {
        id: id.to_owned(),
        audio_ref: format!("audio/{id}.wav"),
        question: "What is making the sound?".to_owned(),
        choices: vec![
            "a dog".into(),
            "a cat".into(),
            "a bird".into(),
            "a car".into(),
        ],
        answer: "a cat".to_owned(),
        category: category.map(str::to_owned),
        difficulty: difficulty.map(Difficulty::Scored),
        part: Some(3),
        dataset: "fixture".to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_omits_absent_optionals() {
        let mut r = sample("r1", None, None);
        r.part = None;
        let line = serde_json::to_string(&r).unwrap();
        assert!(!line.contains("category"));
        assert!(!line.contains("difficulty"));
        let back: QaRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn unscored_marker_serializes_as_string() {
        let mut r = sample("r1", Some("x"), None);
        r.difficulty = Some(Difficulty::UNSCORED);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.contains(r#""difficulty":"unscored""#));
        let back: QaRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.difficulty, Some(Difficulty::UNSCORED));
        assert!(serde_json::from_str::<QaRecord>(&line.replace("unscored", "sorta")).is_err());
    }

    #[test]
    fn validation_rules() {
        let mut r = sample("r1", None, Some(0.4));
        assert!(r.validate().is_ok());
        r.answer = "a fish".into();
        assert!(r.validate().is_err());
        let mut r = sample("r2", None, Some(1.5));
        assert!(r.validate().is_err());
        r.difficulty = None;
        r.choices.truncate(1);
        r.answer = r.choices[0].clone();
        assert!(r.validate().is_err());
    }

    #[test]
    fn answer_letters() {
        let r = sample("r1", None, None);
        assert_eq!(r.answer_letter().unwrap(), Letter::B);
        let mut five = r.clone();
        five.choices.push("a train".into());
        five.answer = "a train".into();
        assert!(five.answer_letter().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = serde_json::to_string(&sample("same", None, None)).unwrap();
        let text = format!("{r}\n{r}\n");
        assert!(matches!(
            read_records(text.as_bytes()),
            Err(RecordError::DuplicateId(id)) if id == "same"
        ));
    }
}
