use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use super::prompt::{parse_difficulty_response, render_difficulty_prompt};
use crate::record::{Difficulty, QaRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScorerError {
    #[error("scorer transport failure: {0}")]
    Transport(String),
}

/// Produces a free-text difficulty judgement for one record.
pub trait DifficultyScorer: Sync {
    fn respond(&self, record: &QaRecord, prompt: &str) -> Result<String, ScorerError>;
}

impl<F> DifficultyScorer for F
where
    F: Fn(&QaRecord, &str) -> Result<String, ScorerError> + Sync,
{
    fn respond(&self, record: &QaRecord, prompt: &str) -> Result<String, ScorerError> {
        self(record, prompt)
    }
}

/// Deterministic offline scorer.
///
/// `0.7 · min(chars(question) / 200, 1) + 0.3 · min((choices − 2) / 4, 1)`,
/// printed with three decimals.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

impl StubScorer {
    pub fn difficulty(record: &QaRecord) -> f64 {
        let length = (record.question.chars().count() as f64 / 200.0).min(1.0);
        let choices = (record.choices.len().saturating_sub(2) as f64 / 4.0).min(1.0);
        0.7 * length + 0.3 * choices
    }
}

impl DifficultyScorer for StubScorer {
    fn respond(&self, record: &QaRecord, _prompt: &str) -> Result<String, ScorerError> {
        Ok(format!("{:.3}", StubScorer::difficulty(record)))
    }
}

/// Completion-endpoint client: POSTs the prompt as `text/plain` and reads
/// the response body as the completion text.
#[cfg(feature = "endpoint")]
#[derive(Debug, Clone)]
pub struct EndpointScorer {
    url: String,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
}

#[cfg(feature = "endpoint")]
impl EndpointScorer {
    pub fn new(url: impl Into<String>, timeout: std::time::Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            url: url.into(),
            auth: None,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Sends `header: value` with every request.
    pub fn with_auth(mut self, header: impl Into<String>, value: impl Into<String>) -> Self {
        self.auth = Some((header.into(), value.into()));
        self
    }
}

#[cfg(feature = "endpoint")]
impl DifficultyScorer for EndpointScorer {
    fn respond(&self, _record: &QaRecord, prompt: &str) -> Result<String, ScorerError> {
        let mut request = self
            .agent
            .post(&self.url)
            .content_type("text/plain; charset=utf-8");
        if let Some((name, value)) = &self.auth {
            request = request.header(name.as_str(), value.as_str());
        }
        let mut response = request
            .send(prompt)
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| ScorerError::Transport(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub attempts: usize,
    pub parallelism: usize,
    /// Abort when more than this fraction of records hit transport failures.
    pub max_failure_ratio: f64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            attempts: 3,
            parallelism: 4,
            max_failure_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub records: Vec<QaRecord>,
    /// `(record id, message)` for every record that ended up unscored.
    pub errors: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("{failed} of {total} records failed to reach the scorer")]
    BatchFailed { failed: usize, total: usize },
}

enum Attempted {
    Scored(f64),
    Unparseable(String),
    Transport(String),
}

fn score_one(record: &QaRecord, scorer: &dyn DifficultyScorer, attempts: usize) -> Attempted {
    let prompt = render_difficulty_prompt(record);
    let mut last = Attempted::Transport("no attempts made".into());
    let mut any_reply = false;
    for _ in 0..attempts.max(1) {
        match scorer.respond(record, &prompt) {
            Ok(reply) => match parse_difficulty_response(&reply) {
                Ok(d) => return Attempted::Scored(d),
                Err(e) => {
                    any_reply = true;
                    last = Attempted::Unparseable(e.to_string());
                }
            },
            Err(e) if !any_reply => last = Attempted::Transport(e.to_string()),
            Err(_) => {}
        }
    }
    last
}

/// Labels every record with a difficulty, fanning out up to
/// `options.parallelism` workers. Results are keyed by input position, so
/// output order and content do not depend on scheduling.
pub fn score_difficulties(
    records: Vec<QaRecord>,
    scorer: &dyn DifficultyScorer,
    options: &ScoreOptions,
) -> Result<ScoreOutcome, ScoreError> {
    let total = records.len();
    let results: Vec<Mutex<Option<Attempted>>> = (0..total).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let workers = options.parallelism.clamp(1, total.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let outcome = score_one(&records[i], scorer, options.attempts);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });

    let mut records = records;
    let mut errors = Vec::new();
    let mut failed = 0;
    for (record, slot) in records.iter_mut().zip(results) {
        match slot.into_inner().unwrap().expect("every record is scored") {
            Attempted::Scored(d) => record.difficulty = Some(Difficulty::Scored(d)),
            Attempted::Unparseable(msg) => {
                record.difficulty = Some(Difficulty::UNSCORED);
                errors.push((record.id.clone(), msg));
            }
            Attempted::Transport(msg) => {
                failed += 1;
                record.difficulty = Some(Difficulty::UNSCORED);
                errors.push((record.id.clone(), msg));
            }
        }
    }
    if total > 0 && failed as f64 / total as f64 > options.max_failure_ratio {
        return Err(ScoreError::BatchFailed { failed, total });
    }
    Ok(ScoreOutcome { records, errors })
}
