//! Curriculum difficulty labeling and staging, and statistical category
//! balancing over QA records.

mod balance;
mod prompt;
mod scorer;
mod stage;

pub use balance::{
    apply_threshold, balance_categories, category_histogram, BalanceError, BalanceMode,
    BalanceReport, CategoryCounts, ThresholdFormula,
};
pub use prompt::{parse_difficulty_response, render_difficulty_prompt, ScoreParseError};
#[cfg(feature = "endpoint")]
pub use scorer::EndpointScorer;
pub use scorer::{
    score_difficulties, DifficultyScorer, ScoreError, ScoreOptions, ScoreOutcome, ScorerError,
    StubScorer,
};
pub use stage::{select_stage, Selector, StageError};
