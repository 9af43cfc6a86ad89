//! Verifiable rewards for multiple-choice generations and group-relative
//! advantages.
//!
//! A generation earns accuracy credit against the reference answer and
//! format credit when it full-matches the output-format DFA:
//!
//! | component  | value | condition                                        |
//! |------------|-------|--------------------------------------------------|
//! | `r_full`   | 0.5   | letter and content both match                    |
//! | `r_letter` | 0.25  | letter matches (only without a full match)       |
//! | `r_content`| 0.25  | content matches (only without a full match)      |
//! | `r_format` | 0.5   | output full-matches the format automaton         |
//!
//! With [`Credit::Additive`] the partial credits are also paid on a full
//! match, for ablations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfa::Dfa;
use crate::letter::Letter;

pub const FULL_MATCH: f64 = 0.5;
pub const LETTER_MATCH: f64 = 0.25;
pub const CONTENT_MATCH: f64 = 0.25;
pub const FORMAT_OK: f64 = 0.5;

/// Stabilizer added to the group standard deviation.
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("invalid reference letter {0:?}")]
    InvalidLetter(String),
    #[error("{len} rewards cannot be split into groups of {group_size}")]
    Dimension { len: usize, group_size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub raw_text: String,
    pub parsed_letter: Option<Letter>,
    pub parsed_content: Option<String>,
    pub format_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceAnswer {
    pub letter: Letter,
    pub content: String,
}

impl ReferenceAnswer {
    pub fn new(letter: &str, content: impl Into<String>) -> Result<Self, RewardError> {
        let letter = letter
            .parse()
            .map_err(|_| RewardError::InvalidLetter(letter.to_owned()))?;
        Ok(Self {
            letter,
            content: content.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_full: f64,
    pub r_letter: f64,
    pub r_content: f64,
    pub r_format: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Credit {
    /// A full match replaces the partial credits; totals lie in `[0, 1]`.
    #[default]
    Subsumed,
    /// Partial credits are paid on top of a full match.
    Additive,
}

/// Splits a generation into its answer letter and content.
///
/// The answer span runs from the last `<answer>` before the last
/// `</answer>`. Leading whitespace is skipped; the first character must be
/// A–D. After the letter one of `.`, `:` or `)` is dropped, then surrounding
/// whitespace is trimmed to give the content.
pub fn parse_generation(raw: &str, format: &Dfa) -> GenerationOutput {
    let format_ok = format.matches(raw.as_bytes());
    let (parsed_letter, parsed_content) = match answer_span(raw) {
        Some(span) => {
            let span = span.trim_start();
            match span.chars().next().and_then(Letter::from_char) {
                Some(letter) => {
                    let rest = &span[1..];
                    let rest = rest.strip_prefix(['.', ':', ')']).unwrap_or(rest);
                    (Some(letter), Some(rest.trim().to_owned()))
                }
                None => (None, None),
            }
        }
        None => (None, None),
    };
    GenerationOutput {
        raw_text: raw.to_owned(),
        parsed_letter,
        parsed_content,
        format_ok,
    }
}

fn answer_span(raw: &str) -> Option<&str> {
    let close = raw.rfind("</answer>")?;
    let open = raw[..close].rfind("<answer>")?;
    Some(&raw[open + "<answer>".len()..close])
}

/// Trim, lowercase, and collapse whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn compute_reward(gen: &GenerationOutput, reference: &ReferenceAnswer) -> RewardBreakdown {
    compute_reward_with(gen, reference, Credit::Subsumed)
}

pub fn compute_reward_with(
    gen: &GenerationOutput,
    reference: &ReferenceAnswer,
    credit: Credit,
) -> RewardBreakdown {
    let letter_eq = gen.parsed_letter == Some(reference.letter);
    let content_eq = gen
        .parsed_content
        .as_deref()
        .is_some_and(|c| normalize(c) == normalize(&reference.content));
    let full = letter_eq && content_eq;
    let partial = !full || credit == Credit::Additive;
    let r_full = if full { FULL_MATCH } else { 0.0 };
    let r_letter = if partial && letter_eq {
        LETTER_MATCH
    } else {
        0.0
    };
    let r_content = if partial && content_eq {
        CONTENT_MATCH
    } else {
        0.0
    };
    let r_format = if gen.format_ok { FORMAT_OK } else { 0.0 };
    RewardBreakdown {
        r_full,
        r_letter,
        r_content,
        r_format,
        total: r_full + r_letter + r_content + r_format,
    }
}

/// Per-group `(r − mean) / (std + ε)` with population std. Groups whose
/// rewards are all equal get exact zeros.
pub fn compute_group_advantages(
    rewards: &[f64],
    group_size: usize,
) -> Result<Vec<f64>, RewardError> {
    if group_size < 2 || !rewards.len().is_multiple_of(group_size) {
        return Err(RewardError::Dimension {
            len: rewards.len(),
            group_size,
        });
    }
    let mut out = Vec::with_capacity(rewards.len());
    for group in rewards.chunks(group_size) {
        if group.iter().all(|&r| r == group[0]) {
            out.extend(std::iter::repeat_n(0.0, group.len()));
            continue;
        }
        let n = group.len() as f64;
        let mean = group.iter().sum::<f64>() / n;
        let std = (group.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        out.extend(group.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfa::Preset;

    fn gen(letter: Option<Letter>, content: Option<&str>, format_ok: bool) -> GenerationOutput {
        GenerationOutput {
            raw_text: String::new(),
            parsed_letter: letter,
            parsed_content: content.map(str::to_owned),
            format_ok,
        }
    }

    #[test]
    fn parses_letter_and_content() {
        let dfa = Preset::AnswerV1.compile();
        let g = parse_generation("<think>t</think><answer>B. a dog barking</answer>", &dfa);
        assert!(g.format_ok);
        assert_eq!(g.parsed_letter, Some(Letter::B));
        assert_eq!(g.parsed_content.as_deref(), Some("a dog barking"));
        let strict = parse_generation(
            "<think>t</think><answer>B. a dog barking</answer>",
            &Preset::PaperVerbatim.compile(),
        );
        assert!(!strict.format_ok);
        assert_eq!(strict.parsed_letter, Some(Letter::B));
    }

    #[test]
    fn unparseable_generations() {
        let dfa = Preset::AnswerV1.compile();
        let bare = parse_generation("B", &dfa);
        assert!(!bare.format_ok);
        assert_eq!(bare.parsed_letter, None);
        let bad = parse_generation("<answer>E</answer>", &dfa);
        assert!(!bad.format_ok);
        assert_eq!(bad.parsed_letter, None);
        let unclosed = parse_generation("<answer>A", &dfa);
        assert_eq!(unclosed.parsed_letter, None);
    }

    #[test]
    fn separator_rules() {
        let dfa = Preset::AnswerV1.compile();
        for (raw, content) in [
            ("<answer>C) wind</answer>", "wind"),
            ("<answer>C:wind </answer>", "wind"),
            ("<answer> C</answer>", ""),
            ("<answer>C..x</answer>", ".x"),
        ] {
            assert_eq!(
                parse_generation(raw, &dfa).parsed_content.as_deref(),
                Some(content),
                "{raw}"
            );
        }
    }

    #[test]
    fn reward_examples() {
        let reference = ReferenceAnswer::new("B", "a dog barking").unwrap();
        let full = compute_reward(
            &gen(Some(Letter::B), Some("a dog barking"), true),
            &reference,
        );
        assert_eq!(full.total, 1.0);
        assert_eq!(
            (full.r_full, full.r_letter, full.r_content, full.r_format),
            (0.5, 0.0, 0.0, 0.5)
        );
        let letter = compute_reward(&gen(Some(Letter::B), Some("a cat"), true), &reference);
        assert_eq!(letter.total, 0.75);
        let nothing = compute_reward(&gen(None, None, false), &reference);
        assert_eq!(nothing.total, 0.0);
        let content_only = compute_reward(
            &gen(Some(Letter::A), Some("A Dog  barking "), false),
            &reference,
        );
        assert_eq!((content_only.r_content, content_only.total), (0.25, 0.25));
    }

    #[test]
    fn additive_credit() {
        let reference = ReferenceAnswer::new("B", "x").unwrap();
        let r = compute_reward_with(
            &gen(Some(Letter::B), Some("x"), true),
            &reference,
            Credit::Additive,
        );
        assert_eq!(r.total, 1.5);
    }

    #[test]
    fn invalid_reference_letter() {
        assert_eq!(
            ReferenceAnswer::new("E", "x").unwrap_err(),
            RewardError::InvalidLetter("E".into())
        );
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn advantages() {
        let a = compute_group_advantages(&[1.0, 0.5, 0.5, 0.0], 4).unwrap();
        let expected = [1.41421, 0.0, 0.0, -1.41421];
        assert!(
            a.iter().zip(expected).all(|(x, e)| (x - e).abs() < 1e-4),
            "{a:?}"
        );
        assert_eq!(
            compute_group_advantages(&[0.7; 4], 4).unwrap(),
            vec![0.0; 4]
        );
        assert_eq!(
            compute_group_advantages(&[0.0; 6], 4).unwrap_err(),
            RewardError::Dimension {
                len: 6,
                group_size: 4
            }
        );
        assert!(compute_group_advantages(&[0.0; 4], 1).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  A  Dog\tBarking\n"), "a dog barking");
    }
}
