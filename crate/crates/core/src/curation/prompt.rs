use thiserror::Error;

use crate::record::QaRecord;

const TEMPLATE_HEAD: &str = "Task: Rate the difficulty of this audio-based question on a scale from 0.0 (very easy) to 1.0 (very difficult).

Consider factors like:
- Complexity of the question
- Required knowledge/understanding
- Ambiguity or clarity of the question
- Number of concepts involved

";

/// Fills the difficulty-rating template for `record`. Choices are written
/// as a JSON list of strings.
pub fn render_difficulty_prompt(record: &QaRecord) -> String {
    let choices = serde_json::to_string(&record.choices).expect("string list serializes");
    format!(
        "{TEMPLATE_HEAD}Question: {}\nChoices: {}\nCorrect Answer: {}",
        record.question, choices, record.answer
    )
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreParseError {
    #[error("no number in response {0:?}")]
    NoNumber(String),
    #[error("score {0} is outside [0, 1] and not a 0-10 rubric integer")]
    OutOfRange(String),
}

/// Reads the first number in a model reply as a difficulty.
///
/// A `-` directly before the number (and not after a digit) makes it
/// negative, which is out of range. Values in `[0, 1]` are taken as-is. An integer literal in `(1, 10]` is
/// read as a ten-point rubric and divided by ten. Anything else is an error.
pub fn parse_difficulty_response(response: &str) -> Result<f64, ScoreParseError> {
    let literal =
        first_number(response).ok_or_else(|| ScoreParseError::NoNumber(response.to_owned()))?;
    let value: f64 = literal
        .parse()
        .map_err(|_| ScoreParseError::NoNumber(response.to_owned()))?;
    let start = literal.as_ptr() as usize - response.as_ptr() as usize;
    let negative = response[..start].ends_with('-')
        && !response[..start - 1].ends_with(|c: char| c.is_ascii_digit());
    if negative {
        return Err(ScoreParseError::OutOfRange(format!("-{literal}")));
    }
    if (0.0..=1.0).contains(&value) {
        return Ok(value);
    }
    let is_integer = !literal.contains('.');
    if is_integer && value > 1.0 && value <= 10.0 {
        return Ok(value / 10.0);
    }
    Err(ScoreParseError::OutOfRange(literal.to_owned()))
}

/// First `\d+(\.\d+)?` or `\.\d+` run.
fn first_number(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts_fraction = bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        if bytes[i].is_ascii_digit() || starts_fraction {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            return Some(&text[start..i]);
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::sample;

    #[test]
    fn prompt_is_byte_exact() {
        let mut r = sample("r1", None, None);
        r.question = "What animal?".into();
        r.choices = vec!["dog".into(), "cat".into()];
        r.answer = "cat".into();
        let expected = "Task: Rate the difficulty of this audio-based question on a scale from 0.0 (very easy) to 1.0 (very difficult).\n\
\n\
Consider factors like:\n\
- Complexity of the question\n\
- Required knowledge/understanding\n\
- Ambiguity or clarity of the question\n\
- Number of concepts involved\n\
\n\
Question: What animal?\n\
Choices: [\"dog\",\"cat\"]\n\
Correct Answer: cat";
        assert_eq!(render_difficulty_prompt(&r), expected);
    }

    #[test]
    fn empty_question_is_rendered_empty() {
        let mut r = sample("r1", None, None);
        r.question.clear();
        assert!(render_difficulty_prompt(&r).contains("\nQuestion: \nChoices: "));
    }

    #[test]
    fn quoted_choices_round_trip() {
        let mut r = sample("r1", None, None);
        r.choices = vec![r#"the "loud" one"#.into(), "back\\slash".into()];
        r.answer = r.choices[0].clone();
        let prompt = render_difficulty_prompt(&r);
        let line = prompt
            .lines()
            .find_map(|l| l.strip_prefix("Choices: "))
            .unwrap();
        let parsed: Vec<String> = serde_json::from_str(line).unwrap();
        assert_eq!(parsed, r.choices);
    }

    #[test]
    fn parses_plain_and_embedded_scores() {
        assert_eq!(parse_difficulty_response("0.7").unwrap(), 0.7);
        assert_eq!(
            parse_difficulty_response("Difficulty: 0.35 because...").unwrap(),
            0.35
        );
        assert_eq!(parse_difficulty_response("I'd say 7/10").unwrap(), 0.7);
        assert_eq!(parse_difficulty_response("1").unwrap(), 1.0);
        assert_eq!(parse_difficulty_response(".25").unwrap(), 0.25);
    }

    #[test]
    fn rejects_unusable_replies() {
        assert!(matches!(
            parse_difficulty_response("score is banana"),
            Err(ScoreParseError::NoNumber(_))
        ));
        assert!(matches!(
            parse_difficulty_response("3.5 out of 5"),
            Err(ScoreParseError::OutOfRange(_))
        ));
        assert!(matches!(
            parse_difficulty_response("42"),
            Err(ScoreParseError::OutOfRange(_))
        ));
    }
}
