//! Page logic, kept free of JS types so it runs in native tests.

use std::str::FromStr;

use aqakit::curation::{balance_categories, BalanceMode, ThresholdFormula};
use aqakit::mask::Step;
use aqakit::reward::{compute_reward, parse_generation, ReferenceAnswer};
use aqakit::vocab::{encode_token, load_vocabulary};
use aqakit::{Dfa, MaskTable, Preset, QaRecord, StateId, Vocabulary};
use serde_json::{json, Value};

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// A preset name, or else a pattern.
fn format_dfa(format: &str) -> Result<Dfa, String> {
    match Preset::from_str(format) {
        Ok(preset) => Ok(preset.compile()),
        Err(_) => Dfa::from_pattern(format).map_err(err),
    }
}

/// The vocabulary the page starts with: printable ASCII bytes, newline,
/// the format tags, option letters and a few words.
pub fn demo_vocabulary() -> String {
    let mut pieces: Vec<String> = vec!["\n".into()];
    pieces.extend((0x20u8..0x7f).map(|b| (b as char).to_string()));
    pieces.extend(
        [
            "<think>",
            "</think>",
            "<answer>",
            "</answer>",
            " </answer>",
            "A.",
            "B.",
            "C.",
            "D.",
            " a",
            " dog",
            " barking",
            " cat",
            " rain",
            "the",
            " sound",
            " of",
        ]
        .map(String::from),
    );
    let eos = pieces.len();
    pieces.push("</s>".into());
    let tokens: serde_json::Map<String, Value> = pieces
        .into_iter()
        .enumerate()
        .map(|(id, text)| (id.to_string(), Value::String(text)))
        .collect();
    json!({"tokens": tokens, "eos_id": eos, "special": []}).to_string()
}

pub struct Explorer {
    vocab: Vocabulary,
    table: MaskTable,
}

impl Explorer {
    pub fn new(vocab_json: &str, format: &str) -> Result<Explorer, String> {
        let vocab = load_vocabulary(vocab_json.as_bytes()).map_err(err)?;
        let dfa = format_dfa(format)?;
        let table = MaskTable::build(&dfa, &vocab).map_err(err)?;
        Ok(Explorer { vocab, table })
    }

    pub fn state_count(&self) -> usize {
        self.table.state_count()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab_size()
    }

    /// `{state, accepting, allowed: [{id, text, eos}]}` for one state.
    pub fn view(&self, state: StateId) -> Result<String, String> {
        let mask = self.table.allowed_mask(state).map_err(err)?;
        let eos = self.table.eos_id();
        let allowed: Vec<Value> = mask
            .iter()
            .map(|id| {
                let bytes = self.vocab.token_bytes(id).unwrap_or_default();
                json!({"id": id, "text": encode_token(bytes), "eos": id == eos})
            })
            .collect();
        Ok(json!({
            "state": state,
            "accepting": self.table.is_accepting(state),
            "allowed": allowed,
        })
        .to_string())
    }

    /// `{"state": next}` or `{"finished": true}`.
    pub fn advance(&self, state: StateId, token: u32) -> Result<String, String> {
        Ok(match self.table.next_state(state, token).map_err(err)? {
            Step::Continue(next) => json!({"state": next, "finished": false}),
            Step::Finished => json!({"state": null, "finished": true}),
        }
        .to_string())
    }

    pub fn packed_mask(&self, state: StateId) -> Result<Vec<u8>, String> {
        Ok(self
            .table
            .allowed_mask(state)
            .map_err(err)?
            .to_packed_bytes())
    }

    /// Text of the given tokens, with undecodable bytes replaced.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String, String> {
        let bytes = self.vocab.detokenize(ids).map_err(err)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

pub fn reward(
    preset: &str,
    letter: &str,
    content: &str,
    generation: &str,
) -> Result<String, String> {
    let preset = Preset::from_str(preset)?;
    let reference = ReferenceAnswer::new(letter, content).map_err(err)?;
    let parsed = parse_generation(generation, &preset.compile());
    let r = compute_reward(&parsed, &reference);
    Ok(json!({
        "format_ok": parsed.format_ok,
        "parsed_letter": parsed.parsed_letter.map(|l| l.to_string()),
        "parsed_content": parsed.parsed_content,
        "r_full": r.r_full,
        "r_letter": r.r_letter,
        "r_content": r.r_content,
        "r_format": r.r_format,
        "total": r.total,
    })
    .to_string())
}

/// Reads `category count` lines (blank lines and `#` comments ignored).
pub fn parse_counts(text: &str) -> Result<Vec<(String, usize)>, String> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, count) = line
            .rsplit_once(|c: char| c.is_whitespace() || c == ',' || c == ':')
            .ok_or_else(|| format!("line {}: expected `category count`", n + 1))?;
        let name = name.trim().trim_end_matches([',', ':']).trim();
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad count {count:?}", n + 1))?;
        if name.is_empty() {
            return Err(format!("line {}: missing category name", n + 1));
        }
        if out.iter().any(|(c, _)| c == name) {
            return Err(format!("line {}: duplicate category {name:?}", n + 1));
        }
        out.push((name.to_owned(), count));
    }
    if out.is_empty() {
        return Err("no categories given".into());
    }
    Ok(out)
}

/// Balances synthetic records built from per-category counts and returns
/// the balance report.
pub fn balance(
    counts: &str,
    theta: f64,
    mode: &str,
    formula: &str,
    seed: u64,
) -> Result<String, String> {
    let counts = parse_counts(counts)?;
    let mode = BalanceMode::from_str(mode).map_err(err)?;
    let formula = ThresholdFormula::from_str(formula).map_err(err)?;
    let records: Vec<QaRecord> = counts
        .iter()
        .flat_map(|(cat, n)| (0..*n).map(move |i| synthetic(cat, i)))
        .collect();
    let (_, report) = balance_categories(&records, theta, mode, formula, seed).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

fn synthetic(category: &str, i: usize) -> QaRecord {
    QaRecord {
        id: format!("{category}-{i:05}"),
        audio_ref: String::new(),
        question: String::new(),
        choices: vec!["yes".into(), "no".into()],
        answer: "yes".into(),
        category: Some(category.to_owned()),
        difficulty: None,
        part: None,
        dataset: "demo".into(),
    }
}
