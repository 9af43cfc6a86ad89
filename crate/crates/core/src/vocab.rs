//! Token vocabularies as id → byte-sequence tables.
//!
//! The JSON form is
//!
//! ```json
//! {"tokens": {"0": "A", "1": "<0xE2>"}, "eos_id": 2, "special": [2]}
//! ```
//!
//! A token string made entirely of `<0xNN>` groups denotes those raw bytes.
//! Ids missing from `tokens` are allowed only for special tokens (including
//! EOS), which then carry an empty byte sequence.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("malformed vocabulary JSON at byte offset {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("failed to read vocabulary")]
    Io(#[from] std::io::Error),
    #[error("token id {0:?} is not a non-negative integer")]
    BadId(String),
    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),
    #[error("vocabulary is missing `eos_id`")]
    MissingEos,
    #[error("token id {0} is missing and is not a special token")]
    MissingToken(TokenId),
    #[error("non-special token {0} has an empty byte sequence")]
    EmptyToken(TokenId),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: TokenId, size: usize },
}

/// Immutable token table. Ids are dense `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos_id: TokenId,
    special: BTreeSet<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from dense token bytes. The EOS entry is forced to
    /// the empty sequence and added to the special set.
    pub fn new(
        mut tokens: Vec<Vec<u8>>,
        eos_id: TokenId,
        special: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self, VocabError> {
        let mut special: BTreeSet<TokenId> = special.into_iter().collect();
        special.insert(eos_id);
        let size = tokens.len();
        if let Some(&id) = special
            .iter()
            .next_back()
            .filter(|&&id| id as usize >= size)
        {
            return Err(VocabError::OutOfRange { id, size });
        }
        tokens[eos_id as usize].clear();
        for (id, bytes) in tokens.iter().enumerate() {
            let id = id as TokenId;
            if bytes.is_empty() && !special.contains(&id) {
                return Err(VocabError::EmptyToken(id));
            }
        }
        Ok(Self {
            tokens,
            eos_id,
            special,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, VocabError> {
        let raw: RawVocab = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        raw.into_vocabulary()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special.contains(&id)
    }

    pub fn special_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.special.iter().copied()
    }

    /// Stored bytes for `id`; empty for EOS.
    pub fn token_bytes(&self, id: TokenId) -> Result<&[u8], VocabError> {
        self.tokens
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or(VocabError::OutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    /// Iterates `(id, bytes)` over every token, special ones included.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[u8])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(id, b)| (id as TokenId, b.as_slice()))
    }

    /// Concatenates the bytes of `ids`. Unknown ids are an error.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(out)
    }

    /// Serializes back to the JSON schema accepted by [`load_vocabulary`].
    pub fn to_json(&self) -> String {
        let mut tokens = serde_json::Map::new();
        for (id, bytes) in self.iter() {
            if bytes.is_empty() {
                // only specials can be empty; they reload as implicit entries
                continue;
            }
            tokens.insert(id.to_string(), encode_token(bytes).into());
        }
        serde_json::json!({
            "tokens": tokens,
            "eos_id": self.eos_id,
            "special": self.special.iter().collect::<Vec<_>>(),
        })
        .to_string()
    }
}

/// Reads a vocabulary JSON document from `source`.
pub fn load_vocabulary(mut source: impl Read) -> Result<Vocabulary, VocabError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    Vocabulary::from_json_str(&text)
}

fn parse_error(text: &str, err: &serde_json::Error) -> VocabError {
    let (line, column) = (err.line(), err.column());
    let offset = if line == 0 {
        0
    } else {
        text.split_inclusive('\n')
            .take(line - 1)
            .map(str::len)
            .sum::<usize>()
            + column.saturating_sub(1)
    };
    VocabError::Parse {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

/// Decodes a token string, honouring `<0xNN>` byte-fallback groups.
pub fn decode_token(text: &str) -> Vec<u8> {
    fallback_bytes(text).unwrap_or_else(|| text.as_bytes().to_vec())
}

/// Encodes token bytes as a JSON-safe string. Bytes that are not valid UTF-8
/// (or that would be misread as fallback groups) are written as `<0xNN>`.
pub fn encode_token(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) if fallback_bytes(s).is_none() => s.to_owned(),
        _ => bytes.iter().map(|b| format!("<0x{b:02X}>")).collect(),
    }
}

fn fallback_bytes(text: &str) -> Option<Vec<u8>> {
    let raw = text.as_bytes();
    if raw.is_empty() || !raw.len().is_multiple_of(6) {
        return None;
    }
    raw.chunks(6)
        .map(|g| {
            if g[0] != b'<' || g[1] != b'0' || g[2] != b'x' || g[5] != b'>' {
                return None;
            }
            let hex = std::str::from_utf8(&g[3..5]).ok()?;
            u8::from_str_radix(hex, 16).ok()
        })
        .collect()
}

#[derive(Deserialize)]
struct RawVocab {
    tokens: TokenEntries,
    eos_id: Option<u64>,
    #[serde(default)]
    special: Vec<u64>,
}

/// Token map kept as an ordered list so duplicate keys are visible.
struct TokenEntries(Vec<(String, String)>);

impl<'de> Deserialize<'de> for TokenEntries {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;
        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = TokenEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from token id to token string")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(entry) = map.next_entry::<String, String>()? {
                    out.push(entry);
                }
                Ok(TokenEntries(out))
            }
        }
        de.deserialize_map(EntriesVisitor)
    }
}

fn to_id(v: u64) -> Result<TokenId, VocabError> {
    TokenId::try_from(v).map_err(|_| VocabError::BadId(v.to_string()))
}

impl RawVocab {
    fn into_vocabulary(self) -> Result<Vocabulary, VocabError> {
        let eos_id = to_id(self.eos_id.ok_or(VocabError::MissingEos)?)?;
        let special = self
            .special
            .into_iter()
            .map(to_id)
            .collect::<Result<BTreeSet<_>, _>>()?;

        let mut entries: Vec<(TokenId, Vec<u8>)> = Vec::with_capacity(self.tokens.0.len());
        for (key, value) in self.tokens.0 {
            let id = key
                .parse::<TokenId>()
                .map_err(|_| VocabError::BadId(key.clone()))?;
            entries.push((id, decode_token(&value)));
        }
        entries.sort_by_key(|(id, _)| *id);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(VocabError::DuplicateId(w[0].0));
        }

        let max_id = entries
            .last()
            .map(|(id, _)| *id)
            .into_iter()
            .chain(special.iter().next_back().copied())
            .chain(Some(eos_id))
            .max()
            .unwrap_or(eos_id);
        let mut tokens: Vec<Option<Vec<u8>>> = vec![None; max_id as usize + 1];
        for (id, bytes) in entries {
            tokens[id as usize] = Some(bytes);
        }
        let tokens = tokens
            .into_iter()
            .enumerate()
            .map(|(id, t)| {
                let id = id as TokenId;
                match t {
                    Some(b) => Ok(b),
                    None if id == eos_id || special.contains(&id) => Ok(Vec::new()),
                    None => Err(VocabError::MissingToken(id)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Vocabulary::new(tokens, eos_id, special)
    }
}
