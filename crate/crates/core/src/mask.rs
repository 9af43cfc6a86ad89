//! Token-level logit masks over a [`Dfa`].
//!
//! For every live DFA state the table stores a bitmask of allowed tokens and
//! the destination state of each allowed token. A token is allowed iff its
//! whole byte sequence can be walked from the state without reaching DEAD.
//! EOS is allowed exactly at accepting states; other special tokens never.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dfa::{Dfa, StateId, DEAD};
use crate::vocab::{TokenId, Vocabulary};

/// Default ceiling on total mask storage (bits packed in u64 words).
pub const DEFAULT_MAX_MASK_BYTES: usize = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask table of {needed} bytes exceeds the ceiling of {limit} bytes")]
    Capacity { needed: usize, limit: usize },
    #[error("state {0} is not a live DFA state")]
    InvalidState(StateId),
    #[error("token {token} is not allowed in state {state}")]
    ConstraintViolation { state: StateId, token: TokenId },
    #[error("session already finished")]
    Finished,
    #[error("expected {expected} scores, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("mask allows no token")]
    EmptyMask,
    #[error("no accepting output within {max_tokens} tokens")]
    LengthExceeded {
        max_tokens: usize,
        partial: Vec<TokenId>,
    },
}

/// Fixed-width token bitset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    words: Vec<u64>,
    len: usize,
}

impl TokenMask {
    pub fn new(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn full(len: usize) -> Self {
        let mut m = Self::new(len);
        for t in 0..len {
            m.insert(t as TokenId);
        }
        m
    }

    pub fn from_ids(len: usize, ids: impl IntoIterator<Item = TokenId>) -> Self {
        let mut m = Self::new(len);
        for id in ids {
            m.insert(id);
        }
        m
    }

    pub fn insert(&mut self, id: TokenId) {
        let i = id as usize;
        assert!(
            i < self.len,
            "token {id} outside mask of width {}",
            self.len
        );
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, id: TokenId) -> bool {
        let i = id as usize;
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn none_set(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros();
                w &= w - 1;
                Some((wi * 64) as TokenId + bit)
            })
        })
    }

    /// Little-endian packed bits: token `i` is bit `i % 8` of byte `i / 8`.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaskConfig {
    pub max_mask_bytes: usize,
    /// Build states on the rayon pool when the `parallel` feature is on.
    pub parallel: bool,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            max_mask_bytes: DEFAULT_MAX_MASK_BYTES,
            parallel: true,
        }
    }
}

/// Outcome of consuming one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Continue(StateId),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StateEntry {
    mask: TokenMask,
    /// `(token, destination)` for allowed non-EOS tokens, sorted by token.
    dest: Vec<(TokenId, StateId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTable {
    vocab_size: usize,
    eos_id: TokenId,
    start: StateId,
    accepting: Vec<bool>,
    states: Vec<StateEntry>,
}

/// Byte trie over the non-special tokens.
struct TokenTrie {
    children: Vec<Vec<(u8, usize)>>,
    tokens: Vec<Vec<TokenId>>,
}

impl TokenTrie {
    fn new(vocab: &Vocabulary) -> Self {
        let mut trie = TokenTrie {
            children: vec![Vec::new()],
            tokens: vec![Vec::new()],
        };
        for (id, bytes) in vocab.iter() {
            if vocab.is_special(id) || bytes.is_empty() {
                continue;
            }
            let mut node = 0;
            for &b in bytes {
                node = match trie.children[node].iter().find(|(cb, _)| *cb == b) {
                    Some(&(_, n)) => n,
                    None => {
                        trie.children.push(Vec::new());
                        trie.tokens.push(Vec::new());
                        let n = trie.children.len() - 1;
                        trie.children[node].push((b, n));
                        n
                    }
                };
            }
            trie.tokens[node].push(id);
        }
        trie
    }

    fn collect(&self, dfa: &Dfa, state: StateId, out: &mut Vec<(TokenId, StateId)>) {
        let mut stack = vec![(0usize, state)];
        while let Some((node, s)) = stack.pop() {
            for &(b, child) in &self.children[node] {
                let t = dfa.next(s, b);
                if t == DEAD {
                    continue;
                }
                out.extend(self.tokens[child].iter().map(|&id| (id, t)));
                stack.push((child, t));
            }
        }
    }
}

impl MaskTable {
    pub fn build(dfa: &Dfa, vocab: &Vocabulary) -> Result<MaskTable, MaskError> {
        MaskTable::build_with(dfa, vocab, &MaskConfig::default())
    }

    pub fn build_with(
        dfa: &Dfa,
        vocab: &Vocabulary,
        config: &MaskConfig,
    ) -> Result<MaskTable, MaskError> {
        let vocab_size = vocab.len();
        let needed = dfa
            .state_count()
            .saturating_mul(vocab_size.div_ceil(64) * 8);
        if needed > config.max_mask_bytes {
            return Err(MaskError::Capacity {
                needed,
                limit: config.max_mask_bytes,
            });
        }
        let trie = TokenTrie::new(vocab);
        let eos = vocab.eos_id();
        let build_state = |s: StateId| {
            let mut dest = Vec::new();
            trie.collect(dfa, s, &mut dest);
            dest.sort_unstable_by_key(|&(t, _)| t);
            let mut mask = TokenMask::from_ids(vocab_size, dest.iter().map(|&(t, _)| t));
            if dfa.is_accepting(s) {
                mask.insert(eos);
            }
            StateEntry { mask, dest }
        };
        let ids = 0..dfa.state_count() as StateId;
        let states: Vec<StateEntry> = if config.parallel {
            par_map(ids, build_state)
        } else {
            ids.map(build_state).collect()
        };
        Ok(MaskTable {
            vocab_size,
            eos_id: eos,
            start: dfa.start(),
            accepting: (0..dfa.state_count() as StateId)
                .map(|s| dfa.is_accepting(s))
                .collect(),
            states,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn is_accepting(&self, state: StateId) -> bool {
        self.accepting.get(state as usize).copied().unwrap_or(false)
    }

    fn entry(&self, state: StateId) -> Result<&StateEntry, MaskError> {
        self.states
            .get(state as usize)
            .ok_or(MaskError::InvalidState(state))
    }

    pub fn allowed_mask(&self, state: StateId) -> Result<&TokenMask, MaskError> {
        Ok(&self.entry(state)?.mask)
    }

    /// Destination of a non-EOS token, if allowed.
    pub fn destination(
        &self,
        state: StateId,
        token: TokenId,
    ) -> Result<Option<StateId>, MaskError> {
        let entry = self.entry(state)?;
        Ok(entry
            .dest
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| entry.dest[i].1))
    }

    /// Stateless transition used by [`DecodeSession::advance`] and bindings.
    pub fn next_state(&self, state: StateId, token: TokenId) -> Result<Step, MaskError> {
        let entry = self.entry(state)?;
        if token == self.eos_id {
            return if self.is_accepting(state) {
                Ok(Step::Finished)
            } else {
                Err(MaskError::ConstraintViolation { state, token })
            };
        }
        match entry.dest.binary_search_by_key(&token, |&(t, _)| t) {
            Ok(i) => Ok(Step::Continue(entry.dest[i].1)),
            Err(_) => Err(MaskError::ConstraintViolation { state, token }),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<F>(ids: std::ops::Range<StateId>, f: F) -> Vec<StateEntry>
where
    F: Fn(StateId) -> StateEntry + Sync + Send,
{
    use rayon::prelude::*;
    ids.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<F>(ids: std::ops::Range<StateId>, f: F) -> Vec<StateEntry>
where
    F: Fn(StateId) -> StateEntry,
{
    ids.map(f).collect()
}

/// Single-owner decoding cursor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeSession {
    state: StateId,
    emitted: Vec<TokenId>,
    finished: bool,
}

impl DecodeSession {
    pub fn new(table: &MaskTable) -> Self {
        Self {
            state: table.start(),
            emitted: Vec::new(),
            finished: false,
        }
    }

    pub fn state(&self) -> StateId {
        self.state
    }

    pub fn emitted(&self) -> &[TokenId] {
        &self.emitted
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn allowed<'t>(&self, table: &'t MaskTable) -> Result<&'t TokenMask, MaskError> {
        if self.finished {
            return Err(MaskError::Finished);
        }
        table.allowed_mask(self.state)
    }

    pub fn advance(&mut self, token: TokenId, table: &MaskTable) -> Result<(), MaskError> {
        if self.finished {
            return Err(MaskError::Finished);
        }
        match table.next_state(self.state, token)? {
            Step::Continue(next) => self.state = next,
            Step::Finished => self.finished = true,
        }
        self.emitted.push(token);
        Ok(())
    }
}

/// Copies `logits`, replacing disallowed positions with `-inf`.
pub fn apply_mask(logits: &[f32], mask: &TokenMask) -> Result<Vec<f32>, MaskError> {
    let mut out = logits.to_vec();
    apply_mask_in_place(&mut out, mask)?;
    Ok(out)
}

pub fn apply_mask_in_place(logits: &mut [f32], mask: &TokenMask) -> Result<(), MaskError> {
    if logits.len() != mask.len() {
        return Err(MaskError::Dimension {
            expected: mask.len(),
            actual: logits.len(),
        });
    }
    if mask.none_set() {
        return Err(MaskError::EmptyMask);
    }
    for (i, l) in logits.iter_mut().enumerate() {
        if !mask.contains(i as TokenId) {
            *l = f32::NEG_INFINITY;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingPolicy {
    /// Highest score; ties go to the lowest token id.
    Greedy,
    /// Softmax over allowed scores, inverse-CDF draw from ChaCha8 seeded
    /// with `seed`.
    Categorical { seed: u64 },
}

/// Generates tokens under the mask until EOS. `scorer` sees the tokens
/// emitted so far and returns one score per vocabulary entry.
pub fn constrained_sample<F>(
    table: &MaskTable,
    vocab: &Vocabulary,
    mut scorer: F,
    policy: SamplingPolicy,
    max_tokens: usize,
) -> Result<Vec<TokenId>, MaskError>
where
    F: FnMut(&[TokenId]) -> Vec<f32>,
{
    if table.vocab_size() != vocab.len() {
        return Err(MaskError::Dimension {
            expected: table.vocab_size(),
            actual: vocab.len(),
        });
    }
    let mut rng = match policy {
        SamplingPolicy::Categorical { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SamplingPolicy::Greedy => None,
    };
    let mut session = DecodeSession::new(table);
    while session.emitted().len() < max_tokens {
        let scores = scorer(session.emitted());
        if scores.len() != vocab.len() {
            return Err(MaskError::Dimension {
                expected: vocab.len(),
                actual: scores.len(),
            });
        }
        let mask = session.allowed(table)?;
        let token = match rng.as_mut() {
            None => pick_greedy(&scores, mask),
            Some(rng) => pick_categorical(&scores, mask, rng.random::<f64>()),
        }
        .ok_or(MaskError::EmptyMask)?;
        session.advance(token, table)?;
        if session.is_finished() {
            return Ok(session.emitted);
        }
    }
    Err(MaskError::LengthExceeded {
        max_tokens,
        partial: session.emitted,
    })
}

fn pick_greedy(scores: &[f32], mask: &TokenMask) -> Option<TokenId> {
    let mut best: Option<(TokenId, f32)> = None;
    for t in mask.iter() {
        let s = scores[t as usize];
        let s = if s.is_nan() { f32::NEG_INFINITY } else { s };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((t, s));
        }
    }
    best.map(|(t, _)| t)
}

/// `u` in `[0, 1)`. Non-finite scores get zero weight; if every weight is
/// zero the draw is uniform over the allowed tokens.
fn pick_categorical(scores: &[f32], mask: &TokenMask, u: f64) -> Option<TokenId> {
    let allowed: Vec<TokenId> = mask.iter().collect();
    if allowed.is_empty() {
        return None;
    }
    let max = allowed
        .iter()
        .map(|&t| scores[t as usize] as f64)
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = allowed
        .iter()
        .map(|&t| {
            let s = scores[t as usize] as f64;
            if s.is_finite() {
                (s - max).exp()
            } else {
                0.0
            }
        })
        .collect();
    let mut total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        weights.iter_mut().for_each(|w| *w = 1.0);
        total = weights.len() as f64;
    }
    let target = u * total;
    let mut acc = 0.0;
    for (&t, &w) in allowed.iter().zip(&weights) {
        acc += w;
        if target < acc {
            return Some(t);
        }
    }
    // rounding left target at the top edge
    allowed
        .iter()
        .zip(&weights)
        .rev()
        .find(|(_, &w)| w > 0.0)
        .map(|(&t, _)| t)
}
