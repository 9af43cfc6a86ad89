//! Guided-decoding and data-curation toolkit for multiple-choice audio
//! question answering.
//!
//! The decoding side compiles an output-format regex to a byte DFA
//! ([`dfa`]), indexes it against a tokenizer [`vocab`] and serves per-step
//! logit masks ([`mask`]). The data side scores and stages records by
//! difficulty and balances categories ([`curation`]), computes rewards and
//! group advantages for policy optimization ([`reward`]), evaluates
//! predictions and ensembles ([`eval`]), and emits per-stage training
//! manifests ([`pipeline`]).

pub mod curation;
pub mod dfa;
pub mod eval;
pub mod jsonl;
pub mod letter;
pub mod mask;
pub mod pattern;
pub mod pipeline;
pub mod record;
pub mod reward;
pub mod vocab;

pub use dfa::{Dfa, Preset, StateId, DEAD};
pub use letter::Letter;
pub use mask::{DecodeSession, MaskTable, SamplingPolicy, TokenMask};
pub use record::QaRecord;
pub use vocab::{TokenId, Vocabulary};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
