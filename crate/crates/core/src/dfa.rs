//! Byte-level DFA compilation and matching.
//!
//! The pipeline is Thompson NFA → subset construction over byte equivalence
//! classes → removal of states that cannot reach acceptance → Moore
//! minimization → BFS renumbering from the start state. The renumbering makes
//! compiled automata canonical: equal languages give identical tables.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::pattern::{self, Ast, ByteSet, PatternError};

pub type StateId = u32;

/// Sink for every rejected transition. Never a real state index.
pub const DEAD: StateId = StateId::MAX;

pub const DEFAULT_MAX_STATES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DfaError {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error("automaton exceeds the state ceiling of {limit}")]
    Capacity { limit: usize },
    #[error("pattern matches no input")]
    EmptyLanguage,
    #[error("invalid transition table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy)]
pub struct CompileConfig {
    pub max_states: usize,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

/// Named output-format patterns for multiple-choice answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Ends in `.* </answer>`, with a space before the closing tag.
    PaperVerbatim,
    /// The same pattern without that space.
    AnswerV1,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::PaperVerbatim, Preset::AnswerV1];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperVerbatim => "paper-verbatim",
            Preset::AnswerV1 => "answer-v1",
        }
    }

    pub fn pattern(self) -> &'static str {
        match self {
            Preset::PaperVerbatim => r"^<think>.*?</think>\s*<answer>(A|B|C|D).* </answer>$",
            Preset::AnswerV1 => r"^<think>.*?</think>\s*<answer>(A|B|C|D).*</answer>$",
        }
    }

    pub fn compile(self) -> Dfa {
        Dfa::from_pattern(self.pattern()).expect("preset patterns compile")
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown preset {s:?} (expected one of: {})",
                    Preset::ALL.map(Preset::name).join(", ")
                )
            })
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Deterministic automaton over bytes. Every state is live: reachable from
/// the start and able to reach an accepting state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfa {
    /// byte → equivalence class
    classes: [u8; 256],
    stride: usize,
    /// `states × stride` targets
    table: Vec<StateId>,
    accepting: Vec<bool>,
    start: StateId,
}

impl Dfa {
    pub fn from_pattern(pattern: &str) -> Result<Dfa, DfaError> {
        Dfa::compile(&pattern::parse(pattern)?)
    }

    pub fn compile(ast: &Ast) -> Result<Dfa, DfaError> {
        Dfa::compile_with(ast, &CompileConfig::default())
    }

    pub fn compile_with(ast: &Ast, config: &CompileConfig) -> Result<Dfa, DfaError> {
        let mut nfa = Nfa::default();
        let accept = nfa.add();
        let start = nfa.build(ast, accept);
        let classes = nfa.byte_classes();
        let raw = determinize(&nfa, start, accept, &classes, config.max_states)?;
        raw.finish()
    }

    /// Builds a DFA from an explicit table: `table[s][byte]` is the target
    /// state or [`DEAD`]. The result is pruned, minimized and renumbered.
    pub fn from_table(
        start: StateId,
        accepting: &[bool],
        table: &[[StateId; 256]],
    ) -> Result<Dfa, DfaError> {
        let n = table.len();
        if accepting.len() != n || start as usize >= n {
            return Err(DfaError::InvalidTable(format!(
                "{n} rows, {} accepting flags, start {start}",
                accepting.len()
            )));
        }
        if let Some(t) = table
            .iter()
            .flatten()
            .find(|&&t| t != DEAD && t as usize >= n)
        {
            return Err(DfaError::InvalidTable(format!("target {t} out of range")));
        }
        let classes = identity_classes();
        let raw = RawDfa {
            stride: 256,
            classes,
            table: table.iter().flatten().copied().collect(),
            accepting: accepting.to_vec(),
            start,
        };
        raw.finish()
    }

    pub fn state_count(&self) -> usize {
        self.accepting.len()
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn is_accepting(&self, state: StateId) -> bool {
        self.accepting.get(state as usize).copied().unwrap_or(false)
    }

    pub fn accepting_count(&self) -> usize {
        self.accepting.iter().filter(|&&a| a).count()
    }

    pub fn is_live(&self, state: StateId) -> bool {
        (state as usize) < self.state_count()
    }

    /// Single transition; [`DEAD`] stays [`DEAD`].
    #[inline]
    pub fn next(&self, state: StateId, byte: u8) -> StateId {
        if state == DEAD {
            return DEAD;
        }
        self.table[state as usize * self.stride + self.classes[byte as usize] as usize]
    }

    /// Walks `bytes` from `state`, stopping early at [`DEAD`].
    pub fn walk(&self, mut state: StateId, bytes: &[u8]) -> StateId {
        for &b in bytes {
            state = self.next(state, b);
            if state == DEAD {
                break;
            }
        }
        state
    }

    /// Whole-input match.
    pub fn matches(&self, input: &[u8]) -> bool {
        self.is_accepting(self.walk(self.start, input))
    }

    /// Number of bytes leading out of `state` into a live state.
    pub fn live_out_degree(&self, state: StateId) -> usize {
        (0..=255u8).filter(|&b| self.next(state, b) != DEAD).count()
    }

    /// True iff both automata accept the same language (product walk).
    pub fn equivalent(&self, other: &Dfa) -> bool {
        let mut seen = std::collections::HashSet::new();
        let mut queue = VecDeque::from([(self.start, other.start)]);
        seen.insert((self.start, other.start));
        while let Some((a, b)) = queue.pop_front() {
            if self.is_accepting(a) != other.is_accepting(b) {
                return false;
            }
            for byte in 0..=255u8 {
                let pair = (self.next(a, byte), other.next(b, byte));
                if pair != (DEAD, DEAD) && seen.insert(pair) {
                    queue.push_back(pair);
                }
            }
        }
        true
    }

    /// Graphviz rendering with edges grouped by byte ranges.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dfa {\n  rankdir=LR;\n  node [shape=circle];\n");
        out.push_str("  __start [shape=point];\n");
        for s in 0..self.state_count() as StateId {
            let shape = if self.is_accepting(s) {
                "doublecircle"
            } else {
                "circle"
            };
            let _ = writeln!(out, "  {s} [shape={shape}];");
        }
        let _ = writeln!(out, "  __start -> {};", self.start);
        for s in 0..self.state_count() as StateId {
            let mut by_target: Vec<(StateId, ByteSet)> = Vec::new();
            for b in 0..=255u8 {
                let t = self.next(s, b);
                if t == DEAD {
                    continue;
                }
                match by_target.iter_mut().find(|(tt, _)| *tt == t) {
                    Some((_, set)) => set.insert(b),
                    None => by_target.push((t, ByteSet::single(b))),
                }
            }
            for (t, set) in by_target {
                let label = format!("{set:?}")
                    .replace('\\', "\\\\")
                    .replace('"', "\\\"");
                let _ = writeln!(out, "  {s} -> {t} [label=\"{label}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

fn identity_classes() -> [u8; 256] {
    let mut c = [0u8; 256];
    for (i, slot) in c.iter_mut().enumerate() {
        *slot = i as u8;
    }
    c
}

#[derive(Default)]
struct Nfa {
    eps: Vec<Vec<usize>>,
    edge: Vec<Option<(ByteSet, usize)>>,
}

impl Nfa {
    fn add(&mut self) -> usize {
        self.eps.push(Vec::new());
        self.edge.push(None);
        self.eps.len() - 1
    }

    /// Builds `ast` so that it ends in `next`; returns its entry state.
    fn build(&mut self, ast: &Ast, next: usize) -> usize {
        match ast {
            Ast::Empty => next,
            Ast::Literal(b) => self.byte_edge(ByteSet::single(*b), next),
            Ast::Class(set) => self.byte_edge(*set, next),
            Ast::Group(inner) => self.build(inner, next),
            Ast::Concat(items) => items
                .iter()
                .rev()
                .fold(next, |cont, item| self.build(item, cont)),
            Ast::Alternate(branches) => {
                let split = self.add();
                for b in branches {
                    let entry = self.build(b, next);
                    self.eps[split].push(entry);
                }
                split
            }
            Ast::Repeat { node, min, max } => {
                let mut cont = match max {
                    None => {
                        // loop: hub -> node -> hub, hub -> next
                        let hub = self.add();
                        let body = self.build(node, hub);
                        self.eps[hub].push(body);
                        self.eps[hub].push(next);
                        hub
                    }
                    Some(max) => {
                        let mut cont = next;
                        for _ in *min..*max {
                            let opt = self.add();
                            let body = self.build(node, cont);
                            self.eps[opt].push(body);
                            self.eps[opt].push(cont);
                            cont = opt;
                        }
                        cont
                    }
                };
                for _ in 0..*min {
                    cont = self.build(node, cont);
                }
                cont
            }
        }
    }

    fn byte_edge(&mut self, set: ByteSet, next: usize) -> usize {
        let s = self.add();
        self.edge[s] = Some((set, next));
        s
    }

    /// Partitions bytes so that bytes in one class behave identically on
    /// every edge.
    fn byte_classes(&self) -> ([u8; 256], usize) {
        let mut class = [0u16; 256];
        let mut count = 1u16;
        for (set, _) in self.edge.iter().flatten() {
            let mut remap: HashMap<(u16, bool), u16> = HashMap::new();
            let mut next_count = 0u16;
            for b in 0..=255u8 {
                let key = (class[b as usize], set.contains(b));
                let id = *remap.entry(key).or_insert_with(|| {
                    next_count += 1;
                    next_count - 1
                });
                class[b as usize] = id;
            }
            count = next_count;
        }
        let mut out = [0u8; 256];
        for (o, c) in out.iter_mut().zip(class) {
            *o = c as u8;
        }
        (out, count as usize)
    }

    fn closure(&self, seeds: impl IntoIterator<Item = usize>, mark: &mut [bool]) -> Vec<usize> {
        let mut stack: Vec<usize> = seeds.into_iter().collect();
        let mut out = Vec::new();
        while let Some(s) = stack.pop() {
            if mark[s] {
                continue;
            }
            mark[s] = true;
            out.push(s);
            stack.extend(self.eps[s].iter().copied());
        }
        for &s in &out {
            mark[s] = false;
        }
        out.sort_unstable();
        out
    }
}

/// Unminimized DFA; may contain states that cannot reach acceptance.
struct RawDfa {
    classes: [u8; 256],
    stride: usize,
    table: Vec<StateId>,
    accepting: Vec<bool>,
    start: StateId,
}

fn determinize(
    nfa: &Nfa,
    start: usize,
    accept: usize,
    (classes, stride): &([u8; 256], usize),
    max_states: usize,
) -> Result<RawDfa, DfaError> {
    let stride = *stride;
    let mut reps = vec![0u8; stride];
    for b in (0..=255u8).rev() {
        reps[classes[b as usize] as usize] = b;
    }
    let mut mark = vec![false; nfa.eps.len()];
    let mut ids: HashMap<Vec<usize>, StateId> = HashMap::new();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    let mut table: Vec<StateId> = Vec::new();
    let mut accepting = Vec::new();

    let first = nfa.closure([start], &mut mark);
    ids.insert(first.clone(), 0);
    sets.push(first);
    let mut cursor = 0;
    while cursor < sets.len() {
        let current = sets[cursor].clone();
        accepting.push(current.contains(&accept));
        for &rep in &reps {
            let targets: Vec<usize> = current
                .iter()
                .filter_map(|&s| match nfa.edge[s] {
                    Some((set, to)) if set.contains(rep) => Some(to),
                    _ => None,
                })
                .collect();
            if targets.is_empty() {
                table.push(DEAD);
                continue;
            }
            let closed = nfa.closure(targets, &mut mark);
            let id = match ids.get(&closed) {
                Some(&id) => id,
                None => {
                    if sets.len() >= max_states {
                        return Err(DfaError::Capacity { limit: max_states });
                    }
                    let id = sets.len() as StateId;
                    ids.insert(closed.clone(), id);
                    sets.push(closed);
                    id
                }
            };
            table.push(id);
        }
        cursor += 1;
    }
    Ok(RawDfa {
        classes: *classes,
        stride,
        table,
        accepting,
        start: 0,
    })
}

impl RawDfa {
    fn n(&self) -> usize {
        self.accepting.len()
    }

    fn target(&self, s: usize, class: usize) -> StateId {
        self.table[s * self.stride + class]
    }

    fn finish(self) -> Result<Dfa, DfaError> {
        let n = self.n();
        let stride = self.stride;

        // forward reachability
        let mut reachable = vec![false; n];
        let mut stack = vec![self.start as usize];
        reachable[self.start as usize] = true;
        while let Some(s) = stack.pop() {
            for c in 0..stride {
                let t = self.target(s, c);
                if t != DEAD && !reachable[t as usize] {
                    reachable[t as usize] = true;
                    stack.push(t as usize);
                }
            }
        }

        // co-reachability via reverse edges
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        for s in (0..n).filter(|&s| reachable[s]) {
            for c in 0..stride {
                let t = self.target(s, c);
                if t != DEAD {
                    reverse[t as usize].push(s);
                }
            }
        }
        let mut live = vec![false; n];
        let mut stack: Vec<usize> = (0..n)
            .filter(|&s| reachable[s] && self.accepting[s])
            .collect();
        for &s in &stack {
            live[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &reverse[s] {
                if !live[p] {
                    live[p] = true;
                    stack.push(p);
                }
            }
        }
        if !live[self.start as usize] {
            return Err(DfaError::EmptyLanguage);
        }

        let dest = |s: usize, c: usize| -> Option<usize> {
            let t = self.target(s, c);
            (t != DEAD && live[t as usize]).then_some(t as usize)
        };

        // Moore refinement over live states; DEAD is the implicit extra block.
        let live_states: Vec<usize> = (0..n).filter(|&s| live[s]).collect();
        let mut block = vec![usize::MAX; n];
        for &s in &live_states {
            block[s] = self.accepting[s] as usize;
        }
        let mut block_count = {
            let acc = live_states.iter().any(|&s| self.accepting[s]);
            let rej = live_states.iter().any(|&s| !self.accepting[s]);
            if !(acc && rej) {
                for &s in &live_states {
                    block[s] = 0;
                }
                1
            } else {
                2
            }
        };
        loop {
            let mut signatures: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut next_block = vec![usize::MAX; n];
            for &s in &live_states {
                let mut sig = Vec::with_capacity(stride + 1);
                sig.push(block[s]);
                for c in 0..stride {
                    sig.push(dest(s, c).map_or(usize::MAX, |t| block[t]));
                }
                let fresh = signatures.len();
                next_block[s] = *signatures.entry(sig).or_insert(fresh);
            }
            let count = signatures.len();
            block = next_block;
            if count == block_count {
                break;
            }
            block_count = count;
        }

        // one representative per block, BFS-numbered from the start block
        let mut rep_of_block = vec![usize::MAX; block_count];
        for &s in &live_states {
            if rep_of_block[block[s]] == usize::MAX {
                rep_of_block[block[s]] = s;
            }
        }
        let mut order = vec![DEAD; block_count];
        let mut queue = VecDeque::new();
        let start_block = block[self.start as usize];
        order[start_block] = 0;
        queue.push_back(start_block);
        let mut visited = vec![start_block];
        while let Some(b) = queue.pop_front() {
            let rep = rep_of_block[b];
            // visit classes in byte order so numbering is independent of the class layout
            for byte in 0..=255u8 {
                if let Some(t) = dest(rep, self.classes[byte as usize] as usize) {
                    let tb = block[t];
                    if order[tb] == DEAD {
                        order[tb] = visited.len() as StateId;
                        visited.push(tb);
                        queue.push_back(tb);
                    }
                }
            }
        }

        // recompress byte classes against the final table
        let final_n = visited.len();
        let mut columns: HashMap<Vec<StateId>, u8> = HashMap::new();
        let mut classes = [0u8; 256];
        let mut class_columns: Vec<Vec<StateId>> = Vec::new();
        for byte in 0..=255u8 {
            let col: Vec<StateId> = visited
                .iter()
                .map(|&b| {
                    dest(rep_of_block[b], self.classes[byte as usize] as usize)
                        .map_or(DEAD, |t| order[block[t]])
                })
                .collect();
            let fresh = columns.len() as u8;
            let id = *columns.entry(col.clone()).or_insert_with(|| {
                class_columns.push(col);
                fresh
            });
            classes[byte as usize] = id;
        }
        let new_stride = class_columns.len();
        let mut table = vec![DEAD; final_n * new_stride];
        for (c, col) in class_columns.iter().enumerate() {
            for (s, &t) in col.iter().enumerate() {
                table[s * new_stride + c] = t;
            }
        }
        let accepting = visited
            .iter()
            .map(|&b| self.accepting[rep_of_block[b]])
            .collect();
        Ok(Dfa {
            classes,
            stride: new_stride,
            table,
            accepting,
            start: 0,
        })
    }
}
