//! Shared generators and oracles for the integration suites.
#![allow(dead_code)]

use aqakit::{Dfa, StateId, TokenId, Vocabulary, DEAD};
use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

/// Byte alphabet the pattern generator draws literals from.
pub const LITERALS: &[u8] = b"abcxyz<>/ ";

/// Random regex over the supported dialect, paired with a sampler that draws
/// members of its language.
#[derive(Debug, Clone)]
pub enum Gen {
    Lit(u8),
    Class {
        negated: bool,
        items: Vec<(u8, u8)>,
    },
    Dot,
    Perl(&'static str),
    Concat(Vec<Gen>),
    Alt(Vec<Gen>),
    Repeat {
        node: Box<Gen>,
        min: u32,
        max: Option<u32>,
        syntax: u8,
        lazy: bool,
    },
    Group {
        node: Box<Gen>,
        capture: bool,
    },
}

fn escape_literal(b: u8) -> String {
    match b {
        b'.' | b'*' | b'+' | b'?' | b'(' | b')' | b'[' | b']' | b'{' | b'}' | b'|' | b'\\'
        | b'^' | b'$' => format!("\\{}", b as char),
        b' ' => "\\x20".to_owned(),
        b if b.is_ascii_graphic() => (b as char).to_string(),
        b => format!("\\x{b:02x}"),
    }
}

fn escape_class(b: u8) -> String {
    match b {
        b']' | b'\\' | b'^' | b'-' | b'[' | b'&' | b'~' => format!("\\{}", b as char),
        b if b.is_ascii_graphic() => (b as char).to_string(),
        b => format!("\\x{b:02x}"),
    }
}

impl Gen {
    pub fn random(rng: &mut impl Rng, depth: u32) -> Gen {
        let leaf = depth == 0 || rng.random_bool(0.35);
        if leaf {
            return match rng.random_range(0..10) {
                0..=5 => Gen::Lit(*LITERALS.choose(rng).unwrap()),
                6 => Gen::Dot,
                7 => Gen::Perl(
                    ["\\s", "\\d", "\\w", "\\S", "\\D", "\\W"]
                        .choose(rng)
                        .unwrap(),
                ),
                _ => {
                    let n = rng.random_range(1..=3);
                    let items = (0..n)
                        .map(|_| {
                            let a = *b"abcxyz09-]^".choose(rng).unwrap();
                            if rng.random_bool(0.3) {
                                let b = *b"cdz9".choose(rng).unwrap();
                                (a.min(b), a.max(b))
                            } else {
                                (a, a)
                            }
                        })
                        .collect();
                    Gen::Class {
                        negated: rng.random_bool(0.25),
                        items,
                    }
                }
            };
        }
        match rng.random_range(0..4) {
            0 => Gen::Concat(
                (0..rng.random_range(2..=4))
                    .map(|_| Gen::random(rng, depth - 1))
                    .collect(),
            ),
            1 => Gen::Alt(
                (0..rng.random_range(2..=3))
                    .map(|_| Gen::random(rng, depth - 1))
                    .collect(),
            ),
            2 => Gen::Group {
                node: Box::new(Gen::random(rng, depth - 1)),
                capture: rng.random_bool(0.5),
            },
            _ => {
                let syntax = rng.random_range(0..6);
                let (min, max) = match syntax {
                    0 => (0, None),
                    1 => (1, None),
                    2 => (0, Some(1)),
                    3 => {
                        let m = rng.random_range(0..=3);
                        (m, Some(m))
                    }
                    4 => (rng.random_range(0..=2), None),
                    _ => {
                        let m = rng.random_range(0..=2);
                        (m, Some(m + rng.random_range(0..=2)))
                    }
                };
                Gen::Repeat {
                    node: Box::new(Gen::Group {
                        node: Box::new(Gen::random(rng, depth - 1)),
                        capture: false,
                    }),
                    min,
                    max,
                    syntax,
                    lazy: rng.random_bool(0.2),
                }
            }
        }
    }

    pub fn pattern(&self) -> String {
        match self {
            Gen::Lit(b) => escape_literal(*b),
            Gen::Dot => ".".to_owned(),
            Gen::Perl(p) => (*p).to_owned(),
            Gen::Class { negated, items } => {
                let mut s = String::from("[");
                if *negated {
                    s.push('^');
                }
                for &(a, b) in items {
                    s += &escape_class(a);
                    if a != b {
                        s.push('-');
                        s += &escape_class(b);
                    }
                }
                s.push(']');
                s
            }
            Gen::Concat(items) => items
                .iter()
                .map(|g| match g {
                    Gen::Alt(_) => format!("(?:{})", g.pattern()),
                    _ => g.pattern(),
                })
                .collect(),
            Gen::Alt(items) => items.iter().map(Gen::pattern).collect::<Vec<_>>().join("|"),
            Gen::Group { node, capture } => {
                format!("({}{})", if *capture { "" } else { "?:" }, node.pattern())
            }
            Gen::Repeat {
                node,
                min,
                max,
                syntax,
                lazy,
            } => {
                let op = match (syntax, min, max) {
                    (0, _, _) => "*".to_owned(),
                    (1, _, _) => "+".to_owned(),
                    (2, _, _) => "?".to_owned(),
                    (3, m, _) => format!("{{{m}}}"),
                    (4, m, _) => format!("{{{m},}}"),
                    (_, m, Some(n)) => format!("{{{m},{n}}}"),
                    _ => unreachable!(),
                };
                format!("{}{op}{}", node.pattern(), if *lazy { "?" } else { "" })
            }
        }
    }

    fn class_members(&self) -> Vec<u8> {
        (0..=255u8).filter(|&b| self.accepts_byte(b)).collect()
    }

    fn accepts_byte(&self, b: u8) -> bool {
        match self {
            Gen::Lit(l) => *l == b,
            Gen::Dot => b != b'\n',
            Gen::Perl(p) => {
                let (base, neg) = match *p {
                    "\\s" => (matches!(b, 9..=13 | b' '), false),
                    "\\S" => (matches!(b, 9..=13 | b' '), true),
                    "\\d" => (b.is_ascii_digit(), false),
                    "\\D" => (b.is_ascii_digit(), true),
                    "\\w" => (b.is_ascii_alphanumeric() || b == b'_', false),
                    _ => (b.is_ascii_alphanumeric() || b == b'_', true),
                };
                base != neg
            }
            Gen::Class { negated, items } => {
                items.iter().any(|&(a, z)| (a..=z).contains(&b)) != *negated
            }
            _ => unreachable!("not a single-byte node"),
        }
    }

    /// Appends one member of the language to `out`.
    pub fn sample(&self, rng: &mut impl Rng, out: &mut Vec<u8>) {
        match self {
            Gen::Lit(b) => out.push(*b),
            Gen::Dot | Gen::Perl(_) | Gen::Class { .. } => {
                let members = self.class_members();
                if let Some(&b) = members.choose(rng) {
                    out.push(b);
                }
            }
            Gen::Concat(items) => items.iter().for_each(|g| g.sample(rng, out)),
            Gen::Alt(items) => items.choose(rng).unwrap().sample(rng, out),
            Gen::Group { node, .. } => node.sample(rng, out),
            Gen::Repeat { node, min, max, .. } => {
                let hi = max.unwrap_or(min + 3);
                for _ in 0..rng.random_range(*min..=hi) {
                    node.sample(rng, out);
                }
            }
        }
    }
}

/// Strings to test a pattern against: language samples, mutated samples,
/// and uniformly random short byte strings.
pub fn probe_strings(gen: &Gen, rng: &mut impl Rng, n: usize) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| match i % 3 {
            0 => {
                let mut s = Vec::new();
                gen.sample(rng, &mut s);
                s
            }
            1 => {
                let mut s = Vec::new();
                gen.sample(rng, &mut s);
                if s.is_empty() || rng.random_bool(0.3) {
                    s.insert(
                        rng.random_range(0..=s.len()),
                        *LITERALS.choose(rng).unwrap(),
                    );
                } else {
                    let at = rng.random_range(0..s.len());
                    if rng.random_bool(0.5) {
                        s.remove(at);
                    } else {
                        s[at] = rng.random();
                    }
                }
                s
            }
            _ => {
                let len = rng.random_range(0..8);
                (0..len)
                    .map(|_| {
                        if rng.random_bool(0.8) {
                            *b"abcxyz<>/ 09\n".choose(rng).unwrap()
                        } else {
                            rng.random()
                        }
                    })
                    .collect()
            }
        })
        .collect()
}

/// Full-match reference matcher from the `regex` crate, byte mode.
pub fn reference(pattern: &str) -> regex::bytes::Regex {
    regex::bytes::RegexBuilder::new(&format!("(?-u)^(?:{pattern})$"))
        .size_limit(1 << 26)
        .build()
        .unwrap_or_else(|e| panic!("reference rejected {pattern:?}: {e}"))
}

/// Random table over a small alphabet, then canonicalized.
pub fn random_dfa(rng: &mut impl Rng, max_states: usize) -> Dfa {
    const ALPHABET: &[u8] = b"abcd";
    loop {
        let n = rng.random_range(1..=max_states);
        let mut table = vec![[DEAD; 256]; n];
        for row in table.iter_mut() {
            for &b in ALPHABET {
                if rng.random_bool(0.6) {
                    row[b as usize] = rng.random_range(0..n as StateId);
                }
            }
        }
        let accepting: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        if let Ok(dfa) = Dfa::from_table(0, &accepting, &table) {
            return dfa;
        }
    }
}

/// Random vocabulary of up to `max` tokens over `abcd`, with EOS and one
/// extra special token.
pub fn random_vocab(rng: &mut impl Rng, max: usize) -> Vocabulary {
    let n = rng.random_range(3..=max);
    let eos = rng.random_range(0..n) as TokenId;
    let pad = (eos + 1) % n as TokenId;
    let tokens = (0..n)
        .map(|i| {
            if i as TokenId == pad {
                b"a".to_vec()
            } else {
                let len = rng.random_range(1..=4);
                (0..len).map(|_| *b"abcd".choose(rng).unwrap()).collect()
            }
        })
        .collect();
    Vocabulary::new(tokens, eos, [pad]).unwrap()
}

/// 300 entries: ids 0..256 are byte fallbacks, then format tags and common
/// words, one special padding token (298) and EOS (299).
pub fn fixture_vocab() -> Vocabulary {
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let pieces = [
        "<think>",
        "</think>",
        "<answer>",
        "</answer>",
        " </answer>",
        "<",
        ">",
        "</",
        "A",
        "B",
        "C",
        "D",
        "A.",
        "B.",
        "C.",
        "D.",
        "A:",
        " ",
        "  ",
        "\n",
        "\n\n",
        " the",
        " a",
        " dog",
        " cat",
        " bird",
        " car",
        " sound",
        " is",
        " of",
        " audio",
        " barking",
        " engine",
        " music",
        " speech",
        " water",
        " wind",
        " clip",
        "think>",
        ".",
        "..",
        "ing",
    ];
    tokens.extend(pieces.iter().map(|p| p.as_bytes().to_vec()));
    assert!(tokens.len() <= 298);
    let mut k = 0;
    while tokens.len() < 298 {
        tokens.push(format!(" w{k}").into_bytes());
        k += 1;
    }
    tokens.push(b"<pad>".to_vec());
    tokens.push(Vec::new());
    Vocabulary::new(tokens, 299, [298]).unwrap()
}

/// Brute-force destination of `token` from `state`: walk its bytes.
pub fn walk_token(
    dfa: &Dfa,
    vocab: &Vocabulary,
    state: StateId,
    token: TokenId,
) -> Option<StateId> {
    if vocab.is_special(token) {
        return None;
    }
    let s = dfa.walk(state, vocab.token_bytes(token).unwrap());
    (s != DEAD).then_some(s)
}

pub fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Noisy scores that favour the next format tag after the text so far, so
/// random runs usually terminate. The masks alone decide validity.
pub fn biased_scores(vocab: &Vocabulary, emitted: &[TokenId], rng: &mut impl RngCore) -> Vec<f32> {
    let text = vocab.detokenize(emitted).unwrap();
    let last_tag = ["<think>", "</think>", "<answer>", "</answer>"]
        .iter()
        .filter_map(|tag| find_last(&text, tag.as_bytes()).map(|at| (at, *tag)))
        .max();
    let wanted: &[&[u8]] = match last_tag {
        None => &[b"<think>"],
        Some((_, "<think>")) => &[b"</think>"],
        Some((_, "</think>")) => &[b"<answer>"],
        Some((at, "<answer>")) if text.len() == at + "<answer>".len() => {
            &[b"A.", b"B.", b"C.", b"D."]
        }
        Some((_, "<answer>")) => &[b"</answer>", b" </answer>"],
        _ => &[],
    };
    let last_tag = last_tag.map(|(_, tag)| tag);
    (0..vocab.len() as TokenId)
        .map(|t| {
            let base = (rng.next_u32() as f32 / u32::MAX as f32) * 2.0;
            let bytes = vocab.token_bytes(t).unwrap_or(&[]);
            if t == vocab.eos_id() && last_tag == Some("</answer>") {
                base + 10.0
            } else if wanted.contains(&bytes) {
                base + 7.0
            } else {
                base
            }
        })
        .collect()
}

fn find_last(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).rposition(|w| w == needle)
}
