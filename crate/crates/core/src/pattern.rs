//! Parser for the byte-level regex dialect used to describe output formats.
//!
//! Supported: literals, `.`, `|`, `(...)` and `(?:...)`, `? * +`, `{m}`,
//! `{m,}`, `{m,n}`, lazy suffix `?`, classes `[...]` with ranges and `^`
//! negation, the Perl classes `\s \S \d \D \w \W`, `\xHH`, `\n \t \r \f \v`,
//! and escaped punctuation. A leading `^` and trailing `$` are accepted and
//! dropped because matching is always whole-input.

use std::fmt;

use thiserror::Error;

/// Upper bound on `{m,n}` counts.
pub const MAX_REPEAT: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("unsupported feature {feature} at position {position}")]
    Unsupported {
        feature: &'static str,
        position: usize,
    },
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
}

impl PatternError {
    fn syntax(position: usize, message: impl Into<String>) -> Self {
        PatternError::Syntax {
            position,
            message: message.into(),
        }
    }
}

/// A set of bytes, one bit per value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ByteSet([u64; 4]);

impl ByteSet {
    pub const fn empty() -> Self {
        ByteSet([0; 4])
    }

    pub const fn full() -> Self {
        ByteSet([u64::MAX; 4])
    }

    pub fn single(b: u8) -> Self {
        let mut s = Self::empty();
        s.insert(b);
        s
    }

    pub fn range(lo: u8, hi: u8) -> Self {
        let mut s = Self::empty();
        for b in lo..=hi {
            s.insert(b);
        }
        s
    }

    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1 << (b & 63);
    }

    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1 << (b & 63)) != 0
    }

    pub fn union(&self, other: &ByteSet) -> ByteSet {
        let mut out = *self;
        for (o, x) in out.0.iter_mut().zip(other.0) {
            *o |= x;
        }
        out
    }

    pub fn complement(&self) -> ByteSet {
        ByteSet(self.0.map(|w| !w))
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(|&b| self.contains(b))
    }

    /// `.`: every byte except `\n`.
    pub fn dot() -> Self {
        let mut s = Self::full();
        s.0[0] &= !(1 << b'\n');
        s
    }

    /// `\s`: space, `\t`, `\n`, `\r`, `\v`, `\f`.
    pub fn whitespace() -> Self {
        let mut s = Self::empty();
        for b in [b' ', b'\t', b'\n', b'\r', 0x0B, 0x0C] {
            s.insert(b);
        }
        s
    }

    pub fn digit() -> Self {
        Self::range(b'0', b'9')
    }

    /// `\w`: `[0-9A-Za-z_]`.
    pub fn word() -> Self {
        Self::digit()
            .union(&Self::range(b'A', b'Z'))
            .union(&Self::range(b'a', b'z'))
            .union(&Self::single(b'_'))
    }
}

impl fmt::Debug for ByteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (lo, hi) in self.ranges() {
            if lo == hi {
                write!(f, "{}", std::ascii::escape_default(lo))?;
            } else {
                write!(
                    f,
                    "{}-{}",
                    std::ascii::escape_default(lo),
                    std::ascii::escape_default(hi)
                )?;
            }
        }
        f.write_str("]")
    }
}

impl ByteSet {
    /// Maximal contiguous ranges, ascending.
    pub fn ranges(&self) -> Vec<(u8, u8)> {
        let mut out = Vec::new();
        let mut start: Option<u8> = None;
        for b in 0..=255u8 {
            match (self.contains(b), start) {
                (true, None) => start = Some(b),
                (false, Some(s)) => {
                    out.push((s, b - 1));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, 255));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ast {
    /// Matches the empty string.
    Empty,
    Literal(u8),
    Class(ByteSet),
    Concat(Vec<Ast>),
    Alternate(Vec<Ast>),
    Repeat {
        node: Box<Ast>,
        min: u32,
        max: Option<u32>,
    },
    Group(Box<Ast>),
}

/// Parses `pattern` into an [`Ast`] describing its full-match language.
pub fn parse(pattern: &str) -> Result<Ast, PatternError> {
    let bytes = pattern.as_bytes();
    let mut end = bytes.len();
    let mut start = 0;
    if bytes.first() == Some(&b'^') {
        start = 1;
    }
    if end > start && bytes[end - 1] == b'$' && !is_escaped(bytes, end - 1) {
        end -= 1;
    }
    let mut parser = Parser {
        src: &bytes[..end],
        pos: start,
        depth: 0,
    };
    let ast = parser.alternation()?;
    if parser.pos < parser.src.len() {
        // only a stray ')' can stop the top-level alternation early
        return Err(PatternError::syntax(parser.pos, "unbalanced ')'"));
    }
    Ok(ast)
}

fn is_escaped(bytes: &[u8], idx: usize) -> bool {
    let backslashes = bytes[..idx]
        .iter()
        .rev()
        .take_while(|&&b| b == b'\\')
        .count();
    backslashes % 2 == 1
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        Some(b)
    }

    fn alternation(&mut self) -> Result<Ast, PatternError> {
        let mut branches = vec![self.concat()?];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            branches.push(self.concat()?);
        }
        Ok(if branches.len() == 1 {
            branches.pop().unwrap()
        } else {
            Ast::Alternate(branches)
        })
    }

    fn concat(&mut self) -> Result<Ast, PatternError> {
        let mut items = Vec::new();
        while let Some(b) = self.peek() {
            match b {
                b'|' => break,
                b')' if self.depth > 0 => break,
                b')' => return Err(PatternError::syntax(self.pos, "unbalanced ')'")),
                _ => {
                    let atom = self.atom()?;
                    items.push(self.quantified(atom)?);
                }
            }
        }
        Ok(match items.len() {
            0 => Ast::Empty,
            1 => items.pop().unwrap(),
            _ => Ast::Concat(items),
        })
    }

    fn quantified(&mut self, atom: Ast) -> Result<Ast, PatternError> {
        let at = self.pos;
        let (min, max) = match self.peek() {
            Some(b'?') => (0, Some(1)),
            Some(b'*') => (0, None),
            Some(b'+') => (1, None),
            Some(b'{') => match self.counted()? {
                Some(bounds) => bounds,
                None => return Ok(atom),
            },
            _ => return Ok(atom),
        };
        if self.src[at] != b'{' {
            self.pos += 1;
        }
        // lazy suffix: same language for recognition
        if self.peek() == Some(b'?') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'?' | b'*' | b'+')) || self.looks_counted() {
            return Err(PatternError::syntax(
                self.pos,
                "stacked repetition operator",
            ));
        }
        Ok(Ast::Repeat {
            node: Box::new(atom),
            min,
            max,
        })
    }

    fn looks_counted(&self) -> bool {
        self.peek() == Some(b'{') && matches!(self.peek_at(1), Some(b'0'..=b'9'))
    }

    /// Parses `{m}`, `{m,}` or `{m,n}` at the cursor.
    fn counted(&mut self) -> Result<Option<(u32, Option<u32>)>, PatternError> {
        let open = self.pos;
        self.pos += 1;
        let min = self.number()?;
        let Some(min) = min else {
            return Err(PatternError::syntax(
                open,
                "expected repetition count after '{'",
            ));
        };
        let max = if self.peek() == Some(b',') {
            self.pos += 1;
            self.number()?
        } else {
            Some(min)
        };
        if self.bump() != Some(b'}') {
            return Err(PatternError::syntax(open, "unterminated repetition '{'"));
        }
        if let Some(max) = max {
            if max < min {
                return Err(PatternError::syntax(open, "repetition max below min"));
            }
        }
        Ok(Some((min, max)))
    }

    fn number(&mut self) -> Result<Option<u32>, PatternError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Ok(None);
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<u32>() {
            Ok(n) if n <= MAX_REPEAT => Ok(Some(n)),
            _ => Err(PatternError::syntax(
                start,
                format!("repetition count exceeds {MAX_REPEAT}"),
            )),
        }
    }

    fn atom(&mut self) -> Result<Ast, PatternError> {
        let at = self.pos;
        let b = self.bump().expect("atom called at end of input");
        match b {
            b'(' => self.group(at),
            b'[' => self.class(at).map(Ast::Class),
            b'.' => Ok(Ast::Class(ByteSet::dot())),
            b'\\' => self.escape(at, false).map(|item| match item {
                ClassItem::Byte(b) => Ast::Literal(b),
                ClassItem::Set(s) => Ast::Class(s),
            }),
            b'^' | b'$' => Err(PatternError::Unsupported {
                feature: "anchor inside pattern",
                position: at,
            }),
            b'?' | b'*' | b'+' => Err(PatternError::syntax(
                at,
                "repetition operator missing expression",
            )),
            b'{' if matches!(self.peek(), Some(b'0'..=b'9')) => Err(PatternError::syntax(
                at,
                "repetition operator missing expression",
            )),
            other => Ok(Ast::Literal(other)),
        }
    }

    fn group(&mut self, open: usize) -> Result<Ast, PatternError> {
        if self.peek() == Some(b'?') {
            match (self.peek_at(1), self.peek_at(2)) {
                (Some(b':'), _) => self.pos += 2,
                (Some(b'=' | b'!'), _) | (Some(b'<'), Some(b'=' | b'!')) => {
                    return Err(PatternError::Unsupported {
                        feature: "lookaround",
                        position: open,
                    })
                }
                (Some(b'P' | b'<'), _) => {
                    return Err(PatternError::Unsupported {
                        feature: "named group",
                        position: open,
                    })
                }
                _ => {
                    return Err(PatternError::Unsupported {
                        feature: "inline flags",
                        position: open,
                    })
                }
            }
        }
        self.depth += 1;
        let inner = self.alternation()?;
        self.depth -= 1;
        if self.bump() != Some(b')') {
            return Err(PatternError::syntax(open, "unbalanced '('"));
        }
        Ok(Ast::Group(Box::new(inner)))
    }

    fn class(&mut self, open: usize) -> Result<ByteSet, PatternError> {
        let negated = if self.peek() == Some(b'^') {
            self.pos += 1;
            true
        } else {
            false
        };
        let mut set = ByteSet::empty();
        let mut first = true;
        loop {
            let at = self.pos;
            let Some(b) = self.bump() else {
                return Err(PatternError::syntax(open, "unterminated character class"));
            };
            let item = match b {
                b']' if !first => break,
                b'[' if self.peek() == Some(b':') => {
                    return Err(PatternError::Unsupported {
                        feature: "POSIX class",
                        position: at,
                    })
                }
                b'[' => {
                    return Err(PatternError::Unsupported {
                        feature: "nested class",
                        position: at,
                    })
                }
                b'&' | b'-' | b'~' if self.peek() == Some(b) && self.peek_at(1) != Some(b']') => {
                    return Err(PatternError::Unsupported {
                        feature: "class set operation",
                        position: at,
                    })
                }
                b'\\' => self.escape(at, true)?,
                b if b >= 0x80 => {
                    return Err(PatternError::Unsupported {
                        feature: "non-ASCII class member",
                        position: at,
                    })
                }
                b => ClassItem::Byte(b),
            };
            first = false;
            match item {
                ClassItem::Set(s) => set = set.union(&s),
                ClassItem::Byte(lo) => {
                    if self.peek() == Some(b'-') && !matches!(self.peek_at(1), Some(b']') | None) {
                        let dash = self.pos;
                        self.pos += 1;
                        let hi_at = self.pos;
                        let hi = match self.bump() {
                            Some(b'\\') => match self.escape(hi_at, true)? {
                                ClassItem::Byte(h) => h,
                                ClassItem::Set(_) => {
                                    return Err(PatternError::syntax(dash, "invalid class range"))
                                }
                            },
                            Some(b'[') => {
                                return Err(PatternError::Unsupported {
                                    feature: "nested class",
                                    position: hi_at,
                                })
                            }
                            Some(h) if h < 0x80 => h,
                            Some(_) => {
                                return Err(PatternError::Unsupported {
                                    feature: "non-ASCII class member",
                                    position: hi_at,
                                })
                            }
                            None => {
                                return Err(PatternError::syntax(
                                    open,
                                    "unterminated character class",
                                ))
                            }
                        };
                        if hi < lo {
                            return Err(PatternError::syntax(dash, "invalid class range"));
                        }
                        set = set.union(&ByteSet::range(lo, hi));
                    } else {
                        set.insert(lo);
                    }
                }
            }
        }
        let set = if negated { set.complement() } else { set };
        if set.is_empty() {
            return Err(PatternError::syntax(open, "empty character class"));
        }
        Ok(set)
    }

    /// Parses the escape whose backslash sits at `at`; the cursor is just
    /// past the backslash.
    fn escape(&mut self, at: usize, in_class: bool) -> Result<ClassItem, PatternError> {
        let Some(c) = self.bump() else {
            return Err(PatternError::syntax(at, "trailing backslash"));
        };
        let item = match c {
            b's' => ClassItem::Set(ByteSet::whitespace()),
            b'S' => ClassItem::Set(ByteSet::whitespace().complement()),
            b'd' => ClassItem::Set(ByteSet::digit()),
            b'D' => ClassItem::Set(ByteSet::digit().complement()),
            b'w' => ClassItem::Set(ByteSet::word()),
            b'W' => ClassItem::Set(ByteSet::word().complement()),
            b'n' => ClassItem::Byte(b'\n'),
            b't' => ClassItem::Byte(b'\t'),
            b'r' => ClassItem::Byte(b'\r'),
            b'f' => ClassItem::Byte(0x0C),
            b'v' => ClassItem::Byte(0x0B),
            b'x' => {
                let hex = self.src.get(self.pos..self.pos + 2);
                let value = hex
                    .and_then(|h| std::str::from_utf8(h).ok())
                    .and_then(|h| u8::from_str_radix(h, 16).ok());
                match value {
                    Some(v) => {
                        self.pos += 2;
                        ClassItem::Byte(v)
                    }
                    None => {
                        return Err(PatternError::syntax(
                            at,
                            "expected two hex digits after \\x",
                        ))
                    }
                }
            }
            b'1'..=b'9' | b'k' => {
                return Err(PatternError::Unsupported {
                    feature: "backreference",
                    position: at,
                })
            }
            b'b' | b'B' | b'A' | b'z' | b'Z' | b'G' if !in_class => {
                return Err(PatternError::Unsupported {
                    feature: "assertion escape",
                    position: at,
                })
            }
            b'p' | b'P' => {
                return Err(PatternError::Unsupported {
                    feature: "unicode class",
                    position: at,
                })
            }
            c if c.is_ascii_punctuation() || c == b' ' => ClassItem::Byte(c),
            _ => {
                return Err(PatternError::syntax(
                    at,
                    format!("unknown escape \\{}", c as char),
                ))
            }
        };
        Ok(item)
    }
}

enum ClassItem {
    Byte(u8),
    Set(ByteSet),
}
