//! Stage layouts and the stacking mini-language.
//!
//! A layout is four stage letters, `L` (conv only), `M` (conv and attention)
//! or `G` (attention only), each optionally followed by a bracketed block
//! list:
//!
//! ```text
//! L[c3] M[c3 t1] M[(c3 t2)x3] G[t3]
//! ```
//!
//! `cN` is N conv blocks, `tN` is N transformer blocks and `(...)xN` repeats
//! a group. A bare letter takes the variant's default blocks for its
//! position, converted to the letter's kind.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    Local,
    Mix,
    Global,
}

impl StageKind {
    pub fn letter(self) -> char {
        match self {
            StageKind::Local => 'L',
            StageKind::Mix => 'M',
            StageKind::Global => 'G',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Conv,
    Trans,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub kind: StageKind,
    /// One repeat unit; the stage runs it `repeat` times.
    pub blocks: Vec<BlockKind>,
    pub channels: usize,
    pub repeat: usize,
}

impl StageSpec {
    /// The flattened block sequence.
    pub fn expanded(&self) -> Vec<BlockKind> {
        (0..self.repeat).flat_map(|_| self.blocks.iter().copied()).collect()
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|&&b| b == kind).count() * self.repeat
    }

    pub fn has_trans(&self) -> bool {
        self.blocks.contains(&BlockKind::Trans)
    }

    fn unit_string(&self) -> String {
        let mut parts = Vec::new();
        let mut iter = self.blocks.iter().peekable();
        while let Some(&b) = iter.next() {
            let mut n = 1;
            while iter.peek() == Some(&&b) {
                iter.next();
                n += 1;
            }
            let c = if b == BlockKind::Conv { 'c' } else { 't' };
            parts.push(format!("{c}{n}"));
        }
        parts.join(" ")
    }
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.repeat > 1 {
            write!(f, "{}[({})x{}]", self.kind.letter(), self.unit_string(), self.repeat)
        } else {
            write!(f, "{}[{}]", self.kind.letter(), self.unit_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackSpec {
    pub stages: Vec<StageSpec>,
}

impl fmt::Display for StackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.stages.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl StackSpec {
    /// Structural checks: four stages, kinds respected, positive counts.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.stages.len() != 4 {
            v.push(format!("expected 4 stages, got {}", self.stages.len()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.blocks.is_empty() || s.repeat == 0 {
                v.push(format!("stage {n} has no blocks"));
            }
            match s.kind {
                StageKind::Local if s.has_trans() => {
                    v.push(format!("stage {n} is Local but contains Trans blocks"))
                }
                StageKind::Global if s.blocks.contains(&BlockKind::Conv) => {
                    v.push(format!("stage {n} is Global but contains Conv blocks"))
                }
                StageKind::Mix if !(s.has_trans() && s.blocks.contains(&BlockKind::Conv)) => {
                    v.push(format!("stage {n} is Mix but lacks Conv or Trans blocks"))
                }
                _ => {}
            }
            if s.channels == 0 {
                v.push(format!("stage {n} has zero channels"));
            }
        }
        for w in self.stages.windows(2) {
            if w[1].channels < w[0].channels {
                v.push(format!(
                    "channels must be non-decreasing, got {} then {}",
                    w[0].channels, w[1].channels
                ));
            }
        }
        v
    }

    /// Replaces the per-stage widths.
    pub fn with_channels(mut self, channels: [usize; 4]) -> Self {
        for (s, c) in self.stages.iter_mut().zip(channels) {
            s.channels = c;
        }
        self
    }

    pub fn letters(&self) -> String {
        self.stages.iter().map(|s| s.kind.letter()).collect()
    }
}

/// The four published model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    T,
    S,
    B,
    L,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::T, Variant::S, Variant::B, Variant::L];

    pub fn parse(name: &str) -> Option<Variant> {
        match name.trim().to_ascii_uppercase().as_str() {
            "T" => Some(Variant::T),
            "S" => Some(Variant::S),
            "B" => Some(Variant::B),
            "L" => Some(Variant::L),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::T => "T",
            Variant::S => "S",
            Variant::B => "B",
            Variant::L => "L",
        }
    }

    /// Stage-1 width; later stages double it.
    pub fn base_width(self) -> usize {
        match self {
            Variant::T | Variant::S => 96,
            Variant::B => 128,
            Variant::L => 192,
        }
    }

    pub fn channels(self) -> [usize; 4] {
        let c = self.base_width();
        [c, 2 * c, 4 * c, 8 * c]
    }

    pub fn output_channel(self) -> usize {
        match self {
            Variant::T | Variant::S => 768,
            Variant::B => 1024,
            Variant::L => 1536,
        }
    }

    /// Published total parameter count.
    pub fn reported_params(self) -> u64 {
        match self {
            Variant::T => 27_000_000,
            Variant::S => 44_000_000,
            Variant::B => 80_000_000,
            Variant::L => 206_000_000,
        }
    }

    fn stage3_repeat(self) -> usize {
        match self {
            Variant::T => 1,
            Variant::S => 2,
            Variant::B => 3,
            Variant::L => 4,
        }
    }

    fn stage4_blocks(self) -> usize {
        match self {
            Variant::T => 2,
            _ => 3,
        }
    }

    /// The published `LMMG` layout for this size.
    pub fn stack(self) -> StackSpec {
        StackSpec {
            stages: (0..4).map(|p| self.default_stage(p, None)).collect(),
        }
    }

    /// Default blocks for `kind` at `position` (0-based). `None` keeps the
    /// published kind for that position.
    fn default_stage(self, position: usize, kind: Option<StageKind>) -> StageSpec {
        use BlockKind::{Conv, Trans};
        let (native, unit, repeat) = match position {
            0 => (StageKind::Local, vec![Conv; 3], 1),
            1 => (StageKind::Mix, vec![Conv, Conv, Conv, Trans], 1),
            2 => (
                StageKind::Mix,
                vec![Conv, Conv, Conv, Trans, Trans],
                self.stage3_repeat(),
            ),
            _ => (StageKind::Global, vec![Trans; self.stage4_blocks()], 1),
        };
        let kind = kind.unwrap_or(native);
        let n = unit.len();
        let blocks = if kind == native {
            unit
        } else {
            match kind {
                StageKind::Local => vec![Conv; n],
                StageKind::Global => vec![Trans; n],
                StageKind::Mix => {
                    let mut b = vec![Conv; n - 1];
                    b.push(Trans);
                    b
                }
            }
        };
        StageSpec {
            kind,
            blocks,
            channels: self.channels()[position],
            repeat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("stack spec parse error at {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// Parses with the `B` defaults for bare letters.
pub fn parse_stack_spec(text: &str) -> Result<StackSpec, ParseError> {
    parse_stack_spec_for(text, Variant::B)
}

pub fn parse_stack_spec_for(text: &str, variant: Variant) -> Result<StackSpec, ParseError> {
    let mut p = Parser {
        chars: text.chars().collect(),
        pos: 0,
    };
    let mut stages = Vec::new();
    loop {
        p.skip_ws();
        let Some(c) = p.peek() else { break };
        let start = p.pos;
        let kind = match c.to_ascii_uppercase() {
            'L' => StageKind::Local,
            'M' => StageKind::Mix,
            'G' => StageKind::Global,
            other => return Err(p.err(format!("expected stage letter L, M or G, found '{other}'"))),
        };
        p.pos += 1;
        let position = stages.len();
        let stage = if p.peek() == Some('[') {
            p.pos += 1;
            let items = p.items(']')?;
            p.expect(']')?;
            let (blocks, repeat) = match items.as_slice() {
                [Item::Group(inner, n)] => (flatten(inner), *n),
                _ => (flatten(&items), 1),
            };
            let channels = variant.channels().get(position).copied().unwrap_or(0);
            StageSpec {
                kind,
                blocks,
                channels,
                repeat,
            }
        } else if position < 4 {
            variant.default_stage(position, Some(kind))
        } else {
            StageSpec {
                kind,
                blocks: Vec::new(),
                channels: 0,
                repeat: 1,
            }
        };
        if let Some(problem) = kind_problem(&stage) {
            return Err(ParseError {
                pos: start,
                msg: format!("stage {}: {problem}", position + 1),
            });
        }
        stages.push(stage);
    }
    if stages.len() != 4 {
        return Err(ParseError {
            pos: p.pos,
            msg: format!("expected 4 stages, got {}", stages.len()),
        });
    }
    Ok(StackSpec { stages })
}

fn kind_problem(s: &StageSpec) -> Option<&'static str> {
    let conv = s.blocks.contains(&BlockKind::Conv);
    let trans = s.blocks.contains(&BlockKind::Trans);
    match s.kind {
        StageKind::Local if trans => Some("Trans block in a Local stage"),
        StageKind::Global if conv => Some("Conv block in a Global stage"),
        StageKind::Mix if !(conv && trans) => Some("Mix stage needs both Conv and Trans blocks"),
        _ => None,
    }
}

#[derive(Debug)]
enum Item {
    Run(BlockKind, usize),
    Group(Vec<Item>, usize),
}

fn flatten(items: &[Item]) -> Vec<BlockKind> {
    let mut out = Vec::new();
    for item in items {
        match item {
            Item::Run(k, n) => out.extend(std::iter::repeat(*k).take(*n)),
            Item::Group(inner, n) => {
                let unit = flatten(inner);
                for _ in 0..*n {
                    out.extend_from_slice(&unit);
                }
            }
        }
    }
    out
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|c| c.is_whitespace() || c == ',') {
            self.pos += 1;
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn count(&mut self) -> Result<usize, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a block count"));
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        match digits.parse::<usize>() {
            Ok(0) | Err(_) => Err(ParseError {
                pos: start,
                msg: format!("invalid count '{digits}'"),
            }),
            Ok(n) => Ok(n),
        }
    }

    fn items(&mut self, close: char) -> Result<Vec<Item>, ParseError> {
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c == close => break,
                Some('c' | 'C') => {
                    self.pos += 1;
                    items.push(Item::Run(BlockKind::Conv, self.count()?));
                }
                Some('t' | 'T') => {
                    self.pos += 1;
                    items.push(Item::Run(BlockKind::Trans, self.count()?));
                }
                Some('(') => {
                    self.pos += 1;
                    let inner = self.items(')')?;
                    self.expect(')')?;
                    self.skip_ws();
                    if !matches!(self.peek(), Some('x' | 'X' | '*')) {
                        return Err(self.err("expected 'x' and a repeat count after group"));
                    }
                    self.pos += 1;
                    items.push(Item::Group(inner, self.count()?));
                }
                Some(other) => return Err(self.err(format!("unexpected '{other}' in block list"))),
                None => return Err(self.err(format!("unterminated block list, expected '{close}'"))),
            }
        }
        if items.is_empty() {
            return Err(self.err("empty block list"));
        }
        Ok(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BlockKind::{Conv, Trans};

    #[test]
    fn lmmg_defaults_match_base_layout() {
        let s = parse_stack_spec("LMMG").unwrap();
        assert_eq!(s, Variant::B.stack());
        assert_eq!(s.stages[0].expanded(), vec![Conv; 3]);
        assert_eq!(s.stages[1].expanded(), vec![Conv, Conv, Conv, Trans]);
        assert_eq!(s.stages[2].repeat, 3);
        assert_eq!(s.stages[2].blocks, vec![Conv, Conv, Conv, Trans, Trans]);
        assert_eq!(s.stages[3].expanded(), vec![Trans; 3]);
        assert_eq!(s.to_string(), "L[c3] M[c3 t1] M[(c3 t2)x3] G[t3]");
    }

    #[test]
    fn explicit_lists_roundtrip_through_display() {
        let text = "L[c3] M[c3 t1] M[(c3 t2)x3] G[t3]";
        let s = parse_stack_spec(text).unwrap();
        assert_eq!(s, parse_stack_spec("LMMG").unwrap());
        assert_eq!(parse_stack_spec(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn lmgg_makes_stage_three_trans_only() {
        let s = parse_stack_spec("LMGG").unwrap();
        assert_eq!(s.stages[2].kind, StageKind::Global);
        assert_eq!(s.stages[2].count(Conv), 0);
        assert_eq!(s.stages[2].count(Trans), 15);
    }

    #[test]
    fn lmmm_makes_stage_four_mixed() {
        let s = parse_stack_spec("LMMM").unwrap();
        assert_eq!(s.stages[3].blocks, vec![Conv, Conv, Trans]);
    }

    #[test]
    fn letter_order_is_not_enforced() {
        let s = parse_stack_spec("GL M M").unwrap();
        assert_eq!(s.letters(), "GLMM");
        assert_eq!(s.stages[0].blocks, vec![Trans; 3]);
    }

    #[test]
    fn arity_errors() {
        let e = parse_stack_spec("LM").unwrap_err();
        assert!(e.msg.contains("expected 4 stages"), "{e}");
        assert!(parse_stack_spec("LMMGG").is_err());
        assert!(parse_stack_spec("").is_err());
    }

    #[test]
    fn kind_errors_carry_position() {
        let e = parse_stack_spec("L[c3] M G[c1] G").unwrap_err();
        assert_eq!(e.pos, 8);
        assert!(e.msg.contains("Conv block in a Global stage"));
        let e = parse_stack_spec("L[t1] M M G").unwrap_err();
        assert!(e.msg.contains("Trans block in a Local stage"));
        assert!(parse_stack_spec("L M[c2] M G").is_err());
    }

    #[test]
    fn malformed_counts() {
        for bad in ["L[c0] M M G", "L[c] M M G", "L[c3 M M G", "L[(c3)] M M G", "L[q2] M M G", "X M M G"] {
            assert!(parse_stack_spec(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn tiny_variant_defaults() {
        let s = parse_stack_spec_for("LMMG", Variant::T).unwrap();
        assert_eq!(s.stages[2].repeat, 1);
        assert_eq!(s.stages[3].blocks.len(), 2);
        assert_eq!(s.stages.iter().map(|s| s.channels).collect::<Vec<_>>(), vec![96, 192, 384, 768]);
    }

    #[test]
    fn violations_catch_bad_channels() {
        let s = Variant::T.stack().with_channels([64, 32, 64, 128]);
        assert_eq!(s.violations().len(), 1);
        assert!(Variant::T.stack().violations().is_empty());
    }
}
