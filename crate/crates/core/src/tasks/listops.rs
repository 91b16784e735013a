use std::fmt;

use rand::Rng;

use super::{sample_rng, Target, Task, TaskSample};
use crate::error::{Error, Result};

/// Token ids: digits are `0..=9`, then the four operators, the closing
/// bracket and the classification token.
pub const LISTOPS_VOCAB: usize = 16;
const CLOSE: usize = 14;
const CLS: usize = 15;
const MAX_ARGS: usize = 4;
const BRANCH_PROB: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListOp {
    Max,
    Min,
    /// Median, rounded down for an even number of operands.
    Med,
    /// Sum modulo 10.
    Sm,
}

impl ListOp {
    const ALL: [ListOp; 4] = [ListOp::Max, ListOp::Min, ListOp::Med, ListOp::Sm];

    pub fn token(self) -> usize {
        10 + self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ListOp::Max => "MAX",
            ListOp::Min => "MIN",
            ListOp::Med => "MED",
            ListOp::Sm => "SM",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        ListOp::ALL.into_iter().find(|op| op.name() == s)
    }

    fn from_token(t: usize) -> Option<Self> {
        ListOp::ALL.into_iter().find(|op| op.token() == t)
    }

    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            ListOp::Max => *args.iter().max().unwrap(),
            ListOp::Min => *args.iter().min().unwrap(),
            ListOp::Med => {
                let mut s = args.to_vec();
                s.sort_unstable();
                let n = s.len();
                if n % 2 == 1 {
                    s[n / 2]
                } else {
                    (s[n / 2 - 1] + s[n / 2]) / 2
                }
            }
            ListOp::Sm => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Digit(u8),
    Op(ListOp, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self) -> u8 {
        match self {
            Expr::Digit(d) => *d,
            Expr::Op(op, args) => {
                let vals: Vec<u8> = args.iter().map(Expr::eval).collect();
                op.apply(&vals)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Digit(_) => 0,
            Expr::Op(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// Token sequence without the trailing classification token.
    pub fn tokens(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Digit(d) => out.push(*d as usize),
            Expr::Op(op, args) => {
                out.push(op.token());
                for a in args {
                    a.push_tokens(out);
                }
                out.push(CLOSE);
            }
        }
    }

    /// Parses the bracketed text form, e.g. `[MAX 2 [SM 5 6] 1]`.
    pub fn parse(text: &str) -> Result<Expr> {
        let spaced = text.replace('[', " [").replace(']', " ] ");
        let words: Vec<&str> = spaced.split_whitespace().collect();
        let mut pos = 0;
        let e = parse_words(&words, &mut pos)?;
        if pos != words.len() {
            return Err(Error::InvalidConfig(format!("trailing input in `{text}`")));
        }
        Ok(e)
    }

    /// Rebuilds an expression from its tokens; a trailing classification
    /// token is ignored.
    pub fn from_tokens(tokens: &[usize]) -> Result<Expr> {
        let body = match tokens.last() {
            Some(&CLS) => &tokens[..tokens.len() - 1],
            _ => tokens,
        };
        let mut pos = 0;
        let e = parse_tokens(body, &mut pos)?;
        if pos != body.len() {
            return Err(Error::InvalidConfig("trailing tokens".into()));
        }
        Ok(e)
    }
}

fn parse_words(words: &[&str], pos: &mut usize) -> Result<Expr> {
    let bad = |w: &str| Error::InvalidConfig(format!("unexpected `{w}` in expression"));
    let w = *words.get(*pos).ok_or_else(|| bad("end of input"))?;
    *pos += 1;
    if let Some(name) = w.strip_prefix('[') {
        let name = if name.is_empty() {
            *pos += 1;
            *words.get(*pos - 1).ok_or_else(|| bad("end of input"))?
        } else {
            name
        };
        let op = ListOp::from_name(name).ok_or_else(|| bad(name))?;
        let mut args = Vec::new();
        while words.get(*pos).is_some_and(|w| *w != "]") {
            args.push(parse_words(words, pos)?);
        }
        if words.get(*pos).is_none() || args.is_empty() {
            return Err(bad("unbalanced bracket"));
        }
        *pos += 1;
        Ok(Expr::Op(op, args))
    } else {
        match w.parse::<u8>() {
            Ok(d) if d <= 9 => Ok(Expr::Digit(d)),
            _ => Err(bad(w)),
        }
    }
}

fn parse_tokens(tokens: &[usize], pos: &mut usize) -> Result<Expr> {
    let bad = || Error::InvalidConfig("malformed token sequence".into());
    let &t = tokens.get(*pos).ok_or_else(bad)?;
    *pos += 1;
    if t <= 9 {
        return Ok(Expr::Digit(t as u8));
    }
    let op = ListOp::from_token(t).ok_or_else(bad)?;
    let mut args = Vec::new();
    while tokens.get(*pos).is_some_and(|&t| t != CLOSE) {
        args.push(parse_tokens(tokens, pos)?);
    }
    if tokens.get(*pos).is_none() || args.is_empty() {
        return Err(bad());
    }
    *pos += 1;
    Ok(Expr::Op(op, args))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Digit(d) => write!(f, "{d}"),
            Expr::Op(op, args) => {
                write!(f, "[{}", op.name())?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// Evaluates the bracketed text form.
pub fn evaluate_text(text: &str) -> Result<u8> {
    Ok(Expr::parse(text)?.eval())
}

/// Small ListOps: nested MAX/MIN/MED/SM over digits, classified from a
/// trailing CLS token by a bidirectional encoder.
#[derive(Debug, Clone)]
pub struct ListOpsTask {
    seed: u64,
    max_depth: usize,
    max_length: usize,
}

impl ListOpsTask {
    /// `max_length` counts every token including CLS; it must be at least 5
    /// (the shortest expression `[OP a b]` plus CLS).
    pub fn new(seed: u64, max_depth: usize, max_length: usize) -> Self {
        assert!(max_depth >= 1, "max_depth must be >= 1");
        assert!(max_length >= 5, "max_length must be >= 5");
        ListOpsTask {
            seed,
            max_depth,
            max_length,
        }
    }

    pub fn expression(&self, index: u64) -> Expr {
        let mut rng = sample_rng(self.seed, index);
        for _ in 0..64 {
            let e = self.gen(&mut rng, 1);
            if e.tokens().len() < self.max_length {
                return e;
            }
        }
        let op = ListOp::ALL[rng.random_range(0..4)];
        Expr::Op(
            op,
            vec![Expr::Digit(rng.random_range(0..10)), Expr::Digit(rng.random_range(0..10))],
        )
    }

    fn gen<R: Rng>(&self, rng: &mut R, depth: usize) -> Expr {
        let op = ListOp::ALL[rng.random_range(0..4)];
        let n = rng.random_range(2..=MAX_ARGS);
        let args = (0..n)
            .map(|_| {
                if depth < self.max_depth && rng.random_bool(BRANCH_PROB) {
                    self.gen(rng, depth + 1)
                } else {
                    Expr::Digit(rng.random_range(0..10))
                }
            })
            .collect();
        Expr::Op(op, args)
    }
}

impl Task for ListOpsTask {
    fn vocab_size(&self) -> usize {
        LISTOPS_VOCAB
    }

    fn max_len(&self) -> usize {
        self.max_length
    }

    fn causal(&self) -> bool {
        false
    }

    fn sample(&self, index: u64) -> TaskSample {
        let e = self.expression(index);
        let mut input = e.tokens();
        input.push(CLS);
        let len = input.len();
        TaskSample {
            input,
            target: Target::Label(e.eval() as usize),
            target_start: len - 1,
        }
    }
}
