use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabMode {
    /// One token per byte, vocabulary of 256.
    Byte,
    /// One token per Unicode scalar seen in the file.
    Char,
}

impl FromStr for VocabMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "byte" => Ok(VocabMode::Byte),
            "char" => Ok(VocabMode::Char),
            other => Err(format!("unknown vocab mode `{other}` (expected byte or char)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Fractions of the stream given to train and validation; test gets the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.9, valid: 0.05 }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    mode: VocabMode,
    chars: Vec<char>,
    tokens: Vec<usize>,
    bounds: [usize; 2],
}

/// Reads a text file into a token stream and contiguous train/valid/test
/// splits.
pub fn load_text_corpus(path: &Path, mode: VocabMode, ratios: SplitRatios) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&ratios.train)
        || !(0.0..=1.0).contains(&ratios.valid)
        || ratios.train + ratios.valid > 1.0
    {
        return Err(Error::InvalidConfig(format!("bad split ratios {ratios:?}")));
    }
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    let (chars, tokens) = match mode {
        VocabMode::Byte => (Vec::new(), bytes.iter().map(|&b| b as usize).collect()),
        VocabMode::Char => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::InvalidConfig(format!("{}: not UTF-8 ({e})", path.display())))?;
            let chars: Vec<char> = text.chars().collect::<BTreeSet<_>>().into_iter().collect();
            let tokens: Vec<usize> = text
                .chars()
                .map(|c| chars.binary_search(&c).unwrap())
                .collect();
            (chars, tokens)
        }
    };
    let n = tokens.len();
    let train = (n as f64 * ratios.train).round() as usize;
    let valid = ((n as f64 * ratios.valid).round() as usize).min(n - train);
    Ok(Corpus {
        mode,
        chars,
        tokens,
        bounds: [train, train + valid],
    })
}


impl Corpus {
    pub fn mode(&self) -> VocabMode {
        self.mode
    }

    pub fn vocab_size(&self) -> usize {
        match self.mode {
            VocabMode::Byte => 256,
            VocabMode::Char => self.chars.len(),
        }
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn split(&self, split: Split) -> &[usize] {
        let [a, b] = self.bounds;
        match split {
            Split::Train => &self.tokens[..a],
            Split::Valid => &self.tokens[a..b],
            Split::Test => &self.tokens[b..],
        }
    }

    /// Maps tokens back to the original bytes.
    pub fn detokenize(&self, tokens: &[usize]) -> Result<Vec<u8>> {
        let bad = |t| Error::InvalidIndex {
            index: t,
            width: self.vocab_size(),
        };
        match self.mode {
            VocabMode::Byte => tokens
                .iter()
                .map(|&t| u8::try_from(t).map_err(|_| bad(t)))
                .collect(),
            VocabMode::Char => {
                let mut s = String::new();
                for &t in tokens {
                    s.push(*self.chars.get(t).ok_or_else(|| bad(t))?);
                }
                Ok(s.into_bytes())
            }
        }
    }
}
