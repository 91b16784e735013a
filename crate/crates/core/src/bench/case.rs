use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::AttentionMode;
use crate::error::{Error, Result};
use crate::reference::TopK;
use crate::tensor::DType;

/// Vocabulary of the random token stream fed to `stack` cases.
pub const STACK_VOCAB: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchTarget {
    /// One causal multi-head self-attention layer.
    Mha,
    /// One feed-forward layer evaluated as attention over `d_ff` keys.
    Ff,
    /// A decoder stack of `layers` blocks.
    Stack,
}

impl BenchTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchTarget::Mha => "mha",
            BenchTarget::Ff => "ff",
            BenchTarget::Stack => "stack",
        }
    }
}

impl fmt::Display for BenchTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mha" => Ok(BenchTarget::Mha),
            "ff" => Ok(BenchTarget::Ff),
            "stack" => Ok(BenchTarget::Stack),
            other => Err(format!("unknown bench target `{other}` (expected mha, ff or stack)")),
        }
    }
}

/// One benchmark configuration.
///
/// For `mha` and `stack`, `L_Q == L_K` is the sequence length. For `ff`,
/// `L_Q` is the number of tokens and `L_K == d_ff` the number of keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCase {
    pub target: BenchTarget,
    pub mode: AttentionMode,
    #[serde(rename = "L_Q")]
    pub l_q: usize,
    #[serde(rename = "L_K")]
    pub l_k: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub k: TopK,
    pub chunk: usize,
    pub layers: usize,
    pub dtype: DType,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for BenchCase {
    fn default() -> Self {
        BenchCase {
            target: BenchTarget::Mha,
            mode: AttentionMode::ChunkedTopk,
            l_q: 1024,
            l_k: 1024,
            d_model: 64,
            heads: 1,
            d_ff: 256,
            k: TopK::Keep(64),
            chunk: 256,
            layers: 1,
            dtype: DType::F32,
            seed: 0,
            repeats: 3,
        }
    }
}

impl BenchCase {
    /// Self-attention case of length `l`.
    pub fn mha(mode: AttentionMode, l: usize) -> Self {
        BenchCase {
            mode,
            l_q: l,
            l_k: l,
            ..BenchCase::default()
        }
    }

    /// Sets the sequence length (or `d_ff` for feed-forward cases).
    pub fn with_length(mut self, l: usize) -> Self {
        match self.target {
            BenchTarget::Ff => {
                self.d_ff = l;
                self.l_k = l;
            }
            _ => {
                self.l_q = l;
                self.l_k = l;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("bench case: {m}")));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.l_q == 0 || self.l_k == 0 || self.d_model == 0 || self.chunk == 0 {
            return bad("lengths, d_model and chunk must be positive".into());
        }
        if self.k == TopK::Keep(0) {
            return bad("k must be >= 1".into());
        }
        if self.mode == AttentionMode::ChunkedRecompute && !self.k.keeps_all(self.l_k) {
            return bad(format!("mode {} needs k = all", self.mode));
        }
        match self.target {
            BenchTarget::Mha | BenchTarget::Stack => {
                if self.l_q != self.l_k {
                    return bad(format!("{} needs L_Q == L_K", self.target));
                }
                if self.heads == 0 || self.d_model % self.heads != 0 {
                    return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
                }
                if self.target == BenchTarget::Stack && (self.layers == 0 || self.d_ff == 0) {
                    return bad("stack needs layers >= 1 and d_ff >= 1".into());
                }
            }
            BenchTarget::Ff => {
                if self.l_k != self.d_ff {
                    return bad(format!("ff needs L_K == d_ff, got {} vs {}", self.l_k, self.d_ff));
                }
            }
        }
        Ok(())
    }
}
