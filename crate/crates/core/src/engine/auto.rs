use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::recompute::{chunked_recompute_backward, chunked_recompute_forward};
use super::topk::{topk_backward, topk_forward};
use super::GradTriple;
use crate::error::{Error, Result};
use crate::reference::{dense_backward, dense_forward, AttentionConfig};
use crate::tensor::{Matrix, Scalar};

/// Which implementation evaluates an attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Full score matrix, kept for the backward pass.
    Dense,
    /// Query chunks over all keys; backward recomputes each chunk.
    ChunkedRecompute,
    /// Query chunks with row-wise top-k and the custom backward.
    ChunkedTopk,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [
        AttentionMode::Dense,
        AttentionMode::ChunkedRecompute,
        AttentionMode::ChunkedTopk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Dense => "dense",
            AttentionMode::ChunkedRecompute => "chunked_recompute",
            AttentionMode::ChunkedTopk => "chunked_topk",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(AttentionMode::Dense),
            "chunked_recompute" | "recompute" => Ok(AttentionMode::ChunkedRecompute),
            "chunked_topk" | "topk" => Ok(AttentionMode::ChunkedTopk),
            other => Err(format!(
                "unknown mode `{other}` (expected dense, chunked_recompute or chunked_topk)"
            )),
        }
    }
}

type BackwardFn<T> = Box<dyn FnOnce(&Matrix<T>) -> Result<GradTriple<T>> + Send>;

/// Output of one attention call together with its backward closure.
pub struct AttentionNode<T: Scalar> {
    pub out: Matrix<T>,
    backward: BackwardFn<T>,
}

impl<T: Scalar> fmt::Debug for AttentionNode<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttentionNode").field("out", &self.out.shape()).finish()
    }
}

impl<T: Scalar> AttentionNode<T> {
    pub fn backward(self, d_out: &Matrix<T>) -> Result<GradTriple<T>> {
        (self.backward)(d_out)
    }

    pub fn into_parts(self) -> (Matrix<T>, BackwardFn<T>) {
        (self.out, self.backward)
    }
}

/// Uniform entry point: runs the forward in the requested mode and returns
/// the output with a closure computing the gradients.
pub fn attention_auto<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
    mode: AttentionMode,
) -> Result<AttentionNode<T>> {
    match mode {
        AttentionMode::Dense => {
            let (out, cache) = dense_forward(q, k, v, cfg)?;
            Ok(AttentionNode {
                out,
                backward: Box::new(move |d| dense_backward(&cache, d)),
            })
        }
        AttentionMode::ChunkedRecompute => {
            if !cfg.k.keeps_all(k.rows()) {
                return Err(Error::Unsupported(format!(
                    "mode {mode} with k = {} (< {} keys)",
                    cfg.k,
                    k.rows()
                )));
            }
            let (out, cache) = chunked_recompute_forward(q, k, v, cfg)?;
            Ok(AttentionNode {
                out,
                backward: Box::new(move |d| chunked_recompute_backward(&cache, d)),
            })
        }
        AttentionMode::ChunkedTopk => {
            let (out, cache) = topk_forward(q, k, v, cfg)?;
            Ok(AttentionNode {
                out,
                backward: Box::new(move |d| topk_backward(&cache, d)),
            })
        }
    }
}
