//! Query-chunked attention engines with custom backward passes.

mod auto;
pub mod gradcheck;
mod plan;
mod recompute;
mod topk;

pub use auto::{attention_auto, AttentionMode, AttentionNode};
pub use plan::ChunkPlan;
pub use recompute::{chunked_recompute_backward, chunked_recompute_forward, RecomputeCache};
pub use topk::{topk_backward, topk_forward, ChunkTopK, TopKCache};

use crate::tensor::{Matrix, Scalar};

/// Gradients with respect to the (unscaled) queries, keys and values.
#[derive(Debug, Clone)]
pub struct GradTriple<T: Scalar> {
    pub d_q: Matrix<T>,
    pub d_k: Matrix<T>,
    pub d_v: Matrix<T>,
}

impl<T: Scalar> GradTriple<T> {
    /// Largest elementwise difference across the three gradients.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.d_q
            .max_abs_diff(&other.d_q)
            .max(self.d_k.max_abs_diff(&other.d_k))
            .max(self.d_v.max_abs_diff(&other.d_v))
    }

    pub fn max_abs(&self) -> f64 {
        self.d_q.max_abs().max(self.d_k.max_abs()).max(self.d_v.max_abs())
    }
}
