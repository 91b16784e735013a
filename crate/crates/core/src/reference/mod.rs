//! Dense, memory-naive ground truth for every attention variant, plus a
//! central-difference gradient checker.

mod config;
mod dense;
mod gradient;

pub use config::{
    Activation, AttentionConfig, ExplicitMask, MaskSpec, TopK, DEFAULT_ATTENTION_CHUNK, DEFAULT_FF_CHUNK,
};
pub use dense::{
    attention_dense, attention_dense_backward, dense_backward, dense_forward, ff_as_attention,
    sparse_attention_dense, topk_attention_dense, DenseCache,
};
pub(crate) use dense::{check_qkv, scaled_queries};
pub use gradient::{numeric_gradient, relative_error};
