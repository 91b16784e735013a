//! Memory-efficient top-k attention.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense matrices, kernels and the allocation tracker.
//! * [`reference`]: memory-naive dense attention used as ground truth.
//! * [`engine`]: query-chunked, input-checkpointed attention with custom
//!   backward passes (top-k and the plain recompute baseline).
//! * [`nn`]: a small reverse-mode tape, transformer layers, Adam and a
//!   toy-task training loop.
//! * [`tasks`]: deterministic synthetic datasets and a text corpus loader.
//! * [`bench`]: timing and peak-memory measurement, sweeps and curve fits.
//! * [`cli`]: the `topk-attn` command-line front end.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod nn;
pub mod reference;
pub mod tasks;
pub mod tensor;

pub use engine::{attention_auto, topk_backward, topk_forward, AttentionMode, GradTriple};
pub use error::{Error, Result};
pub use reference::{Activation, AttentionConfig, MaskSpec, TopK};
pub use tensor::{DType, IndexMatrix, Matrix, MemoryScope, Scalar};
