//! A small transformer trained with a hand-written reverse-mode tape.
//!
//! Self-attention and feed-forward sublayers both go through
//! [`attention_auto`](crate::engine::attention_auto), so each can run dense,
//! chunked with recomputation, or chunked top-k, independently.

mod adam;
mod checkpoint;
mod model;
mod tape;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_info, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointMeta};
pub use model::{
    ff, ff_forward, mha, mha_forward, transformer_forward, transformer_tape, Dropout, FfParams, LayerIds, Layout,
    MhaParams, MhaVars, ModelConfig, ModelParams, SublayerSpec, Sublayers,
};
pub use tape::{GradBuf, ParamGrads, Tape, Var};
pub use train::{
    audit_gradients, batch_gradients, evaluate, train_from, train_toy, EvalMetrics, TrainConfig, TrainReport,
    EVAL_OFFSET,
};
