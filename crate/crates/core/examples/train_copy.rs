//! Trains a two-layer decoder on the copy task with dense and with top-k
//! self-attention (k = 4 of 32 positions) and compares the results.
//!
//! `cargo run --release --example train_copy`

use topk_attention::nn::{train_toy, ModelConfig, SublayerSpec, Sublayers, TrainConfig};
use topk_attention::tasks::{CopyTask, Task};

fn main() -> topk_attention::Result<()> {
    let task = CopyTask::new(1, 16, 16);
    let model = ModelConfig {
        vocab: task.vocab_size(),
        max_len: task.max_len(),
        d_model: 64,
        heads: 4,
        d_ff: 256,
        layers: 2,
        causal: true,
        tied_output: true,
    };
    let train = TrainConfig { steps: 1000, eval_every: 250, eval_samples: 500, seed: 1, ..TrainConfig::default() };
    let topk = Sublayers { attn: SublayerSpec::topk(4, 8), ..Sublayers::default() };
    for (name, sub) in [("dense", Sublayers::default()), ("top-4", topk)] {
        let report = train_toy::<f32>(&task, &model, &sub, &train)?;
        for m in &report.history {
            println!("{name:<6} step {:>4}: loss {:.4}, accuracy {:.4}", m.step, m.loss, m.accuracy);
        }
    }
    Ok(())
}
