//! Trains with ordinary (dense) feed-forward layers, then evaluates the same
//! weights with top-k feed-forward layers, without any further training.
//!
//! `cargo run --release --example zero_shot_swap`

use topk_attention::nn::{evaluate, train_toy, ModelConfig, SublayerSpec, Sublayers, TrainConfig, EVAL_OFFSET};
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
    let train = TrainConfig { steps: 1000, eval_every: 1000, seed: 1, ..TrainConfig::default() };
    let report = train_toy::<f32>(&task, &model, &Sublayers::default(), &train)?;

    let base = evaluate(&report.params, &Sublayers::default(), &task, EVAL_OFFSET, 500)?;
    println!("dense feed-forward: accuracy {:.4}, loss {:.5}", base.accuracy, base.loss);
    for k in [8, 16, 32, 64, 128, 256] {
        let sub = Sublayers { ff: SublayerSpec::topk(k, 32), ..Sublayers::default() };
        let m = evaluate(&report.params, &sub, &task, EVAL_OFFSET, 500)?;
        println!("top-{k:<3} feed-forward: accuracy {:.4}, loss {:.5}", m.accuracy, m.loss);
    }
    Ok(())
}
