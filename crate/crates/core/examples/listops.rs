//! Mini-ListOps: a few generated expressions, then a short training run of
//! a small encoder with top-k self-attention.
//!
//! `cargo run --release --example listops`

use topk_attention::nn::{train_toy, ModelConfig, SublayerSpec, Sublayers, TrainConfig};
use topk_attention::tasks::{evaluate_text, ListOpsTask, Target, Task};

fn main() -> topk_attention::Result<()> {
    assert_eq!(evaluate_text("[SM 5 6]")?, 1);
    let task = ListOpsTask::new(1, 2, 64);
    for i in 0..5 {
        let expr = task.expression(i);
        let Target::Label(label) = task.sample(i).target else { unreachable!() };
        println!("{expr}  =>  {label}  ({} tokens, depth {})", expr.tokens().len(), expr.depth());
    }

    let model = ModelConfig {
        vocab: task.vocab_size(),
        max_len: task.max_len(),
        d_model: 64,
        heads: 4,
        d_ff: 256,
        layers: 2,
        causal: false,
        tied_output: false,
    };
    let train = TrainConfig { steps: 2000, eval_every: 500, eval_samples: 1000, seed: 1, ..TrainConfig::default() };
    let sub = Sublayers { attn: SublayerSpec::topk(8, 64), ..Sublayers::default() };
    let report = train_toy::<f32>(&task, &model, &sub, &train)?;
    for m in &report.history {
        println!("step {:>4}: accuracy {:.4} (chance 0.1)", m.step, m.accuracy);
    }
    Ok(())
}
