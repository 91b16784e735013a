//! A bias-free ReLU feed-forward layer is attention with the weight matrices
//! as keys and values: `relu(x W_Kᵀ) W_V`. Keeping only the top-k hidden
//! units per token approximates the layer; keeping all `d_ff` reproduces it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topk_attention::tensor::{matmul, relu};
use topk_attention::{topk_forward, AttentionConfig, Matrix, MemoryScope};

fn main() -> topk_attention::Result<()> {
    let (tokens, d_model, d_ff) = (256, 64, 4096);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Matrix::<f64>::random_normal(tokens, d_model, 1.0, &mut rng);
    let w_k = Matrix::<f64>::random_normal(d_ff, d_model, (d_model as f64).powf(-0.5), &mut rng);
    let w_v = Matrix::<f64>::random_normal(d_ff, d_model, (d_ff as f64).powf(-0.5), &mut rng);

    let mlp = matmul(&relu(&matmul(&x, &w_k, true)?), &w_v, false)?;
    let scale = mlp.max_abs();

    println!("{:>6} {:>12} {:>16}", "k", "rel. error", "peak (KiB)");
    for keep in [32, 128, 512, 1024, d_ff] {
        let cfg = AttentionConfig::feed_forward().with_top(keep).with_chunk(64);
        let scope = MemoryScope::open("ff");
        let (out, _) = topk_forward(&x, &w_k, &w_v, &cfg)?;
        println!(
            "{keep:>6} {:>12.2e} {:>16}",
            out.max_abs_diff(&mlp) / scale,
            scope.peak_bytes() / 1024
        );
    }
    Ok(())
}
