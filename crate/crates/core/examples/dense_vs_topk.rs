//! Chunked top-k attention against the dense formulation on random inputs.
//!
//! With every key kept the two agree to rounding; with fewer keys each query
//! row attends to at most `k` positions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topk_attention::reference::{attention_dense, topk_attention_dense};
use topk_attention::{topk_forward, AttentionConfig, Matrix, MemoryScope};

fn main() -> topk_attention::Result<()> {
    let (l, d) = (512, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = Matrix::<f64>::random_normal(l, d, 1.0, &mut rng);
    let k = Matrix::<f64>::random_normal(l, d, 1.0, &mut rng);
    let v = Matrix::<f64>::random_normal(l, d, 1.0, &mut rng);

    let plain = AttentionConfig::softmax().causal();
    let dense = attention_dense(&q, &k, &v, &plain)?;
    let (all, _) = topk_forward(&q, &k, &v, &plain.clone().with_top(l).with_chunk(64))?;
    println!("k = L_K:  max |chunked - dense| = {:.2e}", all.max_abs_diff(&dense));

    for keep in [1, 8, 32, 128] {
        let cfg = plain.clone().with_top(keep).with_chunk(64);
        let scope = MemoryScope::open("topk forward");
        let (out, cache) = topk_forward(&q, &k, &v, &cfg)?;
        let peak = scope.peak_bytes();
        let oracle = topk_attention_dense(&q, &k, &v, &cfg)?;
        println!(
            "k = {keep:>3}: max |diff| vs dense top-k {:.2e}, distance from full attention {:.3}, \
             forward peak {} KiB, cached top-k state {} KiB",
            out.max_abs_diff(&oracle),
            out.max_abs_diff(&dense),
            peak / 1024,
            cache.state_bytes() / 1024,
        );
    }
    Ok(())
}
