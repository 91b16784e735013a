//! Gradients of chunked top-k attention: the custom backward pass against
//! the dense backward, and the memory each engine needs for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topk_attention::engine::{attention_auto, AttentionMode};
use topk_attention::reference::attention_dense_backward;
use topk_attention::{AttentionConfig, Matrix, MemoryScope, TopK};

fn main() -> topk_attention::Result<()> {
    let (l, d) = (2048, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Matrix::<f32>::random_normal(l, d, 1.0, &mut rng);
    let k = Matrix::<f32>::random_normal(l, d, 1.0, &mut rng);
    let v = Matrix::<f32>::random_normal(l, d, 1.0, &mut rng);
    let d_out = Matrix::<f32>::random_normal(l, d, 1.0, &mut rng);

    println!("{:<18} {:>5} {:>14}", "mode", "k", "peak (MiB)");
    for (mode, keep) in [
        (AttentionMode::Dense, TopK::All),
        (AttentionMode::ChunkedRecompute, TopK::All),
        (AttentionMode::ChunkedTopk, TopK::Keep(64)),
    ] {
        let cfg = AttentionConfig::softmax().causal().with_k(keep).with_chunk(256);
        let scope = MemoryScope::open(mode.to_string());
        let node = attention_auto(&q, &k, &v, &cfg, mode)?;
        let grads = node.backward(&d_out)?;
        let peak = scope.peak_bytes() as f64 / (1 << 20) as f64;
        println!("{:<18} {:>5} {:>14.1}", mode.to_string(), keep.to_string(), peak);
        drop(grads);
    }

    // small 64-bit instance: custom backward vs the dense analytic one
    let (q, k, v) = (q.slice_rows(0..96).cast::<f64>(), k.slice_rows(0..96).cast(), v.slice_rows(0..96).cast());
    let d_out = d_out.slice_rows(0..96).cast::<f64>();
    let cfg = AttentionConfig::softmax().causal().with_top(8).with_chunk(16);
    let grads = attention_auto(&q, &k, &v, &cfg, AttentionMode::ChunkedTopk)?.backward(&d_out)?;
    let dense = attention_dense_backward(&q, &k, &v, &cfg, &d_out)?;
    println!("top-8 backward vs dense backward: max |diff| = {:.2e}", grads.max_abs_diff(&dense));
    Ok(())
}
