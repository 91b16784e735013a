//! Peak tracked memory of one attention layer (forward + backward) as the
//! sequence grows, with linear fits and a budget extrapolation.
//!
//! `cargo run --release --example memory_scaling`

use topk_attention::bench::{fit_scaling, run_case, BenchCase, BenchRecord, Predictor, DEFAULT_BUDGET};
use topk_attention::{AttentionMode, TopK};

fn main() -> topk_attention::Result<()> {
    let lengths = [1024, 2048, 4096, 8192];
    let budget = 1u64 << 30;
    for mode in [AttentionMode::ChunkedTopk, AttentionMode::ChunkedRecompute, AttentionMode::Dense] {
        let k = if mode == AttentionMode::ChunkedTopk { TopK::Keep(64) } else { TopK::All };
        let records: Vec<BenchRecord> = lengths
            .iter()
            .map(|&l| {
                let case = BenchCase { k, chunk: 256, repeats: 1, ..BenchCase::mha(mode, l) };
                run_case(&case, DEFAULT_BUDGET)
            })
            .collect::<Result<_, _>>()?;
        println!("{mode}");
        for r in &records {
            println!("  L = {:>5}: peak {:>8.1} MiB, fwd {:.3} s, bwd {:.3} s", r.case.l_q, mib(r.peak_bytes), r.fwd_s, r.bwd_s);
        }
        for predictor in [Predictor::L, Predictor::L2] {
            let fit = fit_scaling(&records, predictor)?;
            let reach = fit
                .max_length_within(budget as f64)
                .map_or("-".to_string(), |l| format!("{l:.0}"));
            println!("  fit on {predictor:<2}: R2 = {:.5}, longest sequence within 1 GiB ~ {reach}", fit.fit.r2);
        }
    }
    Ok(())
}

fn mib(bytes: usize) -> f64 {
    bytes as f64 / (1 << 20) as f64
}
