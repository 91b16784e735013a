//! Query chunk size against memory and time at a fixed length, written as
//! CSV to stdout.
//!
//! `cargo run --release --example chunk_tradeoff > chunks.csv`

use topk_attention::bench::{sweep, BenchCase, CsvSink, Grid, DEFAULT_BUDGET};
use topk_attention::AttentionMode;

fn main() -> topk_attention::Result<()> {
    let grid = Grid {
        base: BenchCase { repeats: 3, ..BenchCase::mha(AttentionMode::ChunkedTopk, 8192) },
        chunks: (6..=12).map(|p| 1 << p).collect(),
        ..Grid::default()
    };
    let stdout = std::io::stdout();
    let mut sink = CsvSink::new(stdout.lock());
    let records = sweep(&grid.cases(), DEFAULT_BUDGET, &mut sink)?;
    for r in &records {
        eprintln!(
            "C = {:>4}: peak {:>6.1} MiB, forward {:.3} s",
            r.case.chunk,
            r.peak_bytes as f64 / (1 << 20) as f64,
            r.fwd_s
        );
    }
    Ok(())
}
