//! Finite-difference check of the top-k backward pass over every
//! activation, mask, k and chunk combination of the built-in suite.

use topk_attention::engine::gradcheck::{run_gradcheck, GradcheckConfig};

fn main() -> topk_attention::Result<()> {
    let cfg = GradcheckConfig::default();
    let reports = run_gradcheck(&cfg)?;
    for r in reports.iter().step_by(7) {
        println!(
            "#{:<2} {:<7} {:<8} k={:<2} C={:<2} rel {:.1e}  |dense diff| {:.1e}  live score blocks {}",
            r.index,
            r.activation.to_string(),
            r.mask,
            r.k.to_string(),
            r.chunk,
            r.numeric_rel,
            r.analytic_abs,
            r.max_score_buffers
        );
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    println!("{passed}/{} instances passed", reports.len());
    Ok(())
}
