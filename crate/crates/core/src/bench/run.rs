use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::sync::Once;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::case::{BenchCase, BenchTarget, STACK_VOCAB};
use crate::error::Result;
use crate::nn::{ff, mha, transformer_tape, MhaVars, ModelConfig, ModelParams, SublayerSpec, Sublayers, Tape, Var};
use crate::reference::AttentionConfig;
use crate::tensor::{BudgetExceeded, DType, Matrix, MemoryScope, Scalar};

/// Default byte budget for one case.
pub const DEFAULT_BUDGET: usize = 8 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "oom-budget-exceeded")]
    OomBudgetExceeded,
}

impl BenchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchStatus::Ok => "ok",
            BenchStatus::OomBudgetExceeded => "oom-budget-exceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub case: BenchCase,
    /// Mean forward seconds over the measured repeats.
    pub fwd_s: f64,
    pub bwd_s: f64,
    /// Peak tracked bytes of one forward+backward, inputs included.
    pub peak_bytes: usize,
    pub status: BenchStatus,
}

/// Keeps freed heap memory in the process instead of unmapping it, so a
/// large buffer freed at the end of one chunk is reused by the next one
/// without fresh page faults (the behaviour of GPU caching allocators).
/// Tracked bytes are unaffected.
fn retain_freed_memory() {
    static INIT: Once = Once::new();
    INIT.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        unsafe {
            libc::mallopt(libc::M_MMAP_MAX, 0);
            libc::mallopt(libc::M_TRIM_THRESHOLD, libc::c_int::MAX);
        }
    });
}

fn quiet_budget_panics() {
    static HOOK: Once = Once::new();
    HOOK.call_once(|| {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(move |info| {
            if !info.payload().is::<BudgetExceeded>() {
                prev(info);
            }
        }));
    });
}

struct Sample {
    fwd_s: f64,
    bwd_s: f64,
    peak: usize,
}

fn weight<T: Scalar>(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    Matrix::random_normal(rows, cols, 1.0 / (fan_in as f64).sqrt(), rng)
}

fn run_once<T: Scalar>(case: &BenchCase, budget: usize) -> Result<Sample> {
    let scope = MemoryScope::with_budget(format!("{} {}", case.target, case.mode), budget);
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let mut tape = Tape::<T>::new();
    let (fwd_s, out) = match case.target {
        BenchTarget::Mha => {
            let (d, dh) = (case.d_model, case.d_model / case.heads);
            let x = tape.param(0, &Matrix::random_normal(case.l_q, d, 1.0, &mut rng))?;
            let mut id = 1;
            let mut p = |tape: &mut Tape<T>, r, c| -> Result<Var> {
                id += 1;
                tape.param(id - 1, &weight(r, c, d, &mut rng))
            };
            let mut vars = MhaVars {
                w_q: Vec::new(),
                w_k: Vec::new(),
                w_v: Vec::new(),
                w_o: p(&mut tape, d, d)?,
            };
            for _ in 0..case.heads {
                vars.w_q.push(p(&mut tape, d, dh)?);
                vars.w_k.push(p(&mut tape, d, dh)?);
                vars.w_v.push(p(&mut tape, d, dh)?);
            }
            let cfg = AttentionConfig::softmax().with_k(case.k).with_chunk(case.chunk).causal();
            let t = Instant::now();
            let out = mha(&mut tape, x, &vars, &cfg, case.mode)?;
            (t.elapsed().as_secs_f64(), out)
        }
        BenchTarget::Ff => {
            let d = case.d_model;
            let x = tape.param(0, &Matrix::random_normal(case.l_q, d, 1.0, &mut rng))?;
            let w_k = tape.param(1, &weight(case.d_ff, d, d, &mut rng))?;
            let w_v = tape.param(2, &weight(case.d_ff, d, case.d_ff, &mut rng))?;
            let cfg = AttentionConfig::feed_forward().with_k(case.k).with_chunk(case.chunk);
            let t = Instant::now();
            let out = ff(&mut tape, x, w_k, w_v, &cfg, case.mode)?;
            (t.elapsed().as_secs_f64(), out)
        }
        BenchTarget::Stack => {
            let model = ModelConfig {
                vocab: STACK_VOCAB,
                max_len: case.l_q,
                d_model: case.d_model,
                heads: case.heads,
                d_ff: case.d_ff,
                layers: case.layers,
                causal: true,
                tied_output: true,
            };
            let params = ModelParams::<T>::init(&model, case.seed)?;
            let tokens: Vec<usize> = (0..case.l_q).map(|_| rng.random_range(0..STACK_VOCAB)).collect();
            let spec = SublayerSpec {
                mode: case.mode,
                k: case.k,
                chunk: case.chunk,
            };
            let sub = Sublayers { attn: spec, ff: spec };
            let t = Instant::now();
            let out = transformer_tape(&mut tape, &tokens, &params, &sub, None)?;
            (t.elapsed().as_secs_f64(), out)
        }
    };
    let t = Instant::now();
    let loss = tape.mean(out)?;
    let grads = tape.backward(loss, T::one())?;
    let bwd_s = t.elapsed().as_secs_f64();
    drop(grads);
    Ok(Sample {
        fwd_s,
        bwd_s,
        peak: scope.peak_bytes(),
    })
}

/// Runs a case `repeats` times on fresh random inputs from its seed. With
/// more than one repeat the first is a discarded warm-up. A tracked
/// allocation past `budget` ends the case with status
/// `oom-budget-exceeded`.
pub fn run_case(case: &BenchCase, budget: usize) -> Result<BenchRecord> {
    case.validate()?;
    quiet_budget_panics();
    retain_freed_memory();
    let mut samples = Vec::with_capacity(case.repeats);
    for _ in 0..case.repeats {
        let attempt = catch_unwind(AssertUnwindSafe(|| match case.dtype {
            DType::F32 => run_once::<f32>(case, budget),
            DType::F64 => run_once::<f64>(case, budget),
        }));
        match attempt {
            Ok(sample) => samples.push(sample?),
            Err(payload) => match payload.downcast::<BudgetExceeded>() {
                Ok(b) => {
                    return Ok(BenchRecord {
                        case: case.clone(),
                        fwd_s: 0.0,
                        bwd_s: 0.0,
                        peak_bytes: b.would_be,
                        status: BenchStatus::OomBudgetExceeded,
                    })
                }
                Err(other) => resume_unwind(other),
            },
        }
    }
    let measured = if samples.len() > 1 { &samples[1..] } else { &samples[..] };
    let n = measured.len() as f64;
    Ok(BenchRecord {
        case: case.clone(),
        fwd_s: measured.iter().map(|s| s.fwd_s).sum::<f64>() / n,
        bwd_s: measured.iter().map(|s| s.bwd_s).sum::<f64>() / n,
        peak_bytes: measured.iter().map(|s| s.peak).max().unwrap(),
        status: BenchStatus::Ok,
    })
}
