//! Acceptance criteria, one line of output each.
//!
//! Runs without the libtest harness so the `[PASS]`/`[FAIL]` lines are
//! always printed and criteria run one after another (timings and tracked
//! peaks are not disturbed by concurrent work). Positional arguments select
//! criteria by number, e.g. `cargo test --test acceptance -- 5 7`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use topk_attention::bench::{fit_scaling, run_case, BenchCase, BenchRecord, Predictor, DEFAULT_BUDGET};
use topk_attention::engine::gradcheck::{run_gradcheck, GradcheckConfig, InstanceReport};
use topk_attention::engine::{chunked_recompute_backward, chunked_recompute_forward};
use topk_attention::nn::{
    evaluate, train_toy, EvalMetrics, ModelConfig, ModelParams, SublayerSpec, Sublayers, TrainConfig, EVAL_OFFSET,
};
use topk_attention::reference::{attention_dense, topk_attention_dense};
use topk_attention::tasks::{CopyTask, ListOpsTask, Task};
use topk_attention::tensor::{MatmulProbe, ShapeWatch};
use topk_attention::{
    topk_backward, topk_forward, Activation, AttentionConfig, AttentionMode, MaskSpec, Matrix, TopK,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "degeneracy k = L_K equals dense attention", limit: secs(60), run: c1_degeneracy },
        Criterion { id: 2, name: "chunked top-k forward equals dense top-k oracle", limit: secs(120), run: c2_topk_forward },
        Criterion { id: 3, name: "custom backward vs central differences and dense backward", limit: secs(120), run: c3_gradients },
        Criterion { id: 4, name: "feed-forward as attention equals ReLU MLP", limit: secs(10), run: c4_ff_identity },
        Criterion { id: 5, name: "memory scaling linear (top-k) vs quadratic (dense)", limit: secs(300), run: c5_memory_shape },
        Criterion { id: 6, name: "one live score matrix, no score recomputation in backward", limit: secs(120), run: c6_one_matrix },
        Criterion { id: 7, name: "peak ordering top-k < recompute < dense", limit: secs(120), run: c7_ordering },
        Criterion { id: 8, name: "training parity top-k vs dense", limit: secs(1800), run: c8_training_parity },
        Criterion { id: 9, name: "zero-shot feed-forward swap", limit: secs(300), run: c9_zero_shot_swap },
        Criterion { id: 10, name: "chunk-size memory/time trade-off", limit: secs(300), run: c10_chunk_tradeoff },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = t.elapsed();
        let (pass, detail) = match result {
            Ok(o) if elapsed > c.limit => (false, format!("{}; over time limit {:?}", o.detail, c.limit)),
            Ok(o) => (o.pass, o.detail),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !pass {
            failed += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2} {}: {} ({:.1}s)", c.id, c.name, detail, elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_degeneracy() -> Outcome {
    let mut r = rng(101);
    let (mut worst32, mut worst64, mut worst_loop) = (0.0f64, 0.0f64, 0.0f64);
    let instances = 100;
    for i in 0..instances {
        let lq = r.random_range(1..=256);
        let lk = r.random_range(1..=256);
        let d = r.random_range(1..=16);
        let dv = r.random_range(1..=16);
        let chunk = r.random_range(1..=lq);
        let q: Matrix<f64> = rand_mat(lq, d, &mut r);
        let k: Matrix<f64> = rand_mat(lk, d, &mut r);
        let v: Matrix<f64> = rand_mat(lk, dv, &mut r);
        let mask = if i % 2 == 0 { MaskSpec::None } else { MaskSpec::Causal };
        let plain = AttentionConfig::softmax().with_mask(mask);
        let cfg = plain.clone().with_top(lk).with_chunk(chunk);

        let (out, _) = topk_forward(&q, &k, &v, &cfg).unwrap();
        worst64 = worst64.max(out.max_abs_diff(&attention_dense(&q, &k, &v, &plain).unwrap()));
        let causal = i % 2 == 1;
        let looped = loop_attention(&q, &k, &v, 1.0 / (d as f64).sqrt(), &|g, j| !causal || j <= g, lk, Activation::Softmax);
        worst_loop = worst_loop.max(out.max_abs_diff(&looped));

        // the 32-bit run is compared with the 64-bit oracle on the same rounded inputs
        let (q32, k32, v32) = (q.cast::<f32>(), k.cast::<f32>(), v.cast::<f32>());
        let (out32, _) = topk_forward(&q32, &k32, &v32, &cfg).unwrap();
        let oracle = attention_dense(&q32.cast(), &k32.cast(), &v32.cast(), &plain).unwrap();
        worst32 = worst32.max(out32.cast::<f64>().max_abs_diff(&oracle));
    }
    outcome(
        worst64 <= 1e-10 && worst_loop <= 1e-10 && worst32 <= 1e-5,
        format!(
            "{instances} instances per dtype, max |diff| f64 {worst64:.2e} (loop oracle {worst_loop:.2e}, <= 1e-10), f32 {worst32:.2e} (<= 1e-5)"
        ),
    )
}

fn c2_topk_forward() -> Outcome {
    let mut r = rng(202);
    let (mut worst_oracle, mut worst_loop, mut n) = (0.0f64, 0.0f64, 0);
    for (lq, lk) in [(24, 24), (21, 30)] {
        let d = 5;
        let q: Matrix<f64> = rand_mat(lq, d, &mut r);
        let k: Matrix<f64> = rand_mat(lk, d, &mut r);
        let v: Matrix<f64> = rand_mat(lk, 3, &mut r);
        let explicit = random_mask(lq, lk, 0.4, &mut r);
        for act in [Activation::Softmax, Activation::Relu] {
            for mask_kind in 0..3 {
                let mask = match mask_kind {
                    0 => MaskSpec::None,
                    1 => MaskSpec::Causal,
                    _ => MaskSpec::from_allowed(lq, lk, explicit.clone()).unwrap(),
                };
                let allowed = |g: usize, j: usize| match mask_kind {
                    0 => true,
                    1 => j <= g,
                    _ => explicit[g * lk + j],
                };
                for keep in [1, 4, lk / 2, lk] {
                    let looped = loop_attention(&q, &k, &v, 1.0 / (d as f64).sqrt(), &allowed, keep, act);
                    for chunk in [1, 7, lq] {
                        let cfg = AttentionConfig::softmax()
                            .with_activation(act)
                            .with_mask(mask.clone())
                            .with_top(keep)
                            .with_chunk(chunk);
                        let (out, _) = topk_forward(&q, &k, &v, &cfg).unwrap();
                        let oracle = topk_attention_dense(&q, &k, &v, &cfg).unwrap();
                        worst_oracle = worst_oracle.max(out.max_abs_diff(&oracle));
                        worst_loop = worst_loop.max(out.max_abs_diff(&looped));
                        n += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst_oracle <= 1e-10 && worst_loop <= 1e-10,
        format!("{n} configurations, max |diff| vs dense oracle {worst_oracle:.2e}, vs loop oracle {worst_loop:.2e} (<= 1e-10)"),
    )
}

fn gradcheck_reports() -> &'static (GradcheckConfig, Vec<InstanceReport>) {
    static REPORTS: OnceLock<(GradcheckConfig, Vec<InstanceReport>)> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let cfg = GradcheckConfig::default();
        let reports = run_gradcheck(&cfg).unwrap();
        (cfg, reports)
    })
}

fn c3_gradients() -> Outcome {
    let (_, reports) = gradcheck_reports();
    let rel = reports.iter().map(|r| r.numeric_rel).fold(0.0, f64::max);
    let abs = reports.iter().map(|r| r.analytic_abs).fold(0.0, f64::max);
    outcome(
        reports.len() >= 20 && rel <= 1e-4 && abs <= 1e-10,
        format!(
            "{} instances, max rel err vs central differences {rel:.2e} (<= 1e-4), max |diff| vs dense backward {abs:.2e} (<= 1e-10)",
            reports.len()
        ),
    )
}

fn c4_ff_identity() -> Outcome {
    let mut r = rng(404);
    let mut worst = 0.0f64;
    let instances = 20;
    for _ in 0..instances {
        let (n, d, d_ff) = (r.random_range(1..=48), r.random_range(1..=24), r.random_range(1..=128));
        let x: Matrix<f64> = rand_mat(n, d, &mut r);
        let w_k: Matrix<f64> = rand_mat(d_ff, d, &mut r);
        let w_v: Matrix<f64> = rand_mat(d_ff, d, &mut r);
        let cfg = AttentionConfig::feed_forward()
            .with_top(d_ff)
            .with_chunk(r.random_range(1..=n));
        let (got, _) = topk_forward(&x, &w_k, &w_v, &cfg).unwrap();
        // relu(x W1) W2 with W1 = w_kᵀ, W2 = w_v, written out by hand
        let hidden: Vec<Vec<f64>> = naive_matmul(&to_rows(&x), &to_rows(&w_k.transpose()))
            .into_iter()
            .map(|row| row.into_iter().map(|h| h.max(0.0)).collect())
            .collect();
        let mlp = naive_matmul(&hidden, &to_rows(&w_v));
        for (i, row) in mlp.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                worst = worst.max((got.get(i, j) - want).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("{instances} instances, max |diff| {worst:.2e} (<= 1e-12)"))
}

fn mha_case(mode: AttentionMode, l: usize, chunk: usize, k: usize) -> BenchCase {
    BenchCase {
        chunk,
        k: if mode == AttentionMode::ChunkedTopk { TopK::Keep(k) } else { TopK::All },
        repeats: 1,
        ..BenchCase::mha(mode, l)
    }
}

fn c5_memory_shape() -> Outcome {
    let lengths = [1024, 2048, 4096, 8192];
    let run = |mode| -> Vec<BenchRecord> {
        lengths
            .iter()
            .map(|&l| run_case(&mha_case(mode, l, 256, 64), DEFAULT_BUDGET).unwrap())
            .collect()
    };
    let topk = run(AttentionMode::ChunkedTopk);
    let dense = run(AttentionMode::Dense);
    let topk_lin = fit_scaling(&topk, Predictor::L).unwrap().fit.r2;
    let dense_quad = fit_scaling(&dense, Predictor::L2).unwrap().fit.r2;
    let dense_lin = fit_scaling(&dense, Predictor::L).unwrap().fit.r2;
    let peaks = |rs: &[BenchRecord]| rs.iter().map(|r| r.peak_bytes.to_string()).collect::<Vec<_>>().join("/");
    // "visibly worse": the linear fit of dense misses the bar the other two fits clear
    outcome(
        topk_lin >= 0.99 && dense_quad >= 0.99 && dense_lin < 0.99 && dense_lin < dense_quad,
        format!(
            "R2 top-k linear {topk_lin:.5}, dense quadratic {dense_quad:.5}, dense linear {dense_lin:.5}; peaks top-k {} dense {}",
            peaks(&topk),
            peaks(&dense)
        ),
    )
}

fn c6_one_matrix() -> Outcome {
    let (cfg, reports) = gradcheck_reports();
    let bad = reports
        .iter()
        .filter(|r| r.max_score_buffers > 1 || r.score_matmuls > 0)
        .count();
    let max_live = reports.iter().map(|r| r.max_score_buffers).max().unwrap_or(0);

    // the same instrumentation flags the recompute baseline
    let mut r = rng(606);
    let (lq, lk, c) = (cfg.l_q, cfg.l_k, cfg.chunk);
    let q: Matrix<f64> = rand_mat(lq, cfg.d, &mut r);
    let k: Matrix<f64> = rand_mat(lk, cfg.d, &mut r);
    let v: Matrix<f64> = rand_mat(lk, cfg.d_v, &mut r);
    let d_out: Matrix<f64> = rand_mat(lq, cfg.d_v, &mut r);
    let attn = AttentionConfig::softmax().with_chunk(c).causal();
    let (_, rc) = chunked_recompute_forward(&q, &k, &v, &attn).unwrap();
    let watch = ShapeWatch::open(c, lk);
    let probe = MatmulProbe::start();
    chunked_recompute_backward(&rc, &d_out).unwrap();
    let baseline_live = watch.max_concurrent();
    let baseline_matmuls = probe.calls().iter().filter(|m| m.cols == lk && m.rows <= c).count();
    drop((watch, probe));

    // and a top-k backward outside the suite, with a larger chunk
    let top = attn.clone().with_top(lk / 2).with_chunk(lq);
    let (_, cache) = topk_forward(&q, &k, &v, &top).unwrap();
    let watch = ShapeWatch::open(lq, lk);
    let probe = MatmulProbe::start();
    topk_backward(&cache, &d_out).unwrap();
    let extra_ok = watch.max_concurrent() <= 1 && probe.calls().iter().all(|m| !(m.cols == lk && m.rows <= lq));

    outcome(
        bad == 0 && extra_ok && baseline_live > 1 && baseline_matmuls > 0,
        format!(
            "{} gradcheck instances, {bad} violations, max live [C, L_K] buffers {max_live}; recompute baseline shows {baseline_live} live and {baseline_matmuls} score matmuls",
            reports.len()
        ),
    )
}

fn c7_ordering() -> Outcome {
    let peak = |mode| {
        let case = BenchCase {
            d_model: 256,
            heads: 4,
            ..mha_case(mode, 8192, 512, 64)
        };
        run_case(&case, DEFAULT_BUDGET).unwrap().peak_bytes
    };
    let topk = peak(AttentionMode::ChunkedTopk);
    let recompute = peak(AttentionMode::ChunkedRecompute);
    let dense = peak(AttentionMode::Dense);
    outcome(
        topk < recompute && recompute < dense,
        format!(
            "peaks top-k {topk} < recompute {recompute} < dense {dense} (ratios {:.2}x, {:.2}x)",
            recompute as f64 / topk as f64,
            dense as f64 / recompute as f64
        ),
    )
}

struct ParityRun {
    params: ModelParams<f32>,
    accuracy: f64,
}

struct ParityPair {
    dense: ParityRun,
    topk: ParityRun,
    deterministic: bool,
}

fn parity(task: &dyn Task, model: &ModelConfig, train: &TrainConfig, k: usize) -> ParityPair {
    let topk_sub = Sublayers {
        attn: SublayerSpec::topk(k, 8),
        ..Sublayers::default()
    };
    let mut runs = Vec::new();
    let mut deterministic = true;
    for sub in [Sublayers::default(), topk_sub] {
        let rep = train_toy::<f32>(task, model, &sub, train).unwrap();
        // a second, shorter run with the same seed replays the start of the trajectory bit for bit
        let short = TrainConfig { steps: 50, eval_every: 50, eval_samples: 16, ..train.clone() };
        let again = train_toy::<f32>(task, model, &sub, &short).unwrap();
        let bits = |l: &[f64]| l.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        deterministic &= bits(&again.train_loss) == bits(&rep.train_loss[..50]);
        runs.push(ParityRun {
            accuracy: rep.final_metrics().unwrap().accuracy,
            params: rep.params,
        });
    }
    let topk = runs.pop().unwrap();
    let dense = runs.pop().unwrap();
    ParityPair { dense, topk, deterministic }
}

fn copy_setup() -> (CopyTask, ModelConfig) {
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
    (task, model)
}

fn copy_parity() -> &'static ParityPair {
    static COPY: OnceLock<ParityPair> = OnceLock::new();
    COPY.get_or_init(|| {
        let (task, model) = copy_setup();
        let train = TrainConfig {
            steps: 1000,
            eval_every: 1000,
            eval_samples: 500,
            seed: 1,
            ..TrainConfig::default()
        };
        // sequence length 32, k = 12.5% of it
        parity(&task, &model, &train, task.max_len() / 8)
    })
}

fn c8_training_parity() -> Outcome {
    let copy = copy_parity();

    let task = ListOpsTask::new(1, 2, 64);
    let model = ModelConfig {
        vocab: task.vocab_size(),
        max_len: 64,
        d_model: 64,
        heads: 4,
        d_ff: 256,
        layers: 2,
        causal: false,
        tied_output: false,
    };
    let train = TrainConfig {
        steps: 8000,
        eval_every: 8000,
        eval_samples: 2000,
        seed: 1,
        ..TrainConfig::default()
    };
    let listops = parity(&task, &model, &train, 64 / 8);

    let gap = |p: &ParityPair| (p.dense.accuracy - p.topk.accuracy).abs();
    outcome(
        gap(copy) <= 0.02 && gap(&listops) <= 0.02 && copy.deterministic && listops.deterministic,
        format!(
            "copy dense {:.4} vs top-4 {:.4}; listops dense {:.4} vs top-8 {:.4}; deterministic {}",
            copy.dense.accuracy,
            copy.topk.accuracy,
            listops.dense.accuracy,
            listops.topk.accuracy,
            copy.deterministic && listops.deterministic
        ),
    )
}

fn c9_zero_shot_swap() -> Outcome {
    let params = &copy_parity().dense.params;
    let (task, _) = copy_setup();
    let eval = |ff: SublayerSpec| -> EvalMetrics {
        let sub = Sublayers { ff, ..Sublayers::default() };
        evaluate(params, &sub, &task, EVAL_OFFSET, 500).unwrap()
    };
    let base = eval(Sublayers::default().ff);
    let k64 = eval(SublayerSpec::topk(64, 32));
    let full = eval(SublayerSpec::topk(256, 32));
    let drop = base.accuracy - k64.accuracy;
    let same = (full.loss - base.loss).abs() <= 1e-5
        && (full.accuracy - base.accuracy).abs() <= 1e-5
        && (full.perplexity - base.perplexity).abs() <= 1e-5;
    outcome(
        drop <= 0.02 && same,
        format!(
            "dense accuracy {:.4}, top-64 {:.4} (drop {drop:.4} <= 0.02); k = d_ff loss diff {:.2e}, accuracy diff {:.2e}",
            base.accuracy,
            k64.accuracy,
            (full.loss - base.loss).abs(),
            (full.accuracy - base.accuracy).abs()
        ),
    )
}

fn c10_chunk_tradeoff() -> Outcome {
    let chunks = [64, 128, 256, 512, 1024, 2048, 4096];
    let rounds = 10;
    let mut times = vec![Vec::with_capacity(rounds); chunks.len()];
    let mut peaks: Vec<Option<usize>> = vec![None; chunks.len()];
    let mut stable = true;
    // rounds interleave the chunk sizes so slow drift in machine load hits all of them alike
    for _ in 0..rounds {
        for (i, &chunk) in chunks.iter().enumerate() {
            let case = BenchCase {
                repeats: 2,
                ..mha_case(AttentionMode::ChunkedTopk, 8192, chunk, 64)
            };
            let rec = run_case(&case, DEFAULT_BUDGET).unwrap();
            times[i].push(rec.fwd_s);
            stable &= *peaks[i].get_or_insert(rec.peak_bytes) == rec.peak_bytes;
        }
    }
    let time: Vec<f64> = times
        .iter_mut()
        .map(|t| {
            t.sort_by(f64::total_cmp);
            (t[rounds / 2 - 1] + t[rounds / 2]) / 2.0
        })
        .collect();
    let peaks: Vec<usize> = peaks.into_iter().map(Option::unwrap).collect();
    let mem_monotone = peaks.windows(2).all(|w| w[0] <= w[1]);
    let worst_increase = time.windows(2).map(|w| w[1] / w[0] - 1.0).fold(f64::NEG_INFINITY, f64::max);
    let fmt = |v: Vec<String>| v.join("/");
    outcome(
        mem_monotone && stable && worst_increase <= 0.10,
        format!(
            "C 64..4096: peaks {} (non-decreasing {mem_monotone}), median forward s {}, worst adjacent increase {:+.1}% (<= 10%)",
            fmt(peaks.iter().map(|p| p.to_string()).collect()),
            fmt(time.iter().map(|t| format!("{t:.3}")).collect()),
            worst_increase * 100.0
        ),
    )
}
