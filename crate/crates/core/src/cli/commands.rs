use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::{
    echo_config, load_config, BenchConfig, EvalConfig, Sublayer, SwapEvalConfig, SweepConfig, TrainRunConfig,
};
use super::{
    BenchArgs, Command, EvalArgs, GradcheckArgs, SwapArgs, SweepArgs, TaskKind, TrainArgs, EXIT_FAILURE, EXIT_OK,
    EXIT_USAGE,
};
use crate::bench::{sweep, CsvSink, JsonSink, RecordSink, Tee};
use crate::engine::gradcheck::{run_gradcheck, GradcheckConfig};
use crate::error::Error;
use crate::nn::{
    checkpoint_info, evaluate, load_checkpoint, save_checkpoint, train_from, CheckpointMeta, EvalMetrics,
    ModelParams, Sublayers,
};
use crate::tasks::{Task, TaskSpec};
use crate::tensor::{DType, Scalar};

pub(super) enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    pub(super) fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => m,
        }
    }

    pub(super) fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

type CmdResult = std::result::Result<i32, CliError>;

fn set<V>(slot: &mut V, flag: Option<V>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn echo<C: Serialize>(err: &mut dyn Write, header: &str, cfg: &C) -> std::result::Result<(), CliError> {
    let text = echo_config(cfg).map_err(usage)?;
    writeln!(err, "# {header}")?;
    err.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        writeln!(err)?;
    }
    Ok(())
}

fn json_line<V: Serialize>(out: &mut dyn Write, value: &V) -> std::result::Result<(), CliError> {
    serde_json::to_writer(&mut *out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

pub(super) fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match command {
        Command::Bench(a) => bench(a, out, err),
        Command::Sweep(a) => sweep_cmd(a, out, err),
        Command::Gradcheck(a) => gradcheck(a, out, err),
        Command::Train(a) => train(a, out, err),
        Command::Eval(a) => eval(a, out, err),
        Command::SwapEval(a) => swap_eval(a, out, err),
    }
}

/// Runs `cases`, writing CSV to `csv` (or `out`) and JSON lines to `json`.
fn run_cases(
    cases: &[crate::bench::BenchCase],
    budget: usize,
    csv: Option<&Path>,
    json: Option<&Path>,
    out: &mut dyn Write,
) -> std::result::Result<(), CliError> {
    let mut csv_sink: CsvSink<Box<dyn Write + '_>> = match csv {
        Some(p) => CsvSink::new(Box::new(BufWriter::new(File::create(p)?))),
        None => CsvSink::new(Box::new(out)),
    };
    let mut json_sink = match json {
        Some(p) => Some(JsonSink::new(BufWriter::new(File::create(p)?))),
        None => None,
    };
    let mut sinks: Vec<&mut dyn RecordSink> = vec![&mut csv_sink];
    if let Some(j) = json_sink.as_mut() {
        sinks.push(j);
    }
    sweep(cases, budget, &mut Tee(sinks))?;
    Ok(())
}

fn bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: BenchConfig = load_config(a.config.as_deref(), |c: &mut BenchConfig| {
        set(&mut c.mode, a.mode);
        set(&mut c.length, a.length);
        set(&mut c.d_model, a.d_model);
        set(&mut c.heads, a.heads);
        set(&mut c.d_ff, a.d_ff);
        if a.k.is_some() {
            c.k = a.k;
        }
        set(&mut c.chunk, a.chunk);
        set(&mut c.layers, a.layers);
        set(&mut c.dtype, a.dtype);
        set(&mut c.seed, a.seed);
        set(&mut c.repeats, a.repeats);
        set(&mut c.budget, a.budget);
        if a.csv.is_some() {
            c.csv = a.csv.clone();
        }
        if a.json.is_some() {
            c.json = a.json.clone();
        }
        Ok(())
    })
    .map_err(usage)?;
    echo(err, &format!("topk-attn bench {}", a.target), &cfg)?;
    let case = cfg.case(a.target);
    case.validate().map_err(usage)?;
    run_cases(&[case], cfg.budget, cfg.csv.as_deref(), cfg.json.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: SweepConfig = load_config(a.config.as_deref(), |c: &mut SweepConfig| {
        set(&mut c.target, a.target);
        set(&mut c.modes, a.modes.clone());
        set(&mut c.lengths, a.lengths.clone());
        set(&mut c.chunks, a.chunks.clone());
        set(&mut c.ks, a.ks.clone());
        set(&mut c.length, a.length);
        set(&mut c.d_model, a.d_model);
        set(&mut c.heads, a.heads);
        set(&mut c.d_ff, a.d_ff);
        set(&mut c.k, a.k);
        set(&mut c.chunk, a.chunk);
        set(&mut c.layers, a.layers);
        set(&mut c.dtype, a.dtype);
        set(&mut c.seed, a.seed);
        set(&mut c.repeats, a.repeats);
        set(&mut c.budget, a.budget);
        if a.csv.is_some() {
            c.csv = a.csv.clone();
        }
        if a.json.is_some() {
            c.json = a.json.clone();
        }
        Ok(())
    })
    .map_err(usage)?;
    echo(err, "topk-attn sweep", &cfg)?;
    let cases = cfg.grid().cases();
    for case in &cases {
        case.validate().map_err(usage)?;
    }
    run_cases(&cases, cfg.budget, cfg.csv.as_deref(), cfg.json.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: GradcheckConfig = load_config(a.config.as_deref(), |c: &mut GradcheckConfig| {
        set(&mut c.seed, a.seed);
        set(&mut c.instances, a.instances);
        set(&mut c.l_q, a.l_q);
        set(&mut c.l_k, a.l_k);
        set(&mut c.d, a.d);
        set(&mut c.d_v, a.d_v);
        set(&mut c.chunk, a.chunk);
        set(&mut c.eps, a.eps);
        set(&mut c.rel_tol, a.rel_tol);
        set(&mut c.analytic_tol, a.analytic_tol);
        Ok(())
    })
    .map_err(usage)?;
    echo(err, "topk-attn gradcheck", &cfg)?;
    cfg.validate().map_err(usage)?;
    let reports = run_gradcheck(&cfg)?;
    let (mut worst_rel, mut worst_abs) = (0.0f64, 0.0f64);
    for r in &reports {
        worst_rel = worst_rel.max(r.numeric_rel);
        worst_abs = worst_abs.max(r.analytic_abs);
        writeln!(
            out,
            "{:>3} {:<7} {:<8} k={:<3} C={:<3} fd_rel={:.2e} dense_abs={:.2e} score_buffers={} score_matmuls={} {}",
            r.index,
            r.activation.to_string(),
            r.mask,
            r.k.to_string(),
            r.chunk,
            r.numeric_rel,
            r.analytic_abs,
            r.max_score_buffers,
            r.score_matmuls,
            if r.passed { "ok" } else { "FAIL" }
        )?;
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    writeln!(
        out,
        "gradcheck: {passed}/{} passed (worst fd_rel {worst_rel:.2e} <= {:.0e}, worst dense_abs {worst_abs:.2e} <= {:.0e})",
        reports.len(),
        cfg.rel_tol,
        cfg.analytic_tol
    )?;
    Ok(if passed == reports.len() { EXIT_OK } else { EXIT_FAILURE })
}

fn apply_task_flags(c: &mut TrainRunConfig, a: &TrainArgs) -> crate::error::Result<()> {
    if let Some(kind) = a.task {
        let same = matches!(
            (kind, &c.task),
            (TaskKind::Copy, TaskSpec::Copy { .. }) | (TaskKind::Listops, TaskSpec::Listops { .. })
        );
        if !same {
            c.task = match kind {
                TaskKind::Copy => TaskSpec::Copy { length: 16, vocab: 16 },
                TaskKind::Listops => TaskSpec::Listops { max_depth: 2, max_length: 64 },
            };
        }
    }
    match &mut c.task {
        TaskSpec::Copy { length, vocab } => {
            if a.max_depth.is_some() || a.max_length.is_some() {
                return Err(Error::Config("--max-depth and --max-length apply to the listops task".into()));
            }
            set(length, a.length);
            set(vocab, a.vocab);
        }
        TaskSpec::Listops { max_depth, max_length } => {
            if a.length.is_some() || a.vocab.is_some() {
                return Err(Error::Config("--length and --vocab apply to the copy task".into()));
            }
            set(max_depth, a.max_depth);
            set(max_length, a.max_length);
        }
    }
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: TrainRunConfig = load_config(a.config.as_deref(), |c: &mut TrainRunConfig| {
        apply_task_flags(c, &a)?;
        set(&mut c.task_seed, a.task_seed);
        set(&mut c.model.d_model, a.d_model);
        set(&mut c.model.heads, a.heads);
        set(&mut c.model.d_ff, a.d_ff);
        set(&mut c.model.layers, a.layers);
        set(&mut c.model.tied_output, a.tied_output);
        set(&mut c.attn.mode, a.attn_mode);
        set(&mut c.attn.k, a.attn_k);
        set(&mut c.attn.chunk, a.attn_chunk);
        set(&mut c.ff.mode, a.ff_mode);
        set(&mut c.ff.k, a.ff_k);
        set(&mut c.ff.chunk, a.ff_chunk);
        set(&mut c.train.steps, a.steps);
        set(&mut c.train.batch, a.batch);
        set(&mut c.train.adam.lr, a.lr);
        set(&mut c.train.eval_every, a.eval_every);
        set(&mut c.train.eval_samples, a.eval_samples);
        set(&mut c.train.seed, a.seed);
        set(&mut c.train.dropout, a.dropout);
        set(&mut c.train.clip_norm, a.clip_norm);
        set(&mut c.dtype, a.dtype);
        if a.checkpoint.is_some() {
            c.checkpoint = a.checkpoint.clone();
        }
        Ok(())
    })
    .map_err(usage)?;
    echo(err, "topk-attn train", &cfg)?;
    let task = cfg.task.build(cfg.task_seed);
    let model = cfg.model.for_task(task.as_ref());
    model.validate().map_err(usage)?;
    match cfg.dtype {
        DType::F32 => train_in::<f32>(&cfg, task.as_ref(), out),
        DType::F64 => train_in::<f64>(&cfg, task.as_ref(), out),
    }
}

fn train_in<T: Scalar>(cfg: &TrainRunConfig, task: &dyn Task, out: &mut dyn Write) -> CmdResult {
    let model = cfg.model.for_task(task);
    let params = ModelParams::<T>::init(&model, cfg.train.seed)?;
    let sub = cfg.sublayers();
    let report = train_from(task, params, &sub, &cfg.train)?;
    for m in &report.history {
        json_line(out, m)?;
    }
    if let Some(path) = &cfg.checkpoint {
        let meta = CheckpointMeta {
            model,
            sublayers: sub,
            task: Some(cfg.task.clone()),
            task_seed: cfg.task_seed,
            step: cfg.train.steps as u64,
            seed: cfg.train.seed,
        };
        save_checkpoint(path, &report.params, &meta)?;
    }
    Ok(EXIT_OK)
}

/// Evaluates the checkpoint once per entry of `settings`, in its stored dtype.
fn eval_settings(
    path: &Path,
    settings: &[Sublayers],
    start: u64,
    samples: usize,
) -> std::result::Result<Vec<EvalMetrics>, CliError> {
    fn run<T: Scalar>(
        path: &Path,
        settings: &[Sublayers],
        start: u64,
        samples: usize,
    ) -> std::result::Result<Vec<EvalMetrics>, CliError> {
        let (params, meta) = load_checkpoint::<T>(path)?;
        let spec = meta
            .task
            .as_ref()
            .ok_or_else(|| CliError::Usage(format!("{} records no task to evaluate on", path.display())))?;
        let task = spec.build(meta.task_seed);
        settings
            .iter()
            .map(|sub| {
                let mut m = evaluate(&params, sub, task.as_ref(), start, samples)?;
                m.step = meta.step as usize;
                Ok(m)
            })
            .collect()
    }
    let (_, dtype) = checkpoint_info(path)?;
    match dtype {
        DType::F32 => run::<f32>(path, settings, start, samples),
        DType::F64 => run::<f64>(path, settings, start, samples),
    }
}

fn required_checkpoint(path: &Option<std::path::PathBuf>) -> std::result::Result<&Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage("a checkpoint is required (--checkpoint or `checkpoint` in the config)".into()))
}

fn eval(a: EvalArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: EvalConfig = load_config(a.config.as_deref(), |c: &mut EvalConfig| {
        if a.checkpoint.is_some() {
            c.checkpoint = a.checkpoint.clone();
        }
        set(&mut c.samples, a.samples);
        set(&mut c.start, a.start);
        Ok(())
    })
    .map_err(usage)?;
    echo(err, "topk-attn eval", &cfg)?;
    let path = required_checkpoint(&cfg.checkpoint)?;
    let (meta, _) = checkpoint_info(path)?;
    let metrics = eval_settings(path, &[meta.sublayers], cfg.start, cfg.samples)?;
    json_line(out, &metrics[0])?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SwapReport {
    sublayer: Sublayer,
    from: crate::engine::AttentionMode,
    to: crate::engine::AttentionMode,
    k: crate::reference::TopK,
    baseline: EvalMetrics,
    swapped: EvalMetrics,
    accuracy_drop: f64,
}

fn swap_eval(a: SwapArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let cfg: SwapEvalConfig = load_config(a.config.as_deref(), |c: &mut SwapEvalConfig| {
        if a.checkpoint.is_some() {
            c.checkpoint = a.checkpoint.clone();
        }
        set(&mut c.sublayer, a.sublayer);
        set(&mut c.from, a.from);
        set(&mut c.to, a.to);
        set(&mut c.k, a.k);
        if a.chunk.is_some() {
            c.chunk = a.chunk;
        }
        set(&mut c.samples, a.samples);
        set(&mut c.start, a.start);
        Ok(())
    })
    .map_err(usage)?;
    echo(err, "topk-attn swap-eval", &cfg)?;
    let path = required_checkpoint(&cfg.checkpoint)?;
    let (meta, _) = checkpoint_info(path)?;
    let trained = meta.sublayers;
    let slot = match cfg.sublayer {
        Sublayer::Attn => trained.attn,
        Sublayer::Ff => trained.ff,
    };
    if slot.mode != cfg.from {
        return Err(CliError::Usage(format!(
            "checkpoint {} was trained with {} {} sublayers, not {}",
            path.display(),
            slot.mode,
            match cfg.sublayer {
                Sublayer::Attn => "attention",
                Sublayer::Ff => "feed-forward",
            },
            cfg.from
        )));
    }
    let mut swapped = trained;
    let spec = crate::nn::SublayerSpec {
        mode: cfg.to,
        k: cfg.k,
        chunk: cfg.chunk.unwrap_or(slot.chunk),
    };
    match cfg.sublayer {
        Sublayer::Attn => swapped.attn = spec,
        Sublayer::Ff => swapped.ff = spec,
    }
    let m = eval_settings(path, &[trained, swapped], cfg.start, cfg.samples)?;
    json_line(
        out,
        &SwapReport {
            sublayer: cfg.sublayer,
            from: cfg.from,
            to: cfg.to,
            k: cfg.k,
            baseline: m[0],
            swapped: m[1],
            accuracy_drop: m[0].accuracy - m[1].accuracy,
        },
    )?;
    Ok(EXIT_OK)
}
