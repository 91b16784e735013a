use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{transformer_forward, transformer_tape, Dropout, ModelConfig, ModelParams, Sublayers};
use super::tape::{ParamGrads, Tape};
use crate::error::{Error, Result};
use crate::tasks::{Task, TaskSample};
use crate::tensor::{Matrix, Scalar};

/// Evaluation samples are drawn from this index onwards, far away from any
/// index a training run reaches.
pub const EVAL_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Evaluate every this many steps (and after the last one).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed: u64,
    /// Dropout on sublayer outputs; training only.
    pub dropout: f64,
    /// Rescale the batch gradient to at most this global norm; 0 disables.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 16,
            adam: AdamConfig::default(),
            eval_every: 250,
            eval_samples: 256,
            seed: 0,
            dropout: 0.0,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub step: usize,
    /// Mean cross-entropy per target position.
    pub loss: f64,
    /// Fraction of target positions whose argmax is correct.
    pub accuracy: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Scalar> {
    pub params: ModelParams<T>,
    pub history: Vec<EvalMetrics>,
    /// Mean batch loss of every step.
    pub train_loss: Vec<f64>,
}

impl<T: Scalar> TrainReport<T> {
    pub fn final_metrics(&self) -> Option<&EvalMetrics> {
        self.history.last()
    }
}

/// Checks that every parameter of the model got exactly one gradient.
pub fn audit_gradients<T: Scalar>(grads: &ParamGrads<T>, params: &ModelParams<T>) -> Result<()> {
    let n = params.tensors().len();
    if grads.grads.len() != n {
        return Err(Error::InvalidConfig(format!(
            "gradient audit: {} slots for {n} parameters",
            grads.grads.len()
        )));
    }
    for (i, (g, p)) in grads.grads.iter().zip(params.tensors()).enumerate() {
        match g {
            Some(g) if g.shape() == p.shape() => {}
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "gradient audit: parameter {i} has no gradient of shape {:?}",
                    p.shape()
                )))
            }
        }
    }
    Ok(())
}

/// Mean loss and mean gradient over a batch, summed in sample order.
pub fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    sub: &Sublayers,
    samples: &[TaskSample],
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(f64, Vec<Matrix<T>>)> {
    let mut total: Vec<Matrix<T>> = params
        .tensors()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let seed = T::from_usize(samples.len()).unwrap().recip();
    let mut loss = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let d = dropout.as_mut().map(|(rate, rng)| Dropout {
            rate: *rate,
            rng: &mut **rng,
        });
        let logits = transformer_tape(&mut tape, &s.input, params, sub, d)?;
        let l = tape.cross_entropy(logits, &s.position_targets())?;
        loss += tape.value(l).get(0, 0).to_f64_lossy();
        let grads = tape.backward(l, seed)?;
        audit_gradients(&grads, params)?;
        for (acc, g) in total.iter_mut().zip(grads.grads) {
            acc.add_assign(&g.unwrap())?;
        }
    }
    Ok((loss / samples.len() as f64, total))
}

/// Loss, accuracy and perplexity over `count` samples starting at `start`.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    sub: &Sublayers,
    task: &dyn Task,
    start: u64,
    count: usize,
) -> Result<EvalMetrics> {
    let (mut nll, mut correct, mut n) = (0.0f64, 0usize, 0usize);
    for i in 0..count as u64 {
        let s = task.sample(start + i);
        let logits = transformer_forward(&s.input, params, sub)?;
        for (r, t) in s.position_targets().iter().enumerate() {
            let Some(t) = *t else { continue };
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.to_f64_lossy()).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            nll += z.ln() + m - row[t];
            let arg = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            correct += usize::from(arg == t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidConfig("evaluation set has no targets".into()));
    }
    let loss = nll / n as f64;
    Ok(EvalMetrics {
        step: 0,
        loss,
        accuracy: correct as f64 / n as f64,
        perplexity: loss.exp(),
    })
}

fn check_fit(task: &dyn Task, model: &ModelConfig) -> Result<()> {
    if model.vocab < task.vocab_size() || model.max_len < task.max_len() || model.causal != task.causal() {
        return Err(Error::InvalidConfig(format!(
            "model (vocab {}, max_len {}, causal {}) does not fit task (vocab {}, max_len {}, causal {})",
            model.vocab,
            model.max_len,
            model.causal,
            task.vocab_size(),
            task.max_len(),
            task.causal()
        )));
    }
    Ok(())
}

/// Trains a fresh model on `task`. Fully deterministic given the seeds;
/// aborts with [`Error::Divergence`] on a non-finite loss.
pub fn train_toy<T: Scalar>(
    task: &dyn Task,
    model: &ModelConfig,
    sub: &Sublayers,
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    let params = ModelParams::init(model, cfg.seed)?;
    train_from(task, params, sub, cfg)
}

/// Continues training `params` on `task`.
pub fn train_from<T: Scalar>(
    task: &dyn Task,
    mut params: ModelParams<T>,
    sub: &Sublayers,
    cfg: &TrainConfig,
) -> Result<TrainReport<T>> {
    check_fit(task, params.config())?;
    if cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidConfig("batch and eval_every must be >= 1".into()));
    }
    let mut state = AdamState::new(params.tensors());
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d60f);
    let mut history = Vec::new();
    let mut train_loss = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let samples = task.samples((step * cfg.batch) as u64, cfg.batch);
        let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut drop_rng));
        let (loss, mut grads) = match batch_gradients(&params, sub, &samples, dropout) {
            // overflowing activations leave no finite score in a softmax row
            Err(Error::DegenerateRow { .. } | Error::NonFinite(_)) if step > 0 => {
                return Err(Error::Divergence { step, loss: f64::NAN })
            }
            other => other?,
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        if cfg.clip_norm > 0.0 {
            let max = cfg.clip_norm;
            let norm = grads
                .iter()
                .flat_map(|g| g.as_slice())
                .map(|v| v.to_f64_lossy().powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > max {
                let s = T::from_f64_lossy(max / norm);
                grads.iter_mut().for_each(|g| g.scale_assign(s));
            }
        }
        adam_step(params.tensors_mut(), &grads, &mut state, &cfg.adam)?;
        train_loss.push(loss);
        if (step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps {
            let mut m = evaluate(&params, sub, task, EVAL_OFFSET, cfg.eval_samples)?;
            m.step = step + 1;
            history.push(m);
        }
    }
    Ok(TrainReport {
        params,
        history,
        train_loss,
    })
}
