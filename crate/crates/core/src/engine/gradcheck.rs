//! Finite-difference check of the chunked top-k backward pass.
//!
//! Each instance draws random `q`, `k`, `v` and an upstream gradient, runs
//! [`topk_forward`] / [`topk_backward`] in 64-bit and compares the result
//! against central differences of `<d_out, forward(q, k, v)>` and against
//! the dense analytic backward. While the backward runs, the instance also
//! records how many `[≤C, L_K]` buffers were live at once and whether any
//! GEMM produced a score-shaped block from the keys.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topk::{topk_backward, topk_forward};
use crate::error::{Error, Result};
use crate::reference::{attention_dense_backward, numeric_gradient, relative_error};
use crate::reference::{Activation, AttentionConfig, MaskSpec, TopK};
use crate::tensor::{MatmulProbe, Matrix, ShapeWatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub l_q: usize,
    pub l_k: usize,
    pub d: usize,
    pub d_v: usize,
    pub chunk: usize,
    /// Central-difference step.
    pub eps: f64,
    /// Bound on the relative error against central differences.
    pub rel_tol: f64,
    /// Bound on the absolute difference from the dense analytic backward.
    pub analytic_tol: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 7,
            instances: 72,
            l_q: 9,
            l_k: 11,
            d: 4,
            d_v: 3,
            chunk: 4,
            eps: 1e-6,
            rel_tol: 1e-4,
            analytic_tol: 1e-10,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.l_q, self.l_k, self.d, self.d_v, self.chunk];
        if dims.contains(&0) {
            return Err(Error::InvalidConfig("gradcheck sizes must be positive".into()));
        }
        if self.l_k < 2 {
            return Err(Error::InvalidConfig("gradcheck needs l_k >= 2 so that k < l_k".into()));
        }
        if !(self.eps > 0.0 && self.rel_tol > 0.0 && self.analytic_tol >= 0.0) {
            return Err(Error::InvalidConfig("gradcheck tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub index: usize,
    pub activation: Activation,
    pub mask: String,
    pub k: TopK,
    pub chunk: usize,
    /// Largest relative error of `d_q`, `d_k`, `d_v` against central differences.
    pub numeric_rel: f64,
    /// Largest absolute difference from the dense analytic backward.
    pub analytic_abs: f64,
    /// Most `[≤C, L_K]` buffers simultaneously live during the backward.
    pub max_score_buffers: usize,
    /// GEMMs in the backward that produced a `[≤C, L_K]` block from the keys.
    pub score_matmuls: usize,
    pub passed: bool,
}

/// Instance `index` of the suite: activation, mask, `k` and chunk size cycle
/// with the index (72 instances cover every combination); the data comes
/// from `(seed, index)`.
pub fn gradcheck_instance(cfg: &GradcheckConfig, index: usize) -> Result<InstanceReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);

    let activation = if index % 2 == 0 { Activation::Softmax } else { Activation::Relu };
    let mask = match (index / 2) % 3 {
        0 => MaskSpec::None,
        1 => MaskSpec::Causal,
        _ => random_mask(cfg.l_q, cfg.l_k, &mut rng)?,
    };
    let ks = [1, 3, cfg.l_k / 2, cfg.l_k - 1];
    let k = TopK::Keep(ks[(index / 6) % ks.len()].max(1));
    let chunk = [cfg.chunk, 1, cfg.l_q][(index / 24) % 3];
    let attn = AttentionConfig::softmax()
        .with_activation(activation)
        .with_k(k)
        .with_chunk(chunk)
        .with_mask(mask.clone());

    let q = Matrix::<f64>::random_normal(cfg.l_q, cfg.d, 1.0, &mut rng);
    let keys = Matrix::<f64>::random_normal(cfg.l_k, cfg.d, 1.0, &mut rng);
    let v = Matrix::<f64>::random_normal(cfg.l_k, cfg.d_v, 1.0, &mut rng);
    let d_out = Matrix::<f64>::random_normal(cfg.l_q, cfg.d_v, 1.0, &mut rng);

    let (_, cache) = topk_forward(&q, &keys, &v, &attn)?;
    let (grads, max_score_buffers, score_matmuls) = {
        let watch = ShapeWatch::open(chunk, cfg.l_k);
        let probe = MatmulProbe::start();
        let grads = topk_backward(&cache, &d_out)?;
        let score_matmuls = probe
            .calls()
            .iter()
            .filter(|c| c.cols == cfg.l_k && c.rows <= chunk && c.inner == cfg.d)
            .count();
        (grads, watch.max_concurrent(), score_matmuls)
    };

    let objective = |q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>| -> Result<f64> {
        let (out, _) = topk_forward(q, k, v, &attn)?;
        Ok(out.hadamard(&d_out)?.sum())
    };
    let n_q = numeric_gradient(|x| objective(x, &keys, &v), &q, cfg.eps)?;
    let n_k = numeric_gradient(|x| objective(&q, x, &v), &keys, cfg.eps)?;
    let n_v = numeric_gradient(|x| objective(&q, &keys, x), &v, cfg.eps)?;
    let floor = 1e-6;
    let numeric_rel = relative_error(&grads.d_q, &n_q, floor)
        .max(relative_error(&grads.d_k, &n_k, floor))
        .max(relative_error(&grads.d_v, &n_v, floor));

    let dense = attention_dense_backward(&q, &keys, &v, &attn, &d_out)?;
    let analytic_abs = grads.max_abs_diff(&dense);

    let passed = numeric_rel <= cfg.rel_tol
        && analytic_abs <= cfg.analytic_tol
        && max_score_buffers <= 1
        && score_matmuls == 0;
    Ok(InstanceReport {
        index,
        activation,
        mask: mask.name().to_string(),
        k,
        chunk,
        numeric_rel,
        analytic_abs,
        max_score_buffers,
        score_matmuls,
        passed,
    })
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<InstanceReport>> {
    (0..cfg.instances).map(|i| gradcheck_instance(cfg, i)).collect()
}

/// Random explicit mask with roughly half the keys visible and at least one
/// visible key per row.
fn random_mask(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<MaskSpec> {
    let mut allowed: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.5)).collect();
    for r in 0..rows {
        let row = &mut allowed[r * cols..(r + 1) * cols];
        if !row.iter().any(|&b| b) {
            row[rng.random_range(0..cols)] = true;
        }
    }
    MaskSpec::from_allowed(rows, cols, allowed)
}
