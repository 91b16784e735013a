//! Query chunking with input checkpointing for plain (all-keys) attention.
//!
//! The forward keeps only the inputs. The backward re-runs each chunk's
//! forward (scores and activation) before backpropagating through it, so a
//! chunk's backward holds three `[C, L_K]` matrices: the scores, the
//! activations and their gradient.

use super::plan::ChunkPlan;
use super::GradTriple;
use crate::error::{Error, Result};
use crate::reference::{check_qkv, scaled_queries, Activation, AttentionConfig, MaskSpec};
use crate::tensor::ops::{dot, gemm, relu_in_place, softmax_in_place};
use crate::tensor::{Matrix, Scalar};

#[derive(Debug, Clone)]
pub struct RecomputeCache<T: Scalar> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    scale: T,
    activation: Activation,
    mask: MaskSpec,
    plan: ChunkPlan,
}

fn activate_rows<T: Scalar>(x: &mut Matrix<T>, act: Activation, row_offset: usize) -> Result<()> {
    match act {
        Activation::Softmax => {
            let cols = x.cols();
            for (r, row) in x.data_mut().chunks_mut(cols).enumerate() {
                if !softmax_in_place(row) {
                    return Err(Error::DegenerateRow { row: row_offset + r });
                }
            }
        }
        Activation::Relu => relu_in_place(x),
    }
    Ok(())
}

impl<T: Scalar> RecomputeCache<T> {
    fn scores(&self, rows: std::ops::Range<usize>) -> Result<Matrix<T>> {
        let n_keys = self.k.rows();
        let mut dots = Matrix::zeros(rows.len(), n_keys);
        gemm(T::one(), self.q.rows_view(rows.clone()), false, self.k.view(), true, T::zero(), dots.view_mut())?;
        self.mask.apply(dots.data_mut(), n_keys, rows.start)?;
        Ok(dots)
    }
}

/// Chunked forward over all keys; caches only the inputs.
pub fn chunked_recompute_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<T>, RecomputeCache<T>)> {
    check_qkv(q, k, v, cfg)?;
    if !cfg.k.keeps_all(k.rows()) {
        return Err(Error::Unsupported(format!(
            "chunked recompute attends to all keys, got k = {}",
            cfg.k
        )));
    }
    let (q, scale) = scaled_queries(q, cfg);
    let plan = ChunkPlan::new(q.rows(), cfg.chunk_size)?;
    let cache = RecomputeCache {
        q,
        k: k.clone(),
        v: v.clone(),
        scale,
        activation: cfg.activation,
        mask: cfg.mask.clone(),
        plan,
    };

    let mut out = Matrix::zeros(cache.q.rows(), v.cols());
    for rows in cache.plan.chunks() {
        let mut actv = cache.scores(rows.clone())?;
        activate_rows(&mut actv, cache.activation, rows.start)?;
        gemm(T::one(), actv.view(), false, v.view(), false, T::zero(), out.rows_view_mut(rows))?;
    }
    Ok((out, cache))
}

/// Backward for [`chunked_recompute_forward`]: re-computes each chunk's
/// scores and activations, then backpropagates.
pub fn chunked_recompute_backward<T: Scalar>(cache: &RecomputeCache<T>, d_out: &Matrix<T>) -> Result<GradTriple<T>> {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    if d_out.shape() != (q.rows(), v.cols()) {
        return Err(Error::shape(
            "chunked_recompute_backward",
            format!("d_out {:?}, expected {:?}", d_out.shape(), (q.rows(), v.cols())),
        ));
    }
    let n_keys = k.rows();
    let mut d_q = Matrix::zeros(q.rows(), q.cols());
    let mut d_k = Matrix::zeros(n_keys, k.cols());
    let mut d_v = Matrix::zeros(n_keys, v.cols());

    for rows in cache.plan.chunks() {
        let d_out_c = d_out.rows_view(rows.clone());
        let dots = cache.scores(rows.clone())?;
        let mut actv = Matrix::from_vec(dots.rows(), dots.cols(), dots.as_slice().to_vec())?;
        activate_rows(&mut actv, cache.activation, rows.start)?;

        let mut grad = Matrix::zeros(rows.len(), n_keys);
        gemm(T::one(), d_out_c, false, v.view(), true, T::zero(), grad.view_mut())?;
        gemm(T::one(), actv.view(), true, d_out_c, false, T::one(), d_v.view_mut())?;

        // d_actv -> d_dots in place
        for r in 0..rows.len() {
            let a = actv.row(r);
            let s = dots.row(r);
            let g = grad.row_mut(r);
            match cache.activation {
                Activation::Softmax => {
                    let inner = dot(a, g);
                    for (gi, &ai) in g.iter_mut().zip(a) {
                        *gi = ai * (*gi - inner);
                    }
                }
                Activation::Relu => {
                    for (gi, &si) in g.iter_mut().zip(s) {
                        if !(si > T::zero()) {
                            *gi = T::zero();
                        }
                    }
                }
            }
        }
        drop(actv);
        drop(dots);

        gemm(T::one(), grad.view(), false, k.view(), false, T::zero(), d_q.rows_view_mut(rows.clone()))?;
        gemm(T::one(), grad.view(), true, q.rows_view(rows), false, T::one(), d_k.view_mut())?;
    }

    if cache.scale != T::one() {
        d_q.scale_assign(cache.scale);
    }
    Ok(GradTriple { d_q, d_k, d_v })
}
