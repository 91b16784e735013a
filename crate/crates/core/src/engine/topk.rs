//! Query-chunked top-k attention with input checkpointing.
//!
//! Forward, per chunk of `C` queries: compute the `[C, L_K]` scores, keep
//! the row-wise top-k among the keys the mask leaves visible, free the
//! scores, apply the activation on the `[C, k]` values, scatter into a dense `[C, L_K]` matrix and multiply by
//! `V`. Only the inputs and the top-k scores/indices are cached.
//!
//! Backward, per chunk: the gradient with respect to the kept activations
//! needs only the `k` selected dot products `<d_out[r], V[i]>`; the
//! activation is recomputed from the cached `[C, k]` scores, and at most one
//! `[C, L_K]` matrix is alive at a time (first the scattered activations for
//! `dV`, then the scattered score gradients for `dQ` and `dK`). The scores
//! themselves are never recomputed.

use super::plan::ChunkPlan;
use super::GradTriple;
use crate::error::{Error, Result};
use crate::reference::{check_qkv, scaled_queries, Activation, AttentionConfig, MaskSpec};
use crate::tensor::ops::{dot, gemm, scatter_rows, selected_dots, softmax_in_place, topk_row};
use crate::tensor::{IndexMatrix, Matrix, Scalar};

/// Top-k scores and indices for one query chunk.
#[derive(Debug, Clone)]
pub struct ChunkTopK<T: Scalar> {
    pub row_offset: usize,
    pub top_dots: Matrix<T>,
    pub top_indices: IndexMatrix,
}

/// Everything the top-k backward pass needs: the (scaled) inputs, shared
/// with the caller, plus `O(L_Q · k)` top-k state.
#[derive(Debug, Clone)]
pub struct TopKCache<T: Scalar> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    scale: T,
    activation: Activation,
    plan: ChunkPlan,
    chunks: Vec<ChunkTopK<T>>,
    sparse_value_grad: bool,
}

impl<T: Scalar> TopKCache<T> {
    pub fn chunks(&self) -> &[ChunkTopK<T>] {
        &self.chunks
    }

    pub fn plan(&self) -> ChunkPlan {
        self.plan
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Queries after temperature scaling.
    pub fn scaled_queries(&self) -> &Matrix<T> {
        &self.q
    }

    /// Bytes held beyond the inputs (top-k scores and indices).
    pub fn state_bytes(&self) -> usize {
        self.chunks
            .iter()
            .map(|c| c.top_dots.byte_len() + c.top_indices.byte_len())
            .sum()
    }
}

/// Activation over the valid prefix of each row of a `[C, k]` block.
/// Padding slots stay zero.
fn activate<T: Scalar>(top_dots: &Matrix<T>, idx: &IndexMatrix, act: Activation) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(top_dots.rows(), top_dots.cols());
    for r in 0..top_dots.rows() {
        let n = idx.row_len(r);
        let src = &top_dots.row(r)[..n];
        let dst = &mut out.row_mut(r)[..n];
        dst.copy_from_slice(src);
        match act {
            Activation::Softmax => {
                if !softmax_in_place(dst) {
                    return Err(Error::DegenerateRow { row: r });
                }
            }
            Activation::Relu => {
                for x in dst.iter_mut() {
                    if !(*x > T::zero()) {
                        *x = T::zero();
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backpropagates `d_top_actv` through the activation, valid prefix only.
fn activation_backward<T: Scalar>(
    top_actv: &Matrix<T>,
    top_dots: &Matrix<T>,
    d_top_actv: &Matrix<T>,
    idx: &IndexMatrix,
    act: Activation,
) -> Matrix<T> {
    let mut out = Matrix::zeros(top_actv.rows(), top_actv.cols());
    for r in 0..top_actv.rows() {
        let n = idx.row_len(r);
        let a = &top_actv.row(r)[..n];
        let g = &d_top_actv.row(r)[..n];
        let dst = &mut out.row_mut(r)[..n];
        match act {
            Activation::Softmax => {
                let inner = dot(a, g);
                for ((d, &ai), &gi) in dst.iter_mut().zip(a).zip(g) {
                    *d = ai * (gi - inner);
                }
            }
            Activation::Relu => {
                let s = &top_dots.row(r)[..n];
                for ((d, &si), &gi) in dst.iter_mut().zip(s).zip(g) {
                    *d = if si > T::zero() { gi } else { T::zero() };
                }
            }
        }
    }
    out
}

/// Row-wise top-k of a score block whose first row is global query
/// `row_offset`. Masked keys are skipped rather than overwritten, so each
/// row is read once while it is hot in cache.
fn masked_topk<T: Scalar>(
    dots: &Matrix<T>,
    keep: usize,
    mask: &MaskSpec,
    row_offset: usize,
) -> Result<(Matrix<T>, IndexMatrix)> {
    let (rows, cols) = dots.shape();
    let width = keep.min(cols);
    let mut vals = Matrix::zeros(rows, width);
    let mut idx = IndexMatrix::empty(rows, width);
    let mut scratch = Vec::with_capacity(cols);
    for r in 0..rows {
        let g = row_offset + r;
        let (visible, allowed) = mask.row_visibility(g, cols);
        let n = topk_row(
            &dots.row(r)[..visible],
            allowed,
            keep,
            &mut scratch,
            vals.row_mut(r),
            idx.row_slots_mut(r),
        );
        if n == 0 {
            return Err(Error::DegenerateRow { row: g });
        }
        idx.set_row_len(r, n);
    }
    Ok((vals, idx))
}

/// Chunked top-k attention forward. Returns the `[L_Q, d_v]` output and the
/// checkpoint consumed by [`topk_backward`].
pub fn topk_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<T>, TopKCache<T>)> {
    check_qkv(q, k, v, cfg)?;
    let (q, scale) = scaled_queries(q, cfg);
    let n_keys = k.rows();
    let keep = cfg.k.resolve(n_keys);
    let plan = ChunkPlan::new(q.rows(), cfg.chunk_size)?;

    let mut out = Matrix::zeros(q.rows(), v.cols());
    let mut chunks = Vec::with_capacity(plan.num_chunks());
    for rows in plan.chunks() {
        let c = rows.len();
        let mut dots = Matrix::zeros(c, n_keys);
        gemm(T::one(), q.rows_view(rows.clone()), false, k.view(), true, T::zero(), dots.view_mut())?;
        let (top_dots, top_indices) = masked_topk(&dots, keep, &cfg.mask, rows.start)?;
        drop(dots);

        let top_actv = activate(&top_dots, &top_indices, cfg.activation)?;
        let actv = scatter_rows(&top_actv, &top_indices, n_keys)?;
        drop(top_actv);
        gemm(T::one(), actv.view(), false, v.view(), false, T::zero(), out.rows_view_mut(rows.clone()))?;
        drop(actv);

        chunks.push(ChunkTopK {
            row_offset: rows.start,
            top_dots,
            top_indices,
        });
    }

    let cache = TopKCache {
        q,
        k: k.clone(),
        v: v.clone(),
        scale,
        activation: cfg.activation,
        plan,
        chunks,
        sparse_value_grad: cfg.sparse_value_grad,
    };
    Ok((out, cache))
}

/// Custom backward for [`topk_forward`]. `d_k` and `d_v` accumulate the
/// per-chunk contributions in ascending chunk order.
pub fn topk_backward<T: Scalar>(cache: &TopKCache<T>, d_out: &Matrix<T>) -> Result<GradTriple<T>> {
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    if d_out.shape() != (q.rows(), v.cols()) {
        return Err(Error::shape(
            "topk_backward",
            format!("d_out {:?}, expected {:?}", d_out.shape(), (q.rows(), v.cols())),
        ));
    }
    let n_keys = k.rows();
    let mut d_q = Matrix::zeros(q.rows(), q.cols());
    let mut d_k = Matrix::zeros(n_keys, k.cols());
    let mut d_v = Matrix::zeros(n_keys, v.cols());

    for (chunk, rows) in cache.chunks.iter().zip(cache.plan.chunks()) {
        let idx = &chunk.top_indices;
        let d_out_c = d_out.rows_view(rows.clone());

        let d_top_actv = selected_dots(d_out_c, v.view(), idx)?;
        let top_actv = activate(&chunk.top_dots, idx, cache.activation)?;
        let d_top_dots = activation_backward(&top_actv, &chunk.top_dots, &d_top_actv, idx, cache.activation);
        drop(d_top_actv);

        if cache.sparse_value_grad {
            let dv = d_v.data_mut();
            let dv_cols = v.cols();
            for r in 0..rows.len() {
                let g = d_out_c.row(r);
                for (&i, &a) in idx.row(r).iter().zip(top_actv.row(r)) {
                    let dst = &mut dv[i as usize * dv_cols..(i as usize + 1) * dv_cols];
                    for (d, &x) in dst.iter_mut().zip(g) {
                        *d = *d + a * x;
                    }
                }
            }
        } else {
            let actv = scatter_rows(&top_actv, idx, n_keys)?;
            gemm(T::one(), actv.view(), true, d_out_c, false, T::one(), d_v.view_mut())?;
        }
        drop(top_actv);

        let d_dots = scatter_rows(&d_top_dots, idx, n_keys)?;
        drop(d_top_dots);
        gemm(T::one(), d_dots.view(), false, k.view(), false, T::zero(), d_q.rows_view_mut(rows.clone()))?;
        gemm(T::one(), d_dots.view(), true, q.rows_view(rows.clone()), false, T::one(), d_k.view_mut())?;
    }

    if cache.scale != T::one() {
        d_q.scale_assign(cache.scale);
    }
    Ok(GradTriple { d_q, d_k, d_v })
}
