//! Memory-naive attention that materializes the full `[L_Q, L_K]` score
//! matrix. These functions are the ground truth for the chunked engines and
//! also back the `dense` mode of the transformer layers.

use super::config::{Activation, AttentionConfig, MaskSpec, TopK};
use crate::engine::GradTriple;
use crate::error::{Error, Result};
use crate::tensor::ops::{gemm, relu_in_place, row_softmax_in_place, row_topk};
use crate::tensor::{matmul, Matrix, Scalar};

pub(crate) fn check_qkv<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, cfg: &AttentionConfig) -> Result<()> {
    cfg.validate()?;
    if q.cols() != k.cols() {
        return Err(Error::shape(
            "attention",
            format!("query dim {} vs key dim {}", q.cols(), k.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "attention",
            format!("{} keys vs {} values", k.rows(), v.rows()),
        ));
    }
    if k.rows() == 0 {
        return Err(Error::shape("attention", "no keys"));
    }
    cfg.mask.check_shape(q.rows(), k.rows())
}

/// `q / temperature`, sharing storage when the factor is one.
pub(crate) fn scaled_queries<T: Scalar>(q: &Matrix<T>, cfg: &AttentionConfig) -> (Matrix<T>, T) {
    let scale = T::from_f64_lossy(cfg.query_scale(q.cols()));
    if scale == T::one() {
        (q.clone(), scale)
    } else {
        (q.scale(scale), scale)
    }
}

/// State kept by the dense forward for its backward pass: the scaled
/// queries, keys, values and the full post-activation weight matrix.
#[derive(Debug, Clone)]
pub struct DenseCache<T: Scalar> {
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    scale: T,
    activation: Activation,
    weights: Matrix<T>,
}

impl<T: Scalar> DenseCache<T> {
    /// Post-activation attention weights `[L_Q, L_K]`.
    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }
}

/// Dense forward for any activation, mask and k. Masking happens before
/// top-k selection; unselected entries get weight exactly zero.
pub fn dense_forward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
) -> Result<(Matrix<T>, DenseCache<T>)> {
    check_qkv(q, k, v, cfg)?;
    let (q, scale) = scaled_queries(q, cfg);
    let n_keys = k.rows();
    let mut scores = matmul(&q, k, true)?;
    cfg.mask.apply(scores.data_mut(), n_keys, 0)?;

    if !cfg.k.keeps_all(n_keys) {
        let (_, idx) = row_topk(&scores, cfg.k.resolve(n_keys))?;
        let mut keep = vec![false; n_keys];
        for r in 0..scores.rows() {
            keep.fill(false);
            for &i in idx.row(r) {
                keep[i as usize] = true;
            }
            for (x, &kept) in scores.row_mut(r).iter_mut().zip(&keep) {
                if !kept {
                    *x = T::neg_infinity();
                }
            }
        }
    }

    let mut weights = scores;
    match cfg.activation {
        Activation::Softmax => row_softmax_in_place(&mut weights)?,
        Activation::Relu => relu_in_place(&mut weights),
    }
    let out = matmul(&weights, v, false)?;
    Ok((
        out,
        DenseCache {
            q,
            k: k.clone(),
            v: v.clone(),
            scale,
            activation: cfg.activation,
            weights,
        },
    ))
}

/// Analytic backward of [`dense_forward`].
pub fn dense_backward<T: Scalar>(cache: &DenseCache<T>, d_out: &Matrix<T>) -> Result<GradTriple<T>> {
    let (n_q, n_k) = cache.weights.shape();
    if d_out.shape() != (n_q, cache.v.cols()) {
        return Err(Error::shape(
            "dense_backward",
            format!("d_out {:?}, expected {:?}", d_out.shape(), (n_q, cache.v.cols())),
        ));
    }
    let w = &cache.weights;
    let mut d_v = Matrix::zeros(n_k, cache.v.cols());
    gemm(T::one(), w.view(), true, d_out.view(), false, T::zero(), d_v.view_mut())?;

    // d_weights, then turned into d_scores in place
    let mut d_s = matmul(d_out, &cache.v, true)?;
    {
        let ds = d_s.data_mut();
        for r in 0..n_q {
            let wr = w.row(r);
            let gr = &mut ds[r * n_k..(r + 1) * n_k];
            match cache.activation {
                Activation::Softmax => {
                    let inner = wr.iter().zip(gr.iter()).fold(T::zero(), |acc, (&a, &g)| acc + a * g);
                    for (g, &a) in gr.iter_mut().zip(wr) {
                        *g = a * (*g - inner);
                    }
                }
                Activation::Relu => {
                    for (g, &a) in gr.iter_mut().zip(wr) {
                        if !(a > T::zero()) {
                            *g = T::zero();
                        }
                    }
                }
            }
        }
    }
    let mut d_q = matmul(&d_s, &cache.k, false)?;
    if cache.scale != T::one() {
        d_q.scale_assign(cache.scale);
    }
    let mut d_k = Matrix::zeros(n_k, cache.q.cols());
    gemm(T::one(), d_s.view(), true, cache.q.view(), false, T::zero(), d_k.view_mut())?;
    Ok(GradTriple { d_q, d_k, d_v })
}

/// `activation(mask(q·kᵀ / λ)) · v` over all keys (`cfg.k` is ignored).
/// With the default softmax activation this is plain dot-product attention.
pub fn attention_dense<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, cfg: &AttentionConfig) -> Result<Matrix<T>> {
    let cfg = cfg.clone().with_k(TopK::All);
    dense_forward(q, k, v, &cfg).map(|(out, _)| out)
}

/// `softmax(q·kᵀ + B) · v` for a causal or explicit mask `B`, no temperature.
pub fn sparse_attention_dense<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, mask: &MaskSpec) -> Result<Matrix<T>> {
    if mask.is_none() {
        return Err(Error::InvalidConfig(
            "sparse attention needs a causal or explicit mask".into(),
        ));
    }
    let cfg = AttentionConfig::softmax()
        .with_temperature(1.0)
        .with_mask(mask.clone());
    attention_dense(q, k, v, &cfg)
}

/// Feed-forward layer written as attention: `relu(q · w_kᵀ) · w_v`, with no
/// bias, mask or temperature.
pub fn ff_as_attention<T: Scalar>(q: &Matrix<T>, w_k: &Matrix<T>, w_v: &Matrix<T>) -> Result<Matrix<T>> {
    attention_dense(q, w_k, w_v, &AttentionConfig::feed_forward())
}

/// Top-k attention computed densely: full scores, mask, row-wise top-k,
/// activation, product with `v`.
pub fn topk_attention_dense<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, cfg: &AttentionConfig) -> Result<Matrix<T>> {
    dense_forward(q, k, v, cfg).map(|(out, _)| out)
}

/// Gradients of `<d_out, topk_attention_dense(q, k, v)>` with respect to
/// `q`, `k` and `v`, computed densely.
pub fn attention_dense_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    cfg: &AttentionConfig,
    d_out: &Matrix<T>,
) -> Result<GradTriple<T>> {
    let (_, cache) = dense_forward(q, k, v, cfg)?;
    dense_backward(&cache, d_out)
}
