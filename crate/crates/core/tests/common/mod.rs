//! Independent scalar-loop oracles and random-input helpers shared by the
//! integration tests. Nothing here calls into the crate's kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topk_attention::{Activation, Matrix, Scalar};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    Matrix::random_normal(rows, cols, 1.0, rng)
}

pub fn to_rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, n, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; m];
    for i in 0..m {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..n {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Indices of the `k` largest entries among `allowed`, ties to the lower
/// index, via a full sort.
pub fn sort_topk(row: &[f64], allowed: &dyn Fn(usize) -> bool, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| allowed(j) && row[j].is_finite()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Top-k attention by explicit loops: scores, mask, selection by full sort,
/// activation over the selected support, weighted sum of value rows.
#[allow(clippy::too_many_arguments)]
pub fn loop_attention(
    q: &Matrix<f64>,
    k: &Matrix<f64>,
    v: &Matrix<f64>,
    scale: f64,
    allowed: &dyn Fn(usize, usize) -> bool,
    keep: usize,
    act: Activation,
) -> Matrix<f64> {
    let (lq, lk, d, dv) = (q.rows(), k.rows(), q.cols(), v.cols());
    let mut out = vec![0.0; lq * dv];
    for g in 0..lq {
        let scores: Vec<f64> = (0..lk)
            .map(|j| (0..d).map(|t| q.get(g, t) * scale * k.get(j, t)).sum())
            .collect();
        let support = sort_topk(&scores, &|j| allowed(g, j), keep);
        let weights: Vec<f64> = match act {
            Activation::Softmax => {
                let m = support.iter().map(|&j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = support.iter().map(|&j| (scores[j] - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|x| x / z).collect()
            }
            Activation::Relu => support.iter().map(|&j| scores[j].max(0.0)).collect(),
        };
        for (w, &j) in weights.iter().zip(&support) {
            for c in 0..dv {
                out[g * dv + c] += w * v.get(j, c);
            }
        }
    }
    Matrix::from_vec(lq, dv, out).unwrap()
}

pub fn random_mask(rows: usize, cols: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut allowed: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(density)).collect();
    // every row keeps at least one visible key
    for r in 0..rows {
        if !allowed[r * cols..(r + 1) * cols].iter().any(|&b| b) {
            let j = rng.random_range(0..cols);
            allowed[r * cols + j] = true;
        }
    }
    allowed
}

pub fn rel_err(actual: &Matrix<f64>, reference: &Matrix<f64>) -> f64 {
    actual.max_abs_diff(reference) / reference.max_abs().max(1e-12)
}
