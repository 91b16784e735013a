//! Dense kernels: GEMM, row-wise softmax/ReLU, row-wise top-k and the
//! scatter/gather pair that moves between `[m, k]` and `[m, width]`.

use std::cmp::Ordering;

use super::index::{IndexMatrix, PAD_INDEX};
use super::matrix::{MatMut, MatRef, Matrix};
use super::{probe, Scalar};
use crate::error::{Error, Result};

/// `c <- alpha * op(a) * op(b) + beta * c`, where `op` optionally
/// transposes. Transposition only changes strides; nothing is copied.
pub fn gemm<T: Scalar>(
    alpha: T,
    a: MatRef<'_, T>,
    trans_a: bool,
    b: MatRef<'_, T>,
    trans_b: bool,
    beta: T,
    c: MatMut<'_, T>,
) -> Result<()> {
    let (m, ka) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if ka != kb || c.rows != m || c.cols != n {
        return Err(Error::shape(
            "gemm",
            format!(
                "op(a) {m}x{ka}, op(b) {kb}x{n}, c {}x{}",
                c.rows, c.cols
            ),
        ));
    }
    probe::record(m, n, ka);
    if m == 0 || n == 0 {
        return Ok(());
    }
    if ka == 0 {
        for x in c.data.iter_mut() {
            *x = if beta == T::zero() { T::zero() } else { *x * beta };
        }
        return Ok(());
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: shapes were checked above, every view's slice covers
    // rows * cols elements, and `c` is uniquely borrowed.
    unsafe {
        T::gemm(
            m,
            ka,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// `a · b` or `a · bᵀ`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, transpose_b: bool) -> Result<Matrix<T>> {
    let p = if transpose_b { b.rows() } else { b.cols() };
    let mut out = Matrix::zeros(a.rows(), p);
    gemm(T::one(), a.view(), false, b.view(), transpose_b, T::zero(), out.view_mut())?;
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(a.cols(), b.cols());
    gemm(T::one(), a.view(), true, b.view(), false, T::zero(), out.view_mut())?;
    Ok(out)
}

/// Numerically stable softmax of one row in place. `-inf` entries become
/// exactly zero. Returns `false` (leaving the row untouched) if the row has
/// no finite entry.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) -> bool {
    let mut max = T::neg_infinity();
    for &x in row.iter() {
        if x.is_finite() && x > max {
            max = x;
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = if *x == T::neg_infinity() {
            T::zero()
        } else {
            (*x - max).exp()
        };
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
    true
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax<T: Scalar>(x: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = x.clone();
    row_softmax_in_place(&mut out)?;
    Ok(out)
}

pub fn row_softmax_in_place<T: Scalar>(x: &mut Matrix<T>) -> Result<()> {
    let cols = x.cols();
    if cols == 0 {
        return Ok(());
    }
    for (r, row) in x.data_mut().chunks_mut(cols).enumerate() {
        if !softmax_in_place(row) {
            return Err(Error::DegenerateRow { row: r });
        }
    }
    Ok(())
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_in_place<T: Scalar>(x: &mut Matrix<T>) {
    for v in x.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Largest-first, lowest index wins ties.
fn topk_order<T: Scalar>(a: &(T, u32), b: &(T, u32)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Top-k of one row into `vals`/`idx` (capacity `vals.len()`), indices
/// ascending. Returns the number of selected entries.
/// Top-k of one row into `vals`/`idx`, padding the tail. Only finite entries
/// whose `allowed` flag is set (all of them when `allowed` is `None`) are
/// candidates. Returns the number of valid slots.
pub(crate) fn topk_row<T: Scalar>(
    row: &[T],
    allowed: Option<&[bool]>,
    k: usize,
    scratch: &mut Vec<(T, u32)>,
    vals: &mut [T],
    idx: &mut [u32],
) -> usize {
    scratch.clear();
    let candidates = row.iter().enumerate().map(|(i, &x)| (x, i as u32));
    match allowed {
        None => scratch.extend(candidates.filter(|(x, _)| x.is_finite())),
        Some(ok) => scratch.extend(candidates.filter(|&(x, i)| ok[i as usize] && x.is_finite())),
    }
    let take = k.min(scratch.len()).min(vals.len());
    if take < scratch.len() {
        if take > 0 {
            scratch.select_nth_unstable_by(take - 1, topk_order);
        }
        scratch.truncate(take);
        scratch.sort_unstable_by_key(|&(_, i)| i);
    }
    for (j, &(v, i)) in scratch.iter().enumerate() {
        vals[j] = v;
        idx[j] = i;
    }
    for j in take..vals.len() {
        vals[j] = T::zero();
        idx[j] = PAD_INDEX;
    }
    take
}

/// Row-wise top-k over finite entries.
///
/// Rows with fewer than `k` finite entries keep all of them; the returned
/// matrices have `min(k, cols)` columns and the index matrix records each
/// row's valid length. Padding slots hold value zero and [`PAD_INDEX`].
pub fn row_topk<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<(Matrix<T>, IndexMatrix)> {
    row_topk_view(x.view(), k, 0)
}

pub(crate) fn row_topk_view<T: Scalar>(
    x: MatRef<'_, T>,
    k: usize,
    row_offset: usize,
) -> Result<(Matrix<T>, IndexMatrix)> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-k requires k >= 1".into()));
    }
    let cap = k.min(x.cols);
    let mut vals = Matrix::zeros(x.rows, cap);
    let mut idx = IndexMatrix::empty(x.rows, cap);
    let mut scratch = Vec::with_capacity(x.cols);
    for r in 0..x.rows {
        let n = topk_row(
            x.row(r),
            None,
            k,
            &mut scratch,
            vals.row_mut(r),
            idx.row_slots_mut(r),
        );
        if n == 0 {
            return Err(Error::DegenerateRow { row: row_offset + r });
        }
        idx.set_row_len(r, n);
    }
    Ok((vals, idx))
}

fn check_pairing<T: Scalar>(values: &Matrix<T>, indices: &IndexMatrix, op: &'static str) -> Result<()> {
    if values.rows() != indices.rows() || values.cols() != indices.cols() {
        return Err(Error::shape(
            op,
            format!(
                "values {:?} vs indices {:?}",
                values.shape(),
                (indices.rows(), indices.cols())
            ),
        ));
    }
    Ok(())
}

/// Dense `[m, width]` matrix with `values[r, j]` at `(r, indices[r, j])`
/// and zeros elsewhere.
pub fn scatter_rows<T: Scalar>(values: &Matrix<T>, indices: &IndexMatrix, width: usize) -> Result<Matrix<T>> {
    check_pairing(values, indices, "scatter_rows")?;
    let mut out = Matrix::zeros(values.rows(), width);
    {
        let data = out.data_mut();
        for r in 0..values.rows() {
            let vals = values.row(r);
            let dst = &mut data[r * width..(r + 1) * width];
            for (j, &i) in indices.row(r).iter().enumerate() {
                let i = i as usize;
                if i >= width {
                    return Err(Error::InvalidIndex { index: i, width });
                }
                dst[i] = vals[j];
            }
        }
    }
    Ok(out)
}

/// `out[r, j] = x[r, indices[r, j]]`; padding slots read as zero.
pub fn gather_rows<T: Scalar>(x: &Matrix<T>, indices: &IndexMatrix) -> Result<Matrix<T>> {
    if x.rows() != indices.rows() {
        return Err(Error::shape(
            "gather_rows",
            format!("{} rows vs {} index rows", x.rows(), indices.rows()),
        ));
    }
    let width = x.cols();
    let mut out = Matrix::zeros(indices.rows(), indices.cols());
    for r in 0..x.rows() {
        let src = x.row(r);
        let row: Vec<T> = indices
            .row(r)
            .iter()
            .map(|&i| {
                let i = i as usize;
                if i >= width {
                    Err(Error::InvalidIndex { index: i, width })
                } else {
                    Ok(src[i])
                }
            })
            .collect::<Result<_>>()?;
        out.row_mut(r)[..row.len()].copy_from_slice(&row);
    }
    Ok(out)
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Only the selected entries of `a · bᵀ`: `out[r, j] = <a[r], b[indices[r, j]]>`.
/// Padding slots are zero. Costs `O(m · k · d)` instead of `O(m · n · d)`.
pub fn selected_dots<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, indices: &IndexMatrix) -> Result<Matrix<T>> {
    if a.cols != b.cols || a.rows != indices.rows() {
        return Err(Error::shape(
            "selected_dots",
            format!(
                "a {}x{}, b {}x{}, indices {} rows",
                a.rows,
                a.cols,
                b.rows,
                b.cols,
                indices.rows()
            ),
        ));
    }
    let mut out = Matrix::zeros(indices.rows(), indices.cols());
    for r in 0..a.rows {
        let ar = a.row(r);
        let idx = indices.row(r);
        let dst = out.row_mut(r);
        for (j, &i) in idx.iter().enumerate() {
            let i = i as usize;
            if i >= b.rows {
                return Err(Error::InvalidIndex { index: i, width: b.rows });
            }
            dst[j] = dot(ar, b.row(i));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_times_identity() {
        let i = Matrix::<f64>::identity(2);
        assert_eq!(matmul(&i, &i, false).unwrap(), i);
    }

    #[test]
    fn small_hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&a, &b, false).unwrap(), m(&[&[3.0], &[7.0]]));
    }

    #[test]
    fn transposed_flag_matches_materialized_transpose() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = m(&[&[1.0, 0.5, -1.0], &[2.0, -2.0, 0.0]]);
        let direct = matmul(&a, &b, true).unwrap();
        let via_copy = matmul(&a, &b.transpose(), false).unwrap();
        assert_eq!(direct, via_copy);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &b, false), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn softmax_symmetric_and_masked() {
        assert_eq!(row_softmax(&m(&[&[0.0, 0.0]])).unwrap(), m(&[&[0.5, 0.5]]));
        let masked = row_softmax(&m(&[&[f64::NEG_INFINITY, 0.0]])).unwrap();
        assert_eq!(masked, m(&[&[0.0, 1.0]]));
    }

    #[test]
    fn softmax_fully_masked_row_is_degenerate() {
        let x = m(&[&[0.0, 1.0], &[f64::NEG_INFINITY, f64::NEG_INFINITY]]);
        assert!(matches!(row_softmax(&x), Err(Error::DegenerateRow { row: 1 })));
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&m(&[&[-1.0, 2.0]])), m(&[&[0.0, 2.0]]));
        assert_eq!(relu(&m(&[&[-1.0, -3.0]])), m(&[&[0.0, 0.0]]));
    }

    #[test]
    fn topk_examples() {
        let (v, i) = row_topk(&m(&[&[1.0, 0.0, -1.0]]), 2).unwrap();
        assert_eq!(i.row(0), &[0, 1]);
        assert_eq!(v, m(&[&[1.0, 0.0]]));
        let (_, i) = row_topk(&m(&[&[5.0, 5.0, 5.0]]), 1).unwrap();
        assert_eq!(i.row(0), &[0]);
    }

    #[test]
    fn topk_values_follow_ascending_indices() {
        let (v, i) = row_topk(&m(&[&[0.1, 3.0, 2.0, 9.0]]), 3).unwrap();
        assert_eq!(i.row(0), &[1, 2, 3]);
        assert_eq!(v, m(&[&[3.0, 2.0, 9.0]]));
    }

    #[test]
    fn topk_skips_masked_entries_and_shrinks() {
        let ninf = f64::NEG_INFINITY;
        let (v, i) = row_topk(&m(&[&[ninf, 2.0, ninf, 1.0]]), 3).unwrap();
        assert_eq!(i.cols(), 3);
        assert_eq!(i.row(0), &[1, 3]);
        assert_eq!(v.row(0), &[2.0, 1.0, 0.0]);
        assert_eq!(i.slots()[2], PAD_INDEX);
        let all_masked = m(&[&[ninf, ninf]]);
        assert!(matches!(row_topk(&all_masked, 1), Err(Error::DegenerateRow { row: 0 })));
        assert!(row_topk(&m(&[&[1.0]]), 0).is_err());
    }

    #[test]
    fn scatter_and_gather_examples() {
        let v = m(&[&[7.0]]);
        let i = IndexMatrix::from_rows(&[vec![2]], 1).unwrap();
        assert_eq!(scatter_rows(&v, &i, 4).unwrap(), m(&[&[0.0, 0.0, 7.0, 0.0]]));
        assert!(matches!(scatter_rows(&v, &i, 2), Err(Error::InvalidIndex { index: 2, width: 2 })));

        let eye = Matrix::<f64>::identity(3);
        let diag = IndexMatrix::from_rows(&[vec![0], vec![1], vec![2]], 1).unwrap();
        assert_eq!(gather_rows(&eye, &diag).unwrap(), m(&[&[1.0], &[1.0], &[1.0]]));
    }

    #[test]
    fn selected_dots_reads_only_listed_keys() {
        let a = m(&[&[1.0, 2.0]]);
        let b = m(&[&[1.0, 0.0], &[0.0, 1.0], &[3.0, 3.0]]);
        let i = IndexMatrix::from_rows(&[vec![0, 2]], 2).unwrap();
        assert_eq!(selected_dots(a.view(), b.view(), &i).unwrap(), m(&[&[1.0, 9.0]]));
    }

    #[test]
    fn gemm_records_output_shape() {
        let probe = probe::MatmulProbe::start();
        let a = Matrix::<f32>::zeros(3, 4);
        let b = Matrix::<f32>::zeros(5, 4);
        matmul(&a, &b, true).unwrap();
        assert_eq!(probe.calls(), vec![probe::MatmulCall { rows: 3, cols: 5, inner: 4 }]);
    }
}
