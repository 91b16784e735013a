use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::memory::TrackedVec;
use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major matrix backed by a tracked buffer.
///
/// Cloning is cheap: clones share the buffer. Mutation goes through
/// [`Matrix::data_mut`], which copies first if the buffer is shared.
#[derive(Debug, Clone)]
pub struct Matrix<T: Scalar> {
    rows: usize,
    cols: usize,
    buf: Arc<TrackedVec<T>>,
}

/// Borrowed row-major block (a contiguous range of rows of some matrix).
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [T],
}

#[derive(Debug)]
pub struct MatMut<'a, T> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [T],
}

impl<'a, T: Scalar> MatRef<'a, T> {
    pub fn new(rows: usize, cols: usize, data: &'a [T]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "MatRef::new",
                format!("{} elements for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &'a [T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.rows, self.cols, self.data.to_vec()).expect("view shape is consistent")
    }
}

impl<'a, T: Scalar> MatMut<'a, T> {
    pub fn new(rows: usize, cols: usize, data: &'a mut [T]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "MatMut::new",
                format!("{} elements for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            buf: Arc::new(TrackedVec::filled(value, (rows, cols))),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self {
            rows,
            cols,
            buf: Arc::new(TrackedVec::from_vec(data, (rows, cols))),
        })
    }

    /// Builds a matrix from equally long rows of `f64` literals.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend(r.iter().map(|&x| T::from_f64_lossy(x)));
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        let d = m.data_mut();
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::from_vec(rows, cols, data).expect("shape is consistent")
    }

    /// Entries drawn i.i.d. from N(0, std²).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * std)
        })
    }

    /// Entries drawn i.i.d. from U(lo, hi).
    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| T::from_f64_lossy(rng.random_range(lo..hi)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.buf.byte_len()
    }

    pub fn as_slice(&self) -> &[T] {
        self.buf.as_slice()
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.buf).as_mut_slice()
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.as_slice()[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let cols = self.cols;
        &mut self.data_mut()[r * cols..(r + 1) * cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.as_slice()[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        let cols = self.cols;
        self.data_mut()[r * cols + c] = value;
    }

    pub fn view(&self) -> MatRef<'_, T> {
        MatRef {
            rows: self.rows,
            cols: self.cols,
            data: self.as_slice(),
        }
    }

    pub fn rows_view(&self, range: Range<usize>) -> MatRef<'_, T> {
        MatRef {
            rows: range.len(),
            cols: self.cols,
            data: &self.as_slice()[range.start * self.cols..range.end * self.cols],
        }
    }

    pub fn view_mut(&mut self) -> MatMut<'_, T> {
        let (rows, cols) = self.shape();
        MatMut {
            rows,
            cols,
            data: self.data_mut(),
        }
    }

    pub fn rows_view_mut(&mut self, range: Range<usize>) -> MatMut<'_, T> {
        let cols = self.cols;
        MatMut {
            rows: range.len(),
            cols,
            data: &mut self.data_mut()[range.start * cols..range.end * cols],
        }
    }

    /// Copy of a row range as a new matrix.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        self.rows_view(range).to_matrix()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_vec(self.rows, self.cols, self.as_slice().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        let data = self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data_mut().iter_mut().zip(other.as_slice()) {
            *a = *a + b;
        }
        Ok(())
    }

    /// In-place `self *= s`.
    pub fn scale_assign(&mut self, s: T) {
        for a in self.data_mut() {
            *a = *a * s;
        }
    }

    /// Materialized transpose. The kernels never need this; it exists for
    /// small parameter matrices and tests.
    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn sum(&self) -> T {
        self.as_slice().iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.as_slice().iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
        )
        .expect("same shape")
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.as_slice().iter().map(|x| x.to_f64_lossy()).collect()
    }

    /// Largest elementwise `|a - b|`, `inf` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| {
                let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
                if a == b {
                    0.0
                } else {
                    (a - b).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice()
            .iter()
            .map(|x| x.to_f64_lossy().abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and contents.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape() == other.shape()
            && T::to_le_bytes_vec(self.as_slice()) == T::to_le_bytes_vec(other.as_slice())
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> PartialEq for Matrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.as_slice() == other.as_slice()
    }
}
