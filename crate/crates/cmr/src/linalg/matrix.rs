use rayon::prelude::*;

use crate::{CmrError, Result, Scalar};

/// Work threshold (in multiply-adds) above which matmul rows are parallelized.
const PAR_FLOP_THRESHOLD: usize = 1 << 18;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Square matrix with `diag` on the diagonal.
    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CmrError::InvalidMatrix(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(CmrError::InvalidMatrix(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CmrError::InvalidMatrix(format!(
                "non-finite entry at flat index {pos}"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from row-major data without validation (internal results).
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    /// Builds entry-wise from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, &v) in row.iter().enumerate() {
                out.data[j * self.rows + i] = v;
            }
        }
        out
    }

    /// Matrix product `self * other`.
    ///
    /// Row-major saxpy ordering: the inner loop runs over contiguous rows of
    /// both the output and `other`, so it vectorizes without reassociating
    /// float sums (results are bit-stable regardless of SIMD width).
    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        let work = m * k * n;
        if work >= PAR_FLOP_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, crow)| Self::matmul_row(self.row(i), other, crow));
        } else {
            for (i, crow) in out.data.chunks_mut(n).enumerate() {
                Self::matmul_row(self.row(i), other, crow);
            }
        }
        out
    }

    #[inline]
    fn matmul_row(arow: &[T], b: &Matrix<T>, crow: &mut [T]) {
        let n = b.cols;
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                *c += aik * bv;
            }
        }
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_transpose_self(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(
            self.rows, other.rows,
            "matmul_transpose_self shape mismatch: {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = Self::zeros(m, n);
        // Accumulate rank-one contributions row by row; contiguous on both sides.
        for kk in 0..k {
            let arow = self.row(kk);
            let brow = &other.data[kk * n..(kk + 1) * n];
            for (i, &aki) in arow.iter().enumerate() {
                if aki == T::zero() {
                    continue;
                }
                let crow = &mut out.data[i * n..(i + 1) * n];
                for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *c += aki * bv;
                }
            }
        }
        let _ = m;
        out
    }

    pub fn add(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Matrix::from_vec_unchecked(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Matrix::from_vec_unchecked(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: T) -> Matrix<T> {
        let data = self.data.iter().map(|&a| a * s).collect();
        Matrix::from_vec_unchecked(self.rows, self.cols, data)
    }

    pub fn scale_in_place(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`, entry-wise.
    pub fn add_scaled_in_place(&mut self, s: T, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Frobenius norm, accumulated in row-major order.
    pub fn frobenius_norm(&self) -> T {
        self.sum_squares().sqrt()
    }

    pub fn sum_squares(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        acc
    }

    /// Replaces `self` with `(self + self^T) / 2`. Exact symmetry afterwards.
    pub fn symmetrize_in_place(&mut self) {
        assert_eq!(self.rows, self.cols, "symmetrize requires a square matrix");
        let n = self.rows;
        let half = T::from_f64_lossy(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (self.data[i * n + j] + self.data[j * n + i]) * half;
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    /// Maximum absolute asymmetry `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> T {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut worst = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i]).abs());
            }
        }
        worst
    }

    /// Outer product `a * b^T`.
    pub fn outer(a: &[T], b: &[T]) -> Matrix<T> {
        let mut out = Self::zeros(a.len(), b.len());
        for (i, &ai) in a.iter().enumerate() {
            let row = out.row_mut(i);
            for (r, &bj) in row.iter_mut().zip(b.iter()) {
                *r = ai * bj;
            }
        }
        out
    }

    /// Scales column `j` by `s[j]`.
    pub fn scale_columns(&self, s: &[T]) -> Matrix<T> {
        assert_eq!(self.cols, s.len(), "scale_columns length mismatch");
        let mut out = self.clone();
        for i in 0..out.rows {
            let row = out.row_mut(i);
            for (v, &sj) in row.iter_mut().zip(s.iter()) {
                *v *= sj;
            }
        }
        out
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Euclidean norm of a slice, fixed accumulation order.
pub fn vec_norm<T: Scalar>(v: &[T]) -> T {
    vec_dot(v, v).sqrt()
}

/// Dot product of two slices.
///
/// Four independent accumulator lanes: the explicit reassociation lets the
/// compiler vectorize while keeping one fixed, platform-independent
/// summation order.
pub fn vec_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let ai = &a[4 * i..4 * i + 4];
        let bi = &b[4 * i..4 * i + 4];
        acc[0] += ai[0] * bi[0];
        acc[1] += ai[1] * bi[1];
        acc[2] += ai[2] * bi[2];
        acc[3] += ai[3] * bi[3];
    }
    let mut tail = T::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
