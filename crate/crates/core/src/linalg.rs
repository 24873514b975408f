//! Small dense linear algebra on row-major matrices.
//!
//! State dimensions in this crate are small (rarely above a few dozen), so a
//! plain `Vec`-backed matrix with textbook factorizations is sufficient.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row slices given as `f64` literals.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().map(|&x| T::lit(x)));
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn scalar(x: T) -> Self {
        Matrix::from_vec(1, 1, vec![x])
    }

    pub fn column(v: &[T]) -> Self {
        Matrix::from_vec(v.len(), 1, v.to_vec())
    }

    pub fn row_vector(v: &[T]) -> Self {
        Matrix::from_vec(1, v.len(), v.to_vec())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let x = self[(i, l)];
                if x == T::zero() {
                    continue;
                }
                let orow = other.row(l);
                let dst = out.row_mut(i);
                for (d, &o) in dst.iter_mut().zip(orow) {
                    *d += x * o;
                }
            }
        }
        out
    }

    /// `self * other^T`
    pub fn matmul_t(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t dimension mismatch");
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out[(i, j)] = dot(self.row(i), other.row(j));
            }
        }
        out
    }

    /// `self^T * other`
    pub fn t_matmul(&self, other: &Matrix<T>) -> Self {
        self.transpose().matmul(other)
    }

    /// `A X A^T` for symmetric `X`.
    pub fn sandwich(&self, x: &Matrix<T>) -> Self {
        self.matmul(x).matmul_t(self)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`
    pub fn t_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "t_mul_vec dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "add dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub dimension mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&a| a * s).collect())
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "add dimension mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += s * x y^T`
    pub fn rank1_update(&mut self, s: T, x: &[T], y: &[T]) {
        assert_eq!(self.rows, x.len());
        assert_eq!(self.cols, y.len());
        for (i, &xi) in x.iter().enumerate() {
            let f = s * xi;
            if f == T::zero() {
                continue;
            }
            for (a, &yj) in self.row_mut(i).iter_mut().zip(y) {
                *a += f * yj;
            }
        }
    }

    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let s = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = s;
                self[(j, i)] = s;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn trace(&self) -> T {
        self.diag().into_iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = T::one().max(self.max_abs());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_diagonal(&self) -> bool {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if i != j && self[(i, j)] != T::zero() {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == T::zero())
    }

    /// Rows and columns restricted to the given index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix<T>) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }

    pub fn block_diag(blocks: &[Matrix<T>]) -> Self {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for b in blocks {
            out.set_block(r, c, b);
            r += b.rows;
            c += b.cols;
        }
        out
    }

    pub fn kron(&self, other: &Matrix<T>) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Column-stacking vectorization.
    pub fn vec_cols(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn from_vec_cols(rows: usize, cols: usize, v: &[T]) -> Self {
        assert_eq!(v.len(), rows * cols);
        let mut out = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                out[(i, j)] = v[j * rows + i];
            }
        }
        out
    }

    /// Cholesky factor of a symmetric positive semidefinite matrix.
    ///
    /// Pivots below `tol * max(diag)` are treated as exact zeros, leaving the
    /// corresponding column of the factor empty. Fails on a clearly negative
    /// pivot.
    pub fn cholesky_psd(&self, tol: T) -> Result<Matrix<T>> {
        assert!(self.is_square());
        let n = self.rows;
        let scale = self.diag().into_iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let thresh = tol * scale;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut s = self[(j, j)];
            for k in 0..j {
                s -= l[(j, k)] * l[(j, k)];
            }
            if s < -thresh {
                return Err(Error::numeric(format!(
                    "matrix is not positive semidefinite (pivot {} at {})",
                    s,
                    j + 1
                )));
            }
            if s <= thresh {
                continue;
            }
            let d = s.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(l)
    }

    /// Strict Cholesky factorization; `None` unless positive definite.
    pub fn cholesky(&self) -> Option<Matrix<T>> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut s = self[(j, j)];
            for k in 0..j {
                s -= l[(j, k)] * l[(j, k)];
            }
            if !(s > T::zero()) {
                return None;
            }
            let d = s.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<Lu<T>> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = T::one().max(self.max_abs());
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pval > T::epsilon() * scale * T::lit(n as f64)) {
                return Err(Error::numeric("singular matrix in LU factorization"));
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = a[(k, k)];
            for i in (k + 1)..n {
                let f = a[(i, k)] / d;
                a[(i, k)] = f;
                if f != T::zero() {
                    for j in (k + 1)..n {
                        let akj = a[(k, j)];
                        a[(i, j)] -= f * akj;
                    }
                }
            }
        }
        Ok(Lu { lu: a, perm, sign })
    }

    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        self.lu()?.solve(b)
    }

    pub fn solve_vec(&self, b: &[T]) -> Result<Vec<T>> {
        Ok(self.lu()?.solve_vec(b))
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        self.lu()?.solve(&Matrix::identity(self.rows))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    sign: T,
}

impl<T: Real> Lu<T> {
    pub fn solve_vec(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                x[i] = x[i] - l * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[(i, k)];
                x[i] = x[i] - u * x[k];
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.lu.rows;
        if b.rows != n {
            return Err(Error::Usage("right-hand side dimension mismatch".into()));
        }
        let mut out = Matrix::zeros(n, b.cols);
        for j in 0..b.cols {
            let x = self.solve_vec(&b.col(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }

    pub fn det(&self) -> T {
        self.lu.diag().into_iter().fold(self.sign, |acc, d| acc * d)
    }
}

/// Result of a unit-lower-triangular LDL^T factorization.
#[derive(Debug, Clone)]
pub struct Ldl<T> {
    pub l: Matrix<T>,
    pub d: Vec<T>,
}

impl<T: Real> Ldl<T> {
    /// Factorizes symmetric positive semidefinite `h` as `L D L^T`.
    ///
    /// Pivots below `1e-12 * max(diag h)` are clamped to exactly zero and the
    /// corresponding column of `L` below the diagonal is zeroed.
    pub fn factor(h: &Matrix<T>) -> Result<Ldl<T>> {
        assert!(h.is_square());
        let n = h.rows();
        let maxdiag = h.diag().into_iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let clamp = T::lit(1e-12) * maxdiag;
        let neg_tol = T::lit(1e-8) * T::one().max(maxdiag);
        let mut l = Matrix::identity(n);
        let mut d = vec![T::zero(); n];
        for j in 0..n {
            let mut s = h[(j, j)];
            for k in 0..j {
                s -= l[(j, k)] * l[(j, k)] * d[k];
            }
            if s < -neg_tol {
                return Err(Error::numeric(format!(
                    "negative pivot {} in LDL factorization at row {}",
                    s,
                    j + 1
                )));
            }
            if s <= clamp {
                d[j] = T::zero();
                continue;
            }
            d[j] = s;
            for i in (j + 1)..n {
                let mut s = h[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)] * d[k];
                }
                l[(i, j)] = s / d[j];
            }
        }
        Ok(Ldl { l, d })
    }

    /// Solves `L x = b` by forward substitution.
    pub fn forward(&self, b: &[T]) -> Vec<T> {
        let n = self.d.len();
        let mut x = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                x[i] = x[i] - lik * x[k];
            }
        }
        x
    }

    /// Applies `L^{-1}` to every column of `b`.
    pub fn forward_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut out = b.clone();
        for j in 0..b.cols() {
            let x = self.forward(&b.col(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let d = Matrix::from_diag(&self.d);
        self.l.matmul(&d).matmul_t(&self.l)
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// `y += s * x`
#[inline]
pub fn axpy<T: Real>(s: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}
