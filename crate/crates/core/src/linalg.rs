//! Small dense linear algebra for the m×m and n×m matrices used throughout.
//!
//! Everything is row-major `f64`. Matrices here are tiny (m is in the tens to
//! low hundreds) so a straightforward implementation with cache-friendly loop
//! orders is enough.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_dim("Matrix::from_vec", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            ensure_dim("Matrix::from_rows", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        ensure_dim("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Result<Matrix> {
        ensure_dim("Matrix::tr_matmul", self.rows, other.rows)?;
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("Matrix::matvec", self.cols, v.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("Matrix::tr_matvec", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            axpy(vi, self.row(i), &mut out);
        }
        Ok(out)
    }

    /// Quadratic form `xᵀ · self · x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert!(self.is_square() && x.len() == self.rows);
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            acc += xi * dot(self.row(i), x);
        }
        acc
    }

    fn check_same_shape(&self, other: &Matrix, context: &'static str) -> Result<()> {
        ensure_dim(context, self.rows, other.rows)?;
        ensure_dim(context, self.cols, other.cols)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "Matrix::add_scaled")?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        let mut out = self.clone();
        out.scale_mut(alpha);
        out
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when `|a_ij − a_ji| ≤ rel_tol · max(1, max|a|)` for all pairs.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(1.0);
        for i in 0..self.rows {
            for j in 0..i {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Inner product over the common prefix, accumulated in four lanes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

pub fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// Lower-triangular Cholesky factor `A = L·Lᵀ` of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorizes `a`; only the lower triangle is read.
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "Cholesky::new",
                expected: a.rows(),
                found: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    l[(i, i)] = libm::sqrt(s);
                } else {
                    l[(i, j)] = s / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L·x = b` in place.
    pub fn forward_solve_mut(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `Lᵀ·x = b` in place.
    pub fn backward_solve_mut(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let bi = b[i] / self.l[(i, i)];
            b[i] = bi;
            let row = self.l.row(i);
            for k in 0..i {
                b[k] -= row[k] * bi;
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("Cholesky::solve_vec", self.dim(), b.len())?;
        let mut x = b.to_vec();
        self.forward_solve_mut(&mut x);
        self.backward_solve_mut(&mut x);
        Ok(x)
    }

    /// Solves `A·X = B` column by column.
    pub fn solve_mat(&self, b: &Matrix) -> Result<Matrix> {
        ensure_dim("Cholesky::solve_mat", self.dim(), b.rows())?;
        let bt = b.transpose();
        let mut xt = Matrix::zeros(b.cols(), b.rows());
        for j in 0..b.cols() {
            let col = xt.row_mut(j);
            col.copy_from_slice(bt.row(j));
            self.forward_solve_mut(col);
            self.backward_solve_mut(col);
        }
        Ok(xt.transpose())
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::identity(n);
        for j in 0..n {
            let col = inv.row_mut(j);
            self.forward_solve_mut(col);
            self.backward_solve_mut(col);
        }
        // rows of `inv` hold columns of A⁻¹; A⁻¹ is symmetric
        inv.symmetrize();
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| libm::log(self.l[(i, i)]))
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd3() -> Matrix {
        Matrix::from_rows(&[[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]]).unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let l = c.lower();
        let llt = l.matmul(&l.transpose()).unwrap();
        assert!(llt.sub(&a).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn inverse_and_solve_agree() {
        let a = spd3();
        let c = Cholesky::new(&a).unwrap();
        let inv = c.inverse();
        let eye = a.matmul(&inv).unwrap();
        assert!(eye.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-14);
        let b = [1.0, -2.0, 0.5];
        let x = c.solve_vec(&b).unwrap();
        let x2 = inv.matvec(&b).unwrap();
        for (u, v) in x.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-14);
        }
        let bm = Matrix::from_rows(&[[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]]).unwrap();
        let xm = c.solve_mat(&bm).unwrap();
        assert!(a.matmul(&xm).unwrap().sub(&bm).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn log_det_matches_direct() {
        let a = Matrix::diagonal(&[2.0, 3.0, 0.5]);
        let c = Cholesky::new(&a).unwrap();
        assert!((c.log_det() - libm::log(3.0)).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert_eq!(Cholesky::new(&a), Err(Error::NotPositiveDefinite { pivot: 1 }));
    }

    #[test]
    fn tr_products_match_explicit_transpose() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [0.5], [-1.0]]).unwrap();
        assert_eq!(a.tr_matmul(&b).unwrap(), a.transpose().matmul(&b).unwrap());
        assert_eq!(
            a.tr_matvec(&[1.0, 0.5, -1.0]).unwrap(),
            a.transpose().matvec(&[1.0, 0.5, -1.0]).unwrap()
        );
    }
}
