//! Small dense row-major matrices for the template selector.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Result, Tm3Error};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Tm3Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Matrix whose columns are the given equal-length vectors.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let rows = columns.first().map(Vec::len).ok_or(Tm3Error::Empty("column list"))?;
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Tm3Error::DimensionMismatch {
                expected: rows,
                got: bad.len(),
            });
        }
        Ok(Self::from_fn(rows, columns.len(), |i, j| columns[j][i]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = rhs.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.cols);
        for k in 0..self.rows {
            let r = self.row(k);
            for i in 0..self.cols {
                let a = r[i];
                for j in i..self.cols {
                    out[(i, j)] = out[(i, j)] + a * r[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product `⟨self, rhs⟩`.
    pub fn dot(&self, rhs: &Self) -> T {
        self.data.iter().zip(&rhs.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn frobenius_sq(&self) -> T {
        self.dot(self)
    }

    pub fn row_norm(&self, i: usize) -> T {
        self.row(i).iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn row_norms(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row_norm(i)).collect()
    }

    /// `‖self‖₁,₂`: sum of row ℓ2 norms.
    pub fn l12_norm(&self) -> T {
        self.row_norms().into_iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// Largest-magnitude eigenvalue of a symmetric matrix by power iteration.
    pub fn spectral_radius_sym(&self, rel_tol: T, max_iters: usize) -> T {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 0 {
            return T::zero();
        }
        // non-uniform start so it is unlikely to be orthogonal to the top eigenvector
        let mut v: Vec<T> = (0..n)
            .map(|i| T::one() + T::from_usize_lossy(i + 1) / T::from_usize_lossy(3 * n + 7))
            .collect();
        let v_norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        v.iter_mut().for_each(|x| *x = *x / v_norm);
        let mut lambda = T::zero();
        for _ in 0..max_iters {
            let w = self.mul_vec(&v);
            // Rayleigh quotient of the unit iterate
            let next = v.iter().zip(&w).map(|(&a, &b)| a * b).sum::<T>().abs();
            let norm = w.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm == T::zero() {
                return T::zero();
            }
            v = w.into_iter().map(|x| x / norm).collect();
            if (next - lambda).abs() <= rel_tol * next {
                return next;
            }
            lambda = next;
        }
        lambda
    }

    /// Solves `self · x = b` for symmetric positive definite `self` (Cholesky).
    pub fn solve_spd(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.rows;
        if self.cols != n || b.len() != n {
            return Err(Tm3Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return Err(Tm3Error::InvalidParameter("matrix is not positive definite".into()));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        Ok(x)
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

impl<T: Scalar> Add for &Matrix<T> {
    type Output = Matrix<T>;

    fn add(self, rhs: Self) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Scalar> Sub for &Matrix<T> {
    type Output = Matrix<T>;

    fn sub(self, rhs: Self) -> Matrix<T> {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Scalar> Mul for &Matrix<T> {
    type Output = Matrix<T>;

    fn mul(self, rhs: Self) -> Matrix<T> {
        self.matmul(rhs)
    }
}
