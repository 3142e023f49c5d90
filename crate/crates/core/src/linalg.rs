//! Small dense complex matrices.
//!
//! The simulator only needs a handful of operations on matrices no larger
//! than a few hundred columns: products, adjoints, block access and a
//! Cholesky factorization of Hermitian positive definite matrices (used for
//! the ZF solve and for `log2 det`).

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Result, SimError};
use crate::scalar::Real;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Self { rows, cols, data }
    }

    /// Outer product `x · y†`.
    pub fn outer(x: &[Complex<T>], y: &[Complex<T>]) -> Self {
        Self::from_fn(x.len(), y.len(), |r, c| x[r] * y[c].conj())
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

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        self.scale(Complex::new(s, T::zero()))
    }

    pub fn add_assign_scaled(&mut self, other: &Self, s: Complex<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b * s;
        }
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.rows.min(self.cols)).fold(Complex::zero(), |acc, i| acc + self[(i, i)])
    }

    /// `trace(self · other†)`, i.e. the Frobenius inner product `Σ a_ij conj(b_ij)`.
    pub fn inner(&self, other: &Self) -> Complex<T> {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(Complex::zero(), |acc, (&a, &b)| acc + a * b.conj())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Copies the `rows × cols` block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self::from_fn(rows, cols, |r, c| self[(r0 + r, c0 + c)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Self) {
        assert!(
            r0 + block.rows <= self.rows && c0 + block.cols <= self.cols,
            "block out of range"
        );
        for r in 0..block.rows {
            let dst = (r0 + r) * self.cols + c0;
            self.data[dst..dst + block.cols].copy_from_slice(block.row(r));
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    /// `self · other†` without materializing the adjoint.
    pub fn matmul_adjoint(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "inner dimension mismatch");
        Self::from_fn(self.rows, other.rows, |r, c| {
            self.row(r)
                .iter()
                .zip(other.row(c))
                .fold(Complex::zero(), |acc, (&a, &b)| acc + a * b.conj())
        })
    }

    /// Hermitian part `(A + A†)/2`; used to scrub round-off asymmetry.
    pub fn hermitian_part(&self) -> Self {
        assert_eq!(self.rows, self.cols, "square matrix required");
        let half = T::of(0.5);
        Self::from_fn(self.rows, self.cols, |r, c| {
            (self[(r, c)] + self[(c, r)].conj()).scale(half)
        })
    }

    /// Cholesky factor `L` (lower triangular) with `A = L L†`.
    ///
    /// Only the lower triangle of `self` is read. Fails when a pivot is not
    /// safely positive, i.e. the matrix is not (numerically) positive definite.
    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        assert_eq!(self.rows, self.cols, "square matrix required");
        let n = self.rows;
        let max_diag = (0..n)
            .map(|i| self[(i, i)].re.abs())
            .fold(T::zero(), T::max);
        let floor = T::epsilon() * max_diag * T::of_usize(n.max(1));
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d = d - l[(j, k)].norm_sqr();
            }
            if !(d > floor) {
                return Err(SimError::Numeric {
                    what: format!("non-positive pivot {} at column {j}", d.to_f64_lossy()),
                    condition: f64::INFINITY,
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex::new(djj, T::zero());
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }
}

/// Cholesky factorization of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: CMatrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(&self) -> &CMatrix<T> {
        &self.l
    }

    /// `log2 det(A) = 2 Σ log2 L_ii`.
    pub fn log2_det(&self) -> T {
        let two = T::of(2.0);
        (0..self.l.rows).map(|i| two * self.l[(i, i)].re.log2()).sum()
    }

    /// Squared ratio of the extreme diagonal entries of `L`; a cheap lower
    /// bound on the condition number of `A`.
    pub fn condition_estimate(&self) -> T {
        let diag = (0..self.l.rows).map(|i| self.l[(i, i)].re);
        let (lo, hi) = diag.fold((T::infinity(), T::zero()), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let r = hi / lo;
        r * r
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &CMatrix<T>) -> CMatrix<T> {
        let n = self.l.rows;
        assert_eq!(b.rows, n, "right-hand side row mismatch");
        let mut x = b.clone();
        for c in 0..b.cols {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s = s - self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            // backward: L† x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s = s - self.l[(k, i)].conj() * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

/// `log2 det` of a Hermitian positive definite matrix.
pub fn log2_det_hpd<T: Real>(a: &CMatrix<T>) -> Result<T> {
    let chol = a.cholesky()?;
    let v = chol.log2_det();
    if !v.is_finite() {
        return Err(SimError::Numeric {
            what: "non-finite log-determinant".into(),
            condition: chol.condition_estimate().to_f64_lossy(),
        });
    }
    Ok(v)
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Real> Add for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn add(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn sub(self, rhs: Self) -> CMatrix<T> {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Real> Mul for &CMatrix<T> {
    type Output = CMatrix<T>;

    fn mul(self, rhs: Self) -> CMatrix<T> {
        self.matmul(rhs)
    }
}
