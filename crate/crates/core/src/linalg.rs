//! Small dense linear-algebra kernels: a row-major square matrix and a
//! packed lower-triangular Cholesky factor that can grow one row at a time.

use crate::error::{Error, Result};

/// Diagonal jitter added once when a factorization meets a non-positive pivot.
pub const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Lower-triangular factor stored row by row; row `i` holds `i + 1` entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LowerTri {
    rows: Vec<Vec<f64>>,
}

impl LowerTri {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.rows[i][j]
        } else {
            0.0
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.rows[i][i]
    }

    /// Dense factorization of a symmetric positive-definite matrix.
    /// On a non-positive pivot the whole matrix is retried once with
    /// [`CHOLESKY_JITTER`] added to the diagonal.
    pub fn factor(a: &Matrix) -> Result<Self> {
        match Self::factor_plain(a) {
            Ok(l) => Ok(l),
            Err(_) => {
                let mut jittered = a.clone();
                jittered.add_diagonal(CHOLESKY_JITTER);
                Self::factor_plain(&jittered)
            }
        }
    }

    fn factor_plain(a: &Matrix) -> Result<Self> {
        let n = a.dim();
        let mut l = Self { rows: Vec::with_capacity(n) };
        for i in 0..n {
            let b: Vec<f64> = a.row(i)[..i].to_vec();
            let row = l.forward_solve(&b);
            let d2 = a.get(i, i) - dot(&row, &row);
            if !(d2 > 0.0) || !d2.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-positive pivot {d2:e} at row {i} of Cholesky factorization"
                )));
            }
            l.push_row(row, d2.sqrt());
        }
        Ok(l)
    }

    /// Appends a row `[off_diag..., diag]`.
    pub fn push_row(&mut self, mut off_diag: Vec<f64>, diag: f64) {
        debug_assert_eq!(off_diag.len(), self.rows.len());
        off_diag.push(diag);
        self.rows.push(off_diag);
    }

    /// Solves `L x = b`.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.dim());
        let mut x = Vec::with_capacity(b.len());
        for (i, row) in self.rows.iter().enumerate() {
            let s = b[i] - dot(&row[..i], &x);
            x.push(s / row[i]);
        }
        x
    }

    /// Solves `Lᵀ x = b`.
    pub fn backward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let row = &self.rows[i];
            x[i] /= row[i];
            let xi = x[i];
            for (xj, lij) in x[..i].iter_mut().zip(&row[..i]) {
                *xj -= lij * xi;
            }
        }
        x
    }

    /// `L Lᵀ` as a dense matrix.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, |i, j| {
            let m = i.min(j);
            (0..=m).map(|k| self.get(i, k) * self.get(j, k)).sum()
        })
    }

    /// `L u` for a vector `u`.
    pub fn mul_vec(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| dot(row, &u[..row.len()])).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
