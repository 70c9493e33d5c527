//! Small dense/banded linear algebra helpers used by the solvers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric positive definite band matrix in lower-band storage, with an
/// in-place Cholesky factorization. Solves cost `O(n * bandwidth)` per
/// right-hand side, which keeps the tensor solver's operator application
/// at `O(n^2)` per iteration.
#[derive(Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // entry (i, j) with j <= i <= j + bw stored at data[j * (bw + 1) + (i - j)]
    data: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the SPD matrix `a` assuming all entries outside the band
    /// `|i - j| <= bw` vanish.
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("banded Cholesky of non-square".into()));
        }
        let mut data = vec![0.0; n * (bw + 1)];
        for j in 0..n {
            for i in j..(j + bw + 1).min(n) {
                data[j * (bw + 1) + (i - j)] = a[(i, j)];
            }
        }
        let mut f = BandedCholesky { n, bw, data };
        f.factor()?;
        Ok(f)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * (self.bw + 1) + (i - j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * (self.bw + 1) + (i - j)] = v;
    }

    fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let mut d = self.at(j, j);
            let kmin = j.saturating_sub(bw);
            for k in kmin..j {
                let l = self.at(j, k);
                d -= l * l;
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "banded Cholesky pivot {d:.3e} at column {j}"
                )));
            }
            let d = d.sqrt();
            self.set(j, j, d);
            for i in (j + 1)..(j + bw + 1).min(n) {
                let mut s = self.at(i, j);
                let kmin = i.saturating_sub(bw).max(kmin);
                for k in kmin..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                self.set(i, j, s / d);
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        debug_assert_eq!(x.len(), n);
        // L y = b
        for j in 0..n {
            let y = x[j] / self.at(j, j);
            x[j] = y;
            for i in (j + 1)..(j + bw + 1).min(n) {
                x[i] -= self.at(i, j) * y;
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            let mut s = x[j];
            for i in (j + 1)..(j + bw + 1).min(n) {
                s -= self.at(i, j) * x[i];
            }
            x[j] = s / self.at(j, j);
        }
    }

    /// Number of multiply-adds of one `solve_in_place` call.
    pub fn solve_ops(&self) -> u64 {
        2 * (self.n as u64) * (self.bw as u64 + 1)
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Sparse matrix in row-major list-of-lists form; the bilinear-form matrix
/// `b(e_n, v_i)` has a fixed small number of entries per row.
#[derive(Clone, Debug)]
pub struct SparseRows {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseRows { nrows, ncols, rows: vec![Vec::new(); nrows] }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows[i].push((j, v));
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, row) in self.rows.iter().enumerate() {
            let mut s = 0.0;
            for &(j, v) in row {
                s += v * x[j];
            }
            y[i] = s;
        }
    }

    /// `y = A^T x`.
    pub fn mul_t_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let xi = x[i];
            for &(j, v) in row {
                y[j] += v * xi;
            }
        }
    }
}

/// Singular values of `G^{1/2} W G^{1/2}` computed as those of `L^T W L`
/// where `G = L L^T`; used for the Gram-weighted nuclear/operator norms of
/// coefficient matrices.
pub fn gram_weighted_singular_values(w: &DMatrix<f64>, chol_l: &DMatrix<f64>) -> Vec<f64> {
    let m = chol_l.transpose() * w * chol_l;
    let sv = m.singular_values();
    sv.iter().copied().collect()
}

/// Smallest eigenvalue of the symmetric part of `G^{1/2} W G^{1/2}`.
pub fn gram_weighted_min_eig(w: &DMatrix<f64>, chol_l: &DMatrix<f64>) -> f64 {
    let m = chol_l.transpose() * w * chol_l;
    let s = 0.5 * (&m + m.transpose());
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}
