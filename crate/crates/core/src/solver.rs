//! Solvers for the discrete tensorized second-moment problems
//! `B^k(U, v_i (x) v_j) = l_ij` with `B^k = B - rho^2 Delta^k`.
//!
//! Three routes are provided and cross-checked against each other:
//! matrix-free preconditioned conjugate gradients on the symmetrized
//! normal equations, a dense Kronecker assembly with LU (small problems,
//! oracle route), and the diagonal recursion that first determines the
//! diagonal coefficients and then back-substitutes.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::basis::{NodeFamily, Normalization, PGBasis};
use crate::error::{Error, Result};
use crate::linalg::SparseRows;
use crate::mesh::TemporalMesh;
use crate::quad;
use crate::trace::{self, RhsFunctional, TraceKind, TraceOp};

/// The six discretizations exercised by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    /// Adjoint Crank-Nicolson, exact trace product.
    Cn2,
    /// Gauss-Legendre family of degree 2, exact trace product.
    Cn2P2,
    /// Adjoint implicit Euler, exact trace product.
    Ie2,
    /// Gauss-Radau family of degree 2, exact trace product.
    Ie2P2,
    /// Adjoint implicit Euler with `q_k`-preprocessed trace product.
    Ie2Q,
    /// Adjoint implicit Euler with box-rule trace product.
    Ie2Box,
}

impl SchemeKind {
    pub fn all() -> [SchemeKind; 6] {
        [
            SchemeKind::Cn2,
            SchemeKind::Cn2P2,
            SchemeKind::Ie2,
            SchemeKind::Ie2P2,
            SchemeKind::Ie2Q,
            SchemeKind::Ie2Box,
        ]
    }

    /// The four lowest-order schemes of the stability table.
    pub fn first_order() -> [SchemeKind; 4] {
        [SchemeKind::Cn2, SchemeKind::Ie2, SchemeKind::Ie2Q, SchemeKind::Ie2Box]
    }

    pub fn family(self) -> NodeFamily {
        match self {
            SchemeKind::Cn2 => NodeFamily::gauss_legendre(1),
            SchemeKind::Cn2P2 => NodeFamily::gauss_legendre(2),
            SchemeKind::Ie2 | SchemeKind::Ie2Q | SchemeKind::Ie2Box => NodeFamily::gauss_radau(1),
            SchemeKind::Ie2P2 => NodeFamily::gauss_radau(2),
        }
    }

    pub fn trace_kind(self) -> TraceKind {
        match self {
            SchemeKind::Ie2Q => TraceKind::QPreprocessed,
            SchemeKind::Ie2Box => TraceKind::BoxRule,
            _ => TraceKind::Exact,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::Cn2 => "cn2",
            SchemeKind::Cn2P2 => "cn2_p2",
            SchemeKind::Ie2 => "ie2",
            SchemeKind::Ie2P2 => "ie2_p2",
            SchemeKind::Ie2Q => "ie2_q",
            SchemeKind::Ie2Box => "ie2_box",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cn2" => Ok(SchemeKind::Cn2),
            "cn2_p2" => Ok(SchemeKind::Cn2P2),
            "ie2" => Ok(SchemeKind::Ie2),
            "ie2_p2" => Ok(SchemeKind::Ie2P2),
            "ie2_q" => Ok(SchemeKind::Ie2Q),
            "ie2_box" => Ok(SchemeKind::Ie2Box),
            _ => Err(Error::invalid(format!("unknown scheme '{s}'"))),
        }
    }
}

/// A second-moment problem instance before assembly.
#[derive(Clone, Debug)]
pub struct TensorProblem {
    pub scheme: SchemeKind,
    pub lambda: f64,
    pub rho2: f64,
    pub mesh: TemporalMesh,
    pub rhs: RhsFunctional,
    pub normalization: Normalization,
}

impl TensorProblem {
    pub fn assemble(&self) -> Result<AssembledProblem> {
        if self.rho2 < 0.0 {
            return Err(Error::invalid("rho^2 must be nonnegative"));
        }
        let basis = PGBasis::build(
            &self.mesh,
            self.scheme.family(),
            self.lambda,
            self.normalization,
        )?;
        let trace = TraceOp::build(&basis, self.scheme.trace_kind())?;
        let rhs_mat = trace::assemble_rhs(&basis, &self.rhs);
        Ok(AssembledProblem {
            basis,
            trace,
            rho2: self.rho2,
            rhs_mat,
            rhs_spsd: self.rhs.is_spsd(),
        })
    }
}

/// Assembled matrices of a [`TensorProblem`].
pub struct AssembledProblem {
    pub basis: PGBasis,
    pub trace: TraceOp,
    pub rho2: f64,
    pub rhs_mat: DMatrix<f64>,
    pub rhs_spsd: bool,
}

/// Coefficients of a discrete second moment with respect to the trial pair
/// basis `{e_m (x) e_n}`.
#[derive(Clone, Debug)]
pub struct CoefficientMatrix {
    pub coeffs: DMatrix<f64>,
    pub symmetric: bool,
    pub spsd_checked: bool,
}

impl CoefficientMatrix {
    fn tagged(coeffs: DMatrix<f64>) -> Self {
        let scale = coeffs.abs().max();
        let asym = (&coeffs - coeffs.transpose()).abs().max();
        CoefficientMatrix {
            coeffs,
            symmetric: asym <= 1e-12 * scale.max(1e-300),
            spsd_checked: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Cg,
    Dense,
    Recursion,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub route: Route,
    pub wall_time: Duration,
    /// Multiply-add count of the operator applications (CG route).
    pub ops: u64,
}

/// Well-posedness numbers `beta_n = (1 - rho^2 Delta^n_11 / b_{n-1,n}^2)^{-1}`
/// of a `p = 1` problem; every entry must be positive for SPSD
/// well-posedness.
pub fn beta_values(a: &AssembledProblem) -> Result<Vec<f64>> {
    let diag = bidiag_of(&a.basis)?.0;
    let d11 = a.trace.delta_11()?;
    Ok(diag
        .iter()
        .zip(&d11)
        .map(|(&b0, &d)| 1.0 / (1.0 - a.rho2 * d / (b0 * b0)))
        .collect())
}

fn check_beta(a: &AssembledProblem) -> Result<()> {
    if a.rho2 == 0.0 || a.basis.degree() != 1 {
        return Ok(());
    }
    for (n, beta) in beta_values(a)?.iter().enumerate() {
        if !beta.is_finite() || *beta <= 0.0 {
            return Err(Error::WellPosedness { index: n + 1, value: *beta });
        }
    }
    Ok(())
}

/// Lower-bidiagonal entries of the `p = 1` bilinear-form matrix:
/// `diag[c] = b(e_c, v_c)` (the `b_{n-1,n}` coupling) and
/// `sub[c] = b(e_c, v_{c+1})`.
fn bidiag_of(basis: &PGBasis) -> Result<(Vec<f64>, Vec<f64>)> {
    if basis.degree() != 1 {
        return Err(Error::invalid("bidiagonal structure requires p = 1"));
    }
    let n = basis.ntrial();
    let b = basis.b_dense();
    let diag: Vec<f64> = (0..n).map(|c| b[(c, c)]).collect();
    let sub: Vec<f64> = (0..n - 1).map(|c| b[(c + 1, c)]).collect();
    Ok((diag, sub))
}

/// Forward substitution `L x = rhs` column-wise for the lower bidiagonal
/// with main diagonal `diag` and subdiagonal `sub`.
fn bidiag_solve_columns(diag: &[f64], sub: &[f64], rhs: &mut DMatrix<f64>) {
    let n = diag.len();
    for j in 0..rhs.ncols() {
        let mut col = rhs.column_mut(j);
        col[0] /= diag[0];
        for i in 1..n {
            let v = (col[i] - sub[i - 1] * col[i - 1]) / diag[i];
            col[i] = v;
        }
    }
}

/// `out = s x s^T` through the sparse rows of `s`; returns multiply-adds.
fn sandwich(
    s: &SparseRows,
    x: &DMatrix<f64>,
    scratch: &mut DMatrix<f64>,
    out: &mut DMatrix<f64>,
) -> u64 {
    let n = s.nrows;
    // scratch = s * x, column by column
    for j in 0..n {
        let (xs, ss) = (x.as_slice(), scratch.as_mut_slice());
        let xcol = &xs[j * n..(j + 1) * n];
        let scol = &mut ss[j * n..(j + 1) * n];
        for (i, row) in s.rows.iter().enumerate() {
            let mut acc = 0.0;
            for &(c, v) in row {
                acc += v * xcol[c];
            }
            scol[i] = acc;
        }
    }
    // out[:, j] = sum over entries (c, v) of row j: v * scratch[:, c]
    out.fill(0.0);
    for j in 0..n {
        for &(c, v) in &s.rows[j] {
            let (ss, os) = (scratch.as_slice(), out.as_mut_slice());
            let src = &ss[c * n..(c + 1) * n];
            let dst = &mut os[j * n..(j + 1) * n];
            for i in 0..n {
                dst[i] += v * src[i];
            }
        }
    }
    2 * (s.nnz() as u64) * (n as u64) * 2
}

fn transpose_entries(s: &SparseRows) -> Vec<Vec<(usize, f64)>> {
    let mut cols = vec![Vec::new(); s.ncols];
    for (i, row) in s.rows.iter().enumerate() {
        for &(c, v) in row {
            cols[c].push((i, v));
        }
    }
    cols
}

struct CgWorkspace {
    scratch: DMatrix<f64>,
    scratch2: DMatrix<f64>,
    bt_cols: Vec<Vec<(usize, f64)>>,
}

impl AssembledProblem {
    fn n(&self) -> usize {
        self.basis.ntrial()
    }

    /// `out = B^k x = b x b^T - rho^2 Delta^k x`, multiply-adds returned.
    pub fn apply_bk(&self, x: &DMatrix<f64>, ws_scratch: &mut DMatrix<f64>, out: &mut DMatrix<f64>) -> u64 {
        let mut ops = sandwich(self.basis.b_sparse(), x, ws_scratch, out);
        if self.rho2 != 0.0 {
            ops += self.trace.apply_to(x, -self.rho2, out);
        }
        ops
    }

    /// `out = (B^k)^T z`, multiply-adds returned.
    fn apply_bk_t(
        &self,
        z: &DMatrix<f64>,
        ws: &mut CgWorkspace,
        out: &mut DMatrix<f64>,
    ) -> u64 {
        let s = self.basis.b_sparse();
        let n = self.n();
        // scratch2 = b^T z
        ws.scratch2.fill(0.0);
        for j in 0..n {
            let (zs, ss) = (z.as_slice(), ws.scratch2.as_mut_slice());
            let zcol = &zs[j * n..(j + 1) * n];
            let scol = &mut ss[j * n..(j + 1) * n];
            for (i, row) in s.rows.iter().enumerate() {
                let zi = zcol[i];
                for &(c, v) in row {
                    scol[c] += v * zi;
                }
            }
        }
        // out[:, j] = sum over entries (i, v) of column j of b: v * scratch2[:, i]
        out.fill(0.0);
        for (j, col) in ws.bt_cols.iter().enumerate() {
            for &(i, v) in col {
                let (ss, os) = (ws.scratch2.as_slice(), out.as_mut_slice());
                let src = &ss[i * n..(i + 1) * n];
                let dst = &mut os[j * n..(j + 1) * n];
                for r in 0..n {
                    dst[r] += v * src[r];
                }
            }
        }
        let mut ops = 2 * (s.nnz() as u64) * (n as u64) * 2;
        if self.rho2 != 0.0 {
            ops += self.trace.apply_adjoint(z, -self.rho2, out);
        }
        ops
    }

    /// In-place `x <- (G_F (x) G_F)^{-1} x`, multiply-adds returned.
    fn solve_gram_tensor(&self, x: &mut DMatrix<f64>, scratch: &mut DMatrix<f64>) -> u64 {
        let chol = self.basis.gram_f_chol();
        let n = self.n();
        let xs = x.as_mut_slice();
        for j in 0..n {
            chol.solve_in_place(&mut xs[j * n..(j + 1) * n]);
        }
        x.transpose_to(scratch);
        let ss = scratch.as_mut_slice();
        for j in 0..n {
            chol.solve_in_place(&mut ss[j * n..(j + 1) * n]);
        }
        scratch.transpose_to(x);
        2 * (n as u64) * chol.solve_ops()
    }

    /// In-place preconditioner `x <- (M_E (x) M_E)^{-1} x` (diagonal).
    fn solve_mass_tensor(&self, x: &mut DMatrix<f64>) -> u64 {
        let d = self.basis.mass_e_diag();
        let n = self.n();
        for j in 0..n {
            for i in 0..n {
                x[(i, j)] /= d[i] * d[j];
            }
        }
        (n as u64) * (n as u64)
    }
}

/// Matrix-free preconditioned conjugate gradients on the symmetrized normal
/// equations `B^T N^{-1} B u = B^T N^{-1} l` with `N = G_F (x) G_F`,
/// preconditioned by `M_E (x) M_E`. Stops at relative preconditioned
/// residual `tol`, at most `20 N p` iterations.
pub fn solve_cg(a: &AssembledProblem, tol: f64) -> Result<(CoefficientMatrix, SolveReport)> {
    check_beta(a)?;
    let start = Instant::now();
    let n = a.n();
    let mut ws = CgWorkspace {
        scratch: DMatrix::zeros(n, n),
        scratch2: DMatrix::zeros(n, n),
        bt_cols: transpose_entries(a.basis.b_sparse()),
    };
    let mut ops = 0u64;

    // right-hand side of the normal equations
    let mut nl = a.rhs_mat.clone();
    ops += a.solve_gram_tensor(&mut nl, &mut ws.scratch);
    let mut rhs = DMatrix::zeros(n, n);
    ops += a.apply_bk_t(&nl, &mut ws, &mut rhs);

    let apply = |x: &DMatrix<f64>, ws: &mut CgWorkspace, out: &mut DMatrix<f64>| -> u64 {
        let mut local;
        let mut mid = DMatrix::zeros(n, n);
        local = a.apply_bk(x, &mut ws.scratch, &mut mid);
        local += a.solve_gram_tensor(&mut mid, &mut ws.scratch);
        local += a.apply_bk_t(&mid, ws, out);
        local
    };

    let mut x = DMatrix::zeros(n, n);
    let mut r = rhs;
    let mut z = r.clone();
    ops += a.solve_mass_tensor(&mut z);
    let mut rz = frob_dot(&r, &z);
    let rz0 = rz;
    if rz0 == 0.0 {
        return Ok((
            CoefficientMatrix::tagged(x),
            SolveReport {
                iterations: 0,
                final_residual: 0.0,
                route: Route::Cg,
                wall_time: start.elapsed(),
                ops,
            },
        ));
    }
    let mut p = z.clone();
    let mut ap = DMatrix::zeros(n, n);
    let max_iter = 20 * n;
    let mut iterations = 0;
    let mut rel = 1.0;
    for it in 1..=max_iter {
        ops += apply(&p, &mut ws, &mut ap);
        let pap = frob_dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!(
                "normal-equation operator not positive: p'Ap = {pap:.3e}"
            )));
        }
        let alpha = rz / pap;
        maxpy(&mut x, alpha, &p, 1.0);
        maxpy(&mut r, -alpha, &ap, 1.0);
        z.copy_from(&r);
        ops += a.solve_mass_tensor(&mut z);
        let rz_new = frob_dot(&r, &z);
        iterations = it;
        rel = (rz_new / rz0).max(0.0).sqrt();
        if rel <= tol {
            rz = rz_new;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        // p = z + beta p
        maxpy(&mut p, 1.0, &z, beta);
    }
    let _ = rz;
    if rel > tol {
        return Err(Error::CgMaxIter { iterations, residual: rel });
    }
    Ok((
        CoefficientMatrix::tagged(x),
        SolveReport {
            iterations,
            final_residual: rel,
            route: Route::Cg,
            wall_time: start.elapsed(),
            ops,
        },
    ))
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// `y <- beta y + alpha x` on matrices.
fn maxpy(y: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>, beta: f64) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi = beta * *yi + alpha * xi;
    }
}

/// Dense oracle route: materializes the `(Np)^2 x (Np)^2` operator through
/// Kronecker products and solves by LU. Capped at `Np <= 64`.
pub fn solve_dense(a: &AssembledProblem) -> Result<CoefficientMatrix> {
    let n = a.n();
    if n > 64 {
        return Err(Error::invalid(format!(
            "dense route capped at 64 trial functions, got {n}"
        )));
    }
    check_beta(a)?;
    let big = build_dense_operator(a);
    let rhs = DVector::from_column_slice(a.rhs_mat.as_slice());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("dense tensor operator".into()))?;
    let u = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(CoefficientMatrix::tagged(u))
}

/// The full tensor operator as a dense matrix; equation `(i, j)` is row
/// `i + j Np`, unknown `(m, n)` is column `m + n Np`.
pub fn build_dense_operator(a: &AssembledProblem) -> DMatrix<f64> {
    let n = a.n();
    let s = a.basis.b_sparse();
    let mut big = DMatrix::zeros(n * n, n * n);
    for (i, row_i) in s.rows.iter().enumerate() {
        for (j, row_j) in s.rows.iter().enumerate() {
            for &(m, bm) in row_i {
                for &(nn, bn) in row_j {
                    big[(i + j * n, m + nn * n)] += bm * bn;
                }
            }
        }
    }
    if a.rho2 != 0.0 {
        let nt = n;
        let p = a.basis.degree();
        // subtract rho^2 Delta entries via unit-vector application
        let mut unit = DMatrix::zeros(nt, nt);
        for m in 0..nt {
            for nn in 0..nt {
                if m / p != nn / p {
                    continue; // locality: only same-element pairs act
                }
                unit.fill(0.0);
                unit[(m, nn)] = 1.0;
                let mut out = DMatrix::zeros(nt, nt);
                a.trace.apply_to(&unit, -a.rho2, &mut out);
                for i in 0..nt {
                    for j in 0..nt {
                        if out[(i, j)] != 0.0 {
                            big[(i + j * nt, m + nn * nt)] += out[(i, j)];
                        }
                    }
                }
            }
        }
    }
    big
}

/// Diagonal-recursion route for `p = 1` schemes: computes the diagonal
/// coefficients by the two-term recursion, then the full matrix from the
/// lifted right-hand side. `O(N^2)` time.
pub fn solve_recursion(a: &AssembledProblem) -> Result<(Vec<f64>, CoefficientMatrix)> {
    let basis = &a.basis;
    if basis.degree() != 1 {
        return Err(Error::invalid("recursion route requires a p = 1 scheme"));
    }
    let n = basis.ntrial();
    let (diag, sub) = bidiag_of(basis)?;
    let mats = a.trace.element_matrices()?;
    let rho2 = a.rho2;

    // beta_n for all n; theta/alpha for n >= 1 (0-based)
    let mut beta = vec![0.0; n];
    for c in 0..n {
        let denom = 1.0 - rho2 * mats[c][(0, 0)] / (diag[c] * diag[c]);
        beta[c] = 1.0 / denom;
        if !beta[c].is_finite() || beta[c] <= 0.0 {
            return Err(Error::WellPosedness { index: c + 1, value: beta[c] });
        }
    }
    let mut theta = vec![0.0; n];
    let mut alpha = vec![0.0; n];
    for c in 1..n {
        theta[c] = sub[c - 1] / diag[c];
        let prev = &mats[c - 1];
        let d22 = if prev.nrows() > 1 { prev[(1, 1)] } else { 0.0 };
        let d12 = if prev.ncols() > 1 { prev[(0, 1)] } else { 0.0 };
        alpha[c] = beta[c]
            * (theta[c] * theta[c]
                + rho2 / (diag[c] * diag[c])
                    * (d22 - 2.0 * (sub[c - 1] / diag[c - 1]) * d12));
    }

    // G = B^{-1} l on the discrete spaces (bidiagonal solves on both sides)
    let mut g = a.rhs_mat.clone();
    bidiag_solve_columns(&diag, &sub, &mut g);
    let mut gt = g.transpose();
    bidiag_solve_columns(&diag, &sub, &mut gt);
    let g = gt.transpose();

    let mut u_diag = vec![0.0; n];
    u_diag[0] = beta[0] * g[(0, 0)];
    for c in 1..n {
        u_diag[c] = beta[c] * (g[(c, c)] - theta[c] * theta[c] * g[(c - 1, c - 1)])
            + alpha[c] * u_diag[c - 1];
    }

    // lift: solve B U = l + rho^2 Delta^k(sum_n U_nn e_n (x) e_n)
    let mut lifted = a.rhs_mat.clone();
    if rho2 != 0.0 {
        a.trace.scatter_diag(&u_diag, rho2, &mut lifted);
    }
    bidiag_solve_columns(&diag, &sub, &mut lifted);
    let mut lt = lifted.transpose();
    bidiag_solve_columns(&diag, &sub, &mut lt);
    let u = lt.transpose();

    Ok((u_diag, CoefficientMatrix::tagged(u)))
}

/// Postprocessed solution `(q_k (x) q_k) U`, returned in the
/// element-orthonormal Legendre basis of `d_t F^k (x) d_t F^k`.
pub fn postprocess(basis: &PGBasis, u: &CoefficientMatrix) -> DMatrix<f64> {
    let p = basis.degree();
    let nel = basis.mesh().num_elements();
    let n = basis.ntrial();
    let blocks: Vec<DMatrix<f64>> = (0..nel).map(|e| basis.qk_block(e)).collect();
    let mut out = DMatrix::zeros(n, n);
    for em in 0..nel {
        for en in 0..nel {
            for r in 0..p {
                for s in 0..p {
                    let mut v = 0.0;
                    for d in 0..p {
                        for dp in 0..p {
                            v += blocks[em][(r, d)]
                                * u.coeffs[(em * p + d, en * p + dp)]
                                * blocks[en][(s, dp)];
                        }
                    }
                    out[(em * p + r, en * p + s)] = v;
                }
            }
        }
    }
    out
}

/// Diagonal `t -> U(t, t)` of a solution in either representation.
pub enum DiagSolution<'a> {
    /// Coefficients with respect to the trial pair basis.
    Trial(&'a PGBasis, &'a DMatrix<f64>),
    /// Postprocessed coefficients in the `d_t F^k` Legendre basis.
    DtF(&'a PGBasis, &'a DMatrix<f64>),
}

impl DiagSolution<'_> {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            DiagSolution::Trial(basis, u) => {
                let p = basis.degree();
                let n = basis.element_of(t);
                let (a, b) = basis.mesh().element(n);
                let sigma = (t - a) / (b - a);
                let vals: Vec<f64> =
                    (0..p).map(|d| basis.eval_trial_local(n * p + d, sigma)).collect();
                let mut v = 0.0;
                for d in 0..p {
                    for dp in 0..p {
                        v += u[(n * p + d, n * p + dp)] * vals[d] * vals[dp];
                    }
                }
                v
            }
            DiagSolution::DtF(basis, u) => {
                let p = basis.degree();
                let n = basis.element_of(t);
                let (a, b) = basis.mesh().element(n);
                let k = b - a;
                let sigma = (t - a) / k;
                let vals: Vec<f64> =
                    (0..p).map(|r| quad::legendre01(r, sigma) / k.sqrt()).collect();
                let mut v = 0.0;
                for r in 0..p {
                    for s in 0..p {
                        v += u[(n * p + r, n * p + s)] * vals[r] * vals[s];
                    }
                }
                v
            }
        }
    }

    fn mesh(&self) -> &TemporalMesh {
        match self {
            DiagSolution::Trial(b, _) | DiagSolution::DtF(b, _) => b.mesh(),
        }
    }
}

/// `L1` error on the diagonal, `delta(|U_ref - U_num|)`, by 10-point Gauss
/// quadrature per element of the numerical solution's mesh.
pub fn diagonal_error(num: &DiagSolution<'_>, reference: &dyn Fn(f64) -> f64) -> f64 {
    let mesh = num.mesh();
    let (xq, wq) = quad::gauss_legendre(10);
    let mut total = 0.0;
    for n in 0..mesh.num_elements() {
        let (a, b) = mesh.element(n);
        let k = b - a;
        for q in 0..xq.len() {
            let t = a + k * xq[q];
            total += wq[q] * k * (reference(t) - num.eval(t)).abs();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{Model, ScalarParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem(
        scheme: SchemeKind,
        lambda: f64,
        rho2: f64,
        t_end: f64,
        n: usize,
        rhs: RhsFunctional,
    ) -> AssembledProblem {
        TensorProblem {
            scheme,
            lambda,
            rho2,
            mesh: TemporalMesh::uniform(t_end, n).unwrap(),
            rhs,
            normalization: Normalization::UnitENorm,
        }
        .assemble()
        .unwrap()
    }

    #[test]
    fn single_element_solve_agrees_across_routes() {
        let a = problem(
            SchemeKind::Cn2,
            2.0,
            0.0,
            1.0,
            1,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        let (u_cg, rep) = solve_cg(&a, 1e-12).unwrap();
        let u_de = solve_dense(&a).unwrap();
        let (_, u_re) = solve_recursion(&a).unwrap();
        assert!((u_cg.coeffs[(0, 0)] - u_de.coeffs[(0, 0)]).abs() < 1e-10);
        assert!((u_re.coeffs[(0, 0)] - u_de.coeffs[(0, 0)]).abs() < 1e-12);
        assert!(rep.iterations <= 2);
    }

    #[test]
    fn routes_agree_on_parameter_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for scheme in SchemeKind::first_order() {
            for &lam in &[0.5, 3.0, 50.0] {
                for &q in &[0.0, 0.5, 1.0, 1.5] {
                    let rho2 = 2.0 * lam * q;
                    let n = 8;
                    let rhs = RhsFunctional::PointMass { weight: 1.0 };
                    let a = problem(scheme, lam, rho2, 1.0, n, rhs);
                    if beta_values(&a).unwrap().iter().any(|&b| b <= 0.0) {
                        continue;
                    }
                    let (u_cg, _) = solve_cg(&a, 1e-12).unwrap();
                    let u_de = solve_dense(&a).unwrap();
                    let (_, u_re) = solve_recursion(&a).unwrap();
                    let scale = u_de.coeffs.abs().max();
                    assert!(
                        (&u_cg.coeffs - &u_de.coeffs).abs().max() <= 1e-8 * scale,
                        "{scheme:?} lam={lam} q={q}: cg vs dense"
                    );
                    assert!(
                        (&u_re.coeffs - &u_de.coeffs).abs().max() <= 1e-8 * scale,
                        "{scheme:?} lam={lam} q={q}: recursion vs dense"
                    );
                    let _ = &mut rng;
                }
            }
        }
    }

    #[test]
    fn kronecker_identity_for_rho_zero() {
        // with rho = 0 the dense route must match solving (b (x) b) U = l
        // columnwise through the bidiagonal factor
        let a = problem(
            SchemeKind::Ie2,
            3.0,
            0.0,
            1.0,
            6,
            RhsFunctional::TraceDelta { weight: 1.0 },
        );
        let u_de = solve_dense(&a).unwrap();
        let (_, u_re) = solve_recursion(&a).unwrap();
        assert!((&u_de.coeffs - &u_re.coeffs).abs().max() < 1e-12);
    }

    #[test]
    fn matrix_free_operator_matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scheme in [SchemeKind::Cn2, SchemeKind::Ie2, SchemeKind::Ie2P2] {
            let a = problem(
                scheme,
                2.0,
                1.5,
                1.0,
                5,
                RhsFunctional::PointMass { weight: 1.0 },
            );
            let n = a.basis.ntrial();
            let big = build_dense_operator(&a);
            let x = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let mut scratch = DMatrix::zeros(n, n);
            let mut out = DMatrix::zeros(n, n);
            a.apply_bk(&x, &mut scratch, &mut out);
            let xv = DVector::from_column_slice(x.as_slice());
            let want = &big * xv;
            let got = DVector::from_column_slice(out.as_slice());
            let scale = want.abs().max();
            assert!(
                (got - want).abs().max() <= 1e-13 * scale.max(1.0),
                "{scheme:?}"
            );
        }
    }

    #[test]
    fn antisymmetric_rhs_gives_antisymmetric_solution() {
        // Delta U^a vanishes by antisymmetry, so the CG solution of the
        // multiplicative problem coincides with the rho = 0 solve
        let n = 6;
        let mut l = DMatrix::zeros(n, n);
        l[(0, 1)] = 1.0;
        l[(1, 0)] = -1.0;
        l[(2, 4)] = 0.5;
        l[(4, 2)] = -0.5;
        for rho2 in [0.0, 2.0] {
            let mut a = problem(
                SchemeKind::Cn2,
                2.0,
                rho2,
                1.0,
                n,
                RhsFunctional::PointMass { weight: 0.0 },
            );
            a.rhs_mat = l.clone();
            let u = solve_dense(&a).unwrap();
            let asym = (&u.coeffs + u.coeffs.transpose()).abs().max();
            assert!(asym < 1e-12 * u.coeffs.abs().max());
            if rho2 == 0.0 {
                continue;
            }
            let a0 = {
                let mut a0 = problem(
                    SchemeKind::Cn2,
                    2.0,
                    0.0,
                    1.0,
                    n,
                    RhsFunctional::PointMass { weight: 0.0 },
                );
                a0.rhs_mat = l.clone();
                a0
            };
            let u0 = solve_dense(&a0).unwrap();
            assert!((&u.coeffs - &u0.coeffs).abs().max() < 1e-11);
        }
    }

    #[test]
    fn symmetric_spsd_rhs_preserved() {
        for scheme in SchemeKind::first_order() {
            let a = problem(
                scheme,
                3.0,
                1.5,
                2.0,
                10,
                RhsFunctional::PointMass { weight: 1.0 },
            );
            let (diag, u) = solve_recursion(&a).unwrap();
            assert!(u.symmetric);
            assert!(diag.iter().all(|&d| d >= -1e-12));
            let min_eig = trace::spsd_min_eig(&a.basis, &u.coeffs);
            assert!(min_eig >= -1e-10, "{scheme:?}: {min_eig}");
        }
    }

    #[test]
    fn beta_failure_is_reported_with_element() {
        // large rho^2 k drives D negative
        let a = problem(
            SchemeKind::Cn2,
            1.0,
            200.0,
            1.0,
            4,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        match solve_recursion(&a) {
            Err(Error::WellPosedness { index, .. }) => assert!(index >= 1),
            other => panic!("expected well-posedness error, got {other:?}"),
        }
        assert!(matches!(solve_cg(&a, 1e-10), Err(Error::WellPosedness { .. })));
    }

    #[test]
    fn galerkin_solution_converges_for_additive_kernel() {
        // rho = 0, l = point mass: U approximates e^{-lambda(s+t)} at first
        // order in the diagonal L1 measure
        let lam = 2.0;
        let mut errs = Vec::new();
        let mut ks = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let a = problem(
                SchemeKind::Cn2,
                lam,
                0.0,
                1.0,
                n,
                RhsFunctional::PointMass { weight: 1.0 },
            );
            let (_, u) = solve_recursion(&a).unwrap();
            let err = diagonal_error(
                &DiagSolution::Trial(&a.basis, &u.coeffs),
                &|t| (-2.0 * lam * t).exp(),
            );
            errs.push(err);
            ks.push(1.0 / n as f64);
        }
        let slope = crate::linalg::log_log_slope(&ks, &errs);
        assert!(slope > 0.9, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn pi_norm_identity_for_recursion_diagonal() {
        // sum_n U_nn ||e_n||_E^2 = lambda delta(U^k) by quadrature
        let a = problem(
            SchemeKind::Ie2,
            3.0,
            1.5,
            2.0,
            12,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        let (diag, u) = solve_recursion(&a).unwrap();
        let lhs: f64 = diag
            .iter()
            .zip(a.basis.mass_e_diag().iter())
            .map(|(d, m)| d * m)
            .sum();
        // independent quadrature of the diagonal
        let sol = DiagSolution::Trial(&a.basis, &u.coeffs);
        let quadval =
            quad::adaptive(&|t: f64| sol.eval(t), 0.0, 2.0, 1e-12).unwrap() * a.basis.lambda();
        assert!((lhs - quadval).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn postprocessing_identity_on_gauss_legendre_and_contraction_on_radau() {
        let a = problem(
            SchemeKind::Cn2,
            2.0,
            1.0,
            1.0,
            6,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        let (_, u) = solve_recursion(&a).unwrap();
        let post = postprocess(&a.basis, &u);
        let s1 = DiagSolution::Trial(&a.basis, &u.coeffs);
        let s2 = DiagSolution::DtF(&a.basis, &post);
        for &t in &[0.1, 0.45, 0.9] {
            assert!((s1.eval(t) - s2.eval(t)).abs() < 1e-12);
        }
        // Radau p = 1: ||Q_k w||_pi = ||w||_pi / 4 on rank-one SPSD w
        let b = PGBasis::build(
            &TemporalMesh::uniform(1.0, 6).unwrap(),
            NodeFamily::gauss_radau(1),
            2.0,
            Normalization::UnitENorm,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DVector::from_fn(b.ntrial(), |_, _| rng.random::<f64>() - 0.5);
        let w = CoefficientMatrix::tagged(&x * x.transpose());
        let post = postprocess(&b, &w);
        // pi norm in the orthonormal basis: lambda * nuclear norm of coeffs
        let pi_post: f64 = b.lambda() * post.singular_values().iter().sum::<f64>();
        let pi_w = trace::pi_norm(&b, &w.coeffs);
        assert!((pi_post - 0.25 * pi_w).abs() < 1e-10);
        // zero maps to zero
        let z = postprocess(&b, &CoefficientMatrix::tagged(DMatrix::zeros(6, 6)));
        assert_eq!(z.abs().max(), 0.0);
    }

    #[test]
    fn diagonal_error_of_interpolant_is_quadrature_small() {
        let lam = 1.0;
        let a = problem(
            SchemeKind::Cn2,
            lam,
            0.0,
            1.0,
            16,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        let (_, u) = solve_recursion(&a).unwrap();
        let sol = DiagSolution::Trial(&a.basis, &u.coeffs);
        let err = diagonal_error(&sol, &|t| sol.eval(t));
        assert!(err < 1e-14);
    }

    #[test]
    fn operator_cost_scales_quadratically() {
        let mut ops = Vec::new();
        for n in [64usize, 128, 256, 512] {
            let a = problem(
                SchemeKind::Ie2,
                3.0,
                1.5,
                2.0,
                n,
                RhsFunctional::PointMass { weight: 1.0 },
            );
            let nt = a.basis.ntrial();
            let x = DMatrix::from_element(nt, nt, 1.0);
            let mut ws = CgWorkspace {
                scratch: DMatrix::zeros(nt, nt),
                scratch2: DMatrix::zeros(nt, nt),
                bt_cols: transpose_entries(a.basis.b_sparse()),
            };
            let mut mid = DMatrix::zeros(nt, nt);
            let mut out = DMatrix::zeros(nt, nt);
            let mut c = a.apply_bk(&x, &mut ws.scratch, &mut mid);
            c += a.solve_gram_tensor(&mut mid, &mut ws.scratch);
            c += a.apply_bk_t(&mid, &mut ws, &mut out);
            ops.push(c);
        }
        for w in ops.windows(2) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!(ratio <= 4.0 * 1.2, "operator cost ratio {ratio} exceeds O(N^2)");
        }
    }

    #[test]
    fn paper_setup_solution_matches_closed_form_diagonal() {
        // T = 2, lambda = 3, rho^2 = 1.5, l(v) = v(0): the discrete diagonal
        // converges to exp(-(2 lambda - rho^2) t)
        let p = ScalarParams::new(3.0, 0.0, 1.5_f64.sqrt(), 2.0, 1.0, 1.0).unwrap();
        let a = problem(
            SchemeKind::Cn2,
            3.0,
            1.5,
            2.0,
            64,
            RhsFunctional::PointMass { weight: 1.0 },
        );
        let (_, u) = solve_recursion(&a).unwrap();
        let err = diagonal_error(&DiagSolution::Trial(&a.basis, &u.coeffs), &|t| {
            p.second_moment(Model::Multiplicative, t, t).unwrap()
        });
        assert!(err < 0.01, "diagonal L1 error {err}");
    }
}
