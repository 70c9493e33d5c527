//! Trial/test space pairs for the adjoint time-stepping discretizations.
//!
//! The test space `F^k` consists of continuous piecewise polynomials of
//! degree `p` vanishing at `T`. The trial space `E^k` is spanned per
//! element by Legendre combinations determined by the collocation family:
//! `P_0, ..., P_{p-1}` for Gauss-Legendre (`CN*` for `p = 1`) and
//! `P_0, ..., P_{p-2}, P_{p-1} - (P_p(1)/P_{p-1}(1)) P_p` for left
//! Gauss-Radau (`iE*` for `p = 1`, shape `4 - 6s` on the reference
//! element).
//!
//! Norms: `||w||_E^2 = lambda ||w||^2` and
//! `||v||_F^2 = lambda^{-1} ||v'||^2 + lambda ||v||^2 + |v(0)|^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, SparseRows};
use crate::mesh::TemporalMesh;
use crate::quad;

/// Collocation node family of a discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    GaussLegendre,
    GaussRadauLeft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeFamily {
    pub kind: NodeKind,
    pub degree: usize,
}

impl NodeFamily {
    pub fn gauss_legendre(degree: usize) -> Self {
        NodeFamily { kind: NodeKind::GaussLegendre, degree }
    }

    pub fn gauss_radau(degree: usize) -> Self {
        NodeFamily { kind: NodeKind::GaussRadauLeft, degree }
    }
}

/// Scaling convention of the trial basis functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `||e_n||_E = 1`; used by the scalar stability formulas.
    UnitENorm,
    /// `||e_n||_{L2} = 1`; used by the vector-valued (spectral) module.
    UnitL2,
}

/// Assembled trial/test pair on a temporal mesh; immutable once built.
pub struct PGBasis {
    mesh: TemporalMesh,
    family: NodeFamily,
    lambda: f64,
    normalization: Normalization,
    ntrial: usize,
    /// Legendre coefficients (degree 0..=p) of the reference shapes.
    shapes: Vec<Vec<f64>>,
    /// Per trial function scale factor.
    scales: Vec<f64>,
    /// Reference test nodes on `[0, 1]`: endpoints plus interior
    /// Gauss-Lobatto points.
    ref_nodes: Vec<f64>,
    b: SparseRows,
    b_dense: DMatrix<f64>,
    mass_e_diag: DVector<f64>,
    gram_f: DMatrix<f64>,
    gram_f_chol: BandedCholesky,
}

impl PGBasis {
    pub fn build(
        mesh: &TemporalMesh,
        family: NodeFamily,
        lambda: f64,
        normalization: Normalization,
    ) -> Result<Self> {
        let p = family.degree;
        if p < 1 {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        let n_el = mesh.num_elements();
        let ntrial = n_el * p;

        let shapes = reference_shapes(family);
        let shape_sq: Vec<f64> =
            shapes.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();

        let weight = match normalization {
            Normalization::UnitENorm => lambda,
            Normalization::UnitL2 => 1.0,
        };
        let mut scales = Vec::with_capacity(ntrial);
        for n in 0..n_el {
            let k = mesh.size(n);
            for d in 0..p {
                scales.push(1.0 / (weight * k * shape_sq[d]).sqrt());
            }
        }

        let mut ref_nodes = vec![0.0];
        ref_nodes.extend(quad::gauss_lobatto_interior(p));
        ref_nodes.push(1.0);

        let (xq, wq) = quad::gauss_legendre(p + 1);
        let shape_at: Vec<Vec<f64>> = shapes
            .iter()
            .map(|c| xq.iter().map(|&x| quad::legendre01_eval(c, x)).collect())
            .collect();
        let lag_at: Vec<Vec<f64>> = (0..=p)
            .map(|j| xq.iter().map(|&x| lagrange(&ref_nodes, j, x)).collect())
            .collect();
        let dlag_at: Vec<Vec<f64>> = (0..=p)
            .map(|j| xq.iter().map(|&x| lagrange_deriv(&ref_nodes, j, x)).collect())
            .collect();

        let mut b = SparseRows::zeros(ntrial, ntrial);
        let mut gram_f = DMatrix::zeros(ntrial, ntrial);
        let mut mass_e_diag = DVector::zeros(ntrial);

        for n in 0..n_el {
            let k = mesh.size(n);
            for d in 0..p {
                let col = n * p + d;
                let s = scales[col];
                mass_e_diag[col] = lambda * k * shape_sq[d] * s * s;
                for j in 0..=p {
                    let row = n * p + j;
                    if row >= ntrial {
                        continue; // the T-node degree of freedom is removed
                    }
                    let mut val = 0.0;
                    for q in 0..xq.len() {
                        val += wq[q]
                            * shape_at[d][q]
                            * (-dlag_at[j][q] + lambda * k * lag_at[j][q]);
                    }
                    b.push(row, col, s * val);
                }
            }
            for j1 in 0..=p {
                let r1 = n * p + j1;
                if r1 >= ntrial {
                    continue;
                }
                for j2 in 0..=p {
                    let r2 = n * p + j2;
                    if r2 >= ntrial {
                        continue;
                    }
                    let mut stiff = 0.0;
                    let mut mass = 0.0;
                    for q in 0..xq.len() {
                        stiff += wq[q] * dlag_at[j1][q] * dlag_at[j2][q];
                        mass += wq[q] * lag_at[j1][q] * lag_at[j2][q];
                    }
                    gram_f[(r1, r2)] += stiff / (lambda * k) + lambda * k * mass;
                }
            }
        }
        // initial-value part of the F norm: only v_0 is nonzero at t = 0
        gram_f[(0, 0)] += 1.0;

        let gram_f_chol = BandedCholesky::new(&gram_f, p)?;
        let b_dense = b.to_dense();

        Ok(PGBasis {
            mesh: mesh.clone(),
            family,
            lambda,
            normalization,
            ntrial,
            shapes,
            scales,
            ref_nodes,
            b,
            b_dense,
            mass_e_diag,
            gram_f,
            gram_f_chol,
        })
    }

    pub fn mesh(&self) -> &TemporalMesh {
        &self.mesh
    }

    pub fn family(&self) -> NodeFamily {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn degree(&self) -> usize {
        self.family.degree
    }

    /// Dimension of trial and test space, `N * p`.
    pub fn ntrial(&self) -> usize {
        self.ntrial
    }

    pub fn b_sparse(&self) -> &SparseRows {
        &self.b
    }

    pub fn b_dense(&self) -> &DMatrix<f64> {
        &self.b_dense
    }

    /// Diagonal of the E-Gram of the trial basis (off-diagonal entries
    /// vanish: shapes on one element are Legendre-orthogonal, different
    /// elements have disjoint supports).
    pub fn mass_e_diag(&self) -> &DVector<f64> {
        &self.mass_e_diag
    }

    pub fn gram_f(&self) -> &DMatrix<f64> {
        &self.gram_f
    }

    pub fn gram_f_chol(&self) -> &BandedCholesky {
        &self.gram_f_chol
    }


    /// Value of trial function `idx = n p + d` at local coordinate
    /// `sigma in [0, 1]` of its element.
    pub fn eval_trial_local(&self, idx: usize, sigma: f64) -> f64 {
        let d = idx % self.family.degree;
        self.scales[idx] * quad::legendre01_eval(&self.shapes[d], sigma)
    }

    pub fn eval_trial(&self, idx: usize, t: f64) -> f64 {
        let n = idx / self.family.degree;
        let (a, b) = self.mesh.element(n);
        if t < a || t > b {
            return 0.0;
        }
        self.eval_trial_local(idx, (t - a) / (b - a))
    }

    /// Value at `t` of the trial-space function with coefficients `coeffs`.
    pub fn eval_trial_coeffs(&self, coeffs: &DVector<f64>, t: f64) -> f64 {
        let n = self.element_of(t);
        let p = self.family.degree;
        let (a, b) = self.mesh.element(n);
        let sigma = (t - a) / (b - a);
        (0..p)
            .map(|d| coeffs[n * p + d] * self.eval_trial_local(n * p + d, sigma))
            .sum()
    }

    /// Element containing `t` (clamped to the boundary elements).
    pub fn element_of(&self, t: f64) -> usize {
        let nodes = self.mesh.nodes();
        let i = nodes.partition_point(|&x| x <= t);
        i.clamp(1, nodes.len() - 1) - 1
    }

    /// Global test indices with support on element `n` (ascending; the
    /// removed T-node is skipped on the last element).
    pub fn element_tests(&self, n: usize) -> Vec<usize> {
        let p = self.family.degree;
        (0..=p).map(|j| n * p + j).filter(|&g| g < self.ntrial).collect()
    }

    /// Local test shape `j` on the reference element.
    pub fn eval_test_local(&self, j: usize, sigma: f64) -> f64 {
        lagrange(&self.ref_nodes, j, sigma)
    }

    pub fn eval_test_local_deriv(&self, j: usize, sigma: f64) -> f64 {
        lagrange_deriv(&self.ref_nodes, j, sigma)
    }

    /// Value at `t` of the test-space function with coefficients `coeffs`.
    pub fn eval_test_coeffs(&self, coeffs: &DVector<f64>, t: f64) -> f64 {
        let n = self.element_of(t);
        let p = self.family.degree;
        let (a, b) = self.mesh.element(n);
        let sigma = (t - a) / (b - a);
        let mut v = 0.0;
        for j in 0..=p {
            let g = n * p + j;
            if g < self.ntrial {
                v += coeffs[g] * self.eval_test_local(j, sigma);
            }
        }
        v
    }

    /// `||w||_E` of a trial coefficient vector.
    pub fn e_norm(&self, coeffs: &DVector<f64>) -> f64 {
        coeffs
            .iter()
            .zip(self.mass_e_diag.iter())
            .map(|(c, m)| c * c * m)
            .sum::<f64>()
            .sqrt()
    }

    /// `||v||_F` of a test coefficient vector.
    pub fn f_norm(&self, coeffs: &DVector<f64>) -> f64 {
        (coeffs.dot(&(&self.gram_f * coeffs))).sqrt()
    }

    /// Discrete inf-sup constant
    /// `gamma_k = inf_w sup_v b(w, v) / (||w||_E ||v||_F)`,
    /// the square root of the smallest eigenvalue of
    /// `(b^T G_F^{-1} b) w = gamma^2 M_E w`.
    pub fn infsup_gamma(&self) -> Result<f64> {
        Ok(self.bform_pencil_extremes()?.0)
    }

    /// Largest generalized singular value of the pair; equals the discrete
    /// operator norm of `b` and must not exceed 1.
    pub fn bform_opnorm(&self) -> Result<f64> {
        Ok(self.bform_pencil_extremes()?.1)
    }

    fn bform_pencil_extremes(&self) -> Result<(f64, f64)> {
        let chol = self
            .gram_f
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("F Gram matrix".into()))?;
        let x = chol.solve(&self.b_dense);
        let mut a = self.b_dense.transpose() * x;
        for i in 0..self.ntrial {
            for j in 0..self.ntrial {
                a[(i, j)] /= (self.mass_e_diag[i] * self.mass_e_diag[j]).sqrt();
            }
        }
        let a = 0.5 * (&a + a.transpose());
        let eig = a.symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
        Ok((min.max(0.0).sqrt(), max.sqrt()))
    }

    /// Per-element matrix of the projection `q_k : E^k -> d_t F^k` in the
    /// element-orthonormal Legendre basis of `d_t F^k` (degree `< p`):
    /// entry `(r, d)` is the coefficient of the projected trial shape `d`.
    pub fn qk_block(&self, n: usize) -> DMatrix<f64> {
        let p = self.family.degree;
        let k = self.mesh.size(n);
        let mut q = DMatrix::zeros(p, p);
        for d in 0..p {
            let s = self.scales[n * p + d];
            for r in 0..p {
                q[(r, d)] = s * self.shapes[d][r] * k.sqrt();
            }
        }
        q
    }

    /// `q_k` applied to a trial coefficient vector; output coefficients are
    /// with respect to the element-orthonormal Legendre basis of `d_t F^k`.
    pub fn qk_apply(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        if coeffs.len() != self.ntrial {
            return Err(Error::DimensionMismatch(format!(
                "expected {} trial coefficients, got {}",
                self.ntrial,
                coeffs.len()
            )));
        }
        let p = self.family.degree;
        let mut out = DVector::zeros(self.ntrial);
        for n in 0..self.mesh.num_elements() {
            let q = self.qk_block(n);
            for r in 0..p {
                let mut v = 0.0;
                for d in 0..p {
                    v += q[(r, d)] * coeffs[n * p + d];
                }
                out[n * p + r] = v;
            }
        }
        Ok(out)
    }

    /// Value at `t` of a `d_t F^k` function given in the element-orthonormal
    /// Legendre basis.
    pub fn eval_dtf_coeffs(&self, coeffs: &DVector<f64>, t: f64) -> f64 {
        let n = self.element_of(t);
        let p = self.family.degree;
        let (a, b) = self.mesh.element(n);
        let k = b - a;
        let sigma = (t - a) / k;
        (0..p)
            .map(|r| coeffs[n * p + r] * quad::legendre01(r, sigma) / k.sqrt())
            .sum()
    }

    /// E-norm distance from `target` to the trial space, by normal
    /// equations on the (diagonal) E-Gram. `target` is sampled with a
    /// 24-point Gauss rule per element.
    pub fn best_approx_error(&self, target: &dyn Fn(f64) -> f64) -> f64 {
        let p = self.family.degree;
        let (xq, wq) = quad::gauss_legendre(24);
        let mut norm_sq = 0.0;
        let mut proj_sq = 0.0;
        for n in 0..self.mesh.num_elements() {
            let (a, b) = self.mesh.element(n);
            let k = b - a;
            let vals: Vec<f64> = xq.iter().map(|&x| target(a + k * x)).collect();
            norm_sq += self.lambda
                * k
                * xq.iter()
                    .zip(&wq)
                    .zip(&vals)
                    .map(|((_, &w), &v)| w * v * v)
                    .sum::<f64>();
            for d in 0..p {
                let idx = n * p + d;
                let rhs = self.lambda
                    * k
                    * xq.iter()
                        .zip(&wq)
                        .zip(&vals)
                        .map(|((&x, &w), &v)| w * v * self.eval_trial_local(idx, x))
                        .sum::<f64>();
                proj_sq += rhs * rhs / self.mass_e_diag[idx];
            }
        }
        (norm_sq - proj_sq).max(0.0).sqrt()
    }

    /// Reference collocation nodes of the family (Gauss or left Radau).
    pub fn collocation_nodes(&self) -> Result<Vec<f64>> {
        match self.family.kind {
            NodeKind::GaussLegendre => Ok(quad::gauss_legendre(self.family.degree).0),
            NodeKind::GaussRadauLeft => quad::gauss_radau_left(self.family.degree),
        }
    }

    /// Mesh-dependent test norm
    /// `|||v|||_F^2 = ||v'||_{E'}^2 + ||i_k v||_E^2 + |v(0)|^2 (+ jump terms
    /// for Gauss-Radau)`, where `i_k` interpolates at the collocation nodes.
    /// A diagnostic quantity; the solvers use `||.||_F`.
    pub fn mesh_f_norm(&self, coeffs: &DVector<f64>) -> Result<f64> {
        let p = self.family.degree;
        let colloc = self.collocation_nodes()?;
        let (xq, wq) = quad::gauss_legendre(p + 2);
        let mut total = 0.0;
        let local = |n: usize, sigma: f64| -> f64 {
            let mut v = 0.0;
            for j in 0..=p {
                let g = n * p + j;
                if g < self.ntrial {
                    v += coeffs[g] * self.eval_test_local(j, sigma);
                }
            }
            v
        };
        let local_deriv = |n: usize, sigma: f64| -> f64 {
            let mut v = 0.0;
            for j in 0..=p {
                let g = n * p + j;
                if g < self.ntrial {
                    v += coeffs[g] * self.eval_test_local_deriv(j, sigma);
                }
            }
            v
        };
        for n in 0..self.mesh.num_elements() {
            let k = self.mesh.size(n);
            // ||v'||_{E'}^2 on this element (dual of E via unweighted L2)
            let mut dsq = 0.0;
            for q in 0..xq.len() {
                let dv = local_deriv(n, xq[q]) / k;
                dsq += wq[q] * dv * dv;
            }
            total += k * dsq / self.lambda;
            // interpolate at collocation nodes, then integrate the square
            let vals: Vec<f64> = colloc.iter().map(|&x| local(n, x)).collect();
            let interp = |sigma: f64| -> f64 {
                (0..colloc.len())
                    .map(|j| vals[j] * lagrange(&colloc, j, sigma))
                    .sum()
            };
            let mut isq = 0.0;
            for q in 0..xq.len() {
                let iv = interp(xq[q]);
                isq += wq[q] * iv * iv;
            }
            total += self.lambda * k * isq;
            if self.family.kind == NodeKind::GaussRadauLeft {
                let jump = local(n, 1.0) - interp(1.0);
                total += jump * jump;
            }
        }
        let v0 = local(0, 0.0);
        total += v0 * v0;
        Ok(total.sqrt())
    }

    /// Backward implicit-Euler companion of a trial function `w`: the test
    /// function `v` with `-(v_n - v_{n-1})/k_n + lambda v_{n-1} = lambda
    /// w(t_{n-1}^+)` and `v(T) = 0`. Satisfies `b(w, v) = ||w||_E^2` and
    /// `||w||_E = ||| v/2 |||_F` for the Gauss-Radau family with `p = 1`.
    pub fn ie_companion(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        if self.family.degree != 1 || self.family.kind != NodeKind::GaussRadauLeft {
            return Err(Error::invalid(
                "implicit-Euler companion defined for the p = 1 Gauss-Radau family",
            ));
        }
        let n_el = self.mesh.num_elements();
        let mut v = DVector::zeros(n_el);
        let mut v_next = 0.0; // v at t_N is fixed to zero
        for n in (0..n_el).rev() {
            let k = self.mesh.size(n);
            let w_plus = w[n] * self.eval_trial_local(n, 0.0);
            let v_here = (v_next + self.lambda * k * w_plus) / (1.0 + self.lambda * k);
            v[n] = v_here;
            v_next = v_here;
        }
        Ok(v)
    }

    /// Galerkin first moment: solves `b(m, v_i) = mean0 * v_i(0)` for all
    /// test functions.
    pub fn solve_mean(&self, mean0: f64) -> Result<DVector<f64>> {
        let mut rhs = DVector::zeros(self.ntrial);
        rhs[0] = mean0;
        let lu = self.b_dense.clone().lu();
        lu.solve(&rhs)
            .ok_or_else(|| Error::Singular("bilinear form matrix".into()))
    }
}

/// Legendre coefficients of the reference trial shapes.
fn reference_shapes(family: NodeFamily) -> Vec<Vec<f64>> {
    let p = family.degree;
    let mut shapes = Vec::with_capacity(p);
    for d in 0..p {
        let mut c = vec![0.0; p + 1];
        if d + 1 == p && family.kind == NodeKind::GaussRadauLeft {
            // P_{p-1} - (P_p(1)/P_{p-1}(1)) P_p
            c[p - 1] = 1.0;
            c[p] = -(((2 * p + 1) as f64) / ((2 * p - 1) as f64)).sqrt();
        } else {
            c[d] = 1.0;
        }
        shapes.push(c);
    }
    shapes
}

fn lagrange(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut v = 1.0;
    for (m, &nm) in nodes.iter().enumerate() {
        if m != j {
            v *= (x - nm) / (nodes[j] - nm);
        }
    }
    v
}

fn lagrange_deriv(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut total = 0.0;
    for (l, &nl) in nodes.iter().enumerate() {
        if l == j {
            continue;
        }
        let mut term = 1.0 / (nodes[j] - nl);
        for (m, &nm) in nodes.iter().enumerate() {
            if m != j && m != l {
                term *= (x - nm) / (nodes[j] - nm);
            }
        }
        total += term;
    }
    total
}
