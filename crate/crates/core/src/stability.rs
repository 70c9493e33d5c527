//! Scalar discretization constants of the lowest-order schemes and the
//! inf-sup scans.
//!
//! On a uniform mesh with `||e_n||_E = 1` the numbers `(D, alpha, beta,
//! theta)` have closed forms in `z = lambda k` and `q = rho^2 / (2 lambda)`:
//!
//! | scheme  | `lambda Delta^n`        | `D`                          | `beta`            | `theta`          |
//! |---------|-------------------------|------------------------------|-------------------|------------------|
//! | cn2     | `[[2,1],[1,2]]/6`       | `(1+z/2)^2 - (2/3) q z`      | `(1+z/2)^2 / D`   | `(z/2-1)/(z/2+1)`|
//! | ie2     | `[[38,7],[7,8]]/60`     | `(1+z)^2/4 - (19/15) q z`    | `(1+z)^2 / (4D)`  | `-1/(1+z)`       |
//! | ie2_q   | `[[2,1],[1,2]]/24`      | `(1+z)^2/4 - (1/6) q z`      | `(1+z)^2 / (4D)`  | `-1/(1+z)`       |
//! | ie2_box | `[[1,0],[0,0]]/4`       | `(1+z)^2/4 - (1/2) q z`      | `(1+z)^2 / (4D)`  | `-1/(1+z)`       |
//!
//! `alpha` is evaluated through the generic recursion formula, which is
//! unambiguous; re-deriving the tabulated `alpha - 1` entries symbolically
//! gives `((2/3)(2-theta) q z - 2z)/D` for cn2,
//! `((4/15)(23-7 theta) q z - z(2+z))/(4D)` for ie2,
//! `((2/3)(2-theta) q z - z(2+z))/(4D)` for ie2_q and `(1-4D)/(4D)` for
//! ie2_box (the printed square-root entries are real only as `-theta`).

use nalgebra::DMatrix;

use crate::basis::{NodeFamily, Normalization, PGBasis};
use crate::error::{Error, Result};
use crate::exact;
use crate::mesh::TemporalMesh;
use crate::solver::SchemeKind;
use crate::trace::{TraceKind, TraceOp};

/// Discretization constants of one scheme/step/parameter combination.
#[derive(Clone, Copy, Debug)]
pub struct StabilityReport {
    pub scheme: SchemeKind,
    pub z: f64,
    pub q: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    /// Discrete inf-sup constant entering `C_k` as `gamma_k^{-2}`. Defaults
    /// to 1 (the `k -> 0` normalization); attach the computed mesh value
    /// with [`StabilityReport::with_gamma`] to obtain the full bound.
    pub gamma_k: f64,
}

impl StabilityReport {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_k = gamma;
        self
    }

    /// `beta > 0`, equivalently `D > 0`: SPSD well-posedness of the scheme.
    pub fn well_posed(&self) -> bool {
        self.d > 0.0 && self.beta > 0.0
    }

    /// Whether the volatility lies in the trivial range
    /// `rho^2 < 2 lambda gamma_k^2`, i.e. `q < gamma_k^2`.
    pub fn trivial_range_ok(&self) -> bool {
        self.q < self.gamma_k * self.gamma_k
    }

    /// Discrete stability constant
    /// `C_k = gamma_k^{-2} beta (1 + (alpha - theta^2)(alpha^{N-1} - 1)/(alpha - 1))`
    /// with the `alpha = 1` branch `gamma_k^{-2} beta (theta^2 + N (1 - theta^2))`.
    pub fn c_k(&self, n: usize) -> Result<f64> {
        if !self.well_posed() {
            return Err(Error::WellPosedness { index: 0, value: self.beta });
        }
        let g2 = self.gamma_k * self.gamma_k;
        let th2 = self.theta * self.theta;
        let factor = if (self.alpha - 1.0).abs() < 1e-12 {
            th2 + n as f64 * (1.0 - th2)
        } else {
            1.0 + (self.alpha - th2) * (self.alpha.powi(n as i32 - 1) - 1.0) / (self.alpha - 1.0)
        };
        Ok(self.beta * factor / g2)
    }

    /// Stability constant of the continuous problem on the horizon
    /// `T = N k`, expressed through `z`, `q` and `N`.
    pub fn c_continuous(&self, n: usize) -> f64 {
        let lam_t = self.z * n as f64;
        1.0 + 2.0 * self.q * lam_t * exact_phi(2.0 * lam_t * (self.q - 1.0))
    }
}

fn exact_phi(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

/// Closed-form constants of a `p = 1` scheme on a uniform mesh of width `k`.
pub fn scheme_constants(scheme: SchemeKind, lambda: f64, rho: f64, k: f64) -> Result<StabilityReport> {
    if scheme.family().degree != 1 {
        return Err(Error::invalid("stability constants cover the p = 1 schemes"));
    }
    if !(lambda > 0.0 && k > 0.0) {
        return Err(Error::invalid("lambda and k must be positive"));
    }
    let z = lambda * k;
    let q = rho * rho / (2.0 * lambda);
    let (d, alpha, beta, theta) = match scheme {
        SchemeKind::Cn2 => {
            let theta = (z / 2.0 - 1.0) / (z / 2.0 + 1.0);
            let d = (1.0 + z / 2.0).powi(2) - (2.0 / 3.0) * q * z;
            let beta = (1.0 + z / 2.0).powi(2) / d;
            let alpha = 1.0 + ((2.0 / 3.0) * (2.0 - theta) * q * z - 2.0 * z) / d;
            (d, alpha, beta, theta)
        }
        SchemeKind::Ie2 => {
            let theta = -1.0 / (1.0 + z);
            let d = (1.0 + z).powi(2) / 4.0 - (19.0 / 15.0) * q * z;
            let beta = (1.0 + z).powi(2) / (4.0 * d);
            let alpha =
                1.0 + ((4.0 / 15.0) * (23.0 - 7.0 * theta) * q * z - z * (2.0 + z)) / (4.0 * d);
            (d, alpha, beta, theta)
        }
        SchemeKind::Ie2Q => {
            let theta = -1.0 / (1.0 + z);
            let d = (1.0 + z).powi(2) / 4.0 - q * z / 6.0;
            let beta = (1.0 + z).powi(2) / (4.0 * d);
            let alpha =
                1.0 + ((2.0 / 3.0) * (2.0 - theta) * q * z - z * (2.0 + z)) / (4.0 * d);
            (d, alpha, beta, theta)
        }
        SchemeKind::Ie2Box => {
            let theta = -1.0 / (1.0 + z);
            let d = (1.0 + z).powi(2) / 4.0 - q * z / 2.0;
            let beta = (1.0 + z).powi(2) / (4.0 * d);
            let alpha = 1.0 / (4.0 * d);
            (d, alpha, beta, theta)
        }
        _ => unreachable!(),
    };
    Ok(StabilityReport { scheme, z, q, d, alpha, beta, theta, gamma_k: 1.0 })
}

/// The same constants evaluated from assembled matrices through the generic
/// recursion formulas; the independent cross-check of the closed forms.
pub fn scheme_constants_assembled(
    scheme: SchemeKind,
    lambda: f64,
    rho: f64,
    k: f64,
) -> Result<StabilityReport> {
    let n_el = 4;
    let mesh = TemporalMesh::uniform(n_el as f64 * k, n_el)?;
    let basis = PGBasis::build(&mesh, scheme.family(), lambda, Normalization::UnitENorm)?;
    let trace = TraceOp::build(&basis, scheme.trace_kind())?;
    let mats = trace.element_matrices()?;
    let b = basis.b_dense();
    let rho2 = rho * rho;
    // interior element c = 1 carries all generic quantities
    let b0 = b[(1, 1)];
    let b0_prev = b[(0, 0)];
    let b1_prev = b[(1, 0)];
    let d11 = mats[1][(0, 0)];
    let d22_prev = mats[0][(1, 1)];
    let d12_prev = mats[0][(0, 1)];
    let beta = 1.0 / (1.0 - rho2 * d11 / (b0 * b0));
    let theta = b1_prev / b0;
    let alpha = beta
        * (theta * theta
            + rho2 / (b0 * b0) * (d22_prev - 2.0 * (b1_prev / b0_prev) * d12_prev));
    let d = lambda * k * (b0 * b0 - rho2 * d11);
    Ok(StabilityReport {
        scheme,
        z: lambda * k,
        q: rho2 / (2.0 * lambda),
        d,
        alpha,
        beta,
        theta,
        gamma_k: 1.0,
    })
}

/// Smallest mesh width at which `D(z, q)` hits zero, i.e. the scheme loses
/// SPSD well-posedness; `None` when `D > 0` for every step size.
pub fn well_posedness_threshold_k(scheme: SchemeKind, lambda: f64, rho: f64) -> Option<f64> {
    let q = rho * rho / (2.0 * lambda);
    // D = 0 reduces to z^2 + b z + 1 = 0 with the scheme-dependent b below
    let b = match scheme {
        SchemeKind::Cn2 => 4.0 - 8.0 * q / 3.0,
        SchemeKind::Ie2 => 2.0 - 76.0 * q / 15.0,
        SchemeKind::Ie2Q => 2.0 - 2.0 * q / 3.0,
        SchemeKind::Ie2Box => 2.0 - 2.0 * q,
        _ => return None,
    };
    if b >= -2.0 {
        return None; // no positive real root
    }
    let z = (-b - (b * b - 4.0).sqrt()) / 2.0;
    Some(z / lambda)
}

/// One row of the inf-sup scan of a scheme family over a lambda grid.
#[derive(Clone, Copy, Debug)]
pub struct ScanRow {
    pub lambda: f64,
    pub gamma_k: f64,
    /// Mesh-ratio bound `1 / sqrt(2 (1 + max(1, sigma)))` of the
    /// Gauss-Radau family.
    pub gamma_sigma_bound: f64,
}

/// Computes `gamma_k` for every lambda in the grid; `threads > 1` splits
/// the grid across that many OS threads.
pub fn infsup_scan(
    family: NodeFamily,
    mesh: &TemporalMesh,
    lambdas: &[f64],
    threads: usize,
) -> Result<Vec<ScanRow>> {
    let sigma = mesh.backward_ratio();
    let bound = 1.0 / (2.0 * (1.0 + sigma.max(1.0))).sqrt();
    let compute = |lam: f64| -> Result<ScanRow> {
        let basis = PGBasis::build(mesh, family, lam, Normalization::UnitENorm)?;
        Ok(ScanRow { lambda: lam, gamma_k: basis.infsup_gamma()?, gamma_sigma_bound: bound })
    };
    if threads <= 1 || lambdas.len() <= 1 {
        return lambdas.iter().map(|&l| compute(l)).collect();
    }
    let chunk = lambdas.len().div_ceil(threads);
    let mut out: Vec<Result<Vec<ScanRow>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = lambdas
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&l| compute(l)).collect()))
            .collect();
        for h in handles {
            out.push(h.join().expect("scan worker panicked"));
        }
    });
    let mut rows = Vec::with_capacity(lambdas.len());
    for part in out {
        rows.extend(part?);
    }
    Ok(rows)
}

/// Smallest singular value of the symmetrized tensor operator, the
/// quantitative form of "the trivial range implies well-posedness". Dense
/// computation, capped at 16 trial functions.
pub fn symmetrized_min_singular_value(
    a: &crate::solver::AssembledProblem,
) -> Result<f64> {
    let n = a.basis.ntrial();
    if n > 16 {
        return Err(Error::invalid("symmetrized singular value capped at N p <= 16"));
    }
    let big = crate::solver::build_dense_operator(a);
    // orthonormal basis of the symmetric subspace, embedded in vec space
    let ns = n * (n + 1) / 2;
    let mut embed = DMatrix::zeros(n * n, ns);
    let mut col = 0;
    for i in 0..n {
        for j in i..n {
            if i == j {
                embed[(i + j * n, col)] = 1.0;
            } else {
                let v = 1.0 / 2.0_f64.sqrt();
                embed[(i + j * n, col)] = v;
                embed[(j + i * n, col)] = v;
            }
            col += 1;
        }
    }
    let restricted = embed.transpose() * big * embed;
    Ok(restricted
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Convenience: the continuous stability constant of the multiplicative
/// problem (re-exported next to its discrete counterpart).
pub fn continuous_constant(lambda: f64, rho: f64, horizon: f64) -> f64 {
    exact::continuous_stability_constant(lambda, rho, horizon)
}
