//! Closed-form moments, integral representations and dual norms of the
//! scalar model equations: the ground-truth layer every solver result is
//! checked against.
//!
//! The model equations on `J = (0, T)` are
//! `dX + lambda X dt = mu dW` (Ornstein-Uhlenbeck) and
//! `dX + lambda X dt = rho X dW` (geometric Brownian motion).

use crate::error::{Error, Result};
use crate::quad;

/// Which of the two model equations a moment refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Model {
    Additive,
    Multiplicative,
}

/// Parameters of the scalar model problems. `mean0` and `msq0` are the
/// first and second moment of the initial value.
#[derive(Clone, Copy, Debug)]
pub struct ScalarParams {
    pub lambda: f64,
    pub mu: f64,
    pub rho: f64,
    pub horizon: f64,
    pub mean0: f64,
    pub msq0: f64,
}

impl ScalarParams {
    pub fn new(lambda: f64, mu: f64, rho: f64, horizon: f64, mean0: f64, msq0: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon T must be positive"));
        }
        if mu < 0.0 || rho < 0.0 {
            return Err(Error::invalid("volatilities must be nonnegative"));
        }
        if msq0 < mean0 * mean0 - 1e-12 * msq0.abs().max(1.0) {
            return Err(Error::invalid("E[X0^2] < (E[X0])^2 violates Cauchy-Schwarz"));
        }
        Ok(ScalarParams { lambda, mu, rho, horizon, mean0, msq0 })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t > self.horizon {
            return Err(Error::invalid(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// `E[X(t)] = exp(-lambda t) E[X0]`, identical for both models.
    pub fn first_moment(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok((-self.lambda * t).exp() * self.mean0)
    }

    /// Two-point second moment `E[X(s) X(t)]`.
    pub fn second_moment(&self, model: Model, s: f64, t: f64) -> Result<f64> {
        self.check_time(s)?;
        self.check_time(t)?;
        let lam = self.lambda;
        match model {
            Model::Additive => {
                let decay = (-lam * (s + t)).exp();
                Ok(decay * self.msq0
                    + self.mu * self.mu / (2.0 * lam) * ((-lam * (t - s).abs()).exp() - decay))
            }
            Model::Multiplicative => {
                Ok((-lam * (s + t) + self.rho * self.rho * s.min(t)).exp() * self.msq0)
            }
        }
    }

    /// `E[ ||X||^2_{L2(J)} ]`, the tabulated closed form; the multiplicative
    /// entry passes smoothly through `rho^2 = 2 lambda`.
    pub fn expected_l2_norm_sq(&self, model: Model) -> f64 {
        let lam = self.lambda;
        let t = self.horizon;
        match model {
            Model::Additive => {
                let a = -(-2.0 * lam * t).exp_m1() / (2.0 * lam) * self.msq0;
                let b = self.mu * self.mu / (4.0 * lam * lam)
                    * ((-2.0 * lam * t).exp_m1() + 2.0 * lam * t);
                a + b
            }
            Model::Multiplicative => {
                let x = self.rho * self.rho - 2.0 * lam;
                t * phi(x * t) * self.msq0
            }
        }
    }

    /// Diagonal `U(t, t)` of the solution to the multiplicative
    /// second-moment equation with lifted right-hand-side diagonal `g`:
    /// `U(t,t) = rho^2 int_0^t exp(-(2 lambda - rho^2)(t - r)) g(r) dr + g(t)`.
    ///
    /// Adaptive quadrature with absolute tolerance `1e-12`; `g` must be the
    /// diagonal `t -> (B^{-1} l)(t, t)` of the lifted functional.
    pub fn diagonal_oracle(&self, g: &dyn Fn(f64) -> f64, t: f64) -> Result<f64> {
        self.diagonal_oracle_with_breaks(g, &[], t)
    }

    /// Like [`Self::diagonal_oracle`] for a `g` with jumps or kinks at the
    /// given `breaks`: the quadrature is split there first, so narrow
    /// features are not missed by the initial sampling.
    pub fn diagonal_oracle_with_breaks(
        &self,
        g: &dyn Fn(f64) -> f64,
        breaks: &[f64],
        t: f64,
    ) -> Result<f64> {
        self.check_time(t)?;
        let decay = 2.0 * self.lambda - self.rho * self.rho;
        let rho2 = self.rho * self.rho;
        if rho2 == 0.0 {
            return Ok(g(t));
        }
        let mut panels = vec![0.0];
        for &b in breaks {
            if b > 0.0 && b < t {
                panels.push(b);
            }
        }
        panels.push(t);
        panels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut integral = 0.0;
        for w in panels.windows(2) {
            integral += quad::adaptive(
                &|r: f64| (-decay * (t - r)).exp() * g(r),
                w[0],
                w[1],
                1e-12,
            )?;
        }
        Ok(rho2 * integral + g(t))
    }

    /// Stability constant of the continuous multiplicative second-moment
    /// problem, `C = (rho^2 e^{(rho^2 - 2 lambda) T} - 2 lambda) / (rho^2 - 2 lambda)`,
    /// with the limit value `rho^2 T + 1` at `rho^2 = 2 lambda`.
    pub fn stability_constant(&self) -> f64 {
        continuous_stability_constant(self.lambda, self.rho, self.horizon)
    }
}

/// `(e^x - 1) / x`, continuously extended by 1 at `x = 0`.
pub(crate) fn phi(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.exp_m1() / x
    }
}

/// See [`ScalarParams::stability_constant`]. Written as
/// `1 + rho^2 T phi((rho^2 - 2 lambda) T)` so no branch at the degenerate
/// point is needed.
pub fn continuous_stability_constant(lambda: f64, rho: f64, horizon: f64) -> f64 {
    let rho2 = rho * rho;
    1.0 + rho2 * horizon * phi((rho2 - 2.0 * lambda) * horizon)
}

/// A piecewise polynomial on consecutive intervals; piece `i` lives on
/// `(breaks[i], breaks[i+1])` with coefficients in powers of `s - breaks[i]`.
#[derive(Clone, Debug)]
pub struct PiecewisePoly {
    pub breaks: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    pub fn constant(value: f64, a: f64, b: f64) -> Self {
        PiecewisePoly { breaks: vec![a, b], pieces: vec![vec![value]] }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let i = match self.breaks[1..self.breaks.len() - 1]
            .iter()
            .position(|&b| s < b)
        {
            Some(i) => i,
            None => self.pieces.len() - 1,
        };
        let u = s - self.breaks[i];
        self.pieces[i].iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }
}

/// Right-hand sides accepted by [`b_inverse_apply`].
pub enum Integrand<'a> {
    /// Integrated exactly piece by piece.
    PiecewisePoly(&'a PiecewisePoly),
    /// Integrated by adaptive quadrature (absolute tolerance `1e-12`).
    Func(&'a dyn Fn(f64) -> f64),
}

/// `u(t) = (b^{-1} l)(t) = int_0^t exp(-lambda (t - s)) g(s) ds` for a
/// functional `l(v) = int_J g v`.
pub fn b_inverse_apply(lambda: f64, g: Integrand<'_>, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    match g {
        Integrand::Func(f) => {
            quad::adaptive(&|s: f64| (-lambda * (t - s)).exp() * f(s), 0.0, t, 1e-12)
        }
        Integrand::PiecewisePoly(p) => {
            let mut total = 0.0;
            for (i, coeffs) in p.pieces.iter().enumerate() {
                let a = p.breaks[i];
                if a >= t {
                    break;
                }
                let b = p.breaks[i + 1].min(t);
                total += quad::integral_exp_poly(coeffs, a, b, lambda, t);
            }
            Ok(total)
        }
    }
}

/// Dual norms of the diagonal-trace functional `delta(v) = int_J v(t,t) dt`
/// and of the point functional `v -> v(0)`.
#[derive(Clone, Copy, Debug)]
pub struct DeltaNorms {
    /// Operator norm on the Hilbert tensor space `F_2`.
    pub f2: f64,
    /// Operator norm on the injective tensor space `F_eps`.
    pub f_eps: f64,
    /// `|| point mass at 0 x point mass at 0 ||` on `F_eps`.
    pub point: f64,
}

/// Closed forms:
/// `||delta||_{-2} = (4 lambda T - 5 + (8 lambda T + 4) e^{-2 lambda T} + e^{-4 lambda T})^{1/2} / (4 lambda)`,
/// `||delta||_{-eps} = (e^{-2 lambda T} - 1 + 2 lambda T) / (4 lambda)`,
/// `||d_0 (x) d_0||_{-eps} = (1 - e^{-2 lambda T}) / 2`.
pub fn delta_dual_norms(lambda: f64, horizon: f64) -> DeltaNorms {
    let x = lambda * horizon;
    DeltaNorms {
        f2: f2_aux(x).sqrt() / (4.0 * lambda),
        f_eps: ((-2.0 * x).exp_m1() + 2.0 * x) / (4.0 * lambda),
        point: -0.5 * (-2.0 * x).exp_m1(),
    }
}

/// `4x - 5 + (8x + 4) e^{-2x} + e^{-4x}`, evaluated by its Taylor series
/// `(8/3) x^4 - (64/15) x^5 + ...` for small `x` where the closed form
/// cancels catastrophically.
fn f2_aux(x: f64) -> f64 {
    if x >= 0.5 {
        return 4.0 * x - 5.0 + (8.0 * x + 4.0) * (-2.0 * x).exp() + (-4.0 * x).exp();
    }
    // c_n = 8 (-2)^{n-1}/(n-1)! + 4 (-2)^n/n! + (-4)^n/n!, zero for n < 4
    let mut sum = 0.0;
    let mut pow2 = -8.0; // (-2)^n starting at n = 3
    let mut pow4 = -64.0; // (-4)^n starting at n = 3
    let mut fact = 6.0; // n! at n = 3
    let mut xn = x * x * x; // x^n at n = 3
    for n in 4..60u32 {
        let prev_fact = fact;
        fact *= n as f64;
        pow2 *= -2.0;
        pow4 *= -4.0;
        xn *= x;
        // pow2 here is (-2)^n, prev entry (-2)^{n-1} = pow2 / -2
        let c = 8.0 * (pow2 / -2.0) / prev_fact + 4.0 * pow2 / fact + pow4 / fact;
        let term = c * xn;
        sum += term;
        if term.abs() < 1e-30 * sum.abs().max(1e-280) {
            break;
        }
    }
    sum
}

/// Sharp witness of the point-evaluation bound on `F`:
/// `psi(t) = sinh(lambda (T - t)) / sinh(lambda T)`, evaluated in the
/// overflow-free form `e^{-lambda t}(1 - e^{-2 lambda (T-t)})/(1 - e^{-2 lambda T})`.
pub fn sharpness_witness_psi(lambda: f64, horizon: f64, t: f64) -> f64 {
    let num = -(-2.0 * lambda * (horizon - t)).exp_m1();
    let den = -(-2.0 * lambda * horizon).exp_m1();
    (-lambda * t).exp() * num / den
}

/// `||psi||_F = sqrt(coth(lambda T) + 1)`.
pub fn psi_f_norm(lambda: f64, horizon: f64) -> f64 {
    (1.0 / (lambda * horizon).tanh() + 1.0).sqrt()
}
