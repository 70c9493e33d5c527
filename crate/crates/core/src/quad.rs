//! One-dimensional quadrature and Legendre polynomial utilities.
//!
//! Everything works on the reference interval `(0, 1)`. The Legendre
//! polynomials used throughout the crate are L2(0,1)-orthonormal and
//! normalized so that `P_d(1) = sqrt(2d + 1)`.

use crate::error::{Error, Result};

/// Standard Legendre polynomial `P_n` and its derivative on `(-1, 1)`
/// (normalization `P_n(1) = 1`), evaluated by the three-term recurrence.
fn legendre_std_pair(n: usize, t: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut dp0) = (1.0, 0.0);
    let (mut p1, mut dp1) = (t, 1.0);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * t * p1 - (jf - 1.0) * p0) / jf;
        let dp2 = dp0 + (2.0 * jf - 1.0) * p1;
        p0 = p1;
        dp0 = dp1;
        p1 = p2;
        dp1 = dp2;
    }
    (p1, dp1)
}

/// Orthonormal shifted Legendre polynomial of degree `d` on `(0, 1)`.
pub fn legendre01(d: usize, x: f64) -> f64 {
    let (p, _) = legendre_std_pair(d, 2.0 * x - 1.0);
    ((2 * d + 1) as f64).sqrt() * p
}

/// Derivative of [`legendre01`].
pub fn legendre01_deriv(d: usize, x: f64) -> f64 {
    let (_, dp) = legendre_std_pair(d, 2.0 * x - 1.0);
    2.0 * ((2 * d + 1) as f64).sqrt() * dp
}

/// Evaluates `sum_d coeffs[d] * legendre01(d, x)`.
pub fn legendre01_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(d, &c)| if c != 0.0 { c * legendre01(d, x) } else { 0.0 })
        .sum()
}

/// Gauss-Legendre nodes and weights on `(0, 1)`, exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev initial guess, then Newton.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_std_pair(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_std_pair(n, t);
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        // t is the i-th largest root; map (-1,1) -> (0,1).
        nodes[n - 1 - i] = 0.5 * (1.0 + t);
        nodes[i] = 0.5 * (1.0 - t);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Left Gauss-Radau nodes on `(0, 1)` (the left endpoint is a node).
/// Supported up to four nodes, which covers the polynomial degrees used
/// by the discretizations in this crate.
pub fn gauss_radau_left(n: usize) -> Result<Vec<f64>> {
    let s6 = 6.0_f64.sqrt();
    match n {
        1 => Ok(vec![0.0]),
        2 => Ok(vec![0.0, 2.0 / 3.0]),
        3 => Ok(vec![0.0, (6.0 - s6) / 10.0, (6.0 + s6) / 10.0]),
        4 => Ok(vec![
            0.0,
            0.212_340_538_239_152_9,
            0.590_533_135_559_265_3,
            0.911_412_040_487_296_1,
        ]),
        _ => Err(Error::invalid(format!(
            "Gauss-Radau nodes implemented for 1..=4 points, requested {n}"
        ))),
    }
}

/// Interior Gauss-Lobatto nodes on `(0, 1)` for `p + 1` total nodes, i.e.
/// the `p - 1` roots of `P_p'` mapped to `(0, 1)`.
pub fn gauss_lobatto_interior(p: usize) -> Vec<f64> {
    if p < 2 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(p - 1);
    for i in 1..p {
        // Initial guess between Chebyshev-Lobatto points, then Newton on P_p'.
        let mut t = (std::f64::consts::PI * i as f64 / p as f64).cos();
        for _ in 0..100 {
            let (p0, dp0) = legendre_std_pair(p, t);
            // second derivative from Legendre ODE: (1-t^2) P'' = 2 t P' - p(p+1) P
            let ddp = (2.0 * t * dp0 - (p * (p + 1)) as f64 * p0) / (1.0 - t * t);
            let dt = dp0 / ddp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        out.push(0.5 * (1.0 - t));
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

// Gauss-Kronrod 7-15 pair on (-1, 1).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut result_g = WG[3] * fc;
    let mut result_k = WGK[7] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        result_k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            result_g += WG[j / 2] * (f1 + f2);
        }
    }
    (result_k * h, ((result_k - result_g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]` to the absolute
/// tolerance `abs_tol`.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let (val, err) = gk15(f, a, b);
        // the relative floor stops futile subdivision at machine precision
        if err <= tol || err <= 1e-15 * val.abs() {
            return Ok(val);
        }
        if depth >= 48 {
            // interval width is ~2^-48 of the original here; only a wildly
            // singular integrand still carries significant error
            if err <= 1e-10 * (val.abs() + 1.0) {
                return Ok(val);
            }
            return Err(Error::Quadrature(format!(
                "subdivision limit reached on [{a}, {b}], error estimate {err:.3e}"
            )));
        }
        let c = 0.5 * (a + b);
        Ok(recurse(f, a, c, 0.5 * tol, depth + 1)? + recurse(f, c, b, 0.5 * tol, depth + 1)?)
    }
    recurse(f, a, b, abs_tol, 0)
}

/// Exact value of `int_a^b exp(mu (s - t0)) p(s) ds` where `p` is the
/// polynomial with coefficients `coeffs` in powers of `(s - a)`.
///
/// Intended for kernels `exp(-lambda (t - s))` with `s <= t0 = t`, where the
/// exponent stays nonpositive and the evaluation is stable.
pub fn integral_exp_poly(coeffs: &[f64], a: f64, b: f64, mu: f64, t0: f64) -> f64 {
    let h = b - a;
    if h == 0.0 || coeffs.is_empty() {
        return 0.0;
    }
    // inner integral J = int_0^h exp(mu u) p(a + u) du with p in powers of u
    let q = coeffs;
    let j = if (mu * h).abs() < 0.5 {
        // Taylor expansion of exp(mu u); terms decay faster than 2^-k / k!.
        let mut total = 0.0;
        let mut mu_pow = 1.0; // mu^k / k!
        for k in 0..32 {
            let mut inner = 0.0;
            for (jj, &c) in q.iter().enumerate() {
                inner += c * h.powi((k + jj + 1) as i32) / (k + jj + 1) as f64;
            }
            total += mu_pow * inner;
            mu_pow *= mu / (k + 1) as f64;
            if mu_pow.abs() * h.powi(k as i32 + 2) < 1e-300 {
                break;
            }
        }
        total
    } else {
        // antiderivative exp(mu u) sum_j d_j u^j
        let m = q.len();
        let mut d = vec![0.0; m];
        d[m - 1] = q[m - 1] / mu;
        for jj in (0..m - 1).rev() {
            d[jj] = (q[jj] - (jj + 1) as f64 * d[jj + 1]) / mu;
        }
        let mut fh = 0.0;
        let mut hp = 1.0;
        for &dj in &d {
            fh += dj * hp;
            hp *= h;
        }
        (mu * h).exp() * fh - d[0]
    };
    (mu * (a - t0)).exp() * j
}
