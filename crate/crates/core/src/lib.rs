//! Deterministic moment equations of stochastic evolution equations,
//! discretized by space-time tensor-product Petrov-Galerkin methods.
//!
//! The crate covers the scalar model problems (Ornstein-Uhlenbeck and
//! geometric Brownian motion) and a spectral-Galerkin treatment of a
//! parabolic SPDE with affine multiplicative Q-Wiener noise:
//!
//! * [`exact`] - closed-form moments and dual norms, the ground truth
//!   every solver result is checked against;
//! * [`mesh`] / [`basis`] - temporal meshes and the paired trial/test
//!   spaces of the adjoint Crank-Nicolson and implicit-Euler families;
//! * [`trace`] / [`solver`] - trace products, right-hand sides and the
//!   tensorized second-moment solvers (CG, dense, diagonal recursion);
//! * [`stability`] - discretization constants and inf-sup scans;
//! * [`spde`] - the vector-valued (spectral) second-moment system;
//! * [`mc`] - Euler-Maruyama reference ensembles.

pub mod basis;
pub mod error;
pub mod exact;
pub mod io;
pub mod linalg;
pub mod mc;
pub mod mesh;
pub mod quad;
pub mod solver;
pub mod spde;
pub mod stability;
pub mod trace;

pub use error::{Error, Result};
