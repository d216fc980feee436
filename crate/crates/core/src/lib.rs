//! Ensemble Kalman inversion (EKI) as a low-rank approximation of Tikhonov
//! regularization for linear inverse problems `y = L x`.
//!
//! * [`operators`]: matrix-free linear maps, SPD operators and dense kernels.
//! * [`lowrank`]: anomaly, truncated-SVD and Nyström factors `A Aᵀ ≈ C₀`.
//! * [`solvers`]: Tikhonov, direct EKI, square-root and covariance EKI steps,
//!   and stochastic (perturbed-observation) EKI.
//! * [`adaptive`]: the adaptive sample-size schedule with discrepancy stopping.
//! * [`tomo`]: parallel-beam Radon operator, Shepp-Logan phantom and the
//!   Ornstein-Uhlenbeck prior used for the tomography bench.
//! * [`synthetic`]: diagonal and dense random test problems.
//! * [`io`]: binary/CSV containers for matrices and iteration logs.

pub mod adaptive;
pub mod error;
pub mod io;
pub mod lowrank;
pub mod operators;
pub mod random;
pub mod solvers;
pub mod synthetic;
pub mod tomo;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
