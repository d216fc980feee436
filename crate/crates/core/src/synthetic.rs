//! Synthetic test problems with known exact solutions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::{
    DenseMap, DenseSpd, DiagonalMap, DiagonalOp, Identity, LinearMap, SpdOperator,
};
use crate::random::GaussianSampler;
use crate::solvers::InverseProblem;

/// A problem together with the exact solution and noise-free data.
#[derive(Clone)]
pub struct SyntheticProblem {
    pub problem: InverseProblem,
    pub truth: DVector<f64>,
    pub exact_data: DVector<f64>,
}

/// Diagonal problem in the eigenbasis of `C₀` with `R = I`, `x₀ = 0`:
/// `c_i = i^{-prior_decay}`, singular values of `B = L C₀^{1/2}` given by
/// `σ_i² = i^{-forward_decay}`, and
/// `x† = C₀^{1/2} (BᵀB)^μ v` with `v_i ∝ i^{-1/2-v_decay}`, `‖v‖ = ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSpec {
    pub n: usize,
    pub prior_decay: f64,
    pub forward_decay: f64,
    pub mu: f64,
    pub rho: f64,
    pub v_decay: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for DiagonalSpec {
    fn default() -> Self {
        Self {
            n: 500,
            prior_decay: 0.1,
            forward_decay: 3.0,
            mu: 0.5,
            rho: 1.0,
            v_decay: 0.05,
            delta: 1e-2,
            seed: 0,
        }
    }
}

impl DiagonalSpec {
    /// Singular values of `B` and the prior both decaying like `i^{-2}`.
    pub fn quadratic_decay(n: usize, delta: f64, seed: u64) -> Self {
        Self {
            n,
            prior_decay: 2.0,
            forward_decay: 4.0,
            delta,
            seed,
            ..Self::default()
        }
    }

    pub fn prior_spectrum(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| ((i + 1) as f64).powf(-self.prior_decay))
    }

    /// Squared singular values of `B`.
    pub fn b_spectrum(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| ((i + 1) as f64).powf(-self.forward_decay))
    }
}

/// Adds white noise scaled to `‖ξ‖ = delta`.
fn white_noise(m: usize, delta: f64, rng: &mut GaussianSampler) -> DVector<f64> {
    if delta == 0.0 {
        return DVector::zeros(m);
    }
    loop {
        let z = rng.vector(m);
        let norm = z.norm();
        if norm > 0.0 {
            return z * (delta / norm);
        }
    }
}

pub fn diagonal_problem(spec: &DiagonalSpec) -> Result<SyntheticProblem> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(spec.mu >= 0.0) || !(spec.rho > 0.0) || !(spec.delta >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need mu >= 0, rho > 0, delta >= 0; got {}, {}, {}",
            spec.mu, spec.rho, spec.delta
        )));
    }
    let c = spec.prior_spectrum();
    let s2 = spec.b_spectrum();
    let l = s2.zip_map(&c, |s, c| (s / c).sqrt());
    let mut v = DVector::from_fn(spec.n, |i, _| ((i + 1) as f64).powf(-0.5 - spec.v_decay));
    v *= spec.rho / v.norm();
    let truth = DVector::from_fn(spec.n, |i, _| c[i].sqrt() * s2[i].powf(spec.mu) * v[i]);
    let exact_data = l.component_mul(&truth);
    let mut rng = GaussianSampler::new(spec.seed);
    let y_hat = &exact_data + white_noise(spec.n, spec.delta, &mut rng);
    let problem = InverseProblem::new(
        Arc::new(DiagonalMap::new(l)),
        Arc::new(Identity(spec.n)),
        Arc::new(DiagonalOp::new(c)?),
        DVector::zeros(spec.n),
        y_hat,
        spec.delta,
    )?;
    Ok(SyntheticProblem {
        problem,
        truth,
        exact_data,
    })
}

/// Dense Gaussian problem with a random SPD prior and noise weighting; the
/// noise satisfies `‖R^{-1/2} ξ‖ = delta`.
pub fn dense_random_problem(n: usize, m: usize, delta: f64, seed: u64) -> Result<SyntheticProblem> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("dimensions must be >= 1".into()));
    }
    let mut rng = GaussianSampler::new(seed);
    let forward = rng.matrix(m, n) / (m as f64).sqrt();
    let g = rng.matrix(n, n);
    let prior = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    let h = rng.matrix(m, m);
    let weight = &h * h.transpose() / m as f64 + DMatrix::identity(m, m) * 0.5;
    let x0 = rng.vector(n) * 0.1;
    let truth = rng.vector(n);
    let exact_data = &forward * &truth;

    let weight = DenseSpd::new(weight)?;
    let noise = weight.apply_sqrt(&white_noise(m, delta, &mut rng))?;
    let forward: Arc<dyn LinearMap> = Arc::new(DenseMap::new(forward));
    let problem = InverseProblem::new(
        forward,
        Arc::new(weight),
        Arc::new(DenseSpd::new(prior)?),
        x0,
        &exact_data + noise,
        delta,
    )?;
    Ok(SyntheticProblem {
        problem,
        truth,
        exact_data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_noise_level_is_exact() {
        let spec = DiagonalSpec {
            n: 40,
            delta: 0.3,
            ..Default::default()
        };
        let p = diagonal_problem(&spec).unwrap();
        let r = p.problem.residual_norm(&p.truth).unwrap();
        assert!((r - 0.3).abs() < 1e-14);
    }

    #[test]
    fn diagonal_truth_satisfies_source_condition() {
        let spec = DiagonalSpec {
            n: 20,
            rho: 2.0,
            ..Default::default()
        };
        let p = diagonal_problem(&spec).unwrap();
        let c = spec.prior_spectrum();
        let s2 = spec.b_spectrum();
        let v = DVector::from_fn(20, |i, _| p.truth[i] / (c[i].sqrt() * s2[i].powf(spec.mu)));
        assert!((v.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dense_noise_level_is_weighted() {
        let p = dense_random_problem(7, 9, 0.25, 4).unwrap();
        let r = p.problem.residual_norm(&p.truth).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dense_is_deterministic() {
        let a = dense_random_problem(5, 6, 0.1, 11).unwrap();
        let b = dense_random_problem(5, 6, 0.1, 11).unwrap();
        assert_eq!(a.problem.y_hat(), b.problem.y_hat());
        assert_eq!(a.truth, b.truth);
    }
}
