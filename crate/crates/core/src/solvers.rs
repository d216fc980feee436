//! Regularized inversion engines.
//!
//! All routines work in the `R`-whitened data space: with `B = R^{-1/2} L A`
//! the square-root EKI update only needs `J×J` solves, while Tikhonov picks
//! the smaller of the parameter and data spaces.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lowrank::{ensemble_anomaly, GaussianSampler, LowRankFactor};
use crate::operators::{
    inv_sqrt_psd, sym_eig, symmetrize, DenseSpd, LinearMap, SpdOperator, DEFAULT_CLAMP_TOL,
};

/// Accepted backward error of the inner symmetric solves.
pub const INNER_SOLVE_TOL: f64 = 1e-10;

/// Linear inverse problem `ŷ = L x + ξ` with noise weighting `R`, prior
/// covariance `C₀`, initial guess `x₀` and noise level `δ ≥ ‖ŷ − y‖_R`.
#[derive(Clone)]
pub struct InverseProblem {
    forward: Arc<dyn LinearMap>,
    noise_weight: Arc<dyn SpdOperator>,
    prior_cov: Arc<dyn SpdOperator>,
    x0: DVector<f64>,
    y_hat: DVector<f64>,
    delta: f64,
    rl_bound: Option<f64>,
}

impl InverseProblem {
    pub fn new(
        forward: Arc<dyn LinearMap>,
        noise_weight: Arc<dyn SpdOperator>,
        prior_cov: Arc<dyn SpdOperator>,
        x0: DVector<f64>,
        y_hat: DVector<f64>,
        delta: f64,
    ) -> Result<Self> {
        let (n, m) = (forward.domain_dim(), forward.range_dim());
        let mismatch = |what: &str, got: usize, want: usize| {
            Err(Error::DimensionMismatch(format!(
                "{what} has dimension {got}, expected {want}"
            )))
        };
        if x0.len() != n {
            return mismatch("x0", x0.len(), n);
        }
        if prior_cov.dim() != n {
            return mismatch("prior covariance", prior_cov.dim(), n);
        }
        if y_hat.len() != m {
            return mismatch("y_hat", y_hat.len(), m);
        }
        if noise_weight.dim() != m {
            return mismatch("noise weight", noise_weight.dim(), m);
        }
        if !(delta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise level must be >= 0, got {delta}"
            )));
        }
        Ok(Self {
            forward,
            noise_weight,
            prior_cov,
            x0,
            y_hat,
            delta,
            rl_bound: None,
        })
    }

    pub fn with_rl_bound(mut self, bound: f64) -> Self {
        self.rl_bound = Some(bound);
        self
    }

    pub fn with_x0(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.x0.len() {
            return Err(Error::DimensionMismatch("x0".into()));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn forward(&self) -> &Arc<dyn LinearMap> {
        &self.forward
    }
    pub fn noise_weight(&self) -> &Arc<dyn SpdOperator> {
        &self.noise_weight
    }
    pub fn prior_cov(&self) -> &Arc<dyn SpdOperator> {
        &self.prior_cov
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn y_hat(&self) -> &DVector<f64> {
        &self.y_hat
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn domain_dim(&self) -> usize {
        self.forward.domain_dim()
    }
    pub fn range_dim(&self) -> usize {
        self.forward.range_dim()
    }

    /// `R^{-1/2}(ŷ − L x)`.
    pub fn whitened_residual(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.noise_weight
            .apply_inv_sqrt(&(&self.y_hat - self.forward.apply(x)))
    }

    /// `‖ŷ − L x‖_R`.
    pub fn residual_norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.whitened_residual(x)?.norm())
    }

    /// `R^{-1/2} L A`, one forward apply per column.
    pub fn whitened_forward_columns(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.noise_weight
            .apply_inv_sqrt_columns(&self.forward.apply_columns(a))
    }

    /// Dense `R^{-1/2} L` (m×n).
    pub fn whitened_forward_dense(&self) -> Result<DMatrix<f64>> {
        self.noise_weight
            .apply_inv_sqrt_columns(&self.forward.to_dense())
    }

    /// The bound `c_RL ≥ ‖R^{-1/2} L‖`: the supplied value, or a power
    /// iteration estimate.
    pub fn rl_bound(&self) -> Result<f64> {
        match self.rl_bound {
            Some(b) => Ok(b),
            None => estimate_rl_bound(self),
        }
    }
}

/// Power iteration for `‖R^{-1/2} L‖` on `(R^{-1/2}L)*(R^{-1/2}L)`:
/// at most 50 iterations, stopping once the relative change is below 1e-6.
pub fn estimate_rl_bound(problem: &InverseProblem) -> Result<f64> {
    let n = problem.domain_dim();
    let mut v = GaussianSampler::new(0).vector(n);
    let mut estimate = 0.0_f64;
    for _ in 0..50 {
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v /= norm;
        let bv = problem
            .noise_weight
            .apply_inv_sqrt(&problem.forward.apply(&v))?;
        let w = problem
            .forward
            .apply_adjoint(&problem.noise_weight.apply_inv_sqrt(&bv)?)?;
        let next = w.norm().sqrt();
        let change = (next - estimate).abs() / next.max(f64::MIN_POSITIVE);
        estimate = next;
        v = w;
        if change < 1e-6 {
            break;
        }
    }
    Ok(estimate)
}

/// Cholesky solve of `G X = rhs` with a backward-error check.
pub(crate) fn solve_spd(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = g.clone().cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "{}x{} system is not positive definite",
            g.nrows(),
            g.ncols()
        ))
    })?;
    let x = chol.solve(rhs);
    check_backward_error(g, &x, rhs)?;
    Ok(x)
}

fn solve_spd_vec(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_spd(g, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(x.column(0).into_owned())
}

fn check_backward_error(g: &DMatrix<f64>, x: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<()> {
    let denom = g.norm() * x.norm() + rhs.norm();
    if denom == 0.0 {
        return Ok(());
    }
    let rel = (g * x - rhs).norm() / denom;
    if !(rel <= INNER_SOLVE_TOL) {
        return Err(Error::Singular(format!("inner solve residual {rel:.3e}")));
    }
    Ok(())
}

/// Tikhonov-regularized solution
/// `x̂_α = x₀ + C₀L*(LC₀L* + αR)^{-1}(ŷ − Lx₀)`.
///
/// Solves in data space when `m ≤ n` and in the `C₀^{1/2}`-preconditioned
/// parameter space otherwise. The parameter-space route needs
/// `C₀.apply_sqrt`; without it the data-space route is used regardless.
pub fn tikhonov_solve(problem: &InverseProblem, alpha: f64) -> Result<DVector<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    let n = problem.domain_dim();
    let m = problem.range_dim();
    let b = problem.whitened_forward_dense()?;
    let r = problem.whitened_residual(problem.x0())?;

    if n < m {
        if let Ok(s) = problem
            .prior_cov
            .apply_sqrt_columns(&DMatrix::identity(n, n))
        {
            let bs = &b * &s;
            let mut h = symmetrize(&bs.tr_mul(&bs));
            for i in 0..n {
                h[(i, i)] += alpha;
            }
            let w = solve_spd_vec(&h, &bs.tr_mul(&r))?;
            return Ok(problem.x0() + s * w);
        }
    }
    let k = problem.prior_cov.apply_columns(&b.transpose());
    let mut g = symmetrize(&(&b * &k));
    for i in 0..m {
        g[(i, i)] += alpha;
    }
    let z = solve_spd_vec(&g, &r)?;
    Ok(problem.x0() + k * z)
}

/// Tikhonov solutions along a path of `α`, from one symmetric eigensolve.
///
/// Diagonalizes the `α`-free system matrix of [`tikhonov_solve`] (parameter
/// or data space, same choice) so each `α` costs one small product.
pub struct TikhonovPath {
    x0: DVector<f64>,
    lift: DMatrix<f64>,
    coef: DVector<f64>,
    values: DVector<f64>,
}

impl TikhonovPath {
    pub fn new(problem: &InverseProblem) -> Result<Self> {
        let n = problem.domain_dim();
        let m = problem.range_dim();
        let b = problem.whitened_forward_dense()?;
        let r = problem.whitened_residual(problem.x0())?;
        if n < m {
            if let Ok(s) = problem
                .prior_cov
                .apply_sqrt_columns(&DMatrix::identity(n, n))
            {
                let bs = &b * &s;
                let eig = sym_eig(&symmetrize(&bs.tr_mul(&bs)))?;
                let coef = eig.vectors.tr_mul(&bs.tr_mul(&r));
                return Ok(Self {
                    x0: problem.x0().clone(),
                    lift: s * &eig.vectors,
                    coef,
                    values: eig.values,
                });
            }
        }
        let k = problem.prior_cov.apply_columns(&b.transpose());
        let eig = sym_eig(&symmetrize(&(&b * &k)))?;
        let coef = eig.vectors.tr_mul(&r);
        Ok(Self {
            x0: problem.x0().clone(),
            lift: k * &eig.vectors,
            coef,
            values: eig.values,
        })
    }

    pub fn solve(&self, alpha: f64) -> Result<DVector<f64>> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
        let w = self
            .coef
            .zip_map(&self.values, |c, l| c / (l.max(0.0) + alpha));
        Ok(&self.x0 + &self.lift * w)
    }
}

/// Value of the Tikhonov functional `‖ŷ − Lx‖²_R + α‖x − x₀‖²_{C₀}`.
pub fn tikhonov_objective(problem: &InverseProblem, alpha: f64, x: &DVector<f64>) -> Result<f64> {
    let misfit = problem.residual_norm(x)?.powi(2);
    let penalty = problem
        .prior_cov
        .apply_inv_sqrt(&(x - problem.x0()))?
        .norm_squared();
    Ok(misfit + alpha * penalty)
}

/// Direct EKI with a fixed factor, prepared for repeated solves over `α`.
///
/// Holds `B = R^{-1/2} L A`, `BᵀB` and `Bᵀ R^{-1/2}(ŷ − L x₀)`.
pub struct DirectEki<'a> {
    problem: &'a InverseProblem,
    factor: &'a LowRankFactor,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl<'a> DirectEki<'a> {
    pub fn new(problem: &'a InverseProblem, factor: &'a LowRankFactor) -> Result<Self> {
        if factor.dim() != problem.domain_dim() {
            return Err(Error::DimensionMismatch(format!(
                "factor has {} rows, problem dimension is {}",
                factor.dim(),
                problem.domain_dim()
            )));
        }
        let b = problem.whitened_forward_columns(factor.columns())?;
        let gram = symmetrize(&b.tr_mul(&b));
        let rhs = b.tr_mul(&problem.whitened_residual(problem.x0())?);
        Ok(Self {
            problem,
            factor,
            gram,
            rhs,
        })
    }

    /// `x₀ + A (BᵀB + αI)^{-1} Bᵀ R^{-1/2}(ŷ − L x₀)`.
    pub fn solve(&self, alpha: f64) -> Result<DVector<f64>> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be > 0, got {alpha}"
            )));
        }
        if self.factor.rank() == 0 {
            return Ok(self.problem.x0().clone());
        }
        let mut g = self.gram.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += alpha;
        }
        let c = solve_spd_vec(&g, &self.rhs)?;
        Ok(self.problem.x0() + self.factor.columns() * c)
    }
}

pub fn direct_eki(
    problem: &InverseProblem,
    factor: &LowRankFactor,
    alpha: f64,
) -> Result<DVector<f64>> {
    DirectEki::new(problem, factor)?.solve(alpha)
}

/// State of the square-root EKI iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EkiState {
    pub k: usize,
    pub x_hat: DVector<f64>,
    pub factor: LowRankFactor,
}

impl EkiState {
    pub fn initial(problem: &InverseProblem, factor: LowRankFactor) -> Self {
        Self {
            k: 0,
            x_hat: problem.x0().clone(),
            factor,
        }
    }
}

/// One square-root EKI step:
/// `X̂ ← X̂ + A(BᵀB + I)^{-1}Bᵀ R^{-1/2}(ŷ − LX̂)`, `A ← A(BᵀB + I)^{-1/2}`.
pub fn eki_step_sqrt(problem: &InverseProblem, state: &EkiState) -> Result<EkiState> {
    if state.x_hat.len() != problem.domain_dim() || state.factor.dim() != problem.domain_dim() {
        return Err(Error::DimensionMismatch(
            "EKI state does not match problem".into(),
        ));
    }
    let a = state.factor.columns();
    let j = a.ncols();
    let b = problem.whitened_forward_columns(a)?;
    let mut g = symmetrize(&b.tr_mul(&b));
    for i in 0..j {
        g[(i, i)] += 1.0;
    }
    let rhs = b.tr_mul(&problem.whitened_residual(&state.x_hat)?);
    let c = solve_spd_vec(&g, &rhs)?;
    let x_hat = &state.x_hat + a * c;
    let next = a * inv_sqrt_psd(&g, DEFAULT_CLAMP_TOL)?;
    Ok(EkiState {
        k: state.k + 1,
        x_hat,
        factor: LowRankFactor::new(next),
    })
}

/// Runs `steps` square-root EKI steps from `(x₀, A)`.
pub fn eki_run(problem: &InverseProblem, factor: LowRankFactor, steps: usize) -> Result<EkiState> {
    let mut state = EkiState::initial(problem, factor);
    for _ in 0..steps {
        state = eki_step_sqrt(problem, &state)?;
    }
    Ok(state)
}

/// One covariance-form step:
/// `x ← x + CL*(LCL* + R)^{-1}(ŷ − Lx)`, `C ← C − CL*(LCL* + R)^{-1}LC`.
///
/// Materializes `C` densely; intended for test-scale problems.
pub fn eki_step_cov(
    problem: &InverseProblem,
    x: &DVector<f64>,
    cov: &dyn SpdOperator,
) -> Result<(DVector<f64>, DenseSpd)> {
    let n = problem.domain_dim();
    if x.len() != n || cov.dim() != n {
        return Err(Error::DimensionMismatch(
            "covariance step inputs do not match problem".into(),
        ));
    }
    let c = cov.to_dense();
    let l = problem.forward.to_dense();
    let k = &c * l.transpose();
    let mut g = symmetrize(&(&l * &k));
    g += problem.noise_weight.to_dense();
    let innovation = problem.y_hat() - problem.forward.apply(x);
    let z = solve_spd_vec(&g, &innovation)?;
    let x_next = x + &k * z;
    let gain = solve_spd(&g, &k.transpose())?;
    let c_next = symmetrize(&(c - &k * gain));
    Ok((x_next, DenseSpd::new(c_next)?))
}

/// Final ensemble and its mean.
#[derive(Debug, Clone)]
pub struct StochasticEkiOutcome {
    pub ensemble: DMatrix<f64>,
    pub mean: DVector<f64>,
}

/// Perturbed-observation EKI started from `J` iid draws `N(x₀, C₀)`.
pub fn stochastic_eki_run(
    problem: &InverseProblem,
    ensemble_size: usize,
    steps: usize,
    rng: &mut GaussianSampler,
) -> Result<StochasticEkiOutcome> {
    if ensemble_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "stochastic EKI needs J >= 2, got {ensemble_size}"
        )));
    }
    let n = problem.domain_dim();
    let z = rng.matrix(n, ensemble_size);
    let mut ensemble = problem.prior_cov.apply_sqrt_columns(&z)?;
    for mut col in ensemble.column_iter_mut() {
        col += problem.x0();
    }
    stochastic_eki_from(problem, ensemble, steps, rng)
}

/// Perturbed-observation EKI from an explicit initial ensemble (columns).
///
/// Each step recomputes the sample covariance `C = (1/J) Σ (X_j − X̄)(X_j − X̄)ᵀ`
/// and moves every member by `CL*(LCL* + R)^{-1}(ŷ + ξ_j − LX_j)` with fresh
/// `ξ_j ~ N(0, R)`.
pub fn stochastic_eki_from(
    problem: &InverseProblem,
    mut ensemble: DMatrix<f64>,
    steps: usize,
    rng: &mut GaussianSampler,
) -> Result<StochasticEkiOutcome> {
    let (n, j) = ensemble.shape();
    if n != problem.domain_dim() {
        return Err(Error::DimensionMismatch(
            "ensemble rows must equal the parameter dimension".into(),
        ));
    }
    if j < 2 {
        return Err(Error::InvalidArgument(format!(
            "stochastic EKI needs J >= 2, got {j}"
        )));
    }
    let m = problem.range_dim();
    let r = problem.noise_weight.to_dense();
    for _ in 0..steps {
        let anomaly = ensemble_anomaly(&ensemble)?.into_columns();
        let l_anomaly = problem.forward.apply_columns(&anomaly);
        let k = &anomaly * l_anomaly.transpose();
        let g = symmetrize(&(&l_anomaly * l_anomaly.transpose())) + &r;
        let xi = problem.noise_weight.apply_sqrt_columns(&rng.matrix(m, j))?;
        let mut innovation = xi - problem.forward.apply_columns(&ensemble);
        for mut col in innovation.column_iter_mut() {
            col += problem.y_hat();
        }
        ensemble += k * solve_spd(&g, &innovation)?;
    }
    let mean = ensemble.column_mean();
    Ok(StochasticEkiOutcome { ensemble, mean })
}
