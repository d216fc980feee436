//! Low-rank factors `A` with `A Aᵀ ≈ C₀`.
//!
//! Three generators are provided:
//!
//! * [`anomaly_factor`]: centered Gaussian ensemble `U_j ~ N(0, C₀)`, scaled by `1/√J`.
//!   Stochastic, with error decaying like `J^{-1/2}`.
//! * [`svd_factor`]: the truncated eigendecomposition `V_J diag(√λ)`. Optimal in
//!   spectral norm, error exactly `λ_{J+1}`.
//! * [`nystroem_factor`]: Gaussian sketch `C₀W`, orthonormalized to `Q`, then
//!   `A = C₀Q (QᵀC₀Q)^{-1/2}`. Stochastic, but inherits the decay of the spectrum.
//!
//! Requested ranks above the dimension are capped at `n`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::operators::{inv_sqrt_psd, reduced_qr, symmetrize, SpdOperator, DEFAULT_CLAMP_TOL};
pub use crate::random::GaussianSampler;

/// Tall `n×J` factor `A` approximating a covariance by `A Aᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    columns: DMatrix<f64>,
    requested: usize,
}

impl LowRankFactor {
    pub fn new(columns: DMatrix<f64>) -> Self {
        let requested = columns.ncols();
        Self { columns, requested }
    }

    pub fn zeros(n: usize, j: usize) -> Self {
        Self::new(DMatrix::zeros(n, j))
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_columns(self) -> DMatrix<f64> {
        self.columns
    }

    /// Parameter dimension `n`.
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    /// Number of columns `J`.
    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    /// Rank asked for before capping at `n`.
    pub fn requested_rank(&self) -> usize {
        self.requested
    }

    pub fn was_capped(&self) -> bool {
        self.requested != self.rank()
    }

    /// Dense `A Aᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        symmetrize(&(&self.columns * self.columns.transpose()))
    }
}

fn cap_rank(requested: usize, n: usize, what: &str) -> usize {
    if requested > n {
        warn!("{what}: requested rank {requested} exceeds dimension {n}; capping");
        n
    } else {
        requested
    }
}

/// Anomaly of an explicit ensemble (columns `U_j`):
/// column `j` is `(U_j − Ū)/√J` with `Ū` the arithmetic mean.
///
/// With iid members of covariance `C`, `E[A Aᵀ] = (J−1)/J · C`.
pub fn ensemble_anomaly(ensemble: &DMatrix<f64>) -> Result<LowRankFactor> {
    let j = ensemble.ncols();
    if j < 2 {
        return Err(Error::InvalidArgument(format!(
            "ensemble anomaly needs at least 2 members, got {j}"
        )));
    }
    let mean = ensemble.column_mean();
    let scale = 1.0 / (j as f64).sqrt();
    let mut a = ensemble.clone();
    for mut col in a.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }
    Ok(LowRankFactor::new(a))
}

/// Ensemble-anomaly factor from `J` samples `U_j = C₀^{1/2} z_j`.
pub fn anomaly_factor(
    c0: &dyn SpdOperator,
    j: usize,
    rng: &mut GaussianSampler,
) -> Result<LowRankFactor> {
    if j < 2 {
        return Err(Error::InvalidArgument(format!(
            "anomaly factor needs J >= 2, got {j}"
        )));
    }
    let z = rng.matrix(c0.dim(), j);
    let u = c0.apply_sqrt_columns(&z)?;
    ensemble_anomaly(&u)
}

/// `J`-truncated eigendecomposition `A = V_J diag(√λ_1, …, √λ_J)`.
pub fn svd_factor(c0: &dyn SpdOperator, j: usize) -> Result<LowRankFactor> {
    let n = c0.dim();
    let jc = cap_rank(j, n, "svd_factor");
    let eig = c0.spectrum()?;
    let mut a = eig.vectors.columns(0, jc).into_owned();
    for (i, mut col) in a.column_iter_mut().enumerate() {
        col *= eig.values[i].max(0.0).sqrt();
    }
    Ok(LowRankFactor {
        columns: a,
        requested: j,
    })
}

/// Output of the Nyström sketch: the factor together with the orthonormal
/// sketch basis `Q`.
#[derive(Debug, Clone)]
pub struct NystroemSketch {
    pub factor: LowRankFactor,
    pub basis: DMatrix<f64>,
}

/// Nyström approximation with `J` Gaussian sketches:
/// `W ~ N(0, I)`, `U = C₀W = QR`, `A = C₀Q (QᵀC₀Q)^{-1/2}`.
pub fn nystroem_sketch(
    c0: &dyn SpdOperator,
    j: usize,
    rng: &mut GaussianSampler,
) -> Result<NystroemSketch> {
    let n = c0.dim();
    let jc = cap_rank(j, n, "nystroem_factor");
    let w = rng.matrix(n, jc);
    let u = c0.apply_columns(&w);
    let (q, _) = reduced_qr(&u)?;
    let cq = c0.apply_columns(&q);
    let gram = symmetrize(&q.tr_mul(&cq));
    let m = inv_sqrt_psd(&gram, DEFAULT_CLAMP_TOL)?;
    Ok(NystroemSketch {
        factor: LowRankFactor {
            columns: cq * m,
            requested: j,
        },
        basis: q,
    })
}

pub fn nystroem_factor(
    c0: &dyn SpdOperator,
    j: usize,
    rng: &mut GaussianSampler,
) -> Result<LowRankFactor> {
    nystroem_sketch(c0, j, rng).map(|s| s.factor)
}

/// Largest singular value of a general matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral norm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let values = symmetrize(m).symmetric_eigenvalues();
    Ok(values.iter().fold(0.0_f64, |acc, l| acc.max(l.abs())))
}

/// `‖A Aᵀ − C₀‖₂` for a dense `C₀`.
pub fn approx_error(factor: &LowRankFactor, c0: &DMatrix<f64>) -> Result<f64> {
    if c0.nrows() != factor.dim() || c0.ncols() != factor.dim() {
        return Err(Error::DimensionMismatch(format!(
            "factor has {} rows but covariance is {}x{}",
            factor.dim(),
            c0.nrows(),
            c0.ncols()
        )));
    }
    sym_spectral_norm(&(factor.covariance() - c0))
}

/// Which low-rank generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Backend {
    /// Ensemble anomaly ("Standard-EKI").
    Anomaly,
    Nystroem,
    Svd,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Anomaly, Backend::Nystroem, Backend::Svd];

    /// Stochastic backends draw fresh randomness on every call.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, Backend::Svd)
    }

    pub fn generate(
        self,
        c0: &dyn SpdOperator,
        j: usize,
        rng: &mut GaussianSampler,
    ) -> Result<LowRankFactor> {
        match self {
            Backend::Anomaly => anomaly_factor(c0, j, rng),
            Backend::Nystroem => nystroem_factor(c0, j, rng),
            Backend::Svd => svd_factor(c0, j),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Anomaly => "anomaly",
            Backend::Nystroem => "nystroem",
            Backend::Svd => "svd",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "anomaly" | "standard" | "ensemble" => Ok(Backend::Anomaly),
            "nystroem" | "nystrom" | "nyström" => Ok(Backend::Nystroem),
            "svd" => Ok(Backend::Svd),
            other => Err(Error::InvalidArgument(format!("unknown backend '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{DenseSpd, DiagonalOp, Identity};
    use nalgebra::DVector;

    fn diag(v: &[f64]) -> DiagonalOp {
        DiagonalOp::new(DVector::from_vec(v.to_vec())).unwrap()
    }

    #[test]
    fn identical_members_give_zero_anomaly() {
        let col = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let ens = DMatrix::from_columns(&[col.clone(), col.clone(), col]);
        assert_eq!(ensemble_anomaly(&ens).unwrap().columns().norm(), 0.0);
    }

    #[test]
    fn two_member_anomaly_by_hand() {
        // mean (1/2, 1/2); columns (U_j - mean)/sqrt(2)
        let ens = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = ensemble_anomaly(&ens).unwrap();
        let h = 0.5 / 2f64.sqrt();
        let want = DMatrix::from_column_slice(2, 2, &[h, -h, -h, h]);
        assert!((a.columns() - want).norm() < 1e-16);
    }

    #[test]
    fn anomaly_rejects_single_member() {
        let mut rng = GaussianSampler::new(0);
        assert!(anomaly_factor(&Identity(3), 1, &mut rng).is_err());
    }

    #[test]
    fn anomaly_monte_carlo_identity() {
        let mut rng = GaussianSampler::new(2024);
        let a = anomaly_factor(&Identity(3), 4096, &mut rng).unwrap();
        let err = approx_error(&a, &DMatrix::identity(3, 3)).unwrap();
        assert!(err <= 0.2, "{err}");
    }

    #[test]
    fn svd_diagonal_examples() {
        let c = diag(&[4.0, 1.0, 0.25]);
        let a = svd_factor(&c, 1).unwrap();
        assert!((a.columns() - DMatrix::from_column_slice(3, 1, &[2.0, 0.0, 0.0])).norm() < 1e-15);
        assert!((approx_error(&a, &c.to_dense()).unwrap() - 1.0).abs() < 1e-14);
        let full = svd_factor(&c, 3).unwrap();
        assert!(approx_error(&full, &c.to_dense()).unwrap() < 1e-14);
    }

    #[test]
    fn svd_caps_rank() {
        let c = diag(&[4.0, 1.0]);
        let a = svd_factor(&c, 5).unwrap();
        assert_eq!(a.rank(), 2);
        assert_eq!(a.requested_rank(), 5);
        assert!(a.was_capped());
    }

    #[test]
    fn nystroem_on_identity_is_projector() {
        let mut rng = GaussianSampler::new(5);
        let s = nystroem_sketch(&Identity(6), 3, &mut rng).unwrap();
        let qqt = &s.basis * s.basis.transpose();
        assert!((s.factor.covariance() - qqt).norm() < 1e-12);
        let err = approx_error(&s.factor, &DMatrix::identity(6, 6)).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nystroem_nearly_rank_one() {
        let c = diag(&[1.0, 1e-8, 1e-8]);
        let mut rng = GaussianSampler::new(77);
        let a = nystroem_factor(&c, 2, &mut rng).unwrap();
        let err = approx_error(&a, &c.to_dense()).unwrap();
        assert!(err <= 2e-8, "{err}");
    }

    #[test]
    fn generators_are_deterministic_under_seed() {
        let g = GaussianSampler::new(3).matrix(6, 6);
        let c = DenseSpd::new(&g * g.transpose()).unwrap();
        for b in Backend::ALL {
            let x = b.generate(&c, 3, &mut GaussianSampler::new(10)).unwrap();
            let y = b.generate(&c, 3, &mut GaussianSampler::new(10)).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn approx_error_examples() {
        let a = LowRankFactor::zeros(2, 1);
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        assert!((approx_error(&a, &c).unwrap() - 2.0).abs() < 1e-15);
        assert!(approx_error(&LowRankFactor::zeros(3, 1), &c).is_err());
    }

    #[test]
    fn backend_parsing() {
        assert_eq!("standard".parse::<Backend>().unwrap(), Backend::Anomaly);
        assert_eq!("Nystrom".parse::<Backend>().unwrap(), Backend::Nystroem);
        assert_eq!("svd".parse::<Backend>().unwrap(), Backend::Svd);
        assert!("qr".parse::<Backend>().is_err());
    }
}
