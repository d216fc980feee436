//! Matrix-free linear operators.
//!
//! [`LinearMap`] is a forward map between coordinate spaces with an optional
//! adjoint; [`SpdOperator`] is a self-adjoint positive semidefinite operator
//! that may also expose its square root and pseudoinverse square root. The
//! forward operator `L`, the noise weighting `R` and the prior covariance
//! `C₀` of an inverse problem are all expressed through these two traits.
//!
//! Implementations must be callable concurrently on distinct vectors; the
//! default column-wise helpers fan out over rayon.

mod dense;

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::random::GaussianSampler;

pub(crate) use dense::symmetrize;
pub use dense::{
    inv_sqrt_psd, reduced_qr, sqrt_psd, sym_eig, SymEig, DEFAULT_CLAMP_TOL, SYMMETRY_TOL,
};

fn map_columns<F>(m: &DMatrix<f64>, rows: usize, f: F) -> DMatrix<f64>
where
    F: Fn(DVector<f64>) -> DVector<f64> + Sync,
{
    let cols: Vec<DVector<f64>> = (0..m.ncols())
        .into_par_iter()
        .map(|j| f(m.column(j).into_owned()))
        .collect();
    if cols.is_empty() {
        return DMatrix::zeros(rows, 0);
    }
    DMatrix::from_columns(&cols)
}

fn try_map_columns<F>(m: &DMatrix<f64>, rows: usize, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let cols = (0..m.ncols())
        .into_par_iter()
        .map(|j| f(m.column(j).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(DMatrix::zeros(rows, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Linear map `ℝⁿ → ℝᵐ` given by its action on vectors.
///
/// `apply` panics if the argument length differs from `domain_dim`.
pub trait LinearMap: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    fn has_adjoint(&self) -> bool {
        false
    }

    fn apply_adjoint(&self, _y: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::AdjointUnavailable)
    }

    /// Applies the map to every column of `m`.
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        map_columns(m, self.range_dim(), |c| self.apply(&c))
    }

    fn apply_adjoint_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        try_map_columns(m, self.domain_dim(), |c| self.apply_adjoint(&c))
    }

    /// Dense `m×n` matrix of the map, assembled from `n` forward applies.
    fn to_dense(&self) -> DMatrix<f64> {
        self.apply_columns(&DMatrix::identity(self.domain_dim(), self.domain_dim()))
    }
}

/// Self-adjoint positive semidefinite operator on `ℝⁿ`.
pub trait SpdOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;

    fn apply_sqrt(&self, _v: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::CapabilityUnavailable("apply_sqrt"))
    }

    /// Pseudoinverse of the square root.
    fn apply_inv_sqrt(&self, _v: &DVector<f64>) -> Result<DVector<f64>> {
        Err(Error::CapabilityUnavailable("apply_inv_sqrt"))
    }

    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        map_columns(m, self.dim(), |c| self.apply(&c))
    }

    fn apply_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        try_map_columns(m, self.dim(), |c| self.apply_sqrt(&c))
    }

    fn apply_inv_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        try_map_columns(m, self.dim(), |c| self.apply_inv_sqrt(&c))
    }

    fn to_dense(&self) -> DMatrix<f64> {
        symmetrize(&self.apply_columns(&DMatrix::identity(self.dim(), self.dim())))
    }

    /// Eigendecomposition of the operator. The default assembles the dense
    /// matrix; implementations with cheaper or cached spectra override it.
    fn spectrum(&self) -> Result<Arc<SymEig>> {
        sym_eig(&self.to_dense()).map(Arc::new)
    }
}

/// Max relative defect `|⟨Lx,y⟩ − ⟨x,L*y⟩| / (‖Lx‖‖y‖ + ε)` over `trials`
/// pairs of Gaussian vectors.
pub fn adjoint_test(op: &dyn LinearMap, trials: usize, seed: u64) -> Result<f64> {
    if !op.has_adjoint() {
        return Err(Error::AdjointUnavailable);
    }
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "adjoint_test needs trials >= 1".into(),
        ));
    }
    let mut rng = GaussianSampler::new(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let x = rng.vector(op.domain_dim());
        let y = rng.vector(op.range_dim());
        let lx = op.apply(&x);
        let lty = op.apply_adjoint(&y)?;
        let defect = (lx.dot(&y) - x.dot(&lty)).abs() / (lx.norm() * y.norm() + f64::EPSILON);
        worst = worst.max(defect);
    }
    Ok(worst)
}

/// `‖x‖_P = ‖P^{-1/2} x‖` for a weight `P` exposing its inverse square root.
#[derive(Clone)]
pub struct WeightedNorm {
    weight: Arc<dyn SpdOperator>,
}

impl WeightedNorm {
    pub fn new(weight: Arc<dyn SpdOperator>) -> Self {
        Self { weight }
    }

    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.weight.apply_inv_sqrt(x)?.norm())
    }
}

/// A dense matrix as a linear map; the adjoint is the transpose.
#[derive(Debug, Clone)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn range_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.matrix.tr_mul(y))
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * m
    }
    fn apply_adjoint_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.tr_mul(m))
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Square diagonal map `x ↦ diag(d) x`.
#[derive(Debug, Clone)]
pub struct DiagonalMap {
    diag: DVector<f64>,
}

impl DiagonalMap {
    pub fn new(diag: DVector<f64>) -> Self {
        Self { diag }
    }
    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }
}

impl LinearMap for DiagonalMap {
    fn domain_dim(&self) -> usize {
        self.diag.len()
    }
    fn range_dim(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.diag.component_mul(x)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.diag.component_mul(y))
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            col.component_mul_assign(&self.diag);
        }
        out
    }
}

/// The zero map `ℝⁿ → ℝᵐ`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroMap {
    pub domain: usize,
    pub range: usize,
}

impl LinearMap for ZeroMap {
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn range_dim(&self) -> usize {
        self.range
    }
    fn apply(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.range)
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn apply_adjoint(&self, _y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.domain))
    }
}

type VecFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Linear map defined by closures.
pub struct FnMap {
    domain: usize,
    range: usize,
    forward: VecFn,
    adjoint: Option<VecFn>,
}

impl FnMap {
    pub fn new(
        domain: usize,
        range: usize,
        forward: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            domain,
            range,
            forward: Box::new(forward),
            adjoint: None,
        }
    }

    pub fn with_adjoint(
        mut self,
        adjoint: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.adjoint = Some(Box::new(adjoint));
        self
    }
}

impl LinearMap for FnMap {
    fn domain_dim(&self) -> usize {
        self.domain
    }
    fn range_dim(&self) -> usize {
        self.range
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.forward)(x)
    }
    fn has_adjoint(&self) -> bool {
        self.adjoint.is_some()
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.adjoint
            .as_ref()
            .map(|f| f(y))
            .ok_or(Error::AdjointUnavailable)
    }
}

/// `c · L` for a shared map `L`.
#[derive(Clone)]
pub struct ScaledMap {
    inner: Arc<dyn LinearMap>,
    factor: f64,
}

impl ScaledMap {
    pub fn new(inner: Arc<dyn LinearMap>, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl LinearMap for ScaledMap {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn range_dim(&self) -> usize {
        self.inner.range_dim()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.apply(x) * self.factor
    }
    fn has_adjoint(&self) -> bool {
        self.inner.has_adjoint()
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.inner.apply_adjoint(y)? * self.factor)
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.inner.apply_columns(m) * self.factor
    }
    fn apply_adjoint_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.inner.apply_adjoint_columns(m)? * self.factor)
    }
}

/// Identity operator on `ℝⁿ`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearMap for Identity {
    fn domain_dim(&self) -> usize {
        self.0
    }
    fn range_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn has_adjoint(&self) -> bool {
        true
    }
    fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(y.clone())
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone()
    }
}

impl SpdOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }
    fn apply_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v.clone())
    }
    fn apply_inv_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(v.clone())
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.clone()
    }
    fn apply_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(m.clone())
    }
    fn apply_inv_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(m.clone())
    }
    fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::identity(self.0, self.0)
    }
    fn spectrum(&self) -> Result<Arc<SymEig>> {
        Ok(Arc::new(SymEig {
            values: DVector::from_element(self.0, 1.0),
            vectors: DMatrix::identity(self.0, self.0),
        }))
    }
}

/// Diagonal PSD operator `diag(d)`, `d ≥ 0`.
#[derive(Debug, Clone)]
pub struct DiagonalOp {
    diag: DVector<f64>,
    clamp_tol: f64,
}

impl DiagonalOp {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if let Some(bad) = diag.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "diagonal operator entries must be >= 0, got {bad}"
            )));
        }
        Ok(Self {
            diag,
            clamp_tol: DEFAULT_CLAMP_TOL,
        })
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }

    fn threshold(&self) -> f64 {
        self.clamp_tol * self.diag.max().max(0.0)
    }
}

impl SpdOperator for DiagonalOp {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.diag.component_mul(v)
    }
    fn apply_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.diag.map(f64::sqrt).component_mul(v))
    }
    fn apply_inv_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let t = self.threshold();
        Ok(self
            .diag
            .map(|d| if d > t { 1.0 / d.sqrt() } else { 0.0 })
            .component_mul(v))
    }
    fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }
    fn spectrum(&self) -> Result<Arc<SymEig>> {
        let n = self.diag.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.diag[b].total_cmp(&self.diag[a]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| self.diag[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            vectors[(i, col)] = 1.0;
        }
        Ok(Arc::new(SymEig { values, vectors }))
    }
}

/// Dense symmetric PSD matrix with lazily computed, cached spectrum.
///
/// Square roots use the eigendecomposition; eigenvalues at or below
/// `clamp_tol · λ_max` count as zero.
#[derive(Debug)]
pub struct DenseSpd {
    matrix: DMatrix<f64>,
    clamp_tol: f64,
    eig: OnceLock<Arc<SymEig>>,
}

impl Clone for DenseSpd {
    fn clone(&self) -> Self {
        let eig = OnceLock::new();
        if let Some(e) = self.eig.get() {
            let _ = eig.set(e.clone());
        }
        Self {
            matrix: self.matrix.clone(),
            clamp_tol: self.clamp_tol,
            eig,
        }
    }
}

impl DenseSpd {
    /// Wraps a symmetric matrix. Positivity is checked when the spectrum is
    /// first needed.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_clamp(matrix, DEFAULT_CLAMP_TOL)
    }

    pub fn with_clamp(matrix: DMatrix<f64>, clamp_tol: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let scale = matrix.norm();
        if scale > 0.0 {
            let defect = (&matrix - matrix.transpose()).norm() / scale;
            if defect > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { defect });
            }
        }
        Ok(Self {
            matrix: symmetrize(&matrix),
            clamp_tol,
            eig: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn eig(&self) -> Result<&Arc<SymEig>> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = sym_eig(&self.matrix)?;
        e.check_psd(self.clamp_tol)?;
        Ok(self.eig.get_or_init(|| Arc::new(e)))
    }

    fn spectral_apply(&self, m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
        let eig = self.eig()?;
        let t = eig.clamp_threshold(self.clamp_tol);
        let mut coeffs = eig.vectors.tr_mul(m);
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            let l = eig.values[i];
            row *= if l > t { f(l) } else { 0.0 };
        }
        Ok(&eig.vectors * coeffs)
    }
}

impl SpdOperator for DenseSpd {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
    fn apply_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.apply_sqrt_columns(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        Ok(m.column(0).into_owned())
    }
    fn apply_inv_sqrt(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let m =
            self.apply_inv_sqrt_columns(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?;
        Ok(m.column(0).into_owned())
    }
    fn apply_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * m
    }
    fn apply_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.spectral_apply(m, f64::sqrt)
    }
    fn apply_inv_sqrt_columns(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.spectral_apply(m, |l| 1.0 / l.sqrt())
    }
    fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.clone()
    }
    fn spectrum(&self) -> Result<Arc<SymEig>> {
        self.eig().cloned()
    }
}
