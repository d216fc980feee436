//! Small dense factorization kernels: symmetric eigendecomposition, PSD
//! (inverse) square roots and the reduced QR decomposition.
//!
//! All kernels are deterministic: identical input bits give identical output
//! bits.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default eigenvalue floor, relative to the largest eigenvalue.
pub const DEFAULT_CLAMP_TOL: f64 = 1e-12;

/// Relative Frobenius asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigendecomposition `M = V diag(values) Vᵀ` with eigenvalues in descending
/// order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `V diag(f(λ)) Vᵀ`, symmetrized.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_spectrum(|l| l)
    }

    /// Largest eigenvalue, or zero for an empty matrix.
    pub fn max(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values[0]
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Threshold below which eigenvalues are treated as zero.
    pub fn clamp_threshold(&self, clamp_tol: f64) -> f64 {
        clamp_tol * self.max().max(0.0)
    }

    /// Fails when an eigenvalue lies below `-clamp_tol * λ_max`.
    pub fn check_psd(&self, clamp_tol: f64) -> Result<()> {
        let threshold = self.clamp_threshold(clamp_tol);
        let min = self.min();
        if min < -threshold {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
                threshold,
            });
        }
        Ok(())
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / scale
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Ties keep the order produced by the underlying solver (stable sort).
pub fn sym_eig(matrix: &DMatrix<f64>) -> Result<SymEig> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let defect = asymmetry(matrix);
    if defect > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { defect });
    }
    let n = matrix.nrows();
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = symmetrize(matrix).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok(SymEig { values, vectors })
}

/// Pseudoinverse square root `M^{-1/2}` of a symmetric PSD matrix.
///
/// Eigenvalues at or below `clamp_tol * λ_max` are treated as zero and map
/// to zero; eigenvalues below `-clamp_tol * λ_max` are rejected.
pub fn inv_sqrt_psd(matrix: &DMatrix<f64>, clamp_tol: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(matrix)?;
    inv_sqrt_from_eig(&eig, clamp_tol)
}

pub(crate) fn inv_sqrt_from_eig(eig: &SymEig, clamp_tol: f64) -> Result<DMatrix<f64>> {
    eig.check_psd(clamp_tol)?;
    let threshold = eig.clamp_threshold(clamp_tol);
    Ok(eig.map_spectrum(|l| if l > threshold { 1.0 / l.sqrt() } else { 0.0 }))
}

/// Square root `M^{1/2}` of a symmetric PSD matrix, with the same clamping
/// rule as [`inv_sqrt_psd`].
pub fn sqrt_psd(matrix: &DMatrix<f64>, clamp_tol: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(matrix)?;
    eig.check_psd(clamp_tol)?;
    let threshold = eig.clamp_threshold(clamp_tol);
    Ok(eig.map_spectrum(|l| if l > threshold { l.sqrt() } else { 0.0 }))
}

/// Reduced QR decomposition of a tall `n×J` matrix.
///
/// `Q` is `n×J` with orthonormal columns and `R` is `J×J` upper triangular
/// with a nonnegative diagonal. Rank-deficient input is allowed: the
/// Householder construction still yields orthonormal columns, and the
/// corresponding diagonal entries of `R` vanish.
pub fn reduced_qr(columns: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, j) = columns.shape();
    if n < j {
        return Err(Error::DimensionMismatch(format!(
            "reduced QR needs rows >= columns, got {n}x{j}"
        )));
    }
    if j == 0 {
        return Ok((DMatrix::zeros(n, 0), DMatrix::zeros(0, 0)));
    }
    let qr = columns.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..j {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}
