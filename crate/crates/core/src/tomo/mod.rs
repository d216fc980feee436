//! Computed-tomography bench: Shepp-Logan phantom, parallel-beam Radon
//! transform and an Ornstein-Uhlenbeck prior on the pixel grid.

mod phantom;
mod radon;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use phantom::{
    disk, pixel_center, rasterize, shepp_logan, Ellipse, PhantomImage, MODIFIED_SHEPP_LOGAN,
};
pub use radon::{RadonGeometry, RadonOperator};

use crate::error::{Error, Result};
use crate::operators::{DenseSpd, Identity, LinearMap, ScaledMap, SpdOperator};
use crate::random::GaussianSampler;
use crate::solvers::InverseProblem;

/// Grid position of pixel `i` in `[0, 1]²`.
fn grid_point(i: usize, d: usize) -> (f64, f64) {
    let scale = if d > 1 { (d - 1) as f64 } else { 1.0 };
    ((i % d) as f64 / scale, (i / d) as f64 / scale)
}

/// Ornstein-Uhlenbeck covariance `exp(-‖q_i − q_j‖ / h²)` on the `d×d` grid.
pub fn ou_matrix(d: usize, h: f64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument("grid size must be >= 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation length must be > 0, got {h}"
        )));
    }
    let n = d * d;
    let h2 = h * h;
    let pts: Vec<(f64, f64)> = (0..n).map(|i| grid_point(i, d)).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
        (-(dx * dx + dy * dy).sqrt() / h2).exp()
    }))
}

pub fn ou_covariance(d: usize, h: f64) -> Result<DenseSpd> {
    DenseSpd::new(ou_matrix(d, h)?)
}

/// Noisy data rescaled so that the noise has unit norm.
#[derive(Debug, Clone)]
pub struct NoisyData {
    /// `(y + ξ) / ‖ξ‖`.
    pub y_hat: DVector<f64>,
    /// `y / ‖ξ‖`.
    pub y: DVector<f64>,
    /// Noise norm after rescaling, always 1.
    pub delta: f64,
    /// `‖ξ‖` before rescaling; the forward operator must be divided by it.
    pub scale: f64,
}

/// Adds white noise with `‖y‖ / ‖ξ‖ = snr`, then rescales data so `‖ξ‖ = 1`.
pub fn make_noisy_data(y: &DVector<f64>, snr: f64, rng: &mut GaussianSampler) -> Result<NoisyData> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "snr must be finite and > 0, got {snr}"
        )));
    }
    let y_norm = y.norm();
    if y_norm == 0.0 || y.is_empty() {
        return Err(Error::InvalidArgument("exact data is zero".into()));
    }
    let raw = loop {
        let v = rng.vector(y.len());
        if v.norm() > 0.0 {
            break v;
        }
    };
    let xi = &raw * (y_norm / (snr * raw.norm()));
    let scale = xi.norm();
    Ok(NoisyData {
        y_hat: (y + &xi) / scale,
        y: y / scale,
        delta: 1.0,
        scale,
    })
}

/// Relative reconstruction and approximation errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub e_rel: f64,
    pub e_app: Option<f64>,
}

/// `‖x − x*‖ / ‖x*‖` and, given the Tikhonov solution, `‖x − x_α‖ / ‖x*‖`.
pub fn metrics(
    x: &DVector<f64>,
    x_star: &DVector<f64>,
    x_tik: Option<&DVector<f64>>,
) -> Result<Metrics> {
    let norm = x_star.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("reference solution is zero".into()));
    }
    if x.len() != x_star.len() || x_tik.is_some_and(|t| t.len() != x.len()) {
        return Err(Error::DimensionMismatch(
            "metric vectors differ in length".into(),
        ));
    }
    Ok(Metrics {
        e_rel: (x - x_star).norm() / norm,
        e_app: x_tik.map(|t| (x - t).norm() / norm),
    })
}

/// Setup of the tomography bench.
#[derive(Debug, Clone, PartialEq)]
pub struct TomoConfig {
    pub d: usize,
    pub h: f64,
    pub snr: f64,
    pub seed: u64,
    pub geometry: Option<RadonGeometry>,
}

impl Default for TomoConfig {
    fn default() -> Self {
        Self {
            d: 32,
            h: DEFAULT_OU_LENGTH,
            snr: 10.0,
            seed: 0,
            geometry: None,
        }
    }
}

/// Default OU length scale for the 32×32 bench. The kernel divides by `h²`,
/// so `h = 0.01` makes `C₀` numerically the identity at this size; `0.25`
/// keeps a decaying spectrum (λ₁ ≈ 22, λ₁₀₂₄ ≈ 0.2).
pub const DEFAULT_OU_LENGTH: f64 = 0.25;

/// Assembled tomography problem.
#[derive(Clone)]
pub struct TomoBench {
    pub problem: InverseProblem,
    pub truth: DVector<f64>,
    pub radon: Arc<RadonOperator>,
    pub prior: Arc<DenseSpd>,
    pub data: NoisyData,
}

impl TomoBench {
    pub fn build(config: &TomoConfig) -> Result<Self> {
        let geometry = config
            .geometry
            .unwrap_or_else(|| RadonGeometry::for_image(config.d));
        if geometry.d != config.d {
            return Err(Error::InvalidArgument(
                "geometry and image size differ".into(),
            ));
        }
        let radon = Arc::new(RadonOperator::new(geometry)?);
        let prior = Arc::new(ou_covariance(config.d, config.h)?);
        Self::assemble(config, radon, prior)
    }

    /// Reuses an existing operator and prior, redrawing only the noise.
    pub fn assemble(
        config: &TomoConfig,
        radon: Arc<RadonOperator>,
        prior: Arc<DenseSpd>,
    ) -> Result<Self> {
        let truth = shepp_logan(config.d).pixels;
        let exact = radon.apply(&truth);
        let mut rng = GaussianSampler::new(config.seed);
        let data = make_noisy_data(&exact, config.snr, &mut rng)?;
        let forward: Arc<dyn LinearMap> = Arc::new(ScaledMap::new(radon.clone(), 1.0 / data.scale));
        let m = forward.range_dim();
        let n = forward.domain_dim();
        let prior_dyn: Arc<dyn SpdOperator> = prior.clone();
        let problem = InverseProblem::new(
            forward,
            Arc::new(Identity(m)),
            prior_dyn,
            DVector::zeros(n),
            data.y_hat.clone(),
            data.delta,
        )?;
        Ok(Self {
            problem,
            truth,
            radon,
            prior,
            data,
        })
    }
}
