//! Adaptive EKI: direct EKI along a geometric `α`-schedule whose sample size
//! grows so that `α_k J_k^γ` stays bounded below, stopped by the discrepancy
//! principle.

use std::fmt;
use std::time::Instant;

use log::debug;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lowrank::{Backend, GaussianSampler};
use crate::solvers::{direct_eki, InverseProblem, TikhonovPath};

/// Parameters of the adaptive iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub alpha0: f64,
    pub j0: usize,
    /// Geometric decay factor of `α`, in `(0, 1)`.
    pub b: f64,
    /// Order of the low-rank approximation.
    pub gamma: f64,
    /// Discrepancy safety factor, `> 1`.
    pub tau: f64,
    /// Projection radius around `x₀`; infinite disables projection.
    pub radius: f64,
    pub backend: Backend,
    pub max_iter: usize,
    pub seed: u64,
    /// Shift of the sample-size exponent: `J_k = ⌈b^{-(k - offset)/γ} J₀⌉`.
    /// `0` follows the textbook schedule, `1` makes `J₁ = J₀`.
    pub index_offset: u32,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            j0: 50,
            b: 0.8,
            gamma: 1.0,
            tau: 1.2,
            radius: f64::INFINITY,
            backend: Backend::Nystroem,
            max_iter: 100,
            seed: 0,
            index_offset: 0,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.alpha0 > 0.0) {
            return bad(format!("alpha0 must be > 0, got {}", self.alpha0));
        }
        if self.j0 == 0 {
            return bad("j0 must be >= 1".into());
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return bad(format!("b must lie in (0, 1), got {}", self.b));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.tau > 1.0) {
            return bad(format!("tau must be > 1, got {}", self.tau));
        }
        if !(self.radius > 0.0) {
            return bad(format!("radius must be > 0, got {}", self.radius));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        Ok(())
    }
}

/// Relative distance to the nearest integer below which a schedule value is
/// snapped before rounding up, so that rounding noise cannot bump `J_k`.
const CEIL_SNAP: f64 = 1e-12;

fn ceil_snapped(x: f64) -> f64 {
    let nearest = x.round();
    if (x - nearest).abs() <= CEIL_SNAP * x.abs().max(1.0) {
        nearest
    } else {
        x.ceil()
    }
}

/// `(α_k, J_k) = (b^k α₀, ⌈b^{-(k-offset)/γ} J₀⌉)`.
pub fn schedule(config: &AdaptiveConfig, k: usize) -> (f64, usize) {
    let alpha = config.b.powi(k as i32) * config.alpha0;
    let exponent = -(k as f64 - config.index_offset as f64) / config.gamma;
    let j = ceil_snapped(config.b.powf(exponent) * config.j0 as f64);
    (alpha, j.max(1.0) as usize)
}

/// Orthogonal projection onto the closed ball of radius `r` around `x₀`.
pub fn project_ball(x: &DVector<f64>, x0: &DVector<f64>, r: f64) -> (DVector<f64>, bool) {
    let d = x - x0;
    let dist = d.norm();
    if dist <= r {
        (x.clone(), false)
    } else {
        (x0 + d * (r / dist), true)
    }
}

/// Discrepancy principle: `residual ≤ τδ`.
pub fn discrepancy_stop(residual: f64, tau: f64, delta: f64) -> bool {
    residual <= tau * delta
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha: f64,
    pub j: usize,
    /// `‖ŷ − L X̂_k‖_R`.
    pub residual: f64,
    pub e_rel: Option<f64>,
    pub e_app: Option<f64>,
    pub projected: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Discrepancy,
    /// `J_k` exceeded the parameter dimension.
    SampleCap,
    MaxIter,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::SampleCap => "sample_cap",
            StopReason::MaxIter => "max_iter",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub solution: DVector<f64>,
    pub records: Vec<IterationRecord>,
    pub stopped_by: StopReason,
}

impl AdaptiveOutcome {
    pub fn final_record(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

/// Optional per-iteration error metrics.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics<'a> {
    /// Ground truth for `e_rel = ‖X̂ − x*‖/‖x*‖`.
    pub truth: Option<&'a DVector<f64>>,
    /// Also compute `e_app = ‖X̂ − x̂_α‖/‖x*‖` against Tikhonov (requires `truth`).
    pub tikhonov: bool,
}

pub fn adaptive_run(problem: &InverseProblem, config: &AdaptiveConfig) -> Result<AdaptiveOutcome> {
    adaptive_run_with(problem, config, &Diagnostics::default())
}

/// Adaptive EKI loop.
///
/// For `k = 1, 2, …`: draw a fresh factor of size `J_k` (stream `k` of the
/// configured seed), solve direct EKI at `α_k`, project stochastic iterates
/// that leave the ball, and stop once the residual reaches `τδ`. The loop
/// also stops before any iteration whose `J_k` exceeds `n`, and after
/// `max_iter` iterations.
pub fn adaptive_run_with(
    problem: &InverseProblem,
    config: &AdaptiveConfig,
    diagnostics: &Diagnostics<'_>,
) -> Result<AdaptiveOutcome> {
    config.validate()?;
    let n = problem.domain_dim();
    let base = GaussianSampler::new(config.seed);
    let truth_norm = match diagnostics.truth {
        Some(t) => {
            let norm = t.norm();
            if norm == 0.0 {
                return Err(Error::InvalidArgument(
                    "ground truth must be nonzero".into(),
                ));
            }
            Some(norm)
        }
        None => None,
    };

    let reference = match truth_norm {
        Some(_) if diagnostics.tikhonov => Some(TikhonovPath::new(problem)?),
        _ => None,
    };

    let mut records = Vec::new();
    let mut solution = problem.x0().clone();
    for k in 1..=config.max_iter {
        let (alpha, j) = schedule(config, k);
        if j > n {
            debug!("k={k}: J={j} exceeds n={n}, stopping");
            return Ok(AdaptiveOutcome {
                solution,
                records,
                stopped_by: StopReason::SampleCap,
            });
        }
        let at = |e: Error| Error::AtIteration {
            k,
            source: Box::new(e),
        };
        let started = Instant::now();
        let mut rng = base.split(k as u64);
        let factor = config
            .backend
            .generate(problem.prior_cov().as_ref(), j, &mut rng)
            .map_err(at)?;
        let mut x = direct_eki(problem, &factor, alpha).map_err(at)?;
        let mut projected = false;
        if config.backend.is_stochastic() {
            let (p, hit) = project_ball(&x, problem.x0(), config.radius);
            x = p;
            projected = hit;
        }
        let residual = problem.residual_norm(&x).map_err(at)?;
        let wall_time = started.elapsed().as_secs_f64();

        let e_rel = match (diagnostics.truth, truth_norm) {
            (Some(t), Some(tn)) => Some((&x - t).norm() / tn),
            _ => None,
        };
        let e_app = match (&reference, truth_norm) {
            (Some(path), Some(tn)) => Some((&x - path.solve(alpha).map_err(at)?).norm() / tn),
            _ => None,
        };
        debug!("k={k} alpha={alpha:.4e} J={j} residual={residual:.6e}");
        records.push(IterationRecord {
            k,
            alpha,
            j,
            residual,
            e_rel,
            e_app,
            projected,
            wall_time,
        });
        solution = x;
        if discrepancy_stop(residual, config.tau, problem.delta()) {
            return Ok(AdaptiveOutcome {
                solution,
                records,
                stopped_by: StopReason::Discrepancy,
            });
        }
    }
    Ok(AdaptiveOutcome {
        solution,
        records,
        stopped_by: StopReason::MaxIter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(b: f64, gamma: f64, j0: usize) -> AdaptiveConfig {
        AdaptiveConfig {
            b,
            gamma,
            j0,
            ..AdaptiveConfig::default()
        }
    }

    #[test]
    fn schedule_at_zero() {
        assert_eq!(schedule(&cfg(0.8, 1.0, 50), 0), (1.0, 50));
    }

    #[test]
    fn schedule_first_step() {
        // 50 / 0.8 = 62.5
        let (alpha, j) = schedule(&cfg(0.8, 1.0, 50), 1);
        assert!((alpha - 0.8).abs() < 1e-16);
        assert_eq!(j, 63);
    }

    #[test]
    fn index_offset_shifts_sample_size_only() {
        let c = AdaptiveConfig {
            index_offset: 1,
            ..cfg(0.8, 1.0, 50)
        };
        assert_eq!(schedule(&c, 1), (0.8, 50));
        assert_eq!(schedule(&c, 2).1, 63);
    }

    #[test]
    fn ceil_snapping() {
        assert_eq!(ceil_snapped(100.0 + 1e-11), 100.0);
        assert_eq!(ceil_snapped(62.5), 63.0);
        assert_eq!(ceil_snapped(3.000001), 4.0);
    }

    #[test]
    fn projection_examples() {
        let x0 = DVector::zeros(2);
        let (p, hit) = project_ball(&x0, &x0, 1.0);
        assert_eq!((p, hit), (x0.clone(), false));
        let x = DVector::from_vec(vec![3.0, 4.0]);
        let (p, hit) = project_ball(&x, &x0, 1.0);
        assert!(hit);
        assert!((p - DVector::from_vec(vec![0.6, 0.8])).norm() < 1e-15);
        let (p, hit) = project_ball(&x, &x0, f64::INFINITY);
        assert!(!hit);
        assert_eq!(p, x);
    }

    #[test]
    fn discrepancy_boundary_is_inclusive() {
        assert!(discrepancy_stop(0.0, 1.2, 1.0));
        assert!(discrepancy_stop(1.2, 1.2, 1.0));
        assert!(!discrepancy_stop(1.2000001, 1.2, 1.0));
    }

    #[test]
    fn config_validation() {
        assert!(AdaptiveConfig::default().validate().is_ok());
        for bad in [
            AdaptiveConfig {
                b: 1.0,
                ..Default::default()
            },
            AdaptiveConfig {
                tau: 1.0,
                ..Default::default()
            },
            AdaptiveConfig {
                gamma: 0.0,
                ..Default::default()
            },
            AdaptiveConfig {
                alpha0: -1.0,
                ..Default::default()
            },
            AdaptiveConfig {
                j0: 0,
                ..Default::default()
            },
            AdaptiveConfig {
                radius: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
