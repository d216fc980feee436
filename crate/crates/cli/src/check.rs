//! Quick invariant suite behind `eki check`.

use eki::adaptive::{adaptive_run, AdaptiveConfig, StopReason};
use eki::lowrank::{
    approx_error, nystroem_sketch, spectral_norm, svd_factor, Backend, GaussianSampler,
    LowRankFactor,
};
use eki::operators::{adjoint_test, DenseSpd, SpdOperator};
use eki::solvers::{direct_eki, eki_run, tikhonov_solve};
use eki::synthetic::{dense_random_problem, diagonal_problem, DiagonalSpec};
use eki::tomo::{make_noisy_data, RadonGeometry, RadonOperator};
use eki::{DMatrix, DVector, Result};

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn radon_adjoint(d: usize) -> Result<(bool, String)> {
    let op = RadonOperator::new(RadonGeometry::for_image(d))?;
    let defect = adjoint_test(&op, 100, 7)?;
    Ok((defect <= 1e-8, format!("defect {defect:.2e} at d={d}")))
}

fn k_step_equivalence(seed: u64) -> Result<(bool, String)> {
    let p = dense_random_problem(12, 15, 0.1, seed)?;
    let mut rng = GaussianSampler::new(seed);
    let factor = LowRankFactor::new(rng.matrix(12, 5));
    let mut worst: f64 = 0.0;
    for k in 1..=8 {
        let stepped = eki_run(&p.problem, factor.clone(), k)?;
        let direct = direct_eki(&p.problem, &factor, 1.0 / k as f64)?;
        worst = worst.max(rel(&stepped.x_hat, &direct));
    }
    Ok((
        worst <= 1e-8,
        format!("max relative gap {worst:.2e} over k=1..8"),
    ))
}

fn tikhonov_oracle(seed: u64) -> Result<(bool, String)> {
    let p = dense_random_problem(10, 14, 0.1, seed)?;
    let n = p.problem.domain_dim();
    let root = p
        .problem
        .prior_cov()
        .apply_sqrt_columns(&DMatrix::identity(n, n))?;
    let factor = LowRankFactor::new(root);
    let gap = rel(
        &direct_eki(&p.problem, &factor, 0.3)?,
        &tikhonov_solve(&p.problem, 0.3)?,
    );
    Ok((gap <= 1e-8, format!("relative gap {gap:.2e}")))
}

fn svd_and_nystroem(seed: u64) -> Result<(bool, String)> {
    let mut rng = GaussianSampler::new(seed);
    let g = rng.matrix(24, 24);
    let c = DenseSpd::new(&g * g.transpose())?;
    let eig = c.spectrum()?;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for j in 1..24 {
        let e_svd = approx_error(&svd_factor(&c, j)?, c.matrix())?;
        let gap = (e_svd - eig.values[j]).abs() / eig.values[0];
        worst = worst.max(gap);
        let sketch = nystroem_sketch(&c, j, &mut rng)?;
        let e_nys = approx_error(&sketch.factor, c.matrix())?;
        let q = &sketch.basis;
        let projected = q * q.transpose() * c.matrix();
        let e_proj = spectral_norm(&(&projected - c.matrix()));
        ok &= gap <= 1e-10 && e_svd <= e_nys + 1e-10 && e_nys <= e_proj + 1e-8;
    }
    Ok((
        ok,
        format!("svd error vs λ_(J+1), worst relative gap {worst:.2e}"),
    ))
}

fn noise_protocol(seed: u64) -> Result<(bool, String)> {
    let y = DVector::from_fn(300, |i, _| 1.0 + (i as f64 * 0.1).cos());
    let data = make_noisy_data(&y, 10.0, &mut GaussianSampler::new(seed))?;
    let delta = (&data.y_hat - &data.y).norm();
    let snr = data.y.norm() / delta;
    let ok = (delta - 1.0).abs() <= 1e-12 && (snr - 10.0).abs() <= 1e-11 && data.delta == 1.0;
    Ok((ok, format!("delta {delta:.15}, snr {snr:.12}")))
}

fn discrepancy_soundness() -> Result<(bool, String)> {
    let spec = DiagonalSpec::quadratic_decay(30, 1e-2, 1);
    let p = diagonal_problem(&spec)?;
    let config = AdaptiveConfig {
        backend: Backend::Svd,
        j0: 2,
        gamma: 2.0,
        ..AdaptiveConfig::default()
    };
    let out = adaptive_run(&p.problem, &config)?;
    let bound = config.tau * p.problem.delta();
    let residuals: Vec<f64> = out.records.iter().map(|r| r.residual).collect();
    let ok = out.stopped_by == StopReason::Discrepancy
        && residuals.last().is_some_and(|&r| r <= bound)
        && residuals[..residuals.len() - 1].iter().all(|&r| r > bound);
    Ok((
        ok,
        format!(
            "stopped by {} after {} iterations",
            out.stopped_by,
            residuals.len()
        ),
    ))
}

/// Runs every check; never panics on numerical failure.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Result<(bool, String)>>)> = vec![
        ("radon adjoint", Box::new(|| radon_adjoint(16))),
        (
            "k-step equivalence",
            Box::new(move || k_step_equivalence(seed)),
        ),
        ("tikhonov oracle", Box::new(move || tikhonov_oracle(seed))),
        (
            "low-rank optimality",
            Box::new(move || svd_and_nystroem(seed)),
        ),
        ("noise protocol", Box::new(move || noise_protocol(seed))),
        ("discrepancy soundness", Box::new(discrepancy_soundness)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => CheckOutcome {
                name,
                passed,
                detail,
            },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}
