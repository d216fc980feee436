use std::sync::Arc;

use eki::adaptive::{
    adaptive_run, adaptive_run_with, project_ball, schedule, AdaptiveConfig, Diagnostics,
    StopReason,
};
use eki::lowrank::{
    anomaly_factor, approx_error, nystroem_sketch, spectral_norm, svd_factor, Backend,
    LowRankFactor,
};
use eki::operators::{
    adjoint_test, sym_eig, DenseMap, DenseSpd, DiagonalMap, DiagonalOp, Identity, LinearMap,
    SpdOperator,
};
use eki::random::GaussianSampler;
use eki::solvers::{
    direct_eki, eki_run, eki_step_cov, eki_step_sqrt, estimate_rl_bound, tikhonov_objective,
    tikhonov_solve, EkiState, InverseProblem, TikhonovPath,
};
use eki::synthetic::{dense_random_problem, diagonal_problem, DiagonalSpec};
use eki::tomo::{make_noisy_data, ou_matrix, RadonGeometry, RadonOperator};
use eki::{DMatrix, DVector};
use proptest::prelude::*;

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// PSD matrix of rank `r` scaled to unit spectral norm.
fn random_psd(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
    let g = GaussianSampler::new(seed).matrix(n, r);
    let c = &g * g.transpose();
    let top = spectral_norm(&c);
    if top > 0.0 {
        c / top
    } else {
        c
    }
}

fn dense_problem(n: usize, m: usize, seed: u64) -> (InverseProblem, DMatrix<f64>) {
    let mut rng = GaussianSampler::new(seed ^ 0x5eed);
    let l = rng.matrix(m, n) / (m as f64).sqrt();
    let g = rng.matrix(n, n);
    let c0 = &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
    let x0 = rng.vector(n);
    let y = rng.vector(m);
    let p = InverseProblem::new(
        Arc::new(DenseMap::new(l)),
        Arc::new(Identity(m)),
        Arc::new(DenseSpd::new(c0.clone()).unwrap()),
        x0,
        y,
        0.1,
    )
    .unwrap();
    (p, c0)
}

fn quick() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

fn slow() -> ProptestConfig {
    ProptestConfig {
        cases: 12,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(quick())]

    #[test]
    fn k_sqrt_steps_equal_direct_eki(n in 1usize..=20, m in 1usize..=20, j in 1usize..=6, k in 1usize..=8, seed in any::<u64>()) {
        let sp = dense_random_problem(n, m, 0.1, seed).unwrap();
        let a = LowRankFactor::new(GaussianSampler::new(seed.wrapping_add(1)).matrix(n, j));
        let stepped = eki_run(&sp.problem, a.clone(), k).unwrap();
        let direct = direct_eki(&sp.problem, &a, 1.0 / k as f64).unwrap();
        let scale = direct.norm().max(1.0);
        prop_assert!((stepped.x_hat - &direct).norm() / scale <= 1e-8);
    }

    #[test]
    fn full_rank_sqrt_factor_reproduces_tikhonov(n in 1usize..=20, m in 1usize..=20, log_alpha in -4.0f64..1.0, seed in any::<u64>()) {
        let (p, c0) = dense_problem(n, m, seed);
        let sqrt = DenseSpd::new(c0).unwrap().apply_sqrt_columns(&DMatrix::identity(n, n)).unwrap();
        let alpha = 10f64.powf(log_alpha);
        let eki = direct_eki(&p, &LowRankFactor::new(sqrt), alpha).unwrap();
        let tik = tikhonov_solve(&p, alpha).unwrap();
        prop_assert!(rel(&eki, &tik) <= 1e-8);
    }

    #[test]
    fn tikhonov_path_agrees_with_solve(n in 1usize..=16, m in 1usize..=16, log_alpha in -6.0f64..1.0, seed in any::<u64>()) {
        let (p, _) = dense_problem(n, m, seed);
        let alpha = 10f64.powf(log_alpha);
        let path = TikhonovPath::new(&p).unwrap();
        prop_assert!(rel(&path.solve(alpha).unwrap(), &tikhonov_solve(&p, alpha).unwrap()) <= 1e-8);
    }

    #[test]
    fn tikhonov_minimizes_objective(n in 1usize..=12, m in 1usize..=12, log_alpha in -3.0f64..1.0, seed in any::<u64>()) {
        let (p, _) = dense_problem(n, m, seed);
        let alpha = 10f64.powf(log_alpha);
        let x = tikhonov_solve(&p, alpha).unwrap();
        let best = tikhonov_objective(&p, alpha, &x).unwrap();
        let mut rng = GaussianSampler::new(seed.wrapping_mul(3));
        for i in 0..100 {
            let step = 10f64.powi(-(i % 6));
            let other = &x + rng.vector(n) * step;
            let value = tikhonov_objective(&p, alpha, &other).unwrap();
            prop_assert!(best <= value * (1.0 + 1e-12) + 1e-14);
        }
    }

    #[test]
    fn covariance_and_sqrt_forms_agree(n in 1usize..=10, m in 1usize..=10, j in 1usize..=6, seed in any::<u64>()) {
        let (p, _) = dense_problem(n, m, seed);
        let a = LowRankFactor::new(GaussianSampler::new(seed.wrapping_add(7)).matrix(n, j));
        let mut state = EkiState::initial(&p, a);
        let mut x = p.x0().clone();
        let mut cov = DenseSpd::new(state.factor.covariance()).unwrap();
        for _ in 0..5 {
            let (xn, cn) = eki_step_cov(&p, &x, &cov).unwrap();
            state = eki_step_sqrt(&p, &state).unwrap();
            let cs = state.factor.covariance();
            prop_assert!((&xn - &state.x_hat).norm() / state.x_hat.norm().max(1.0) <= 1e-8);
            prop_assert!((cn.matrix() - &cs).norm() / cs.norm().max(1e-12) <= 1e-8);
            x = xn;
            cov = cn;
        }
    }

    #[test]
    fn svd_is_optimal_among_generators(n in 2usize..=32, r in 1usize..=32, jfrac in 0.0f64..1.0, seed in any::<u64>()) {
        let r = r.min(n);
        let j = 1 + ((n - 1) as f64 * jfrac) as usize;
        let c0 = random_psd(n, r, seed);
        let op = DenseSpd::new(c0.clone()).unwrap();
        let svd = approx_error(&svd_factor(&op, j).unwrap(), &c0).unwrap();
        let eig = sym_eig(&c0).unwrap().values;
        let next = if j < n { eig[j].max(0.0) } else { 0.0 };
        prop_assert!((svd - next).abs() <= 1e-10);
        let mut rng = GaussianSampler::new(seed.wrapping_add(11));
        let nys = approx_error(&nystroem_sketch(&op, j, &mut rng).unwrap().factor, &c0).unwrap();
        prop_assert!(svd <= nys + 1e-10);
        if j >= 2 {
            let anom = approx_error(&anomaly_factor(&op, j, &mut rng).unwrap(), &c0).unwrap();
            prop_assert!(svd <= anom + 1e-10);
        }
    }

    #[test]
    fn nystroem_dominated_by_range_projection(n in 2usize..=32, r in 1usize..=32, jfrac in 0.0f64..1.0, seed in any::<u64>()) {
        let r = r.min(n);
        let j = 1 + ((n - 1) as f64 * jfrac) as usize;
        let c0 = random_psd(n, r, seed);
        let op = DenseSpd::new(c0.clone()).unwrap();
        let sketch = nystroem_sketch(&op, j, &mut GaussianSampler::new(seed.wrapping_add(5))).unwrap();
        let err = approx_error(&sketch.factor, &c0).unwrap();
        let q = &sketch.basis;
        let proj = spectral_norm(&(q * q.tr_mul(&c0) - &c0));
        prop_assert!(err <= proj + 1e-8);
    }

    #[test]
    fn generators_deterministic_under_seed(n in 2usize..=16, j in 2usize..=16, seed in any::<u64>()) {
        let op = DenseSpd::new(random_psd(n, n, seed)).unwrap();
        for backend in Backend::ALL {
            let a = backend.generate(&op, j, &mut GaussianSampler::new(seed)).unwrap();
            let b = backend.generate(&op, j, &mut GaussianSampler::new(seed)).unwrap();
            prop_assert_eq!(a.columns(), b.columns());
        }
    }

    #[test]
    fn schedule_is_monotone(alpha0 in 1e-3f64..1e3, j0 in 1usize..200, b in 0.05f64..0.99, gamma in 0.1f64..4.0, offset in 0u32..=1) {
        let config = AdaptiveConfig { alpha0, j0, b, gamma, index_offset: offset, ..AdaptiveConfig::default() };
        let floor = b.powi(offset as i32) * alpha0 * (j0 as f64).powf(gamma);
        let mut prev = schedule(&config, 0);
        for k in 1..60 {
            let (alpha, j) = schedule(&config, k);
            if (j as f64) > 1e12 {
                break;
            }
            prop_assert!(alpha < prev.0);
            prop_assert!(j >= prev.1);
            // J_k is snapped to an integer within 1e-12 relative before rounding up
            prop_assert!(alpha * (j as f64).powf(gamma) >= floor * (1.0 - 1e-10));
            prev = (alpha, j);
        }
    }

    #[test]
    fn ball_projection_is_nonexpansive(n in 1usize..=12, r in 0.01f64..5.0, seed in any::<u64>()) {
        let mut rng = GaussianSampler::new(seed);
        let x0 = rng.vector(n);
        let x = &x0 + rng.vector(n) * 3.0;
        let mut inside = rng.vector(n);
        let norm = inside.norm();
        if norm > r {
            inside *= r / norm;
        }
        let reference = &x0 + inside;
        let (p, hit) = project_ball(&x, &x0, r);
        prop_assert!((&p - &x0).norm() <= r * (1.0 + 1e-12));
        prop_assert_eq!(hit, (&x - &x0).norm() > r);
        prop_assert!((&p - &reference).norm() <= (&x - &reference).norm() + 1e-12);
    }

    #[test]
    fn dense_and_diagonal_adjoints(n in 1usize..=20, m in 1usize..=20, seed in any::<u64>()) {
        let mut rng = GaussianSampler::new(seed);
        let dense = DenseMap::new(rng.matrix(m, n));
        prop_assert!(adjoint_test(&dense, 100, seed).unwrap() <= 1e-8);
        let diag = DiagonalMap::new(rng.vector(n));
        prop_assert!(adjoint_test(&diag, 100, seed).unwrap() <= 1e-8);
    }

    #[test]
    fn inverse_sqrt_roundtrip_on_range(n in 1usize..=16, r in 1usize..=16, seed in any::<u64>()) {
        let c = random_psd(n, r.min(n), seed);
        let op = DenseSpd::with_clamp(c.clone(), 1e-10).unwrap();
        let mut rng = GaussianSampler::new(seed.wrapping_add(2));
        let v = &c * rng.vector(n);
        if v.norm() > 1e-6 {
            let back = op.apply(&op.apply_inv_sqrt(&op.apply_inv_sqrt(&v).unwrap()).unwrap());
            prop_assert!(rel(&back, &v) <= 1e-8);
        }
        let d = rng.vector(n).map(|x| x * x);
        let diag = DiagonalOp::new(d.clone()).unwrap();
        let w = d.map(|x| if x > 0.0 { 1.0 } else { 0.0 }).component_mul(&rng.vector(n));
        let back = diag.apply(&diag.apply_inv_sqrt(&diag.apply_inv_sqrt(&w).unwrap()).unwrap());
        prop_assert!(rel(&back, &w) <= 1e-8 || w.norm() == 0.0);
    }

    #[test]
    fn noisy_data_postconditions(m in 1usize..=200, snr in 0.01f64..1e3, seed in any::<u64>()) {
        let mut rng = GaussianSampler::new(seed);
        let y = rng.vector(m) + DVector::from_element(m, 0.1);
        let data = make_noisy_data(&y, snr, &mut rng).unwrap();
        prop_assert_eq!(data.delta, 1.0);
        let noise = (&data.y_hat - &data.y).norm();
        prop_assert!((noise - 1.0).abs() <= 1e-12);
        prop_assert!((data.y.norm() / noise - snr).abs() <= 1e-12 * snr);
    }

    #[test]
    fn ou_covariance_is_symmetric_psd(d in 2usize..=16, h in 0.01f64..2.0) {
        let c = ou_matrix(d, h).unwrap();
        prop_assert!((&c - c.transpose()).amax() <= 1e-12);
        let eig = sym_eig(&c).unwrap().values;
        prop_assert!(eig[eig.len() - 1] >= -1e-10 * eig[0]);
    }
}

proptest! {
    #![proptest_config(slow())]

    #[test]
    fn ekiestimate_bound_holds_for_every_factor(n in 2usize..=12, m in 2usize..=12, seed in any::<u64>()) {
        let (p, c0) = dense_problem(n, m, seed);
        let c_rl = estimate_rl_bound(&p).unwrap();
        let data = p.whitened_residual(p.x0()).unwrap().norm();
        let c = c_rl * (1.0 + c_rl * c_rl * spectral_norm(&c0)) * data * 1.01;
        let op = DenseSpd::new(c0.clone()).unwrap();
        let mut rng = GaussianSampler::new(seed.wrapping_add(3));
        for j in [1, n / 2 + 1, n] {
            for backend in Backend::ALL {
                if backend == Backend::Anomaly && j < 2 {
                    continue;
                }
                let a = backend.generate(&op, j, &mut rng).unwrap();
                let eps = approx_error(&a, &c0).unwrap();
                for alpha in [1.0, 0.1, 0.01] {
                    let gap = (direct_eki(&p, &a, alpha).unwrap() - tikhonov_solve(&p, alpha).unwrap()).norm();
                    prop_assert!(gap <= c * eps / alpha + 1e-10);
                }
            }
        }
    }

    #[test]
    fn ekiestimate_constant_is_stable_in_alpha(n in 4usize..=12, m in 2usize..=12, seed in any::<u64>()) {
        // ‖B‖² ≪ α: the α⁻¹ shape is sharp and one fitted constant serves all α
        let (p, c0) = dense_problem(n, m, seed);
        let c_rl = estimate_rl_bound(&p).unwrap();
        let shrink = 0.02 / (c_rl * spectral_norm(&c0).sqrt());
        let forward: Arc<dyn LinearMap> = Arc::new(DenseMap::new(p.forward().to_dense() * shrink));
        let p = InverseProblem::new(forward, p.noise_weight().clone(), p.prior_cov().clone(), p.x0().clone(), p.y_hat().clone(), p.delta()).unwrap();
        let op = DenseSpd::new(c0.clone()).unwrap();
        let mut rng = GaussianSampler::new(seed.wrapping_add(9));
        let factors: Vec<_> = (2..n).map(|j| anomaly_factor(&op, j, &mut rng).unwrap()).collect();
        let fit = |alpha: f64| -> f64 {
            factors.iter().map(|a| {
                let gap = (direct_eki(&p, a, alpha).unwrap() - tikhonov_solve(&p, alpha).unwrap()).norm();
                alpha * gap / approx_error(a, &c0).unwrap()
            }).fold(0.0, f64::max)
        };
        let c1 = fit(1.0);
        for alpha in [0.1, 0.01] {
            let ca = fit(alpha);
            prop_assert!((ca / c1 - 1.0).abs() <= 0.2, "alpha={} ratio={}", alpha, ca / c1);
        }
    }

    #[test]
    fn discrepancy_stop_is_sound(n in 10usize..=40, log_delta in -3.0f64..-1.0, seed in 0u64..1000, svd in any::<bool>()) {
        let sp = diagonal_problem(&DiagonalSpec::quadratic_decay(n, 10f64.powf(log_delta), seed)).unwrap();
        let config = AdaptiveConfig {
            j0: 2,
            gamma: 2.0,
            backend: if svd { Backend::Svd } else { Backend::Nystroem },
            seed,
            ..AdaptiveConfig::default()
        };
        let out = adaptive_run(&sp.problem, &config).unwrap();
        let bound = config.tau * sp.problem.delta();
        if out.stopped_by == StopReason::Discrepancy {
            let (last, earlier) = out.records.split_last().unwrap();
            prop_assert!(last.residual <= bound);
            prop_assert!(earlier.iter().all(|r| r.residual > bound));
        } else {
            prop_assert!(out.records.iter().all(|r| r.residual > bound));
        }
    }

    #[test]
    fn adaptive_run_is_deterministic(n in 4usize..=24, seed in any::<u64>(), backend in 0usize..3) {
        let sp = dense_random_problem(n, n + 3, 0.5, seed).unwrap();
        let config = AdaptiveConfig { j0: 2, gamma: 1.0, backend: Backend::ALL[backend], seed, max_iter: 12, ..AdaptiveConfig::default() };
        let diag = Diagnostics { truth: Some(&sp.truth), tikhonov: true };
        let a = adaptive_run_with(&sp.problem, &config, &diag).unwrap();
        let b = adaptive_run_with(&sp.problem, &config, &diag).unwrap();
        prop_assert_eq!(a.stopped_by, b.stopped_by);
        prop_assert_eq!(a.solution, b.solution);
        prop_assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            prop_assert_eq!((x.k, x.alpha, x.j, x.residual, x.e_rel, x.e_app, x.projected), (y.k, y.alpha, y.j, y.residual, y.e_rel, y.e_app, y.projected));
        }
    }

    #[test]
    fn projection_never_widens_tikhonov_gap(n in 4usize..=16, seed in any::<u64>(), backend in 0usize..2) {
        let sp = dense_random_problem(n, n + 2, 0.2, seed).unwrap();
        let free = AdaptiveConfig { j0: 2, gamma: 1.0, b: 0.5, backend: Backend::ALL[backend], seed, max_iter: 10, ..AdaptiveConfig::default() };
        let path = TikhonovPath::new(&sp.problem).unwrap();
        let radius = (1..=free.max_iter)
            .map(|k| (path.solve(schedule(&free, k).0).unwrap() - sp.problem.x0()).norm())
            .fold(0.0, f64::max) * 1.001;
        let boxed = AdaptiveConfig { radius, ..free.clone() };
        let diag = Diagnostics { truth: Some(&sp.truth), tikhonov: true };
        let a = adaptive_run_with(&sp.problem, &free, &diag).unwrap();
        let b = adaptive_run_with(&sp.problem, &boxed, &diag).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            prop_assert!(y.e_app.unwrap() <= x.e_app.unwrap() + 1e-12);
        }
    }

    #[test]
    fn radon_is_linear_with_exact_adjoint(d in 2usize..=20, s in -3.0f64..3.0, t in -3.0f64..3.0, seed in any::<u64>()) {
        let radon = RadonOperator::new(RadonGeometry::for_image(d)).unwrap();
        let mut rng = GaussianSampler::new(seed);
        let (x, z) = (rng.vector(d * d), rng.vector(d * d));
        let lhs = radon.apply(&(&x * s + &z * t));
        let rhs = radon.apply(&x) * s + radon.apply(&z) * t;
        prop_assert!((&lhs - &rhs).norm() <= 1e-12 * (rhs.norm() + 1.0));
        prop_assert!(adjoint_test(&radon, 20, seed).unwrap() <= 1e-8);
    }
}
