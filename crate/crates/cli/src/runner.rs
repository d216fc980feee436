//! Executes an [`ExperimentSpec`]: one CSV per (backend, seed), a manifest
//! and a plot script.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use eki::adaptive::{adaptive_run_with, AdaptiveOutcome, Diagnostics};
use eki::io::{fmt_f64, write_records};
use eki::lowrank::{Backend, GaussianSampler};
use eki::operators::DenseSpd;
use eki::solvers::{DirectEki, InverseProblem, TikhonovPath};
use eki::synthetic::{dense_random_problem, diagonal_problem, DiagonalSpec};
use eki::tomo::{metrics, ou_covariance, RadonGeometry, RadonOperator, TomoBench, TomoConfig};
use eki::DVector;
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::plot::plot_script;
use crate::spec::{ExperimentSpec, ProblemKind, SweepKind};

pub const SWEEP_HEADER: [&str; 4] = ["J", "alpha", "e_app", "e_rel"];
pub const RATE_HEADER: [&str; 6] = ["delta", "error", "k", "J", "residual", "stopped_by"];

/// A built problem with its ground truth.
pub struct Instance {
    pub problem: InverseProblem,
    pub truth: DVector<f64>,
}

/// Problem builder that shares the expensive Radon operator and prior.
pub struct ProblemFactory {
    spec: ExperimentSpec,
    radon: Option<(Arc<RadonOperator>, Arc<DenseSpd>)>,
    references: Mutex<HashMap<(u64, u64), Arc<TikhonovPath>>>,
}

impl ProblemFactory {
    pub fn new(spec: &ExperimentSpec) -> Result<Self, CliError> {
        let radon = match spec.problem {
            ProblemKind::Radon => Some((
                Arc::new(RadonOperator::new(RadonGeometry::for_image(spec.d))?),
                Arc::new(ou_covariance(spec.d, spec.h)?),
            )),
            _ => None,
        };
        Ok(Self {
            spec: spec.clone(),
            radon,
            references: Mutex::new(HashMap::new()),
        })
    }

    pub fn diagonal_spec(&self, delta: f64, noise_seed: u64) -> DiagonalSpec {
        let s = &self.spec;
        DiagonalSpec {
            n: s.n,
            prior_decay: s.prior_decay,
            forward_decay: s.forward_decay,
            mu: s.mu,
            rho: s.rho,
            delta,
            seed: noise_seed,
            ..DiagonalSpec::default()
        }
    }

    /// Tikhonov reference for the instance built from `(noise_seed, delta)`,
    /// shared between backends.
    pub fn reference(
        &self,
        noise_seed: u64,
        delta: f64,
        inst: &Instance,
    ) -> Result<Arc<TikhonovPath>, CliError> {
        let key = (noise_seed, delta.to_bits());
        if let Some(path) = self.references.lock().expect("cache lock").get(&key) {
            return Ok(path.clone());
        }
        let path = Arc::new(TikhonovPath::new(&inst.problem)?);
        self.references
            .lock()
            .expect("cache lock")
            .insert(key, path.clone());
        Ok(path)
    }

    pub fn build(&self, noise_seed: u64, delta: f64) -> Result<Instance, CliError> {
        let s = &self.spec;
        Ok(match s.problem {
            ProblemKind::Radon => {
                let (radon, prior) = self.radon.clone().expect("radon operator built");
                let cfg = TomoConfig {
                    d: s.d,
                    h: s.h,
                    snr: s.snr,
                    seed: noise_seed,
                    geometry: None,
                };
                let bench = TomoBench::assemble(&cfg, radon, prior)?;
                Instance {
                    problem: bench.problem,
                    truth: bench.truth,
                }
            }
            ProblemKind::SyntheticDiagonal => {
                let p = diagonal_problem(&self.diagonal_spec(delta, noise_seed))?;
                Instance {
                    problem: p.problem,
                    truth: p.truth,
                }
            }
            ProblemKind::DenseRandom => {
                let p = dense_random_problem(s.n, s.m, delta, noise_seed)?;
                Instance {
                    problem: p.problem,
                    truth: p.truth,
                }
            }
        })
    }
}

/// Outcome of one (backend, seed) run, echoed into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub file: String,
    pub backend: String,
    pub seed: u64,
    pub noise_seed: u64,
    /// RNG streams of `seed` drawn for factor generation.
    pub factor_streams: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stopped_by: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_residual: Option<f64>,
    /// Rate runs that did not stop by discrepancy.
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub backend: String,
    pub slope: Option<f64>,
    pub expected: f64,
    pub points: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub out: PathBuf,
    pub runs: Vec<RunSummary>,
    pub rate: Vec<RateFit>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seeds: &'a [u64],
    spec: &'a ExperimentSpec,
    runs: &'a [RunSummary],
    rate: &'a [RateFit],
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

fn csv_name(spec: &ExperimentSpec, backend: Backend, seed: u64) -> String {
    let sweep = match spec.sweep {
        SweepKind::Adaptive => "adaptive",
        SweepKind::FixedAlphaVaryJ => "vary_j",
        SweepKind::FixedJVaryAlpha => "vary_alpha",
        SweepKind::RateVsDelta => "rate",
    };
    format!("{sweep}_{}_seed{seed}.csv", backend.name())
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = File::create(path)?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

struct RunOutput {
    summary: RunSummary,
    rate_points: Vec<(f64, f64)>,
}

fn run_adaptive(
    spec: &ExperimentSpec,
    factory: &ProblemFactory,
    backend: Backend,
    seed: u64,
    path: &Path,
) -> Result<RunOutput, CliError> {
    let noise_seed = spec.noise_seed_for(seed);
    let inst = factory.build(noise_seed, spec.delta)?;
    let config = spec.adaptive_config(backend, seed);
    let diag = Diagnostics {
        truth: Some(&inst.truth),
        tikhonov: spec.tikhonov_reference,
    };
    let mut outcome = adaptive_run_with(&inst.problem, &config, &diag)?;
    if !spec.timing {
        outcome.records.iter_mut().for_each(|r| r.wall_time = 0.0);
    }
    write_records(File::create(path)?, &outcome.records)?;
    Ok(RunOutput {
        summary: adaptive_summary(path, backend, seed, noise_seed, &outcome),
        rate_points: vec![],
    })
}

fn adaptive_summary(
    path: &Path,
    backend: Backend,
    seed: u64,
    noise_seed: u64,
    o: &AdaptiveOutcome,
) -> RunSummary {
    let last = o.final_record();
    RunSummary {
        file: file_name(path),
        backend: backend.name().into(),
        seed,
        noise_seed,
        factor_streams: if backend == Backend::Svd {
            vec![]
        } else {
            o.records.iter().map(|r| r.k as u64).collect()
        },
        stopped_by: Some(o.stopped_by.to_string()),
        final_j: last.map(|r| r.j),
        final_residual: last.map(|r| r.residual),
        excluded: 0,
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run_vary_j(
    spec: &ExperimentSpec,
    factory: &ProblemFactory,
    backend: Backend,
    seed: u64,
    path: &Path,
) -> Result<RunOutput, CliError> {
    let noise_seed = spec.noise_seed_for(seed);
    let inst = factory.build(noise_seed, spec.delta)?;
    let alpha = spec.fixed_alpha;
    let reference = factory
        .reference(noise_seed, spec.delta, &inst)?
        .solve(alpha)?;
    let mut rows = Vec::new();
    let mut streams = Vec::new();
    for (idx, &j) in spec.j_grid.iter().enumerate() {
        let stream = idx as u64 + 1;
        let mut rng = GaussianSampler::with_stream(seed, stream);
        let factor = backend.generate(inst.problem.prior_cov().as_ref(), j, &mut rng)?;
        if backend.is_stochastic() {
            streams.push(stream);
        }
        let x = DirectEki::new(&inst.problem, &factor)?.solve(alpha)?;
        let m = metrics(&x, &inst.truth, Some(&reference))?;
        rows.push(vec![
            j.to_string(),
            fmt_f64(alpha),
            opt(m.e_app),
            fmt_f64(m.e_rel),
        ]);
    }
    write_rows(path, &SWEEP_HEADER, &rows)?;
    Ok(RunOutput {
        summary: sweep_summary(path, backend, seed, noise_seed, streams),
        rate_points: vec![],
    })
}

fn run_vary_alpha(
    spec: &ExperimentSpec,
    factory: &ProblemFactory,
    backend: Backend,
    seed: u64,
    path: &Path,
) -> Result<RunOutput, CliError> {
    let noise_seed = spec.noise_seed_for(seed);
    let inst = factory.build(noise_seed, spec.delta)?;
    let j = spec.sweep_j();
    let mut rng = GaussianSampler::with_stream(seed, 1);
    let factor = backend.generate(inst.problem.prior_cov().as_ref(), j, &mut rng)?;
    let solver = DirectEki::new(&inst.problem, &factor)?;
    let tikhonov = factory.reference(noise_seed, spec.delta, &inst)?;
    let mut rows = Vec::new();
    for &alpha in &spec.alpha_grid {
        let reference = tikhonov.solve(alpha)?;
        let x = solver.solve(alpha)?;
        let m = metrics(&x, &inst.truth, Some(&reference))?;
        rows.push(vec![
            j.to_string(),
            fmt_f64(alpha),
            opt(m.e_app),
            fmt_f64(m.e_rel),
        ]);
    }
    write_rows(path, &SWEEP_HEADER, &rows)?;
    let streams = if backend.is_stochastic() {
        vec![1]
    } else {
        vec![]
    };
    Ok(RunOutput {
        summary: sweep_summary(path, backend, seed, noise_seed, streams),
        rate_points: vec![],
    })
}

fn sweep_summary(
    path: &Path,
    backend: Backend,
    seed: u64,
    noise_seed: u64,
    streams: Vec<u64>,
) -> RunSummary {
    RunSummary {
        file: file_name(path),
        backend: backend.name().into(),
        seed,
        noise_seed,
        factor_streams: streams,
        stopped_by: None,
        final_j: None,
        final_residual: None,
        excluded: 0,
    }
}

fn run_rate(
    spec: &ExperimentSpec,
    factory: &ProblemFactory,
    backend: Backend,
    seed: u64,
    path: &Path,
) -> Result<RunOutput, CliError> {
    let noise_seed = spec.noise_seed_for(seed);
    let config = spec.adaptive_config(backend, seed);
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut streams = Vec::new();
    let mut excluded = 0;
    for &delta in &spec.delta_grid {
        let inst = factory.build(noise_seed, delta)?;
        let outcome = adaptive_run_with(&inst.problem, &config, &Diagnostics::default())?;
        let error = (&outcome.solution - &inst.truth).norm();
        let last = outcome.final_record();
        if backend.is_stochastic() {
            streams.extend(outcome.records.iter().map(|r| r.k as u64));
        }
        if outcome.stopped_by == eki::adaptive::StopReason::Discrepancy {
            points.push((delta, error));
        } else {
            excluded += 1;
        }
        rows.push(vec![
            fmt_f64(delta),
            fmt_f64(error),
            last.map_or(0, |r| r.k).to_string(),
            last.map_or(0, |r| r.j).to_string(),
            opt(last.map(|r| r.residual)),
            outcome.stopped_by.to_string(),
        ]);
    }
    write_rows(path, &RATE_HEADER, &rows)?;
    streams.sort_unstable();
    streams.dedup();
    let mut summary = sweep_summary(path, backend, seed, noise_seed, streams);
    summary.excluded = excluded;
    Ok(RunOutput {
        summary,
        rate_points: points,
    })
}

/// Runs the experiment and writes all artifacts into `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report, CliError> {
    spec.validate()?;
    let backends = spec.backend_list()?;
    fs::create_dir_all(&spec.out)?;
    let factory = ProblemFactory::new(spec)?;
    let jobs: Vec<(Backend, u64)> = backends
        .iter()
        .flat_map(|&b| spec.seeds.iter().map(move |&s| (b, s)))
        .collect();
    let results: Vec<Result<RunOutput, CliError>> = jobs
        .par_iter()
        .map(|&(backend, seed)| {
            let path = spec.out.join(csv_name(spec, backend, seed));
            info!("running {} seed {seed} -> {}", backend, path.display());
            match spec.sweep {
                SweepKind::Adaptive => run_adaptive(spec, &factory, backend, seed, &path),
                SweepKind::FixedAlphaVaryJ => run_vary_j(spec, &factory, backend, seed, &path),
                SweepKind::FixedJVaryAlpha => run_vary_alpha(spec, &factory, backend, seed, &path),
                SweepKind::RateVsDelta => run_rate(spec, &factory, backend, seed, &path),
            }
        })
        .collect();

    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for ((backend, seed), r) in jobs.iter().zip(results) {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => failures.push(format!("{backend} seed {seed}: {e}")),
        }
    }
    let rate = if spec.sweep == SweepKind::RateVsDelta {
        backends
            .iter()
            .map(|b| {
                let mine: Vec<&RunOutput> = outputs
                    .iter()
                    .filter(|o| o.summary.backend == b.name())
                    .collect();
                let (x, y): (Vec<f64>, Vec<f64>) = mine
                    .iter()
                    .flat_map(|o| o.rate_points.iter().copied())
                    .unzip();
                RateFit {
                    backend: b.name().into(),
                    slope: fit_loglog_slope(&x, &y),
                    expected: 2.0 * spec.mu / (2.0 * spec.mu + 1.0),
                    points: x.len(),
                    excluded: mine.iter().map(|o| o.summary.excluded).sum(),
                }
            })
            .collect()
    } else {
        vec![]
    };
    let runs: Vec<RunSummary> = outputs.into_iter().map(|o| o.summary).collect();

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seeds: &spec.seeds,
        spec,
        runs: &runs,
        rate: &rate,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(spec.out.join("manifest.toml"), text)?;
    fs::write(spec.out.join("plot.py"), plot_script(spec, &runs))?;
    if !failures.is_empty() {
        return Err(CliError::Runtime(failures.join("; ")));
    }
    Ok(Report {
        out: spec.out.clone(),
        runs,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1e-1, 1e-2, 1e-3];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.5)).collect();
        assert!((fit_loglog_slope(&x, &y).unwrap() - 0.5).abs() < 1e-12);
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_none());
    }
}
