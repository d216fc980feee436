//! Experiment specification and its TOML form.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use eki::adaptive::AdaptiveConfig;
use eki::lowrank::Backend;
use eki::synthetic::DiagonalSpec;
use eki::tomo::DEFAULT_OU_LENGTH;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Radon,
    SyntheticDiagonal,
    DenseRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Adaptive EKI log per run (iteration vs error).
    Adaptive,
    /// Direct EKI at `fixed_alpha` over `j_grid`.
    #[serde(rename = "fixed-alpha-vary-J", alias = "fixed-alpha-vary-j")]
    FixedAlphaVaryJ,
    /// Direct EKI at `fixed_j` over `alpha_grid`.
    #[serde(rename = "fixed-J-vary-alpha", alias = "fixed-j-vary-alpha")]
    FixedJVaryAlpha,
    /// Adaptive EKI over `delta_grid` with a fitted error-vs-δ slope.
    RateVsDelta,
}

/// Per-backend schedule parameters overriding the global `b` and `gamma`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    pub b: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemKind,
    pub sweep: SweepKind,
    pub backends: Vec<String>,
    pub seeds: Vec<u64>,
    /// Seed of the data noise. When absent each run uses its own seed.
    pub noise_seed: Option<u64>,
    pub out: PathBuf,
    /// Write measured wall times; disable for byte-reproducible logs.
    pub timing: bool,

    // radon
    pub d: usize,
    pub h: f64,
    pub snr: f64,

    // synthetic-diagonal and dense-random
    pub n: usize,
    pub m: usize,
    pub prior_decay: f64,
    pub forward_decay: f64,
    pub mu: f64,
    pub rho: f64,
    pub delta: f64,

    // adaptive schedule
    pub alpha0: f64,
    pub j0: usize,
    pub b: f64,
    pub gamma: f64,
    pub tau: f64,
    pub radius: f64,
    pub max_iter: usize,
    pub index_offset: u32,
    pub schedule: BTreeMap<String, ScheduleOverride>,
    /// Compute `e_app` against Tikhonov at every adaptive iteration.
    pub tikhonov_reference: bool,

    // sweep grids
    pub j_grid: Vec<usize>,
    pub alpha_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub fixed_alpha: f64,
    /// Sample size of the α sweep; defaults to `⌈n/5⌉`.
    pub fixed_j: Option<usize>,
}

impl Default for ExperimentSpec {
    /// Adaptive EKI on the 32×32 tomography bench with all three backends.
    fn default() -> Self {
        let synthetic = DiagonalSpec::default();
        let mut schedule = BTreeMap::new();
        schedule.insert(
            "anomaly".to_string(),
            ScheduleOverride {
                b: Some(0.8f64.sqrt()),
                gamma: Some(0.5),
            },
        );
        Self {
            problem: ProblemKind::Radon,
            sweep: SweepKind::Adaptive,
            backends: Backend::ALL.iter().map(|b| b.name().to_string()).collect(),
            seeds: vec![0],
            noise_seed: None,
            out: PathBuf::from("eki-out"),
            timing: false,
            d: 32,
            h: DEFAULT_OU_LENGTH,
            snr: 10.0,
            n: synthetic.n,
            m: 30,
            prior_decay: synthetic.prior_decay,
            forward_decay: synthetic.forward_decay,
            mu: synthetic.mu,
            rho: synthetic.rho,
            delta: synthetic.delta,
            alpha0: 1.0,
            j0: 50,
            b: 0.8,
            gamma: 1.0,
            tau: 1.2,
            radius: f64::INFINITY,
            max_iter: 100,
            index_offset: 1,
            schedule,
            tikhonov_reference: false,
            j_grid: vec![25, 50, 100, 200, 400, 800],
            alpha_grid: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
            delta_grid: vec![1e-1, 1e-2, 1e-3, 1e-4],
            fixed_alpha: 0.03,
            fixed_j: None,
        }
    }
}

fn usage(field: &str, message: impl Into<String>) -> CliError {
    CliError::Usage {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentSpec {
    /// Convergence-rate protocol on the diagonal source-condition problem:
    /// SVD backend, `J` growing fast enough to resolve `B` at every `α_k`.
    pub fn rate_preset(mu: f64) -> Self {
        Self {
            problem: ProblemKind::SyntheticDiagonal,
            sweep: SweepKind::RateVsDelta,
            backends: vec!["svd".into()],
            noise_seed: Some(0),
            mu,
            j0: 5,
            b: 0.5,
            gamma: 3.0,
            index_offset: 0,
            schedule: BTreeMap::new(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        struct Manifest {
            spec: ExperimentSpec,
        }
        let value: toml::Table =
            toml::from_str(text).map_err(|e| usage("config", e.to_string()))?;
        // a manifest echoes its spec under [spec]
        let parsed = if value.contains_key("spec") {
            toml::from_str::<Manifest>(text).map(|m| m.spec)
        } else {
            toml::from_str::<ExperimentSpec>(text)
        };
        parsed.map_err(|e| usage("config", e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn backend_list(&self) -> Result<Vec<Backend>, CliError> {
        let parsed = self
            .backends
            .iter()
            .map(|s| {
                s.parse::<Backend>()
                    .map_err(|e| usage("backends", e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(parsed)
    }

    pub fn domain_dim(&self) -> usize {
        match self.problem {
            ProblemKind::Radon => self.d * self.d,
            ProblemKind::SyntheticDiagonal | ProblemKind::DenseRandom => self.n,
        }
    }

    pub fn sweep_j(&self) -> usize {
        self.fixed_j
            .unwrap_or_else(|| self.domain_dim().div_ceil(5))
    }

    /// Adaptive configuration for one backend and seed.
    pub fn adaptive_config(&self, backend: Backend, seed: u64) -> AdaptiveConfig {
        let over = self
            .schedule
            .iter()
            .find(|(name, _)| name.parse::<Backend>().is_ok_and(|b| b == backend))
            .map(|(_, o)| o.clone())
            .unwrap_or_default();
        AdaptiveConfig {
            alpha0: self.alpha0,
            j0: self.j0,
            b: over.b.unwrap_or(self.b),
            gamma: over.gamma.unwrap_or(self.gamma),
            tau: self.tau,
            radius: self.radius,
            backend,
            max_iter: self.max_iter,
            seed,
            index_offset: self.index_offset,
        }
    }

    pub fn noise_seed_for(&self, seed: u64) -> u64 {
        self.noise_seed.unwrap_or(seed)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let backends = self.backend_list()?;
        if backends.is_empty() {
            return Err(usage("backends", "must name at least one backend"));
        }
        if backends.iter().collect::<BTreeSet<_>>().len() != backends.len() {
            return Err(usage("backends", "contains duplicates"));
        }
        for name in self.schedule.keys() {
            name.parse::<Backend>()
                .map_err(|e| usage("schedule", e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(usage("seeds", "must contain at least one seed"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(usage("seeds", "seeds must be distinct"));
        }
        match self.problem {
            ProblemKind::Radon => {
                if self.d < 8 {
                    return Err(usage("d", "image side must be >= 8"));
                }
                if !(self.h > 0.0) {
                    return Err(usage("h", "must be > 0"));
                }
                if !(self.snr > 0.0 && self.snr.is_finite()) {
                    return Err(usage("snr", "must be finite and > 0"));
                }
            }
            ProblemKind::SyntheticDiagonal | ProblemKind::DenseRandom => {
                if self.n == 0 {
                    return Err(usage("n", "must be >= 1"));
                }
                if self.problem == ProblemKind::DenseRandom && self.m == 0 {
                    return Err(usage("m", "must be >= 1"));
                }
                if !(self.delta > 0.0) {
                    return Err(usage("delta", "must be > 0"));
                }
            }
        }
        if !(self.mu > 0.0 && self.mu <= 0.5) && self.sweep == SweepKind::RateVsDelta {
            return Err(usage("mu", "must lie in (0, 1/2]"));
        }
        for backend in &backends {
            self.adaptive_config(*backend, 0)
                .validate()
                .map_err(|e| usage("schedule", e.to_string()))?;
        }
        let positive = |field: &str, grid: &[f64]| {
            if grid.is_empty() {
                Err(usage(field, "grid is empty"))
            } else if grid.iter().any(|v| !(*v > 0.0)) {
                Err(usage(field, "grid values must be > 0"))
            } else {
                Ok(())
            }
        };
        match self.sweep {
            SweepKind::Adaptive => {}
            SweepKind::FixedAlphaVaryJ => {
                if self.j_grid.is_empty() {
                    return Err(usage("j_grid", "grid is empty"));
                }
                if self.j_grid.iter().any(|&j| j < 2) {
                    return Err(usage("j_grid", "sample sizes must be >= 2"));
                }
                positive("fixed_alpha", &[self.fixed_alpha])?;
            }
            SweepKind::FixedJVaryAlpha => {
                positive("alpha_grid", &self.alpha_grid)?;
                if self.sweep_j() < 2 {
                    return Err(usage("fixed_j", "sample size must be >= 2"));
                }
            }
            SweepKind::RateVsDelta => {
                if self.problem != ProblemKind::SyntheticDiagonal {
                    return Err(usage("problem", "rate-vs-delta needs synthetic-diagonal"));
                }
                positive("delta_grid", &self.delta_grid)?;
                if self.delta_grid.len() < 2 {
                    return Err(usage("delta_grid", "needs at least two noise levels"));
                }
            }
        }
        Ok(())
    }
}
