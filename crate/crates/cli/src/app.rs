//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use eki::io::{save_matrix_bin, save_matrix_csv};
use eki::operators::LinearMap;
use eki::tomo::{shepp_logan, RadonGeometry, RadonOperator};
use eki::DMatrix;

use crate::check::run_checks;
use crate::error::CliError;
use crate::runner::run_experiment;
use crate::spec::{ExperimentSpec, ProblemKind, SweepKind};

#[derive(Debug, Parser)]
#[command(name = "eki", version, about = "Ensemble Kalman inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by the config (default: adaptive EKI on the
    /// 32×32 tomography bench, all backends).
    Run(Overrides),
    /// Convergence rate against the noise level on the diagonal
    /// source-condition problem.
    Rate {
        #[command(flatten)]
        overrides: Overrides,
        /// Source-condition exponent in (0, 1/2].
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Write the Shepp-Logan phantom (and optionally its sinogram).
    Phantom {
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value = "phantom-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also write the noise-free sinogram (angles × detectors).
        #[arg(long)]
        sinogram: bool,
    },
    /// Run the invariant suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

/// Flags overriding config values.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML experiment file (or a manifest written by a previous run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated backends: anomaly (standard), nystroem, svd.
    #[arg(long, value_delimiter = ',')]
    backend: Option<Vec<String>>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Decay factor of α for every backend (drops per-backend overrides).
    #[arg(long)]
    b: Option<f64>,
    /// Approximation order for every backend (drops per-backend overrides).
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    j0: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    /// 0: J_k = ⌈b^{-k/γ} J₀⌉, 1: J_k = ⌈b^{-(k-1)/γ} J₀⌉.
    #[arg(long)]
    index_offset: Option<u32>,
}

impl Overrides {
    fn apply(&self, mut spec: ExperimentSpec) -> Result<ExperimentSpec, CliError> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage {
                field: "config".into(),
                message: format!("{}: {e}", path.display()),
            })?;
            spec = ExperimentSpec::from_toml(&text)?;
        }
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            spec.out = out.clone();
        }
        if let Some(backends) = &self.backend {
            spec.backends = backends.clone();
        }
        if let Some(d) = self.d {
            spec.d = d;
        }
        if let Some(snr) = self.snr {
            spec.snr = snr;
        }
        if let Some(tau) = self.tau {
            spec.tau = tau;
        }
        if let Some(b) = self.b {
            spec.b = b;
            spec.schedule.values_mut().for_each(|o| o.b = None);
        }
        if let Some(gamma) = self.gamma {
            spec.gamma = gamma;
            spec.schedule.values_mut().for_each(|o| o.gamma = None);
        }
        if let Some(j0) = self.j0 {
            spec.j0 = j0;
        }
        if let Some(alpha0) = self.alpha0 {
            spec.alpha0 = alpha0;
        }
        if let Some(offset) = self.index_offset {
            spec.index_offset = offset;
        }
        Ok(spec)
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(overrides) => {
            let spec = overrides.apply(ExperimentSpec::default())?;
            let report = run_experiment(&spec)?;
            for r in &report.runs {
                match (&r.stopped_by, r.final_j) {
                    (Some(stop), Some(j)) => {
                        println!("{} seed {}: stopped by {stop} at J={j}", r.backend, r.seed)
                    }
                    _ => println!("{} seed {}: {}", r.backend, r.seed, r.file),
                }
            }
            println!("wrote {}", report.out.display());
        }
        Command::Rate { overrides, mu } => {
            let mut spec = overrides.apply(ExperimentSpec::rate_preset(mu.unwrap_or(0.5)))?;
            if let Some(mu) = mu {
                spec.mu = mu;
            }
            if spec.sweep != SweepKind::RateVsDelta
                || spec.problem != ProblemKind::SyntheticDiagonal
            {
                return Err(CliError::Usage {
                    field: "sweep".into(),
                    message: "rate needs sweep = rate-vs-delta on synthetic-diagonal".into(),
                });
            }
            let report = run_experiment(&spec)?;
            for fit in &report.rate {
                let slope = fit.slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
                println!(
                    "{}: slope {slope} (expected {:.3}) from {} points, {} excluded",
                    fit.backend, fit.expected, fit.points, fit.excluded
                );
            }
            println!("wrote {}", report.out.display());
        }
        Command::Phantom {
            d,
            out,
            format,
            sinogram,
        } => {
            if d < 8 {
                return Err(CliError::Usage {
                    field: "d".into(),
                    message: "must be >= 8".into(),
                });
            }
            fs::create_dir_all(&out)?;
            let image = shepp_logan(d);
            let as_matrix = DMatrix::from_row_slice(d, d, image.pixels.as_slice());
            let mut outputs = vec![("phantom", as_matrix)];
            if sinogram {
                let g = RadonGeometry::for_image(d);
                let y = RadonOperator::new(g)?.apply(&image.pixels);
                outputs.push((
                    "sinogram",
                    DMatrix::from_row_slice(g.n_angles, g.n_detectors, y.as_slice()),
                ));
            }
            for (name, m) in outputs {
                let path = match format {
                    Format::Csv => out.join(format!("{name}.csv")),
                    Format::Bin => out.join(format!("{name}.bin")),
                };
                match format {
                    Format::Csv => save_matrix_csv(&path, &m)?,
                    Format::Bin => save_matrix_bin(&path, &m)?,
                }
                println!("wrote {}", path.display());
            }
        }
        Command::Check { seed } => {
            let outcomes = run_checks(seed);
            let mut failed = 0;
            for o in &outcomes {
                println!(
                    "{} {}: {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                return Err(CliError::Runtime(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code: 0 success, 1 usage error, 2 runtime failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
