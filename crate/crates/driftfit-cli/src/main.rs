//! `driftfit` — command-line harness for simulating periodic-drift
//! diffusions and estimating their parameters with a particle filter or a
//! Fourier-constrained hidden-Markov fit.
//!
//! Configuration resolves in three layers: built-in defaults, a flat
//! `key = value` config file (`--config`), and same-named CLI flags. The
//! resolved configuration is printed before the command runs. Exit codes:
//! 0 success, 1 file-system failure, 2 configuration error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use config::{Mode, Settings};

#[derive(Parser)]
#[command(
    name = "driftfit",
    about = "Estimate drift and diffusion of a hidden periodic diffusion process",
    version
)]
struct Cli {
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,

    // One flag per configuration key; values use the same syntax as the
    // config file. See `Settings::apply` for the full key list.
    /// Drift coefficients (comma-separated).
    #[arg(long, value_name = "LIST", global = true)]
    theta: Option<String>,
    /// Diffusion constant of the generating model.
    #[arg(long, value_name = "NUM", global = true)]
    diffusion: Option<String>,
    /// Spatial period of the drift and the sensor.
    #[arg(long, value_name = "NUM", global = true)]
    period: Option<String>,
    /// Observation-noise variance.
    #[arg(long, value_name = "NUM", global = true)]
    sigma: Option<String>,
    /// Time step.
    #[arg(long, value_name = "NUM", global = true)]
    dt: Option<String>,
    /// Initial state: "gaussian" or a fixed number.
    #[arg(long, value_name = "VAL", global = true)]
    x0: Option<String>,
    /// Number of observation steps.
    #[arg(long, value_name = "INT", global = true)]
    t: Option<String>,
    /// Master seed; all randomness derives from it.
    #[arg(long, value_name = "INT", global = true)]
    seed: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR", global = true)]
    out_dir: Option<String>,
    /// Trajectory CSV to consume instead of simulating.
    #[arg(long, value_name = "PATH", global = true)]
    trajectory: Option<String>,
    /// Particle count for the filter.
    #[arg(long, value_name = "INT", global = true)]
    n_particles: Option<String>,
    /// Parameter random-walk scale.
    #[arg(long, value_name = "NUM", global = true)]
    jitter_eps: Option<String>,
    /// Likelihood-kernel variance of the filter.
    #[arg(long, value_name = "NUM", global = true)]
    obs_bandwidth: Option<String>,
    /// Initial particle mean (comma-separated; x, drift coefficients, sqrt-diffusion).
    #[arg(long, value_name = "LIST", global = true)]
    init_mean: Option<String>,
    /// Initial particle covariance diagonal (comma-separated).
    #[arg(long, value_name = "LIST", global = true)]
    init_cov: Option<String>,
    /// Resampling scheme: multinomial or systematic.
    #[arg(long, value_name = "NAME", global = true)]
    resampling: Option<String>,
    /// Density-snapshot steps (comma-separated).
    #[arg(long, value_name = "LIST", global = true)]
    snapshot_times: Option<String>,
    /// Histogram bins per density snapshot.
    #[arg(long, value_name = "INT", global = true)]
    density_bins: Option<String>,
    /// Chain states for the fit.
    #[arg(long, value_name = "INT", global = true)]
    bw_states: Option<String>,
    /// Observation symbols for the fit.
    #[arg(long, value_name = "INT", global = true)]
    bw_symbols: Option<String>,
    /// Fourier harmonics of the fitted transition rates.
    #[arg(long, value_name = "INT", global = true)]
    bw_harmonics: Option<String>,
    /// Initial up-rate DC coefficient.
    #[arg(long, value_name = "NUM", global = true)]
    bw_init_up: Option<String>,
    /// Initial down-rate DC coefficient.
    #[arg(long, value_name = "NUM", global = true)]
    bw_init_down: Option<String>,
    /// Log-likelihood convergence tolerance.
    #[arg(long, value_name = "NUM", global = true)]
    bw_tol: Option<String>,
    /// Maximum reestimation iterations.
    #[arg(long, value_name = "INT", global = true)]
    bw_max_iterations: Option<String>,
    /// Extra smoothing variance for the emission matrix.
    #[arg(long, value_name = "NUM", global = true)]
    bw_emission_sigma: Option<String>,
    /// Lower edge of the observation quantizer.
    #[arg(long, value_name = "NUM", global = true)]
    y_min: Option<String>,
    /// Upper edge of the observation quantizer.
    #[arg(long, value_name = "NUM", global = true)]
    y_max: Option<String>,
    /// Benchmark runs per grid cell.
    #[arg(long, value_name = "INT", global = true)]
    n_runs: Option<String>,
    /// Benchmark particle counts (comma-separated).
    #[arg(long, value_name = "LIST", global = true)]
    np_grid: Option<String>,
    /// Relative-error threshold that counts a run as diverged.
    #[arg(long, value_name = "NUM", global = true)]
    divergence_threshold: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as `t,x,y` CSV.
    Simulate,
    /// Run the particle filter; write the estimate trace and density snapshots.
    Pf,
    /// Fit the Fourier-constrained chain; write profiles, trace, and coefficients.
    Mbw,
    /// Build the divergence table over the particle-count grid.
    Bench,
}

impl Cli {
    /// Flag overrides as (key, value) pairs, in declaration order.
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let entries: [(&'static str, &Option<String>); 31] = [
            ("theta", &self.theta),
            ("diffusion", &self.diffusion),
            ("period", &self.period),
            ("sigma", &self.sigma),
            ("dt", &self.dt),
            ("x0", &self.x0),
            ("t", &self.t),
            ("seed", &self.seed),
            ("out-dir", &self.out_dir),
            ("trajectory", &self.trajectory),
            ("n-particles", &self.n_particles),
            ("jitter-eps", &self.jitter_eps),
            ("obs-bandwidth", &self.obs_bandwidth),
            ("init-mean", &self.init_mean),
            ("init-cov", &self.init_cov),
            ("resampling", &self.resampling),
            ("snapshot-times", &self.snapshot_times),
            ("density-bins", &self.density_bins),
            ("bw-states", &self.bw_states),
            ("bw-symbols", &self.bw_symbols),
            ("bw-harmonics", &self.bw_harmonics),
            ("bw-init-up", &self.bw_init_up),
            ("bw-init-down", &self.bw_init_down),
            ("bw-tol", &self.bw_tol),
            ("bw-max-iterations", &self.bw_max_iterations),
            ("bw-emission-sigma", &self.bw_emission_sigma),
            ("y-min", &self.y_min),
            ("y-max", &self.y_max),
            ("n-runs", &self.n_runs),
            ("np-grid", &self.np_grid),
            ("divergence-threshold", &self.divergence_threshold),
        ];
        entries
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

fn resolve(cli: &Cli, mode: Mode) -> Result<Settings, Failure> {
    let mut settings = Settings::defaults(mode);
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let pairs = driftfit::io::parse_kv(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        for (key, value) in &pairs {
            settings
                .apply(key, value)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        }
    }
    for (key, value) in cli.overrides() {
        settings
            .apply(key, value)
            .map_err(|e| Failure::Config(format!("--{key}: {e}")))?;
    }
    settings.validate(mode).map_err(|e| Failure::Config(e.to_string()))?;
    Ok(settings)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mode = match cli.command {
        Command::Simulate => Mode::Simulate,
        Command::Pf => Mode::Pf,
        Command::Mbw => Mode::Mbw,
        Command::Bench => Mode::Bench,
    };
    let settings = resolve(cli, mode)?;
    std::fs::create_dir_all(&settings.out_dir)
        .map_err(|source| Failure::Io { path: settings.out_dir.clone(), source })?;
    print!("{}", settings.render());
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&settings),
        Command::Pf => commands::cmd_pf(&settings),
        Command::Mbw => commands::cmd_mbw(&settings),
        Command::Bench => commands::cmd_bench(&settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
