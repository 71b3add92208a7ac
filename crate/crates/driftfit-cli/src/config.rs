//! Resolved run configuration: built-in defaults, then a flat `key = value`
//! config file, then same-named command-line flags, each layer overriding
//! the previous one. Every key is listed in [`Settings::apply`]; the
//! resolved state prints as sorted `key = value` lines so reruns are
//! comparable line by line.

use std::fmt::Write as _;
use std::path::PathBuf;

use driftfit::io::{parse_f64, parse_f64_list, parse_usize};
use driftfit::pf::Resampling;
use driftfit::sde::InitialState;
use driftfit::{Error, Result};

/// Which subcommand the settings are being resolved for. The benchmark
/// preset sharpens the selection kernel and switches to systematic
/// resampling; with noiseless observations the module defaults barely
/// engage selection and the divergence table saturates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Pf,
    Mbw,
    Bench,
}

/// Every knob of the harness, fully resolved.
#[derive(Debug, Clone)]
pub struct Settings {
    // Generating model.
    pub theta: Vec<f64>,
    pub diffusion: f64,
    pub period: f64,
    pub sigma: f64,
    pub dt: f64,
    /// Initial condition: a Gaussian draw ("gaussian") or a fixed number.
    pub x0: InitialState,
    /// Observation steps to simulate (the trajectory has t+1 points).
    pub t: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Optional trajectory CSV to consume instead of simulating.
    pub trajectory: Option<PathBuf>,

    // Particle filter.
    pub n_particles: usize,
    pub jitter_eps: f64,
    pub obs_bandwidth: f64,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<f64>,
    pub resampling: Resampling,
    pub snapshot_times: Vec<usize>,
    pub density_bins: usize,

    // Modified Baum-Welch.
    pub bw_states: usize,
    pub bw_symbols: usize,
    pub bw_harmonics: usize,
    pub bw_init_up: f64,
    pub bw_init_down: f64,
    pub bw_tol: f64,
    pub bw_max_iterations: usize,
    /// Extra smoothing width added to the observation noise when building
    /// the emission matrix (accounts for within-cell observation spread).
    pub bw_emission_sigma: f64,
    pub y_min: f64,
    pub y_max: f64,

    // Benchmark grid.
    pub n_runs: usize,
    pub np_grid: Vec<usize>,
    pub divergence_threshold: f64,
}

impl Settings {
    /// Built-in defaults for a subcommand.
    pub fn defaults(mode: Mode) -> Self {
        let mut s = Settings {
            theta: vec![-0.1, 0.1],
            diffusion: 0.8,
            period: 32.0,
            sigma: 0.0,
            dt: 1.0,
            x0: InitialState::StandardNormal,
            t: 1000,
            seed: 42,
            out_dir: PathBuf::from("out"),
            trajectory: None,
            n_particles: 1000,
            jitter_eps: 0.01,
            obs_bandwidth: 0.05,
            init_mean: vec![1.0, 0.0, 0.0, 0.0],
            init_cov: vec![25.0, 0.01, 0.01, 0.01],
            resampling: Resampling::Multinomial,
            snapshot_times: vec![10, 100, 1000],
            density_bins: 60,
            bw_states: 20,
            bw_symbols: 32,
            bw_harmonics: 1,
            // Deliberately asymmetric: states that mirror each other emit
            // identically (the sensor is even), so reestimation maps
            // mirror-symmetric rates to mirror-symmetric rates and a
            // symmetric start can never develop a mean drift.
            bw_init_up: 0.18,
            bw_init_down: 0.12,
            bw_tol: 1e-6,
            bw_max_iterations: 500,
            bw_emission_sigma: 5e-4,
            y_min: -1.0,
            y_max: 1.0,
            n_runs: 50,
            np_grid: vec![100, 500, 1000],
            divergence_threshold: 0.5,
        };
        if mode == Mode::Bench {
            s.obs_bandwidth = 0.002;
            s.resampling = Resampling::Systematic;
        }
        s
    }

    /// Set one key from its textual value. Config-file lines and CLI flags
    /// funnel through here so both accept identical syntax.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "theta" => self.theta = parse_f64_list(v)?,
            "diffusion" => self.diffusion = parse_f64(v)?,
            "period" => self.period = parse_f64(v)?,
            "sigma" => self.sigma = parse_f64(v)?,
            "dt" => self.dt = parse_f64(v)?,
            "x0" => {
                self.x0 = if v.eq_ignore_ascii_case("gaussian") {
                    InitialState::StandardNormal
                } else {
                    InitialState::Fixed(parse_f64(v)?)
                }
            }
            "t" => self.t = parse_usize(v)?,
            "seed" => {
                self.seed = v
                    .parse::<u64>()
                    .map_err(|e| Error::Parse(format!("seed {v:?}: {e}")))?
            }
            "out-dir" => self.out_dir = PathBuf::from(v),
            "trajectory" => {
                self.trajectory = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "n-particles" => self.n_particles = parse_usize(v)?,
            "jitter-eps" => self.jitter_eps = parse_f64(v)?,
            "obs-bandwidth" => self.obs_bandwidth = parse_f64(v)?,
            "init-mean" => self.init_mean = parse_f64_list(v)?,
            "init-cov" => self.init_cov = parse_f64_list(v)?,
            "resampling" => {
                self.resampling = match v.to_ascii_lowercase().as_str() {
                    "multinomial" => Resampling::Multinomial,
                    "systematic" => Resampling::Systematic,
                    other => {
                        return Err(Error::Parse(format!(
                            "resampling must be multinomial or systematic, got {other:?}"
                        )))
                    }
                }
            }
            "snapshot-times" => {
                self.snapshot_times =
                    v.split(',').map(|p| parse_usize(p.trim())).collect::<Result<_>>()?
            }
            "density-bins" => self.density_bins = parse_usize(v)?,
            "bw-states" => self.bw_states = parse_usize(v)?,
            "bw-symbols" => self.bw_symbols = parse_usize(v)?,
            "bw-harmonics" => self.bw_harmonics = parse_usize(v)?,
            "bw-init-up" => self.bw_init_up = parse_f64(v)?,
            "bw-init-down" => self.bw_init_down = parse_f64(v)?,
            "bw-tol" => self.bw_tol = parse_f64(v)?,
            "bw-max-iterations" => self.bw_max_iterations = parse_usize(v)?,
            "bw-emission-sigma" => self.bw_emission_sigma = parse_f64(v)?,
            "y-min" => self.y_min = parse_f64(v)?,
            "y-max" => self.y_max = parse_f64(v)?,
            "n-runs" => self.n_runs = parse_usize(v)?,
            "np-grid" => {
                self.np_grid =
                    v.split(',').map(|p| parse_usize(p.trim())).collect::<Result<_>>()?
            }
            "divergence-threshold" => self.divergence_threshold = parse_f64(v)?,
            other => return Err(Error::Parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Cross-field checks that individual setters cannot perform.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if self.t == 0 {
            return Err(Error::invalid("t must be at least 1"));
        }
        if self.init_mean.len() != self.init_cov.len() {
            return Err(Error::invalid(format!(
                "init-mean has {} entries but init-cov has {}",
                self.init_mean.len(),
                self.init_cov.len()
            )));
        }
        if self.init_mean.len() != self.theta.len() + 2 {
            return Err(Error::invalid(format!(
                "init-mean needs {} entries (x, {} drift coefficients, sqrt-diffusion), got {}",
                self.theta.len() + 2,
                self.theta.len(),
                self.init_mean.len()
            )));
        }
        if self.density_bins == 0 {
            return Err(Error::invalid("density-bins must be at least 1"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::invalid("divergence-threshold must be positive"));
        }
        if mode == Mode::Bench {
            if self.n_runs == 0 {
                return Err(Error::invalid("n-runs must be at least 1"));
            }
            if self.np_grid.is_empty() {
                return Err(Error::invalid("np-grid must not be empty"));
            }
        }
        Ok(())
    }

    /// The resolved configuration as sorted `key = value` lines.
    pub fn render(&self) -> String {
        let float = |v: f64| format!("{v}");
        let floats = |vs: &[f64]| {
            vs.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
        };
        let ints = |vs: &[usize]| {
            vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut rows: Vec<(&str, String)> = vec![
            ("theta", floats(&self.theta)),
            ("diffusion", float(self.diffusion)),
            ("period", float(self.period)),
            ("sigma", float(self.sigma)),
            ("dt", float(self.dt)),
            (
                "x0",
                match self.x0 {
                    InitialState::StandardNormal => "gaussian".to_string(),
                    InitialState::Fixed(v) => float(v),
                },
            ),
            ("t", self.t.to_string()),
            ("seed", self.seed.to_string()),
            ("out-dir", self.out_dir.display().to_string()),
            (
                "trajectory",
                self.trajectory
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("n-particles", self.n_particles.to_string()),
            ("jitter-eps", float(self.jitter_eps)),
            ("obs-bandwidth", float(self.obs_bandwidth)),
            ("init-mean", floats(&self.init_mean)),
            ("init-cov", floats(&self.init_cov)),
            (
                "resampling",
                match self.resampling {
                    Resampling::Multinomial => "multinomial".to_string(),
                    Resampling::Systematic => "systematic".to_string(),
                },
            ),
            ("snapshot-times", ints(&self.snapshot_times)),
            ("density-bins", self.density_bins.to_string()),
            ("bw-states", self.bw_states.to_string()),
            ("bw-symbols", self.bw_symbols.to_string()),
            ("bw-harmonics", self.bw_harmonics.to_string()),
            ("bw-init-up", float(self.bw_init_up)),
            ("bw-init-down", float(self.bw_init_down)),
            ("bw-tol", float(self.bw_tol)),
            ("bw-max-iterations", self.bw_max_iterations.to_string()),
            ("bw-emission-sigma", float(self.bw_emission_sigma)),
            ("y-min", float(self.y_min)),
            ("y-max", float(self.y_max)),
            ("n-runs", self.n_runs.to_string()),
            ("np-grid", ints(&self.np_grid)),
            ("divergence-threshold", float(self.divergence_threshold)),
        ];
        rows.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
