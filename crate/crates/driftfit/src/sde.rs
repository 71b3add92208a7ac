//! Ground-truth process: overdamped Langevin dynamics in a periodic drift
//! field, observed through a cosine sensor with additive Gaussian noise.
//!
//! State evolves by the Euler–Maruyama scheme
//!
//! ```text
//! x_t = x_{t-1} + F(x_{t-1}) dt + sqrt(D dt) v_t,      v_t ~ N(0,1)
//! F(x) = theta_0 + sum_n theta_n sin(2 pi n x / L)
//! ```
//!
//! and each state is observed as `y = cos(2 pi x / L) + sqrt(sigma) w`,
//! `w ~ N(0,1)` — note `sigma` is the observation noise *variance*.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::io::{csv_fields, fmt_float, parse_f64, parse_kv};
use crate::numeric::{cos2pi, sin2pi};
use crate::rng::{substream, Lane};

/// Parameters of the hidden process and its sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Drift coefficients `(theta_0, theta_1, ..., theta_n)`: constant bias
    /// plus amplitudes of the sine harmonics.
    pub theta: Vec<f64>,
    /// Diffusion constant `D >= 0`.
    pub diffusion: f64,
    /// Spatial period `L > 0` of the drift field and the sensor.
    pub period: f64,
    /// Observation noise variance `sigma >= 0`.
    pub sigma: f64,
    /// Time step `dt > 0` of the Euler scheme.
    pub dt: f64,
}

impl ModelSpec {
    pub fn new(theta: Vec<f64>, diffusion: f64, period: f64, sigma: f64, dt: f64) -> Result<Self> {
        let spec = ModelSpec { theta, diffusion, period, sigma, dt };
        spec.validate()?;
        Ok(spec)
    }

    /// Check the field invariants (fields are public, so consumers of
    /// hand-assembled specs re-validate before use).
    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return Err(Error::invalid("theta must contain at least theta_0"));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("theta coefficients must be finite"));
        }
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return Err(Error::invalid(format!("diffusion must be >= 0, got {}", self.diffusion)));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid(format!("period must be > 0, got {}", self.period)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    /// Number of sine harmonics (zero for a pure constant drift).
    pub fn n_harmonics(&self) -> usize {
        self.theta.len() - 1
    }
}

/// Distribution of the initial state `x_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    Fixed(f64),
    /// `x_0 ~ N(0, 1)`.
    StandardNormal,
}

/// A simulated (or loaded) path: uniformly spaced times, hidden states,
/// and one observation per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub observations: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Drift field for an explicit coefficient slice; shared by the simulator
/// and the particle filter (whose particles carry their own coefficients).
pub fn drift_value(theta: &[f64], period: f64, x: f64) -> f64 {
    let mut f = theta[0];
    for (n, amp) in theta.iter().enumerate().skip(1) {
        f += amp * sin2pi(n as f64 * x / period);
    }
    f
}

/// Drift `F(x)` under `spec`.
pub fn drift_eval(spec: &ModelSpec, x: f64) -> f64 {
    drift_value(&spec.theta, spec.period, x)
}

/// Observation `cos(2 pi x / L) + sqrt(sigma) w` for a given noise draw `w`.
pub fn observe(x: f64, period: f64, sigma: f64, w: f64) -> f64 {
    cos2pi(x / period) + sigma.sqrt() * w
}

/// Simulate `steps` Euler transitions, returning `steps + 1` points
/// (the initial state is observed too).
///
/// The same seed always yields the same trajectory; the latent path is
/// additionally invariant to `sigma` because observation noise is drawn
/// from the stream whether or not it is used.
pub fn simulate(spec: &ModelSpec, x0: InitialState, steps: usize, seed: u64) -> Result<Trajectory> {
    spec.validate()?;
    if steps == 0 {
        return Err(Error::invalid("simulate requires steps >= 1"));
    }
    let mut rng = substream(seed, Lane::Simulate, 0, 0);
    let mut x = match x0 {
        InitialState::Fixed(v) => {
            if !v.is_finite() {
                return Err(Error::invalid("initial state must be finite"));
            }
            v
        }
        InitialState::StandardNormal => rng.sample(StandardNormal),
    };
    let diff_scale = (spec.diffusion * spec.dt).sqrt();

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps + 1);

    let w0: f64 = rng.sample(StandardNormal);
    times.push(0.0);
    states.push(x);
    observations.push(observe(x, spec.period, spec.sigma, w0));

    for t in 1..=steps {
        let v: f64 = rng.sample(StandardNormal);
        let w: f64 = rng.sample(StandardNormal);
        x += drift_eval(spec, x) * spec.dt + diff_scale * v;
        times.push(t as f64 * spec.dt);
        states.push(x);
        observations.push(observe(x, spec.period, spec.sigma, w));
    }

    Ok(Trajectory { times, states, observations })
}

const TRAJECTORY_HEADER: &str = "t,x,y";

/// Write a trajectory as CSV (`t,x,y`) with full float precision.
pub fn write_trajectory<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for i in 0..traj.len() {
        writeln!(
            out,
            "{},{},{}",
            fmt_float(traj.times[i]),
            fmt_float(traj.states[i]),
            fmt_float(traj.observations[i])
        )?;
    }
    Ok(())
}

/// Read a trajectory written by [`write_trajectory`].
pub fn read_trajectory<R: BufRead>(input: R) -> Result<Trajectory> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
    if header.trim() != TRAJECTORY_HEADER {
        return Err(Error::Parse(format!(
            "expected header {TRAJECTORY_HEADER:?}, got {header:?}"
        )));
    }
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), observations: Vec::new() };
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = csv_fields(&line, 3, idx + 2)?;
        traj.times.push(parse_f64(fields[0])?);
        traj.states.push(parse_f64(fields[1])?);
        traj.observations.push(parse_f64(fields[2])?);
    }
    if traj.is_empty() {
        return Err(Error::Parse("trajectory has no data rows".into()));
    }
    Ok(traj)
}

/// Write a model as a flat `key = value` document.
pub fn write_model_spec<W: Write>(spec: &ModelSpec, mut out: W) -> Result<()> {
    for (n, theta) in spec.theta.iter().enumerate() {
        writeln!(out, "theta{n} = {}", fmt_float(*theta))?;
    }
    writeln!(out, "D = {}", fmt_float(spec.diffusion))?;
    writeln!(out, "L = {}", fmt_float(spec.period))?;
    writeln!(out, "sigma = {}", fmt_float(spec.sigma))?;
    writeln!(out, "dt = {}", fmt_float(spec.dt))?;
    Ok(())
}

/// Read a model written by [`write_model_spec`]. The `thetaN` keys must be
/// contiguous from `theta0`; unknown keys are rejected.
pub fn read_model_spec(text: &str) -> Result<ModelSpec> {
    let mut thetas: Vec<(usize, f64)> = Vec::new();
    let mut diffusion = None;
    let mut period = None;
    let mut sigma = None;
    let mut dt = None;
    for (key, value) in parse_kv(text)? {
        if let Some(idx) = key.strip_prefix("theta") {
            let n: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad drift coefficient key {key:?}")))?;
            thetas.push((n, parse_f64(&value)?));
            continue;
        }
        match key.as_str() {
            "D" => diffusion = Some(parse_f64(&value)?),
            "L" => period = Some(parse_f64(&value)?),
            "sigma" => sigma = Some(parse_f64(&value)?),
            "dt" => dt = Some(parse_f64(&value)?),
            _ => return Err(Error::Parse(format!("unknown model key {key:?}"))),
        }
    }
    thetas.sort_by_key(|&(n, _)| n);
    if thetas.iter().enumerate().any(|(i, &(n, _))| i != n) {
        return Err(Error::Parse("theta indices must be contiguous from theta0".into()));
    }
    let theta: Vec<f64> = thetas.into_iter().map(|(_, v)| v).collect();
    let missing = |name: &str| Error::Parse(format!("missing model key {name:?}"));
    ModelSpec::new(
        theta,
        diffusion.ok_or_else(|| missing("D"))?,
        period.ok_or_else(|| missing("L"))?,
        sigma.ok_or_else(|| missing("sigma"))?,
        dt.ok_or_else(|| missing("dt"))?,
    )
}
