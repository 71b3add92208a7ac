//! Sampling-importance-resampling particle filter over an augmented state.
//!
//! Each particle carries the latent position together with its own copy of
//! the unknown parameters, `(x, theta_0, ..., theta_n, sqrt(D))`; the square
//! root keeps the implied diffusion nonnegative without constrained
//! sampling. Propagation advances `x` with the drift built from the
//! particle's own coefficients and diffuses the parameters by a small
//! random-walk jitter, so resampling concentrates the cloud on parameter
//! values consistent with the data.
//!
//! Randomness: every draw comes from a substream addressed by
//! `(seed, time step, particle index)` (see [`crate::rng`]), which makes the
//! filter deterministic per seed and bit-identical whether particles are
//! processed serially or in parallel. The cloud is a value passed between
//! stages; no stage mutates shared state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kalman::LinearGaussianModel;
use crate::numeric::cos2pi;
use crate::rng::{substream, Lane};
use crate::sde::{drift_value, ModelSpec};

/// One particle: latent position plus its private parameter vector
/// `(theta_0, ..., theta_n, sqrt(D))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: f64,
    pub params: Vec<f64>,
}

impl AugmentedState {
    /// Drift coefficients carried by this particle (everything but the
    /// final square-root-diffusion entry).
    pub fn drift_coeffs(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    /// Implied diffusion constant, `(last param)^2 >= 0`.
    pub fn diffusion(&self) -> f64 {
        let root = self.params[self.params.len() - 1];
        root * root
    }
}

/// Resampling scheme. Multinomial draws are the default; systematic
/// resampling is the usual lower-variance alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

impl std::str::FromStr for Resampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Resampling::Multinomial),
            "systematic" => Ok(Resampling::Systematic),
            other => Err(Error::Parse(format!(
                "unknown resampling scheme {other:?} (expected multinomial or systematic)"
            ))),
        }
    }
}

impl std::fmt::Display for Resampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Resampling::Multinomial => "multinomial",
            Resampling::Systematic => "systematic",
        })
    }
}

/// Filter configuration.
///
/// `init_mean` / `init_cov_diag` describe the diagonal Gaussian over the
/// full augmented vector `(x, theta_0, ..., sqrt(D))`, so their length
/// fixes the number of estimated drift coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PfConfig {
    pub n_particles: usize,
    /// Parameter random-walk scale: per-step jitter std is `eps * sqrt(dt)`.
    pub jitter_eps: f64,
    /// Likelihood variance of the observation residual. Deliberately
    /// decoupled from the data-generating noise, which may be zero.
    pub obs_bandwidth: f64,
    pub init_mean: Vec<f64>,
    /// Per-coordinate initial variances.
    pub init_cov_diag: Vec<f64>,
    pub resampling: Resampling,
    pub seed: u64,
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles must be >= 1"));
        }
        if !(self.jitter_eps >= 0.0 && self.jitter_eps.is_finite()) {
            return Err(Error::invalid("jitter_eps must be >= 0"));
        }
        if !(self.obs_bandwidth > 0.0 && self.obs_bandwidth.is_finite()) {
            return Err(Error::invalid("obs_bandwidth must be > 0"));
        }
        if self.init_mean.len() != self.init_cov_diag.len() {
            return Err(Error::invalid("init_mean and init_cov_diag lengths differ"));
        }
        if self.init_mean.len() < 3 {
            return Err(Error::invalid(
                "augmented state needs at least (x, theta_0, sqrt(D)) coordinates",
            ));
        }
        if self.init_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("init_mean must be finite"));
        }
        if self.init_cov_diag.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("init_cov_diag entries must be >= 0"));
        }
        Ok(())
    }
}

/// A weighted particle population.
///
/// Weights are nonnegative with a positive sum; the stochastic operations
/// ([`weight`], [`sis_update`], [`resample`]) always hand back weights
/// normalized to sum 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    particles: Vec<AugmentedState>,
    weights: Vec<f64>,
}

impl ParticleCloud {
    /// Assemble a cloud from raw parts, validating shape but not
    /// normalization (some operations require it and check separately).
    pub fn from_parts(particles: Vec<AugmentedState>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("cloud must hold at least one particle"));
        }
        if particles.len() != weights.len() {
            return Err(Error::invalid("particle and weight counts differ"));
        }
        let dim = particles[0].params.len();
        if dim < 2 {
            return Err(Error::invalid("particles need at least (theta_0, sqrt(D)) parameters"));
        }
        if particles.iter().any(|p| p.params.len() != dim) {
            return Err(Error::invalid("all particles must share one parameter dimension"));
        }
        if particles.iter().any(|p| !p.x.is_finite() || p.params.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("particle coordinates must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be nonnegative and finite"));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("weights must not all be zero"));
        }
        Ok(ParticleCloud { particles, weights })
    }

    pub fn particles(&self) -> &[AugmentedState] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Draw the initial cloud from the diagonal Gaussian of `config`; weights
/// start uniform.
pub fn initialize(config: &PfConfig) -> Result<ParticleCloud> {
    config.validate()?;
    let dim = config.init_mean.len();
    let particles = (0..config.n_particles)
        .map(|i| {
            let mut rng = substream(config.seed, Lane::PfInit, 0, i as u64);
            let mut coords = Vec::with_capacity(dim);
            for c in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                coords.push(config.init_mean[c] + config.init_cov_diag[c].sqrt() * z);
            }
            AugmentedState { x: coords[0], params: coords[1..].to_vec() }
        })
        .collect();
    let weights = vec![1.0 / config.n_particles as f64; config.n_particles];
    Ok(ParticleCloud { particles, weights })
}

/// Advance every particle by one Euler step of its own dynamics and jitter
/// its parameters. Weights are untouched. `step` is the time index of the
/// transition, used to address the noise substreams.
pub fn propagate(mut cloud: ParticleCloud, spec: &ModelSpec, config: &PfConfig, step: usize) -> ParticleCloud {
    let sqrt_dt = spec.dt.sqrt();
    let jitter = config.jitter_eps * sqrt_dt;
    for (i, p) in cloud.particles.iter_mut().enumerate() {
        let mut rng = substream(config.seed, Lane::PfPropagate, step as u64, i as u64);
        let v: f64 = rng.sample(StandardNormal);
        let drift = drift_value(p.drift_coeffs(), spec.period, p.x);
        let diffusion_root = p.params[p.params.len() - 1];
        p.x += drift * spec.dt + diffusion_root * sqrt_dt * v;
        for param in p.params.iter_mut() {
            let u: f64 = rng.sample(StandardNormal);
            *param += jitter * u;
        }
    }
    cloud
}

/// Replace the weights with the normalized observation likelihoods
/// `exp(-(y - cos(2 pi x / L))^2 / (2 * obs_bandwidth))`.
///
/// Fails with a weight-collapse signal when every particle is so far from
/// the observation that the likelihoods underflow to zero.
pub fn weight(mut cloud: ParticleCloud, y: f64, period: f64, config: &PfConfig) -> Result<ParticleCloud> {
    let inv_two_bw = 1.0 / (2.0 * config.obs_bandwidth);
    for (w, p) in cloud.weights.iter_mut().zip(&cloud.particles) {
        let residual = y - cos2pi(p.x / period);
        *w = (-residual * residual * inv_two_bw).exp();
    }
    normalize(&mut cloud.weights)?;
    Ok(cloud)
}

/// Multiply previous weights by fresh likelihoods and renormalize (the
/// sequential-importance-sampling update, used when resampling is off).
pub fn sis_update(prev_weights: &[f64], likelihoods: &[f64]) -> Result<Vec<f64>> {
    if prev_weights.len() != likelihoods.len() {
        return Err(Error::invalid("weight and likelihood lengths differ"));
    }
    let mut weights: Vec<f64> =
        prev_weights.iter().zip(likelihoods).map(|(w, l)| w * l).collect();
    normalize(&mut weights)?;
    Ok(weights)
}

/// Normalize in place; signals collapse when the total is zero.
fn normalize(weights: &mut [f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if !sum.is_finite() {
        return Err(Error::invalid("weights must be finite"));
    }
    if sum <= 0.0 {
        return Err(Error::WeightCollapse { time: None });
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok(())
}

/// Resample with replacement according to the weights; the output cloud
/// has uniform weights. Requires normalized input (sum within 1e-9 of 1).
pub fn resample(cloud: ParticleCloud, config: &PfConfig, step: usize) -> Result<ParticleCloud> {
    let sum: f64 = cloud.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("resample requires normalized weights (sum = {sum})")));
    }
    let mut rng = substream(config.seed, Lane::PfResample, step as u64, 0);
    let n = cloud.len();
    let ancestors = match config.resampling {
        Resampling::Multinomial => multinomial_indices(&cloud.weights, n, &mut rng),
        Resampling::Systematic => systematic_indices(&cloud.weights, n, &mut rng),
    };
    let particles = ancestors.iter().map(|&j| cloud.particles[j].clone()).collect();
    let weights = vec![1.0 / n as f64; n];
    Ok(ParticleCloud { particles, weights })
}

/// `n_draws` independent categorical draws (by inverse CDF).
pub fn multinomial_indices(weights: &[f64], n_draws: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let cdf = cumulative(weights);
    let top = *cdf.last().expect("nonempty weights");
    (0..n_draws)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * top;
            cdf.partition_point(|&c| c <= u).min(weights.len() - 1)
        })
        .collect()
}

/// Systematic (stratified with shared offset) resampling indices.
pub fn systematic_indices(weights: &[f64], n_draws: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let cdf = cumulative(weights);
    let top = *cdf.last().expect("nonempty weights");
    let offset: f64 = rng.random::<f64>() / n_draws as f64;
    let mut out = Vec::with_capacity(n_draws);
    let mut j = 0usize;
    for k in 0..n_draws {
        let u = (offset + k as f64 / n_draws as f64) * top;
        while j + 1 < weights.len() && cdf[j] <= u {
            j += 1;
        }
        out.push(j);
    }
    out
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Minimum-mean-square-error point estimate: the weight-normalized mean of
/// every coordinate of the augmented state.
pub fn estimate(cloud: &ParticleCloud) -> AugmentedState {
    let sum: f64 = cloud.weights.iter().sum();
    let dim = cloud.particles[0].params.len();
    let mut x = 0.0;
    let mut params = vec![0.0; dim];
    for (p, w) in cloud.particles.iter().zip(&cloud.weights) {
        let w = w / sum;
        x += w * p.x;
        for (acc, v) in params.iter_mut().zip(&p.params) {
            *acc += w * v;
        }
    }
    AugmentedState { x, params }
}

/// Posterior-mean diffusion `E[(sqrt(D))^2]`.
///
/// Estimated on the squares rather than by squaring the mean of the
/// square-root coordinate: the sign of sqrt(D) is unidentifiable, so a
/// cloud straddling ±sqrt(D) would otherwise average toward zero.
pub fn estimate_diffusion(cloud: &ParticleCloud) -> f64 {
    let sum: f64 = cloud.weights.iter().sum();
    cloud
        .particles
        .iter()
        .zip(&cloud.weights)
        .map(|(p, w)| w / sum * p.diffusion())
        .sum()
}

/// Effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    sum * sum / sum_sq
}

/// Per-step output of [`run_filter`] / [`run_sis`]: MMSE estimates of the
/// augmented state, the diffusion read-out, and the effective sample size,
/// one entry per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub estimates: Vec<AugmentedState>,
    pub diffusion: Vec<f64>,
    pub ess: Vec<f64>,
}

/// Run the full SIR loop over an observation sequence.
///
/// Step 0 weights the freshly initialized cloud by the first observation
/// (no transition precedes it); each later step propagates, weights,
/// estimates, and resamples. Estimates are taken from the weighted cloud
/// before resampling.
pub fn run_filter(observations: &[f64], spec: &ModelSpec, config: &PfConfig) -> Result<FilterTrace> {
    run_filter_with(observations, spec, config, |_, _| {})
}

/// [`run_filter`] with an observer called on the weighted cloud at every
/// step (before resampling); used for density snapshots.
pub fn run_filter_with(
    observations: &[f64],
    spec: &ModelSpec,
    config: &PfConfig,
    mut observer: impl FnMut(usize, &ParticleCloud),
) -> Result<FilterTrace> {
    spec.validate()?;
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("observation sequence must be nonempty"));
    }
    let mut cloud = initialize(config)?;
    let mut trace = FilterTrace {
        estimates: Vec::with_capacity(observations.len()),
        diffusion: Vec::with_capacity(observations.len()),
        ess: Vec::with_capacity(observations.len()),
    };
    for (t, &y) in observations.iter().enumerate() {
        if t > 0 {
            cloud = propagate(cloud, spec, config, t);
        }
        cloud = weight(cloud, y, spec.period, config).map_err(|e| at_time(e, t))?;
        trace.estimates.push(estimate(&cloud));
        trace.diffusion.push(estimate_diffusion(&cloud));
        trace.ess.push(effective_sample_size(cloud.weights()));
        observer(t, &cloud);
        cloud = resample(cloud, config, t)?;
    }
    Ok(trace)
}

/// Sequential importance sampling: same loop as [`run_filter`] but weights
/// accumulate multiplicatively and no resampling ever happens.
pub fn run_sis(observations: &[f64], spec: &ModelSpec, config: &PfConfig) -> Result<FilterTrace> {
    spec.validate()?;
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("observation sequence must be nonempty"));
    }
    let mut cloud = initialize(config)?;
    let mut trace = FilterTrace {
        estimates: Vec::with_capacity(observations.len()),
        diffusion: Vec::with_capacity(observations.len()),
        ess: Vec::with_capacity(observations.len()),
    };
    let inv_two_bw = 1.0 / (2.0 * config.obs_bandwidth);
    for (t, &y) in observations.iter().enumerate() {
        if t > 0 {
            cloud = propagate(cloud, spec, config, t);
        }
        let likelihoods: Vec<f64> = cloud
            .particles
            .iter()
            .map(|p| {
                let residual = y - cos2pi(p.x / spec.period);
                (-residual * residual * inv_two_bw).exp()
            })
            .collect();
        cloud.weights = sis_update(&cloud.weights, &likelihoods).map_err(|e| at_time(e, t))?;
        trace.estimates.push(estimate(&cloud));
        trace.diffusion.push(estimate_diffusion(&cloud));
        trace.ess.push(effective_sample_size(cloud.weights()));
    }
    Ok(trace)
}

fn at_time(e: Error, t: usize) -> Error {
    match e {
        Error::WeightCollapse { time: None } => Error::WeightCollapse { time: Some(t) },
        other => other,
    }
}

/// Bootstrap SIR filter for the scalar linear-Gaussian model, sharing the
/// resampling and weighting machinery above. Returns the posterior-mean
/// trace for comparison against [`crate::kalman::kalman_oracle`].
pub fn bootstrap_linear_gaussian(
    model: &LinearGaussianModel,
    observations: &[f64],
    n_particles: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    model.validate()?;
    if n_particles == 0 {
        return Err(Error::invalid("n_particles must be >= 1"));
    }
    if observations.is_empty() {
        return Err(Error::invalid("observation sequence must be nonempty"));
    }
    let init_std = model.init_var.sqrt();
    let mut xs: Vec<f64> = (0..n_particles)
        .map(|i| {
            let mut rng = substream(seed, Lane::PfInit, 0, i as u64);
            let z: f64 = rng.sample(StandardNormal);
            model.init_mean + init_std * z
        })
        .collect();
    let q_std = model.q.sqrt();
    let inv_two_r = 1.0 / (2.0 * model.r);
    let mut weights = vec![1.0 / n_particles as f64; n_particles];
    let mut means = Vec::with_capacity(observations.len());
    for (t, &y) in observations.iter().enumerate() {
        if t > 0 {
            for (i, x) in xs.iter_mut().enumerate() {
                let mut rng = substream(seed, Lane::PfPropagate, t as u64, i as u64);
                let v: f64 = rng.sample(StandardNormal);
                *x = model.a * *x + q_std * v;
            }
        }
        for (w, x) in weights.iter_mut().zip(&xs) {
            let residual = y - model.h * x;
            *w = (-residual * residual * inv_two_r).exp();
        }
        normalize(&mut weights).map_err(|e| at_time(e, t))?;
        means.push(weights.iter().zip(&xs).map(|(w, x)| w * x).sum());
        let mut rng = substream(seed, Lane::PfResample, t as u64, 0);
        let ancestors = multinomial_indices(&weights, n_particles, &mut rng);
        xs = ancestors.iter().map(|&j| xs[j]).collect();
        weights.fill(1.0 / n_particles as f64);
    }
    Ok(means)
}

/// Weighted histogram over `n_bins` uniform bins of `[lo, hi]`; values
/// outside the range are clamped into the end bins, and masses are
/// normalized by the total weight so they sum to 1.
pub fn weighted_histogram(
    values: &[f64],
    weights: &[f64],
    lo: f64,
    hi: f64,
    n_bins: usize,
) -> Result<Vec<(f64, f64)>> {
    if values.len() != weights.len() {
        return Err(Error::invalid("value and weight lengths differ"));
    }
    if values.is_empty() || n_bins == 0 {
        return Err(Error::invalid("histogram needs data and at least one bin"));
    }
    if !(lo < hi) {
        return Err(Error::invalid("histogram range must satisfy lo < hi"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("histogram needs positive total weight"));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut masses = vec![0.0; n_bins];
    for (&v, &w) in values.iter().zip(weights) {
        let idx = (((v - lo) / width).floor() as isize).clamp(0, n_bins as isize - 1) as usize;
        masses[idx] += w / total;
    }
    Ok(masses
        .into_iter()
        .enumerate()
        .map(|(k, m)| (lo + (k as f64 + 0.5) * width, m))
        .collect())
}
