//! The four subcommands: simulate, pf, mbw, and bench.
//!
//! Every command resolves its inputs from [`Settings`], writes CSV/text
//! reports into the output directory, and never embeds timestamps or other
//! run-varying state, so identical configurations produce byte-identical
//! files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use driftfit::hmm::{emission_from_cell_average, quantize, QuantizerSpec};
use driftfit::io::fmt_float;
use driftfit::mbw::{
    drift_fourier_coefficients, extract_drift_diffusion, fit, mirror_profile, FitOptions,
    FitReport, FourierParams,
};
use driftfit::pf::{run_filter_with, ParticleCloud, PfConfig, weighted_histogram};
use driftfit::rng::derive_seed;
use driftfit::sde::{read_trajectory, simulate, write_trajectory, ModelSpec, Trajectory};

use crate::config::Settings;

/// A command failure, carrying the exit class: configuration and input
/// errors (2), numerical failures (3), or file-system trouble (1).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(driftfit::Error),
    Io { path: PathBuf, source: std::io::Error },
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "{msg}"),
            Failure::Numerical(e) => write!(f, "{e}"),
            Failure::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io { .. } => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

/// Wrap a numerical-phase library error.
fn numerical(e: driftfit::Error) -> Failure {
    Failure::Numerical(e)
}

/// Create a file and run a writer body against it, attaching the path to
/// any I/O error that surfaces.
fn write_file<F>(path: &Path, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> driftfit::Result<()>,
{
    let file = File::create(path)
        .map_err(|source| Failure::Io { path: path.to_path_buf(), source })?;
    let mut out = BufWriter::new(file);
    let finish = |e: driftfit::Error| match e {
        driftfit::Error::Io(source) => Failure::Io { path: path.to_path_buf(), source },
        other => Failure::Numerical(other),
    };
    body(&mut out).map_err(finish)?;
    out.flush()
        .map_err(|source| Failure::Io { path: path.to_path_buf(), source })
}

/// Build the generating model from the settings (config phase: errors are
/// configuration errors).
fn model(s: &Settings) -> Result<ModelSpec, Failure> {
    ModelSpec::new(s.theta.clone(), s.diffusion, s.period, s.sigma, s.dt)
        .map_err(|e| Failure::Config(e.to_string()))
}

/// The particle-filter configuration for a given particle count and seed.
fn pf_config(s: &Settings, n_particles: usize, seed: u64) -> PfConfig {
    PfConfig {
        n_particles,
        jitter_eps: s.jitter_eps,
        obs_bandwidth: s.obs_bandwidth,
        init_mean: s.init_mean.clone(),
        init_cov_diag: s.init_cov.clone(),
        resampling: s.resampling,
        seed,
    }
}

/// Obtain the working trajectory: read the user-supplied CSV when given,
/// otherwise simulate from the settings and write `trajectory.csv` so the
/// run is self-documenting.
fn load_trajectory(s: &Settings, spec: &ModelSpec) -> Result<Trajectory, Failure> {
    if let Some(path) = &s.trajectory {
        let file = File::open(path)
            .map_err(|source| Failure::Io { path: path.clone(), source })?;
        return read_trajectory(BufReader::new(file))
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())));
    }
    let traj = simulate(spec, s.x0, s.t, s.seed).map_err(numerical)?;
    let path = s.out_dir.join("trajectory.csv");
    write_file(&path, |out| write_trajectory(&traj, out))?;
    println!("wrote {}", path.display());
    Ok(traj)
}

/// Generate a trajectory and write it as `t,x,y` CSV.
pub fn cmd_simulate(s: &Settings) -> Result<(), Failure> {
    let spec = model(s)?;
    let traj = simulate(&spec, s.x0, s.t, s.seed).map_err(numerical)?;
    let path = s.out_dir.join("trajectory.csv");
    write_file(&path, |out| write_trajectory(&traj, out))?;
    println!("wrote {} ({} rows)", path.display(), traj.len());
    Ok(())
}

/// Posterior mean of the mean-drift coefficient after folding every
/// particle onto the non-positive representative of its reflection class.
///
/// The cosine sensor is even, so a path and its reflection through the
/// origin produce identical observations while the mean drift flips sign;
/// the sign is therefore not identifiable and the plain posterior mean of
/// a cloud straddling both signs collapses toward zero. Folding first
/// reports the magnitude with a canonical sign instead.
fn folded_theta0(cloud: &ParticleCloud) -> f64 {
    let wsum: f64 = cloud.weights().iter().sum();
    cloud
        .particles()
        .iter()
        .zip(cloud.weights())
        .map(|(p, w)| -w / wsum * p.params[0].abs())
        .sum()
}

/// Run the particle filter over the trajectory; write the per-step
/// estimate trace and posterior-density snapshots.
pub fn cmd_pf(s: &Settings) -> Result<(), Failure> {
    let spec = model(s)?;
    let config = pf_config(s, s.n_particles, s.seed);
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let traj = load_trajectory(s, &spec)?;

    let times: Vec<usize> =
        s.snapshot_times.iter().copied().filter(|&t| t < traj.len()).collect();
    let mut snapshots: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    let trace = run_filter_with(&traj.observations, &spec, &config, |t, cloud| {
        if times.contains(&t) {
            let xs: Vec<f64> = cloud.particles().iter().map(|p| p.x).collect();
            snapshots.push((t, xs, cloud.weights().to_vec()));
        }
    })
    .map_err(numerical)?;

    let n_coeffs = s.theta.len();
    let trace_path = s.out_dir.join("pf_trace.csv");
    write_file(&trace_path, |out| {
        write!(out, "t,x_hat")?;
        for n in 0..n_coeffs {
            write!(out, ",theta{n}_hat")?;
        }
        writeln!(out, ",D_hat,ess")?;
        for (t, est) in trace.estimates.iter().enumerate() {
            write!(out, "{t},{}", fmt_float(est.x))?;
            for n in 0..n_coeffs {
                write!(out, ",{}", fmt_float(est.params[n]))?;
            }
            writeln!(out, ",{},{}", fmt_float(trace.diffusion[t]), fmt_float(trace.ess[t]))?;
        }
        Ok(())
    })?;
    println!("wrote {}", trace_path.display());

    let density_path = s.out_dir.join("pf_density.csv");
    let bins = s.density_bins;
    write_file(&density_path, |out| {
        writeln!(out, "t,bin_center,mass")?;
        for (t, xs, ws) in &snapshots {
            let mut lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo < hi) {
                lo -= 0.5;
                hi += 0.5;
            }
            for (center, mass) in weighted_histogram(xs, ws, lo, hi, bins)? {
                writeln!(out, "{t},{},{}", fmt_float(center), fmt_float(mass))?;
            }
        }
        Ok(())
    })?;
    println!("wrote {}", density_path.display());
    Ok(())
}

/// Everything the fit produces that the commands report.
struct MbwFit {
    report: FitReport,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    mirror_drift: Vec<f64>,
    mirror_diffusion: Vec<f64>,
    coeffs: Vec<f64>,
    mirror_coeffs: Vec<f64>,
    diffusion_mean: f64,
}

/// Quantize the observations and fit the Fourier-parameterized chain.
fn fit_mbw(s: &Settings, observations: &[f64]) -> driftfit::Result<MbwFit> {
    let q = QuantizerSpec { n_symbols: s.bw_symbols, lo: s.y_min, hi: s.y_max };
    let symbols = quantize(observations, &q)?;
    let emission =
        emission_from_cell_average(s.bw_states, &q, s.sigma + s.bw_emission_sigma)?;
    let uniform = vec![1.0 / s.bw_states as f64; s.bw_states];
    let mut plus = vec![0.0; 2 * s.bw_harmonics + 1];
    let mut minus = vec![0.0; 2 * s.bw_harmonics + 1];
    plus[0] = s.bw_init_up;
    minus[0] = s.bw_init_down;
    let init = FourierParams::new(s.bw_states, plus, minus)?;
    let opts = FitOptions {
        tol: s.bw_tol,
        max_iterations: s.bw_max_iterations,
        ..FitOptions::default()
    };
    let report = fit(&symbols, &emission, &uniform, &init, &opts)?;

    let dx = s.period / s.bw_states as f64;
    let d0 = dx * dx / s.dt;
    let (drift, diffusion) = extract_drift_diffusion(&report.params, d0, dx)?;
    let (mirror_drift, mirror_diffusion) = mirror_profile(&drift, &diffusion);
    let coeffs = drift_fourier_coefficients(&drift, s.bw_harmonics)?;
    let mirror_coeffs = drift_fourier_coefficients(&mirror_drift, s.bw_harmonics)?;
    let diffusion_mean = diffusion.iter().sum::<f64>() / diffusion.len() as f64;
    Ok(MbwFit {
        report,
        drift,
        diffusion,
        mirror_drift,
        mirror_diffusion,
        coeffs,
        mirror_coeffs,
        diffusion_mean,
    })
}

fn write_profile(path: &Path, dx: f64, drift: &[f64], diffusion: &[f64]) -> Result<(), Failure> {
    write_file(path, |out| {
        writeln!(out, "i,x,F_hat,D_hat")?;
        for i in 0..drift.len() {
            writeln!(
                out,
                "{i},{},{},{}",
                fmt_float(i as f64 * dx),
                fmt_float(drift[i]),
                fmt_float(diffusion[i])
            )?;
        }
        Ok(())
    })
}

/// Fit the chain to the trajectory's observations; write the drift and
/// diffusion profile (both reflection alignments), the log-likelihood
/// trace, and the fitted coefficients.
pub fn cmd_mbw(s: &Settings) -> Result<(), Failure> {
    let spec = model(s)?;
    let traj = load_trajectory(s, &spec)?;
    let out = fit_mbw(s, &traj.observations).map_err(numerical)?;
    let dx = s.period / s.bw_states as f64;

    let profile_path = s.out_dir.join("mbw_profile.csv");
    write_profile(&profile_path, dx, &out.drift, &out.diffusion)?;
    println!("wrote {}", profile_path.display());

    let mirror_path = s.out_dir.join("mbw_profile_mirror.csv");
    write_profile(&mirror_path, dx, &out.mirror_drift, &out.mirror_diffusion)?;
    println!("wrote {}", mirror_path.display());

    let loglik_path = s.out_dir.join("mbw_loglik.csv");
    write_file(&loglik_path, |w| {
        writeln!(w, "iter,loglik")?;
        for (i, ll) in out.report.loglik_trace.iter().enumerate() {
            writeln!(w, "{i},{}", fmt_float(*ll))?;
        }
        Ok(())
    })?;
    println!("wrote {}", loglik_path.display());

    let params_path = s.out_dir.join("mbw_params.txt");
    write_file(&params_path, |w| {
        writeln!(w, "converged = {}", out.report.converged)?;
        writeln!(w, "iterations = {}", out.report.n_iterations)?;
        writeln!(w, "stalled-msteps = {}", out.report.stalled_msteps)?;
        writeln!(
            w,
            "log-likelihood = {}",
            fmt_float(*out.report.loglik_trace.last().expect("nonempty trace"))
        )?;
        let join = |vs: &[f64]| vs.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>().join(",");
        writeln!(w, "chain-plus = {}", join(out.report.params.plus()))?;
        writeln!(w, "chain-minus = {}", join(out.report.params.minus()))?;
        writeln!(w, "drift-coefficients = {}", join(&out.coeffs))?;
        writeln!(w, "drift-coefficients-mirrored = {}", join(&out.mirror_coeffs))?;
        writeln!(w, "diffusion-mean = {}", fmt_float(out.diffusion_mean))?;
        Ok(())
    })?;
    println!("wrote {}", params_path.display());
    Ok(())
}

/// Per-run benchmark outcome: final parameter estimates per particle
/// count (or the failure message), and the chain fit on the same data.
struct RunOutcome {
    pf: Vec<Result<Vec<f64>, String>>,
    mbw: Result<MbwSummary, String>,
}

struct MbwSummary {
    estimates: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// The estimate vector the divergence table scores: the folded mean-drift
/// coefficient, the remaining drift coefficients, then the diffusion
/// constant — all at the final step.
fn pf_final_estimates(
    observations: &[f64],
    spec: &ModelSpec,
    config: &PfConfig,
    n_coeffs: usize,
) -> driftfit::Result<Vec<f64>> {
    let t_last = observations.len() - 1;
    let mut folded = f64::NAN;
    let trace = run_filter_with(observations, spec, config, |t, cloud| {
        if t == t_last {
            folded = folded_theta0(cloud);
        }
    })?;
    let last = trace.estimates.last().expect("nonempty trace");
    let mut est = Vec::with_capacity(n_coeffs + 1);
    est.push(folded);
    est.extend_from_slice(&last.params[1..n_coeffs]);
    est.push(*trace.diffusion.last().expect("nonempty trace"));
    Ok(est)
}

/// Pick the reflection alignment of the fitted drift coefficients closer
/// to the truth (the data cannot distinguish the two).
fn align_mbw(fit: &MbwFit, truth: &[f64]) -> Vec<f64> {
    let err = |coeffs: &[f64]| -> f64 {
        coeffs
            .iter()
            .zip(truth)
            .map(|(c, t)| (c - t) * (c - t))
            .sum()
    };
    let coeffs = if err(&fit.coeffs) <= err(&fit.mirror_coeffs) {
        &fit.coeffs
    } else {
        &fit.mirror_coeffs
    };
    let mut est = coeffs.clone();
    est.push(fit.diffusion_mean);
    est
}

/// Divergence flag: outside the relative-error band, or not a number.
fn diverged(est: f64, truth: f64, threshold: f64) -> bool {
    !((est - truth).abs() <= threshold * truth.abs())
}

/// Run the divergence benchmark: `n_runs` fresh trajectories, a full
/// filter run per particle count (the trajectory is shared across the
/// grid so columns are paired), one chain fit per trajectory, and the
/// aggregated divergence table.
pub fn cmd_bench(s: &Settings) -> Result<(), Failure> {
    let spec = model(s)?;
    pf_config(s, s.np_grid[0], 0)
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let n_coeffs = s.theta.len();
    let n_params = n_coeffs + 1;
    let mut truth = s.theta.clone();
    truth.push(s.diffusion);

    let outcomes: Vec<RunOutcome> = (0..s.n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let traj_seed = derive_seed(s.seed, &[0, r]);
            let traj = match simulate(&spec, s.x0, s.t, traj_seed) {
                Ok(t) => t,
                Err(e) => {
                    let msg = format!("simulate failed: {e}");
                    return RunOutcome {
                        pf: vec![Err(msg.clone()); s.np_grid.len()],
                        mbw: Err(msg),
                    };
                }
            };
            let pf = s
                .np_grid
                .iter()
                .map(|&np| {
                    let config =
                        pf_config(s, np, derive_seed(s.seed, &[9, r, np as u64]));
                    pf_final_estimates(&traj.observations, &spec, &config, n_coeffs)
                        .map_err(|e| e.to_string())
                })
                .collect();
            let mbw = fit_mbw(s, &traj.observations)
                .map(|fit| MbwSummary {
                    estimates: align_mbw(&fit, &s.theta),
                    converged: fit.report.converged,
                    iterations: fit.report.n_iterations,
                })
                .map_err(|e| e.to_string());
            RunOutcome { pf, mbw }
        })
        .collect();

    for (r, outcome) in outcomes.iter().enumerate() {
        for (k, res) in outcome.pf.iter().enumerate() {
            if let Err(msg) = res {
                eprintln!("run {r}, np {}: {msg} (counted as diverged)", s.np_grid[k]);
            }
        }
        if let Err(msg) = &outcome.mbw {
            eprintln!("run {r}, chain fit: {msg} (counted as diverged)");
        }
    }

    let param_names: Vec<String> = (0..n_coeffs)
        .map(|n| format!("theta{n}"))
        .chain(std::iter::once("D".to_string()))
        .collect();

    // Aggregate PF divergence counts per (parameter, particle count).
    let mut counts = vec![vec![0usize; s.np_grid.len()]; n_params];
    for outcome in &outcomes {
        for (k, res) in outcome.pf.iter().enumerate() {
            match res {
                Ok(est) => {
                    for p in 0..n_params {
                        if diverged(est[p], truth[p], s.divergence_threshold) {
                            counts[p][k] += 1;
                        }
                    }
                }
                Err(_) => {
                    for row in counts.iter_mut() {
                        row[k] += 1;
                    }
                }
            }
        }
    }

    let table_path = s.out_dir.join("divergence_table.csv");
    write_file(&table_path, |out| {
        write!(out, "parameter")?;
        for np in &s.np_grid {
            write!(out, ",np_{np}")?;
        }
        writeln!(out)?;
        for (p, name) in param_names.iter().enumerate() {
            write!(out, "{name}")?;
            for k in 0..s.np_grid.len() {
                write!(out, ",{:.1}", 100.0 * counts[p][k] as f64 / s.n_runs as f64)?;
            }
            writeln!(out)?;
        }
        Ok(())
    })?;
    println!("wrote {}", table_path.display());

    // Side-by-side summary: filter at the largest particle count vs the
    // chain fit, run by run.
    let largest = s.np_grid.len() - 1;
    let summary_path = s.out_dir.join("bench_summary.csv");
    write_file(&summary_path, |out| {
        write!(out, "run")?;
        for name in &param_names {
            write!(out, ",pf_{name},pf_div_{name}")?;
        }
        for name in &param_names {
            write!(out, ",mbw_{name},mbw_div_{name}")?;
        }
        writeln!(out, ",mbw_converged,mbw_iterations")?;
        for (r, outcome) in outcomes.iter().enumerate() {
            write!(out, "{r}")?;
            let write_side = |out: &mut BufWriter<File>, est: Option<&[f64]>| {
                let nan = f64::NAN;
                (0..n_params).try_for_each(|p| {
                    let v = est.map_or(nan, |e| e[p]);
                    write!(
                        out,
                        ",{},{}",
                        fmt_float(v),
                        u8::from(diverged(v, truth[p], s.divergence_threshold))
                    )
                })
            };
            write_side(out, outcome.pf[largest].as_deref().ok())?;
            match &outcome.mbw {
                Ok(m) => {
                    write_side(out, Some(&m.estimates))?;
                    writeln!(out, ",{},{}", u8::from(m.converged), m.iterations)?;
                }
                Err(_) => {
                    write_side(out, None)?;
                    writeln!(out, ",0,0")?;
                }
            }
        }
        Ok(())
    })?;
    println!("wrote {}", summary_path.display());

    // Aggregate chain-fit divergence for the comparison's bottom line.
    let mut mbw_counts = vec![0usize; n_params];
    for outcome in &outcomes {
        match &outcome.mbw {
            Ok(m) => {
                for p in 0..n_params {
                    if diverged(m.estimates[p], truth[p], s.divergence_threshold) {
                        mbw_counts[p] += 1;
                    }
                }
            }
            Err(_) => {
                for c in mbw_counts.iter_mut() {
                    *c += 1;
                }
            }
        }
    }
    let summary_line = param_names
        .iter()
        .zip(&mbw_counts)
        .map(|(name, c)| format!("{name} {:.1}%", 100.0 * *c as f64 / s.n_runs as f64))
        .collect::<Vec<_>>()
        .join("  ");
    println!("chain-fit divergence: {summary_line}");
    Ok(())
}
