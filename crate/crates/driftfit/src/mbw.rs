//! Baum-Welch estimation with Fourier-parameterized transitions.
//!
//! The transition matrix of the discretized dynamics is tridiagonal with
//! wraparound, and its off-diagonals are constrained to a truncated real
//! Fourier series over the periodic state index:
//!
//! ```text
//! a_{i,i+1} = c0+ + sum_k [ ck+ cos(2 pi k i / N) + sk+ sin(2 pi k i / N) ]
//! a_{i,i-1} = c0- + sum_k [ ck- cos(2 pi k i / N) + sk- sin(2 pi k i / N) ]
//! ```
//!
//! The E-step is the ordinary scaled forward-backward pass; the M-step
//! maximizes the expected complete-data log-likelihood
//! `Q(theta) = sum_ij Psi_ij log a_ij(theta)` over the Fourier
//! coefficients. Q is concave on the feasible polytope (each a_ij is
//! linear in theta and enters through a log), so a damped Newton
//! iteration with feasibility-preserving step halving solves the
//! stationarity condition to high accuracy. The emission matrix and the
//! uniform initial distribution are held fixed throughout.

use crate::error::{Error, Result};
use crate::hmm::{dynamics_from_transitions, forward_backward, Hmm};
use crate::numeric::{cos2pi, sin2pi};

/// Transition probabilities must stay in `[margin, 1 - margin]`; the
/// M-step never proposes a matrix closer to the simplex boundary.
pub const FEASIBILITY_MARGIN: f64 = 1e-6;

/// Real Fourier coefficients of the two off-diagonals.
///
/// Each block is ordered `[c0, c1, .., cK, s1, .., sK]` (length 2K+1);
/// the unknown vector seen by the M-step is the `plus` block followed by
/// the `minus` block.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierParams {
    n_states: usize,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

/// Value of the `t`-th basis function at state `i`: the constant, then
/// cosines of harmonics `1..=K`, then sines of harmonics `1..=K`.
fn fourier_basis(t: usize, i: usize, n_states: usize, n_harmonics: usize) -> f64 {
    let u = |k: usize| (k * i) as f64 / n_states as f64;
    if t == 0 {
        1.0
    } else if t <= n_harmonics {
        cos2pi(u(t))
    } else {
        sin2pi(u(t - n_harmonics))
    }
}

impl FourierParams {
    pub fn new(n_states: usize, plus: Vec<f64>, minus: Vec<f64>) -> Result<Self> {
        if n_states < 3 {
            return Err(Error::invalid("Fourier transition model needs n_states >= 3"));
        }
        if plus.len() != minus.len() {
            return Err(Error::invalid("plus and minus blocks must have equal lengths"));
        }
        if plus.is_empty() || plus.len() % 2 == 0 {
            return Err(Error::invalid(
                "coefficient blocks must have odd length 2K+1 (constant, K cosines, K sines)",
            ));
        }
        if plus.iter().chain(&minus).any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(FourierParams { n_states, plus, minus })
    }

    /// State-independent off-diagonals (K = 0).
    pub fn homogeneous(n_states: usize, c_plus: f64, c_minus: f64) -> Result<Self> {
        FourierParams::new(n_states, vec![c_plus], vec![c_minus])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_harmonics(&self) -> usize {
        (self.plus.len() - 1) / 2
    }

    pub fn plus(&self) -> &[f64] {
        &self.plus
    }

    pub fn minus(&self) -> &[f64] {
        &self.minus
    }

    /// Number of free coefficients, 2(2K+1).
    pub fn n_unknowns(&self) -> usize {
        2 * self.plus.len()
    }

    fn block_len(&self) -> usize {
        self.plus.len()
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = self.plus.clone();
        out.extend_from_slice(&self.minus);
        out
    }

    fn from_flat(&self, flat: &[f64]) -> FourierParams {
        let d = self.block_len();
        FourierParams {
            n_states: self.n_states,
            plus: flat[..d].to_vec(),
            minus: flat[d..].to_vec(),
        }
    }

    /// Evaluate the two off-diagonals on the state grid.
    pub fn off_diagonals(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_states;
        let k = self.n_harmonics();
        let eval = |coeffs: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    (0..coeffs.len())
                        .map(|t| coeffs[t] * fourier_basis(t, i, n, k))
                        .sum()
                })
                .collect()
        };
        (eval(&self.plus), eval(&self.minus))
    }

    /// Coefficients of the spatially mirrored chain `i -> (N - i) mod N`.
    ///
    /// Mirroring swaps up-moves with down-moves at the reflected state, so
    /// the blocks exchange and their sine parts flip sign. Fitting from
    /// data cannot distinguish a solution from its mirror (the cosine
    /// sensor is even), so callers report both alignments.
    pub fn mirrored(&self) -> FourierParams {
        let k = self.n_harmonics();
        let reflect = |coeffs: &[f64]| -> Vec<f64> {
            let mut out = coeffs.to_vec();
            for s in out.iter_mut().skip(1 + k) {
                *s = -*s;
            }
            out
        };
        FourierParams {
            n_states: self.n_states,
            plus: reflect(&self.minus),
            minus: reflect(&self.plus),
        }
    }
}

/// Dense N×N transition matrix for `params`, or an infeasibility error if
/// any row would leave the margin-shrunk probability simplex.
pub fn build_transition(params: &FourierParams) -> Result<Vec<f64>> {
    let n = params.n_states;
    let (a_plus, a_minus) = params.off_diagonals();
    let mut transition = vec![0.0; n * n];
    let lo = FEASIBILITY_MARGIN;
    let hi = 1.0 - FEASIBILITY_MARGIN;
    for i in 0..n {
        let p = a_plus[i];
        let m = a_minus[i];
        let stay = 1.0 - p - m;
        if !(lo..=hi).contains(&p) || !(lo..=hi).contains(&m) || !(lo..=hi).contains(&stay) {
            return Err(Error::Infeasible(format!(
                "state {i}: transition probabilities ({p}, {stay}, {m}) leave [{lo}, {hi}]"
            )));
        }
        transition[i * n + (i + 1) % n] = p;
        transition[i * n + (i + n - 1) % n] = m;
        transition[i * n + i] = stay;
    }
    Ok(transition)
}

/// Analytic derivative of the transition entry `a_ij` with respect to the
/// flat coefficient `theta_kappa` (plus block first, then minus block).
pub fn transition_derivative(params: &FourierParams, i: usize, j: usize, kappa: usize) -> f64 {
    let n = params.n_states;
    let d = params.block_len();
    let k = params.n_harmonics();
    assert!(i < n && j < n && kappa < 2 * d, "index out of range");
    let bp = if kappa < d { fourier_basis(kappa, i, n, k) } else { 0.0 };
    let bm = if kappa >= d { fourier_basis(kappa - d, i, n, k) } else { 0.0 };
    if j == (i + 1) % n {
        bp
    } else if j == (i + n - 1) % n {
        bm
    } else if j == i {
        -bp - bm
    } else {
        0.0
    }
}

/// Expected transition counts bucketed by move direction: `up[i]` is the
/// expected number of `i -> i+1` moves, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct Psi {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    pub stay: Vec<f64>,
}

/// Extract the per-direction expected counts from a dense N×N matrix of
/// expected transition counts.
pub fn psi_from_xi(xi_sums: &[f64], n_states: usize) -> Result<Psi> {
    if n_states < 3 {
        return Err(Error::invalid("directional counts need n_states >= 3"));
    }
    if xi_sums.len() != n_states * n_states {
        return Err(Error::invalid(format!(
            "expected {0}x{0} transition counts, got {1} entries",
            n_states,
            xi_sums.len()
        )));
    }
    if xi_sums.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("transition counts must be finite and nonnegative"));
    }
    let n = n_states;
    let mut psi = Psi {
        up: Vec::with_capacity(n),
        down: Vec::with_capacity(n),
        stay: Vec::with_capacity(n),
    };
    for i in 0..n {
        psi.up.push(xi_sums[i * n + (i + 1) % n]);
        psi.down.push(xi_sums[i * n + (i + n - 1) % n]);
        psi.stay.push(xi_sums[i * n + i]);
    }
    Ok(psi)
}

/// The M-step objective `Q(theta) = sum_ij Psi_ij log a_ij(theta)`.
/// Requires feasible `params`.
fn q_value(a_plus: &[f64], a_minus: &[f64], psi: &Psi) -> f64 {
    let mut q = 0.0;
    for i in 0..a_plus.len() {
        let stay = 1.0 - a_plus[i] - a_minus[i];
        q += psi.up[i] * a_plus[i].ln()
            + psi.down[i] * a_minus[i].ln()
            + psi.stay[i] * stay.ln();
    }
    q
}

fn feasible(a_plus: &[f64], a_minus: &[f64]) -> bool {
    let lo = FEASIBILITY_MARGIN;
    let hi = 1.0 - FEASIBILITY_MARGIN;
    a_plus.iter().zip(a_minus).all(|(&p, &m)| {
        let stay = 1.0 - p - m;
        (lo..=hi).contains(&p) && (lo..=hi).contains(&m) && (lo..=hi).contains(&stay)
    })
}

/// Gradient of Q with respect to the flat coefficient vector.
fn q_gradient(params: &FourierParams, a_plus: &[f64], a_minus: &[f64], psi: &Psi) -> Vec<f64> {
    let n = params.n_states;
    let d = params.block_len();
    let k = params.n_harmonics();
    let mut grad = vec![0.0; 2 * d];
    for i in 0..n {
        let stay = 1.0 - a_plus[i] - a_minus[i];
        let wp = psi.up[i] / a_plus[i] - psi.stay[i] / stay;
        let wm = psi.down[i] / a_minus[i] - psi.stay[i] / stay;
        for t in 0..d {
            let b = fourier_basis(t, i, n, k);
            grad[t] += wp * b;
            grad[d + t] += wm * b;
        }
    }
    grad
}

/// Sup-norm of the M-step stationarity residual at `params`.
pub fn mstep_residual(params: &FourierParams, psi: &Psi) -> f64 {
    let (a_plus, a_minus) = params.off_diagonals();
    q_gradient(params, &a_plus, &a_minus, psi)
        .iter()
        .fold(0.0, |acc, g| acc.max(g.abs()))
}

/// Hessian of Q (negative semidefinite), dense symmetric (2d)×(2d).
fn q_hessian(params: &FourierParams, a_plus: &[f64], a_minus: &[f64], psi: &Psi) -> Vec<f64> {
    let n = params.n_states;
    let d = params.block_len();
    let k = params.n_harmonics();
    let dim = 2 * d;
    let mut hess = vec![0.0; dim * dim];
    let mut basis = vec![0.0; d];
    for i in 0..n {
        for (t, b) in basis.iter_mut().enumerate() {
            *b = fourier_basis(t, i, n, k);
        }
        let stay = 1.0 - a_plus[i] - a_minus[i];
        let wpp = psi.up[i] / (a_plus[i] * a_plus[i]);
        let wmm = psi.down[i] / (a_minus[i] * a_minus[i]);
        let wss = psi.stay[i] / (stay * stay);
        for s in 0..d {
            for t in 0..d {
                let bb = basis[s] * basis[t];
                hess[s * dim + t] -= (wpp + wss) * bb;
                hess[(d + s) * dim + (d + t)] -= (wmm + wss) * bb;
                hess[s * dim + (d + t)] -= wss * bb;
                hess[(d + s) * dim + t] -= wss * bb;
            }
        }
    }
    hess
}

/// Solve the dense system `A x = b` by Gaussian elimination with partial
/// pivoting. `A` is row-major n×n and consumed along with `b`.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| {
                a[r * n + col]
                    .abs()
                    .partial_cmp(&a[s * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[pivot_row * n + col].abs() < 1e-300 {
            return Err(Error::SingularSystem);
        }
        if pivot_row != col {
            for t in 0..n {
                a.swap(col * n + t, pivot_row * n + t);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for t in col..n {
                a[row * n + t] -= factor * a[col * n + t];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = b[col];
        for t in col + 1..n {
            v -= a[col * n + t] * b[t];
        }
        b[col] = v / a[col * n + col];
    }
    Ok(b)
}

/// Maximize `Q(theta)` by damped Newton iteration from `params`.
///
/// Steps are halved (at most 30 times) until the candidate is feasible
/// and does not decrease Q; the iteration stops when the gradient
/// sup-norm falls below `tol`. A start outside the feasible region, a
/// singular Newton system, or failure to reach `tol` within `max_iter`
/// iterations is an error.
pub fn mstep_newton(
    params: &FourierParams,
    psi: &Psi,
    tol: f64,
    max_iter: usize,
) -> Result<FourierParams> {
    let outcome = mstep_damped(params, psi, tol, max_iter)?;
    if outcome.stationary {
        Ok(outcome.params)
    } else {
        Err(Error::NoConvergence {
            iterations: outcome.iterations,
            residual: outcome.residual,
        })
    }
}

/// Result of the damped-Newton ascent, whether or not it reached interior
/// stationarity.
struct MstepOutcome {
    params: FourierParams,
    /// Whether the stationarity residual fell below the tolerance. False
    /// either at the iteration cap or when backtracking stalled against the
    /// feasibility box — the constrained optimum then sits on the boundary,
    /// where the interior residual cannot vanish.
    stationary: bool,
    iterations: usize,
    residual: f64,
}

/// The shared ascent loop: every accepted step keeps the transition matrix
/// feasible and never lowers Q, so the returned parameters are a valid
/// (generalized) EM update even when `stationary` is false.
fn mstep_damped(
    params: &FourierParams,
    psi: &Psi,
    tol: f64,
    max_iter: usize,
) -> Result<MstepOutcome> {
    if psi.up.len() != params.n_states {
        return Err(Error::invalid("directional counts do not match the state count"));
    }
    let mut current = params.clone();
    let (mut a_plus, mut a_minus) = current.off_diagonals();
    if !feasible(&a_plus, &a_minus) {
        return Err(Error::Infeasible("M-step must start from feasible parameters".into()));
    }
    let mut q_cur = q_value(&a_plus, &a_minus, psi);
    let mut iterations = 0;
    loop {
        let grad = q_gradient(&current, &a_plus, &a_minus, psi);
        let residual = grad.iter().fold(0.0, |acc: f64, g| acc.max(g.abs()));
        if residual <= tol {
            return Ok(MstepOutcome { params: current, stationary: true, iterations, residual });
        }
        if iterations >= max_iter {
            return Ok(MstepOutcome { params: current, stationary: false, iterations, residual });
        }
        let hess = q_hessian(&current, &a_plus, &a_minus, psi);
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let delta = solve_linear(hess, rhs)?;
        iterations += 1;

        // Backtrack until the step is feasible and Q does not decrease
        // (beyond round-off on the objective itself).
        let flat = current.flat();
        let slack = 1e-12 * q_cur.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=30 {
            let candidate_flat: Vec<f64> =
                flat.iter().zip(&delta).map(|(v, d)| v + step * d).collect();
            let candidate = current.from_flat(&candidate_flat);
            let (cp, cm) = candidate.off_diagonals();
            if feasible(&cp, &cm) {
                let q_new = q_value(&cp, &cm, psi);
                if q_new >= q_cur - slack {
                    current = candidate;
                    a_plus = cp;
                    a_minus = cm;
                    q_cur = q_new;
                    accepted = true;
                    break;
                }
            }
            step /= 2.0;
        }
        if !accepted {
            let residual =
                q_gradient(&current, &a_plus, &a_minus, psi).iter().fold(0.0, |acc: f64, g| {
                    acc.max(g.abs())
                });
            return Ok(MstepOutcome { params: current, stationary: false, iterations, residual });
        }
    }
}

/// Stopping rule and iteration budgets for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop when |Δ log-likelihood| between successive passes is ≤ this.
    pub tol: f64,
    /// Maximum number of M-steps.
    pub max_iterations: usize,
    /// Gradient tolerance of the inner Newton solve.
    pub newton_tol: f64,
    /// Iteration cap of the inner Newton solve.
    pub newton_max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-6,
            max_iterations: 500,
            newton_tol: 1e-10,
            newton_max_iterations: 100,
        }
    }
}

/// Outcome of a [`fit`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: FourierParams,
    /// Log-likelihood before any update, then after each M-step.
    pub loglik_trace: Vec<f64>,
    /// Number of completed M-steps.
    pub n_iterations: usize,
    pub converged: bool,
    /// M-steps after which the log-likelihood dropped by more than 1e-8
    /// (diagnostic; exact EM never decreases it).
    pub non_monotone_steps: usize,
    /// M-steps that stopped short of interior stationarity because the
    /// optimum sits on the feasibility boundary (or the inner iteration cap
    /// was hit). Such steps still ascend the likelihood — the update is a
    /// generalized EM step — so the run continues; nonzero counts usually
    /// mean some state is starved of transition counts and its fitted rates
    /// are pressed against the probability floor.
    pub stalled_msteps: usize,
}

/// Expectation-maximization for the Fourier transition coefficients.
///
/// The emission matrix (row-major N×M) and the initial state
/// distribution stay fixed; only the transition parameters move. Each
/// round runs the scaled forward-backward pass and then re-solves the
/// M-step to stationarity. When the M-step optimum is pinned to the
/// feasibility boundary (interior stationarity unreachable), the step's
/// best feasible ascent point is used instead — a generalized EM update
/// that preserves likelihood ascent — and counted in `stalled_msteps`.
/// Iteration stops when the log-likelihood gain drops to `opts.tol` or
/// the iteration budget is exhausted.
pub fn fit(
    symbols: &[usize],
    emission: &[f64],
    initial: &[f64],
    init: &FourierParams,
    opts: &FitOptions,
) -> Result<FitReport> {
    let n = init.n_states();
    if emission.is_empty() || emission.len() % n != 0 {
        return Err(Error::invalid(format!(
            "emission length {} is not a positive multiple of n_states {n}",
            emission.len()
        )));
    }
    let m = emission.len() / n;
    let build = |p: &FourierParams| -> Result<Hmm> {
        Hmm::new(n, m, build_transition(p)?, emission.to_vec(), initial.to_vec())
    };

    let mut params = init.clone();
    let mut fb = forward_backward(&build(&params)?, symbols)?;
    let mut loglik_trace = vec![fb.log_likelihood];
    let mut converged = false;
    let mut non_monotone_steps = 0;
    let mut stalled_msteps = 0;
    let mut n_iterations = 0;
    while n_iterations < opts.max_iterations {
        let psi = psi_from_xi(&fb.xi_sums, n)?;
        let outcome =
            mstep_damped(&params, &psi, opts.newton_tol, opts.newton_max_iterations)?;
        if !outcome.stationary {
            stalled_msteps += 1;
        }
        params = outcome.params;
        fb = forward_backward(&build(&params)?, symbols)?;
        n_iterations += 1;
        let prev = *loglik_trace.last().unwrap();
        loglik_trace.push(fb.log_likelihood);
        if fb.log_likelihood < prev - 1e-8 {
            non_monotone_steps += 1;
        }
        if (fb.log_likelihood - prev).abs() <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        params,
        loglik_trace,
        n_iterations,
        converged,
        non_monotone_steps,
        stalled_msteps,
    })
}

/// Per-state drift and diffusion implied by fitted coefficients, on a
/// grid with scale `D0 = dx^2 / dt`.
pub fn extract_drift_diffusion(
    params: &FourierParams,
    d0: f64,
    dx: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a_plus, a_minus) = params.off_diagonals();
    dynamics_from_transitions(&a_plus, &a_minus, d0, dx)
}

/// The spatially mirrored drift/diffusion profile: reflecting the state
/// grid reverses positions and flips the drift sign.
pub fn mirror_profile(drift: &[f64], diffusion: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = drift.len();
    let reflect = |v: &[f64], sign: f64| -> Vec<f64> {
        (0..n).map(|i| sign * v[(n - i) % n]).collect()
    };
    (reflect(drift, -1.0), reflect(diffusion, 1.0))
}

/// Project a per-state drift profile onto the drift parameterization
/// `F(i dx) = theta_0 + sum_n theta_n sin(2 pi n i / N)`: the constant is
/// the grid mean and each sine coefficient is `(2/N) sum_i F_i sin(..)`.
pub fn drift_fourier_coefficients(drift: &[f64], n_harmonics: usize) -> Result<Vec<f64>> {
    let n = drift.len();
    if n == 0 {
        return Err(Error::invalid("drift profile must be nonempty"));
    }
    if drift.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("drift profile must be finite"));
    }
    if 2 * n_harmonics + 1 > n {
        return Err(Error::invalid(format!(
            "{n_harmonics} harmonics are not resolvable on {n} grid points"
        )));
    }
    let mut coeffs = Vec::with_capacity(n_harmonics + 1);
    coeffs.push(drift.iter().sum::<f64>() / n as f64);
    for h in 1..=n_harmonics {
        let s: f64 = drift
            .iter()
            .enumerate()
            .map(|(i, &f)| f * sin2pi((h * i) as f64 / n as f64))
            .sum();
        coeffs.push(2.0 * s / n as f64);
    }
    Ok(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    use crate::hmm::{emission_from_observation_model, QuantizerSpec};
    use crate::rng::{substream, Lane};

    fn example_params() -> FourierParams {
        FourierParams::new(
            8,
            vec![0.28, 0.05, -0.03],
            vec![0.22, -0.04, 0.02],
        )
        .unwrap()
    }

    /// Stationary distribution of a validated transition matrix by power
    /// iteration from uniform.
    fn stationary(transition: &[f64], n: usize) -> Vec<f64> {
        let mut mu = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        for _ in 0..500 {
            for slot in next.iter_mut() {
                *slot = 0.0;
            }
            for i in 0..n {
                for j in 0..n {
                    next[j] += mu[i] * transition[i * n + j];
                }
            }
            std::mem::swap(&mut mu, &mut next);
        }
        mu
    }

    /// Directional counts that make `params` exactly self-consistent:
    /// psi_ij = mu_i a_ij with mu stationary.
    fn self_consistent_psi(params: &FourierParams) -> Psi {
        let n = params.n_states();
        let transition = build_transition(params).unwrap();
        let mu = stationary(&transition, n);
        let mut xi = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                xi[i * n + j] = mu[i] * transition[i * n + j];
            }
        }
        psi_from_xi(&xi, n).unwrap()
    }

    #[test]
    fn homogeneous_transition_rows() {
        let params = FourierParams::homogeneous(5, 0.3, 0.4).unwrap();
        let a = build_transition(&params).unwrap();
        for i in 0..5 {
            assert_eq!(a[i * 5 + (i + 1) % 5], 0.3);
            assert_eq!(a[i * 5 + (i + 4) % 5], 0.4);
            assert_abs_diff_eq!(a[i * 5 + i], 0.3, epsilon = 1e-15);
        }
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 15);
    }

    #[test]
    fn first_harmonic_modulates_up_moves() {
        // a+(i) = 0.3 + 0.1 cos(2 pi i / 4) takes values 0.4, 0.3, 0.2, 0.3.
        let params = FourierParams::new(4, vec![0.3, 0.1, 0.0], vec![0.25, 0.0, 0.0]).unwrap();
        let a = build_transition(&params).unwrap();
        let expected = [0.4, 0.3, 0.2, 0.3];
        for (i, &e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(a[i * 4 + (i + 1) % 4], e, epsilon = 1e-15);
            assert_eq!(a[i * 4 + (i + 3) % 4], 0.25);
        }
        // Wraparound corners are populated.
        assert_eq!(a[0 * 4 + 3], 0.25);
        assert_abs_diff_eq!(a[3 * 4 + 0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn infeasible_coefficients_are_rejected() {
        // Sum of off-diagonals exceeds 1.
        let params = FourierParams::homogeneous(5, 0.6, 0.5).unwrap();
        assert!(matches!(build_transition(&params), Err(Error::Infeasible(_))));
        // Negative probability.
        let params = FourierParams::homogeneous(5, -0.1, 0.4).unwrap();
        assert!(build_transition(&params).is_err());
        // Inside the simplex but through the margin.
        let params = FourierParams::homogeneous(5, 1e-7, 0.4).unwrap();
        assert!(build_transition(&params).is_err());
        // Harmonic swings the probability out of range at some state.
        let params = FourierParams::new(8, vec![0.3, 0.75, 0.0], vec![0.3, 0.0, 0.0]).unwrap();
        assert!(build_transition(&params).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(FourierParams::new(2, vec![0.3], vec![0.3]).is_err());
        assert!(FourierParams::new(4, vec![0.3, 0.1], vec![0.3, 0.1]).is_err());
        assert!(FourierParams::new(4, vec![0.3], vec![0.3, 0.0, 0.0]).is_err());
        assert!(FourierParams::new(4, vec![f64::NAN], vec![0.3]).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let params = example_params();
        let n = params.n_states();
        let h = 1e-6;
        let flat = params.flat();
        for kappa in 0..params.n_unknowns() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[kappa] += h;
            dn[kappa] -= h;
            let a_up = build_transition(&params.from_flat(&up)).unwrap();
            let a_dn = build_transition(&params.from_flat(&dn)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let numeric = (a_up[i * n + j] - a_dn[i * n + j]) / (2.0 * h);
                    let analytic = transition_derivative(&params, i, j, kappa);
                    assert_abs_diff_eq!(analytic, numeric, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn homogeneous_mstep_matches_closed_form() {
        // With K = 0 the stationary point is the count ratio
        // a+ = S+ / (S+ + S- + S0) and likewise for a-.
        let start = FourierParams::homogeneous(6, 0.25, 0.25).unwrap();
        let psi = Psi {
            up: vec![2.0, 1.0, 3.0, 2.0, 1.0, 1.0],
            down: vec![1.0, 1.0, 1.0, 2.0, 0.5, 0.5],
            stay: vec![3.0, 4.0, 2.0, 2.0, 3.0, 3.0],
        };
        let s_up: f64 = psi.up.iter().sum();
        let s_dn: f64 = psi.down.iter().sum();
        let s_st: f64 = psi.stay.iter().sum();
        let total = s_up + s_dn + s_st;
        let fitted = mstep_newton(&start, &psi, 1e-12, 100).unwrap();
        let (a_plus, a_minus) = fitted.off_diagonals();
        for i in 0..6 {
            assert_abs_diff_eq!(a_plus[i], s_up / total, epsilon = 1e-10);
            assert_abs_diff_eq!(a_minus[i], s_dn / total, epsilon = 1e-10);
        }
    }

    #[test]
    fn residual_vanishes_at_self_consistent_counts() {
        let params = example_params();
        let psi = self_consistent_psi(&params);
        // Gibbs inequality: the generating parameters are stationary.
        assert!(mstep_residual(&params, &psi) < 1e-12);
    }

    #[test]
    fn mstep_recovers_generating_parameters() {
        let truth = example_params();
        let psi = self_consistent_psi(&truth);
        let start = FourierParams::new(
            8,
            vec![0.25, 0.0, 0.0],
            vec![0.25, 0.0, 0.0],
        )
        .unwrap();
        let fitted = mstep_newton(&start, &psi, 1e-12, 100).unwrap();
        let (fit_p, fit_m) = fitted.off_diagonals();
        let (true_p, true_m) = truth.off_diagonals();
        for i in 0..8 {
            assert_abs_diff_eq!(fit_p[i], true_p[i], epsilon = 1e-6);
            assert_abs_diff_eq!(fit_m[i], true_m[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn extra_harmonics_fit_to_zero_on_homogeneous_counts() {
        // Counts generated by a homogeneous chain: a K = 1 fit must drive
        // the harmonic coefficients to zero rather than invent structure.
        let truth = FourierParams::homogeneous(8, 0.3, 0.2).unwrap();
        let psi = self_consistent_psi(&truth);
        let start = FourierParams::new(
            8,
            vec![0.25, 0.02, -0.01],
            vec![0.25, -0.02, 0.01],
        )
        .unwrap();
        let fitted = mstep_newton(&start, &psi, 1e-12, 100).unwrap();
        assert_abs_diff_eq!(fitted.plus()[0], 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(fitted.minus()[0], 0.2, epsilon = 1e-8);
        for t in 1..3 {
            assert_abs_diff_eq!(fitted.plus()[t], 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(fitted.minus()[t], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn mstep_rejects_infeasible_start_and_mismatched_counts() {
        let psi = self_consistent_psi(&example_params());
        let bad_start = FourierParams::homogeneous(8, 0.7, 0.5).unwrap();
        assert!(matches!(
            mstep_newton(&bad_start, &psi, 1e-10, 100),
            Err(Error::Infeasible(_))
        ));
        let small = FourierParams::homogeneous(4, 0.25, 0.25).unwrap();
        assert!(mstep_newton(&small, &psi, 1e-10, 100).is_err());
    }

    #[test]
    fn singular_system_is_reported() {
        assert!(matches!(
            solve_linear(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0]),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn solver_handles_pivoting() {
        // First pivot is zero; partial pivoting must reorder rows.
        let a = vec![0.0, 2.0, 1.0, 3.0];
        let x = solve_linear(a, vec![4.0, 7.0]).unwrap();
        // x1 = 2 from row 0; row 1: x0 = (7 - 3 x1) / 1 = 1.
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-14);
    }

    fn test_emission(n: usize, m: usize) -> Vec<f64> {
        let q = QuantizerSpec { n_symbols: m, lo: -1.0, hi: 1.0 };
        emission_from_observation_model(n, &q, 0.04).unwrap()
    }

    fn sample_category<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        row.len() - 1
    }

    /// Symbols sampled from a ground-truth chain in the model class, so
    /// the fitted likelihood has an interior maximum.
    fn sample_chain_symbols(
        truth: &FourierParams,
        emission: &[f64],
        t_len: usize,
        seed: u64,
    ) -> Vec<usize> {
        let n = truth.n_states();
        let m = emission.len() / n;
        let transition = build_transition(truth).unwrap();
        let mut rng = substream(seed, Lane::Simulate, 5, 0);
        let mut state = rng.random_range(0..n);
        let mut symbols = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            symbols.push(sample_category(&mut rng, &emission[state * m..(state + 1) * m]));
            state = sample_category(&mut rng, &transition[state * n..(state + 1) * n]);
        }
        symbols
    }

    #[test]
    fn fit_increases_likelihood_monotonically() {
        let n = 8;
        let m = 8;
        let emission = test_emission(n, m);
        let truth = FourierParams::new(n, vec![0.32, 0.06, -0.02], vec![0.24, -0.03, 0.04]).unwrap();
        let symbols = sample_chain_symbols(&truth, &emission, 200, 402);
        let uniform = vec![1.0 / n as f64; n];
        let init = FourierParams::new(n, vec![0.3, 0.0, 0.0], vec![0.2, 0.0, 0.0]).unwrap();
        let report = fit(&symbols, &emission, &uniform, &init, &FitOptions::default()).unwrap();
        assert!(report.converged, "EM did not converge: {:?}", report.loglik_trace);
        assert_eq!(report.loglik_trace.len(), report.n_iterations + 1);
        assert_eq!(report.non_monotone_steps, 0);
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood decreased: {w:?}");
        }
    }

    #[test]
    fn fit_at_fixed_point_stops_immediately() {
        let n = 8;
        let m = 8;
        let emission = test_emission(n, m);
        let truth = FourierParams::new(n, vec![0.3, 0.04, 0.0], vec![0.22, 0.0, -0.03]).unwrap();
        let symbols = sample_chain_symbols(&truth, &emission, 500, 403);
        let uniform = vec![1.0 / n as f64; n];
        let init = FourierParams::new(n, vec![0.3, 0.0, 0.0], vec![0.2, 0.0, 0.0]).unwrap();
        let opts = FitOptions::default();
        let first = fit(&symbols, &emission, &uniform, &init, &opts).unwrap();
        assert!(first.converged);
        let again = fit(&symbols, &emission, &uniform, &first.params, &opts).unwrap();
        assert!(again.converged);
        assert_eq!(again.n_iterations, 1);
        assert_eq!(again.loglik_trace.len(), 2);
        assert_abs_diff_eq!(again.loglik_trace[1], again.loglik_trace[0], epsilon = 1e-6);
    }

    #[test]
    fn fit_validates_emission_shape() {
        let init = FourierParams::homogeneous(8, 0.25, 0.25).unwrap();
        let uniform = vec![0.125; 8];
        let opts = FitOptions::default();
        assert!(fit(&[0, 1, 0], &[0.5; 12], &uniform, &init, &opts).is_err());
        assert!(fit(&[0, 1, 0], &[], &uniform, &init, &opts).is_err());
    }

    #[test]
    fn unknown_count_is_independent_of_state_count() {
        // The M-step solves for 2(2K+1) coefficients no matter how fine
        // the spatial grid is.
        for n in [8, 16, 32, 64] {
            let params = FourierParams::new(n, vec![0.25, 0.0, 0.0], vec![0.25, 0.0, 0.0]).unwrap();
            assert_eq!(params.n_unknowns(), 6);
            assert_eq!(params.n_harmonics(), 1);
        }
    }

    #[test]
    fn mirrored_transition_is_the_relabeled_chain() {
        let params = example_params();
        let n = params.n_states();
        let a = build_transition(&params).unwrap();
        let b = build_transition(&params.mirrored()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mi = (n - i) % n;
                let mj = (n - j) % n;
                assert_abs_diff_eq!(b[i * n + j], a[mi * n + mj], epsilon = 1e-14);
            }
        }
        // The mirror is an involution.
        assert_eq!(params.mirrored().mirrored(), params);
    }

    #[test]
    fn mirror_profile_flips_drift_and_reflects_diffusion() {
        let params = example_params();
        let (drift, diffusion) = extract_drift_diffusion(&params, 1.0, 1.0).unwrap();
        let (md, mdd) = mirror_profile(&drift, &diffusion);
        let n = drift.len();
        for i in 0..n {
            assert_eq!(md[i], -drift[(n - i) % n]);
            assert_eq!(mdd[i], diffusion[(n - i) % n]);
        }
        let (back_d, back_dd) = mirror_profile(&md, &mdd);
        for i in 0..n {
            assert_eq!(back_d[i], drift[i]);
            assert_eq!(back_dd[i], diffusion[i]);
        }
        // Mirrored coefficients describe the mirrored profile.
        let (mirror_drift, _) = extract_drift_diffusion(&params.mirrored(), 1.0, 1.0).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(mirror_drift[i], md[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn drift_projection_recovers_sine_series() {
        let n = 16;
        let (t0, t1, t2) = (-0.1, 0.1, 0.04);
        let drift: Vec<f64> = (0..n)
            .map(|i| {
                t0 + t1 * sin2pi(i as f64 / n as f64) + t2 * sin2pi(2.0 * i as f64 / n as f64)
            })
            .collect();
        let coeffs = drift_fourier_coefficients(&drift, 2).unwrap();
        assert_abs_diff_eq!(coeffs[0], t0, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs[1], t1, epsilon = 1e-12);
        assert_abs_diff_eq!(coeffs[2], t2, epsilon = 1e-12);
        // Mirrored profile: constant flips, sine coefficients survive.
        let (md, _) = mirror_profile(&drift, &vec![0.8; n]);
        let mc = drift_fourier_coefficients(&md, 2).unwrap();
        assert_abs_diff_eq!(mc[0], -t0, epsilon = 1e-12);
        assert_abs_diff_eq!(mc[1], t1, epsilon = 1e-12);
        assert_abs_diff_eq!(mc[2], t2, epsilon = 1e-12);
    }

    #[test]
    fn drift_projection_validates_input() {
        assert!(drift_fourier_coefficients(&[], 0).is_err());
        assert!(drift_fourier_coefficients(&[0.0; 4], 2).is_err());
        assert!(drift_fourier_coefficients(&[f64::NAN; 8], 1).is_err());
    }
}
