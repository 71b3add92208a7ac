//! Discrete N-state, M-symbol hidden Markov machinery.
//!
//! The hidden dynamics are discretized onto a periodic grid of N states
//! with nearest-neighbor transitions only (tridiagonal transition matrix
//! with wraparound corners). This module provides the observation
//! quantizer, the scaled forward-backward recursion, and the exact
//! correspondence between transition probabilities and per-state drift and
//! diffusion:
//!
//! ```text
//! F(i dx) = (a_{i,i+1} - a_{i,i-1}) D0 / dx
//! D(i dx) = [(a_{i,i+1} + a_{i,i-1}) - (a_{i,i+1} - a_{i,i-1})^2] D0
//! D0 = dx^2 / dt
//! ```

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_f64, parse_usize};
use crate::numeric::{cos2pi, normal_cdf};

/// Hidden Markov model with a tridiagonal-with-wraparound transition
/// matrix. Construction validates stochasticity (row sums within 1e-12)
/// and the sparsity pattern; matrices are dense row-major `Vec<f64>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    n_states: usize,
    n_symbols: usize,
    transition: Vec<f64>,
    emission: Vec<f64>,
    initial: Vec<f64>,
}

/// Unique wraparound neighbors `{i-1, i, i+1} mod n` of state `i`, in a
/// fixed order (deduplicated, so n = 2 yields two entries).
pub(crate) fn neighbors(i: usize, n: usize) -> impl Iterator<Item = usize> {
    let prev = (i + n - 1) % n;
    let next = (i + 1) % n;
    let mut out = [usize::MAX; 3];
    let mut len = 0;
    for c in [prev, i, next] {
        if !out[..len].contains(&c) {
            out[len] = c;
            len += 1;
        }
    }
    out.into_iter().take(len)
}

fn check_row_stochastic(matrix: &[f64], rows: usize, cols: usize, what: &str) -> Result<()> {
    if matrix.len() != rows * cols {
        return Err(Error::invalid(format!(
            "{what} must be {rows}x{cols}, got {} entries",
            matrix.len()
        )));
    }
    for r in 0..rows {
        let row = &matrix[r * cols..(r + 1) * cols];
        if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(format!("{what} row {r} has entries outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("{what} row {r} sums to {sum}, expected 1")));
        }
    }
    Ok(())
}

impl Hmm {
    pub fn new(
        n_states: usize,
        n_symbols: usize,
        transition: Vec<f64>,
        emission: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::invalid("n_states must be >= 2"));
        }
        if n_symbols < 1 {
            return Err(Error::invalid("n_symbols must be >= 1"));
        }
        check_row_stochastic(&transition, n_states, n_states, "transition")?;
        check_row_stochastic(&emission, n_states, n_symbols, "emission")?;
        check_row_stochastic(&initial, 1, n_states, "initial")?;
        for i in 0..n_states {
            let allowed: Vec<usize> = neighbors(i, n_states).collect();
            for j in 0..n_states {
                if !allowed.contains(&j) && transition[i * n_states + j] != 0.0 {
                    return Err(Error::invalid(format!(
                        "transition ({i},{j}) must be 0: only nearest-neighbor moves are allowed"
                    )));
                }
            }
        }
        Ok(Hmm { n_states, n_symbols, transition, emission, initial })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.transition[i * self.n_states + j]
    }

    pub fn emission(&self, i: usize, k: usize) -> f64 {
        self.emission[i * self.n_symbols + k]
    }

    pub fn transition_matrix(&self) -> &[f64] {
        &self.transition
    }

    pub fn emission_matrix(&self) -> &[f64] {
        &self.emission
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }
}

/// Uniform quantizer over `[lo, hi]` with M bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerSpec {
    pub n_symbols: usize,
    pub lo: f64,
    pub hi: f64,
}

impl QuantizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_symbols < 2 {
            return Err(Error::invalid("quantizer needs at least 2 symbols"));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::invalid("quantizer range must satisfy lo < hi"));
        }
        Ok(())
    }

    /// Bin index of `y`; out-of-range values clamp to the end bins.
    ///
    /// Bins are closed above: an interior bin edge belongs to the bin
    /// below it, so grid observations that land exactly on an edge (the
    /// cosine of a quarter period, say) resolve deterministically.
    pub fn bin(&self, y: f64) -> usize {
        let width = (self.hi - self.lo) / self.n_symbols as f64;
        let t = (y - self.lo) / width;
        let k = t.ceil() as isize - 1;
        k.clamp(0, self.n_symbols as isize - 1) as usize
    }
}

/// Quantize an observation sequence into symbols `0..M`.
pub fn quantize(observations: &[f64], q: &QuantizerSpec) -> Result<Vec<usize>> {
    q.validate()?;
    if observations.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("observations must be finite"));
    }
    Ok(observations.iter().map(|&y| q.bin(y)).collect())
}

/// Emission matrix induced by the cosine sensor on the N grid states.
///
/// State `i` sits at position `i dx` of a period of length `N dx`, so its
/// clean observation is `cos(2 pi i / N)` regardless of the grid scale.
/// With `sigma = 0` each row is one-hot on the bin containing that value;
/// with `sigma > 0` the row integrates the Gaussian observation density
/// over each bin (end bins absorb the tails, matching the quantizer's
/// clamping).
pub fn emission_from_observation_model(
    n_states: usize,
    q: &QuantizerSpec,
    sigma: f64,
) -> Result<Vec<f64>> {
    if n_states < 2 {
        return Err(Error::invalid("n_states must be >= 2"));
    }
    q.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let m = q.n_symbols;
    let width = (q.hi - q.lo) / m as f64;
    let mut emission = vec![0.0; n_states * m];
    for i in 0..n_states {
        let center = cos2pi(i as f64 / n_states as f64);
        let row = &mut emission[i * m..(i + 1) * m];
        if sigma == 0.0 {
            row[q.bin(center)] = 1.0;
            continue;
        }
        let std = sigma.sqrt();
        for (k, slot) in row.iter_mut().enumerate() {
            let upper = if k + 1 == m {
                1.0
            } else {
                normal_cdf((q.lo + (k as f64 + 1.0) * width - center) / std)
            };
            let lower = if k == 0 {
                0.0
            } else {
                normal_cdf((q.lo + k as f64 * width - center) / std)
            };
            *slot = (upper - lower).max(0.0);
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(emission)
}

/// Builds a symbol-emission matrix that averages the observation model over
/// each grid cell instead of evaluating it at the cell centre.
///
/// State `i` represents the whole interval `[(i-1/2)Δx, (i+1/2)Δx)`; a
/// continuous trajectory visits every offset inside it, so the observed
/// symbol is distributed as `quantize(cos(2πx/L) + √σ·w)` with `x` uniform
/// over the cell. The centre-based constructor above is the degenerate limit
/// of this one as the cell width shrinks. Averaging uses a midpoint rule
/// with 64 subdivisions per cell, which over-resolves the cosine by a wide
/// margin. Rows sum to 1 exactly (each subpoint contributes a normalized
/// bin-mass vector).
pub fn emission_from_cell_average(
    n_states: usize,
    q: &QuantizerSpec,
    sigma: f64,
) -> Result<Vec<f64>> {
    if n_states < 2 {
        return Err(Error::invalid("n_states must be >= 2"));
    }
    q.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    const SUBDIVISIONS: usize = 64;
    let m = q.n_symbols;
    let width = (q.hi - q.lo) / m as f64;
    let weight = 1.0 / SUBDIVISIONS as f64;
    let mut emission = vec![0.0; n_states * m];
    for i in 0..n_states {
        let row = &mut emission[i * m..(i + 1) * m];
        for s in 0..SUBDIVISIONS {
            // Midpoints of the cell [(i-1/2)Δx, (i+1/2)Δx) in units of the
            // period, i.e. offsets in (-1/2, 1/2) cells around the centre.
            let offset = (s as f64 + 0.5) / SUBDIVISIONS as f64 - 0.5;
            let y = cos2pi((i as f64 + offset) / n_states as f64);
            if sigma == 0.0 {
                row[q.bin(y)] += weight;
                continue;
            }
            let std = sigma.sqrt();
            for (k, slot) in row.iter_mut().enumerate() {
                let upper = if k + 1 == m {
                    1.0
                } else {
                    normal_cdf((q.lo + (k as f64 + 1.0) * width - y) / std)
                };
                let lower = if k == 0 {
                    0.0
                } else {
                    normal_cdf((q.lo + k as f64 * width - y) / std)
                };
                *slot += weight * (upper - lower).max(0.0);
            }
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(emission)
}

/// Posterior summaries from one forward-backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FbResult {
    pub log_likelihood: f64,
    /// T×N state posteriors, row-major; each row sums to 1.
    pub gamma: Vec<f64>,
    /// N×N expected transition counts (total mass T−1).
    pub xi_sums: Vec<f64>,
    pub n_states: usize,
}

fn check_symbols(hmm: &Hmm, symbols: &[usize]) -> Result<()> {
    if symbols.len() < 2 {
        return Err(Error::invalid("forward-backward needs at least 2 observations"));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s >= hmm.n_symbols) {
        return Err(Error::invalid(format!(
            "symbol {bad} out of range for {} symbols",
            hmm.n_symbols
        )));
    }
    Ok(())
}

/// One scaled forward step into `out`; returns the scale factor (the
/// conditional probability of the symbol given the past).
fn forward_step(hmm: &Hmm, prev: Option<&[f64]>, symbol: usize, out: &mut [f64]) -> f64 {
    let n = hmm.n_states;
    for j in 0..n {
        let mass = match prev {
            None => hmm.initial[j],
            Some(alpha) => neighbors(j, n).map(|i| alpha[i] * hmm.transition(i, j)).sum(),
        };
        out[j] = mass * hmm.emission(j, symbol);
    }
    out.iter().sum()
}

/// Scaled forward-backward pass (Rabiner normalization per step).
pub fn forward_backward(hmm: &Hmm, symbols: &[usize]) -> Result<FbResult> {
    check_symbols(hmm, symbols)?;
    let n = hmm.n_states;
    let t_len = symbols.len();

    let mut alpha = vec![0.0; t_len * n];
    let mut scales = vec![0.0; t_len];
    let mut log_likelihood = 0.0;
    for t in 0..t_len {
        let (before, current) = alpha.split_at_mut(t * n);
        let row = &mut current[..n];
        let prev = if t == 0 { None } else { Some(&before[(t - 1) * n..t * n]) };
        let scale = forward_step(hmm, prev, symbols[t], row);
        if scale <= 0.0 {
            return Err(Error::ZeroProbability { time: t });
        }
        for v in row.iter_mut() {
            *v /= scale;
        }
        scales[t] = scale;
        log_likelihood += scale.ln();
    }

    let mut gamma = vec![0.0; t_len * n];
    let mut xi_sums = vec![0.0; n * n];
    let mut beta_next = vec![1.0; n];
    let mut beta_t = vec![0.0; n];
    let mut eb = vec![0.0; n];
    for j in 0..n {
        gamma[(t_len - 1) * n + j] = alpha[(t_len - 1) * n + j];
    }
    for t in (0..t_len - 1).rev() {
        let scale_next = scales[t + 1];
        for j in 0..n {
            eb[j] = hmm.emission(j, symbols[t + 1]) * beta_next[j] / scale_next;
        }
        for i in 0..n {
            let a_t = alpha[t * n + i];
            let mut b = 0.0;
            for j in neighbors(i, n) {
                let flow = hmm.transition(i, j) * eb[j];
                xi_sums[i * n + j] += a_t * flow;
                b += flow;
            }
            beta_t[i] = b;
            gamma[t * n + i] = a_t * b;
        }
        std::mem::swap(&mut beta_next, &mut beta_t);
    }

    Ok(FbResult { log_likelihood, gamma, xi_sums, n_states: n })
}

/// Sequence log-likelihood via the forward pass alone.
pub fn loglikelihood(hmm: &Hmm, symbols: &[usize]) -> Result<f64> {
    check_symbols(hmm, symbols)?;
    let n = hmm.n_states;
    let mut prev = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut log_likelihood = 0.0;
    for (t, &symbol) in symbols.iter().enumerate() {
        let scale = forward_step(hmm, (t > 0).then_some(prev.as_slice()), symbol, &mut next);
        if scale <= 0.0 {
            return Err(Error::ZeroProbability { time: t });
        }
        for v in next.iter_mut() {
            *v /= scale;
        }
        log_likelihood += scale.ln();
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(log_likelihood)
}

fn check_offdiagonals(a_plus: &[f64], a_minus: &[f64]) -> Result<()> {
    if a_plus.len() != a_minus.len() || a_plus.is_empty() {
        return Err(Error::invalid("off-diagonal vectors must be nonempty with equal lengths"));
    }
    for (i, (&p, &m)) in a_plus.iter().zip(a_minus).enumerate() {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&m) {
            return Err(Error::invalid(format!("state {i}: probabilities outside [0, 1]")));
        }
        if p + m > 1.0 {
            return Err(Error::invalid(format!("state {i}: a_plus + a_minus = {} > 1", p + m)));
        }
    }
    Ok(())
}

fn check_grid(d0: f64, dx: f64) -> Result<()> {
    if !(d0 > 0.0 && d0.is_finite()) {
        return Err(Error::invalid("D0 must be > 0"));
    }
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(Error::invalid("dx must be > 0"));
    }
    Ok(())
}

/// Per-state drift and diffusion implied by the off-diagonal transition
/// probabilities, on a grid with scale `D0 = dx^2 / dt`.
pub fn dynamics_from_transitions(
    a_plus: &[f64],
    a_minus: &[f64],
    d0: f64,
    dx: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_offdiagonals(a_plus, a_minus)?;
    check_grid(d0, dx)?;
    let mut drift = Vec::with_capacity(a_plus.len());
    let mut diffusion = Vec::with_capacity(a_plus.len());
    for (&p, &m) in a_plus.iter().zip(a_minus) {
        let d = p - m;
        drift.push(d * d0 / dx);
        diffusion.push(((p + m) - d * d) * d0);
    }
    Ok((drift, diffusion))
}

/// Exact right-inverse of [`dynamics_from_transitions`]: recover the
/// off-diagonal probabilities from per-state drift and diffusion.
pub fn transitions_from_dynamics(
    drift: &[f64],
    diffusion: &[f64],
    d0: f64,
    dx: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if drift.len() != diffusion.len() || drift.is_empty() {
        return Err(Error::invalid("drift and diffusion must be nonempty with equal lengths"));
    }
    check_grid(d0, dx)?;
    let mut a_plus = Vec::with_capacity(drift.len());
    let mut a_minus = Vec::with_capacity(drift.len());
    for (i, (&f, &dd)) in drift.iter().zip(diffusion).enumerate() {
        let d = f * dx / d0;
        let s = dd / d0 + d * d;
        let p = (s + d) / 2.0;
        let m = (s - d) / 2.0;
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&m) || p + m > 1.0 {
            return Err(Error::Infeasible(format!(
                "state {i}: F = {f}, D = {dd} maps to probabilities ({p}, {m}) outside the simplex"
            )));
        }
        a_plus.push(p);
        a_minus.push(m);
    }
    Ok((a_plus, a_minus))
}

/// Serialize an HMM as structured text: dimension lines, then the dense
/// transition, emission, and initial rows at full precision.
pub fn write_hmm<W: Write>(hmm: &Hmm, mut out: W) -> Result<()> {
    writeln!(out, "n_states {}", hmm.n_states)?;
    writeln!(out, "n_symbols {}", hmm.n_symbols)?;
    let write_rows = |out: &mut W, name: &str, data: &[f64], cols: usize| -> Result<()> {
        writeln!(out, "{name}")?;
        for row in data.chunks(cols) {
            let line: Vec<String> = row.iter().map(|&v| fmt_float(v)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    };
    write_rows(&mut out, "transition", &hmm.transition, hmm.n_states)?;
    write_rows(&mut out, "emission", &hmm.emission, hmm.n_symbols)?;
    write_rows(&mut out, "initial", &hmm.initial, hmm.n_states)?;
    Ok(())
}

/// Read an HMM written by [`write_hmm`], re-validating all invariants.
pub fn read_hmm<R: BufRead>(input: R) -> Result<Hmm> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut cursor = lines.iter().map(|s| s.trim()).filter(|s| !s.is_empty());
    let mut dim = |name: &str| -> Result<usize> {
        let line = cursor
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {name} line")))?;
        let rest = line
            .strip_prefix(name)
            .ok_or_else(|| Error::Parse(format!("expected {name:?}, got {line:?}")))?;
        parse_usize(rest)
    };
    let n = dim("n_states")?;
    let m = dim("n_symbols")?;
    let mut section = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        let header = cursor
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {name} section")))?;
        if header != name {
            return Err(Error::Parse(format!("expected section {name:?}, got {header:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = cursor
                .next()
                .ok_or_else(|| Error::Parse(format!("{name}: missing row {r}")))?;
            let values: Vec<f64> =
                line.split_whitespace().map(parse_f64).collect::<Result<_>>()?;
            if values.len() != cols {
                return Err(Error::Parse(format!(
                    "{name} row {r}: expected {cols} values, got {}",
                    values.len()
                )));
            }
            data.extend(values);
        }
        Ok(data)
    };
    let transition = section("transition", n, n)?;
    let emission = section("emission", n, m)?;
    let initial = section("initial", 1, n)?;
    Hmm::new(n, m, transition, emission, initial)
}

/// Write a symbol sequence as newline-delimited integers.
pub fn write_symbols<W: Write>(symbols: &[usize], mut out: W) -> Result<()> {
    for s in symbols {
        writeln!(out, "{s}")?;
    }
    Ok(())
}

/// Read a symbol sequence written by [`write_symbols`].
pub fn read_symbols<R: BufRead>(input: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.push(parse_usize(trimmed)?);
    }
    Ok(out)
}
