//! Exact and empirical chain diagnostics: dense transition matrices,
//! spectral gaps, magnetization estimators, histograms, and
//! autocorrelation.
//!
//! The dense machinery enumerates all `2^n` states, so everything here is
//! desk-scale by construction; empirical estimators work on chains of any
//! size.

#![allow(clippy::needless_range_loop)] // indexed loops mirror the matrix math

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mcmc::{Chain, Proposal};
use crate::spinglass::{exact_partition_capped, BoltzmannTarget, SpinConfiguration};

/// Dense transition matrices are capped at `2^14 x 2^14`.
pub const DENSE_TRANSITION_CAP: usize = 14;

/// Samples discarded before histograms and autocorrelation by default.
pub const DEFAULT_BURN_IN: usize = 10_000;

/// Row-stochastic dense transition matrix; row = current state.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    n: usize,
    entries: DMatrix<f64>,
}

impl TransitionMatrix {
    /// Wrap explicit entries, validating shape, nonnegativity, and row sums.
    pub fn from_entries(n: usize, entries: DMatrix<f64>) -> Result<Self> {
        let size = 1usize << n;
        if entries.nrows() != size || entries.ncols() != size {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, expected {size}x{size}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..size {
            let mut row_sum = 0.0;
            for j in 0..size {
                let v = entries[(i, j)];
                if v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative entry P({j}|{i}) = {v}"
                    )));
                }
                row_sum += v;
            }
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {row_sum}")));
            }
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        1usize << self.n
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[(from, to)]
    }

    /// Largest row-sum deviation from 1.
    pub fn row_sum_residual(&self) -> f64 {
        let size = self.size();
        let mut worst = 0.0f64;
        for i in 0..size {
            let sum: f64 = (0..size).map(|j| self.entries[(i, j)]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }
}

/// Build the exact Metropolis-Hastings transition matrix
/// `P(x'|x) = Q(x'|x) A(x'|x)` for `x' != x`, with all rejected and
/// self-proposal mass folded into the diagonal.
pub fn build_transition_matrix(
    target: &BoltzmannTarget,
    proposal: &dyn Proposal,
) -> Result<TransitionMatrix> {
    let n = target.n();
    if n > DENSE_TRANSITION_CAP {
        return Err(Error::ResourceLimit(format!(
            "dense transition matrix needs 2^{n} rows but the cap is 2^{DENSE_TRANSITION_CAP}"
        )));
    }
    if let Some(dim) = proposal.required_dim() {
        if dim != n {
            return Err(Error::InvalidArgument(format!(
                "proposal dimension {dim} does not match target size {n}"
            )));
        }
    }
    let size = 1usize << n;
    let instance = target.instance();
    let beta = target.beta();
    let energies: Vec<f64> = (0..size)
        .map(|idx| instance.energy_of_index(idx as u64))
        .collect();

    let mut entries = DMatrix::<f64>::zeros(size, size);
    let table = proposal.log_prob_table(n, DENSE_TRANSITION_CAP)?;

    for from in 0..size {
        let mut off_diagonal_sum = 0.0;
        for to in 0..size {
            if to == from {
                continue;
            }
            let log_q_fwd = match &table {
                Some(t) => t[to],
                None => proposal.log_q(n, from as u64, to as u64),
            };
            if log_q_fwd == f64::NEG_INFINITY {
                continue;
            }
            let log_q_rev = match &table {
                Some(t) => t[from],
                None => proposal.log_q(n, to as u64, from as u64),
            };
            let log_ratio = -beta * (energies[to] - energies[from]) + log_q_rev - log_q_fwd;
            let p = (log_q_fwd + log_ratio.min(0.0)).exp();
            entries[(from, to)] = p;
            off_diagonal_sum += p;
        }
        let diag = 1.0 - off_diagonal_sum;
        debug_assert!(diag > -1e-12);
        entries[(from, from)] = diag.max(0.0);
    }

    Ok(TransitionMatrix { n, entries })
}

/// Spectral diagnostics of a reversible kernel.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub lambda1: f64,
    pub lambda2_modulus: f64,
    /// `1 - |lambda_2|`, clamped into `[0, 1]`.
    pub gap: f64,
    pub eigen_method: String,
}

fn log_weights(target: &BoltzmannTarget, size: usize) -> Vec<f64> {
    let instance = target.instance();
    let beta = target.beta();
    let energies: Vec<f64> = (0..size)
        .map(|idx| instance.energy_of_index(idx as u64))
        .collect();
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let log_norm = energies
        .iter()
        .map(|&e| (-beta * (e - e_min)).exp())
        .sum::<f64>()
        .ln();
    energies
        .iter()
        .map(|&e| -beta * (e - e_min) - log_norm)
        .collect()
}

/// Largest absolute detailed-balance violation
/// `max |pi_i P_ij - pi_j P_ji|`.
pub fn detailed_balance_residual(p: &TransitionMatrix, target: &BoltzmannTarget) -> Result<f64> {
    if target.n() != p.n() {
        return Err(Error::InvalidArgument(
            "target size does not match the matrix".to_string(),
        ));
    }
    let pi = exact_partition_capped(target, DENSE_TRANSITION_CAP)?.probabilities;
    let size = p.size();
    let mut worst = 0.0f64;
    for i in 0..size {
        for j in i + 1..size {
            worst = worst.max((pi[i] * p.entries[(i, j)] - pi[j] * p.entries[(j, i)]).abs());
        }
    }
    Ok(worst)
}

/// `||pi P - pi||_1` for the enumerated stationary distribution.
pub fn stationarity_residual(p: &TransitionMatrix, target: &BoltzmannTarget) -> Result<f64> {
    if target.n() != p.n() {
        return Err(Error::InvalidArgument(
            "target size does not match the matrix".to_string(),
        ));
    }
    let pi = exact_partition_capped(target, DENSE_TRANSITION_CAP)?.probabilities;
    let size = p.size();
    let mut total = 0.0;
    for j in 0..size {
        let mut out = 0.0;
        for i in 0..size {
            out += pi[i] * p.entries[(i, j)];
        }
        total += (out - pi[j]).abs();
    }
    Ok(total)
}

/// Spectral gap `1 - |lambda_2|` via the similarity transform
/// `S = D^{1/2} P D^{-1/2}` with `D = diag(pi)`, which is symmetric for
/// reversible kernels; eigenvalues come from a dense symmetric solve.
///
/// Fails with an inconsistency error when detailed balance is violated
/// beyond `1e-8` or the leading eigenvalue strays from 1 by more than
/// `1e-9` (both signal a kernel bug, not a numerical artifact).
pub fn spectral_gap(p: &TransitionMatrix, target: &BoltzmannTarget) -> Result<SpectralReport> {
    let residual = detailed_balance_residual(p, target)?;
    if residual > 1e-8 {
        return Err(Error::Inconsistency(format!(
            "kernel is not reversible for this target: detailed-balance residual {residual}"
        )));
    }
    let size = p.size();
    let log_pi = log_weights(target, size);

    // Work from logs so sqrt(pi_i / pi_j) never underflows at large beta.
    let mut sym = DMatrix::<f64>::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            if i == j {
                sym[(i, j)] = p.entries[(i, j)];
            } else {
                let v = p.entries[(i, j)];
                if v > 0.0 {
                    sym[(i, j)] = (v.ln() + 0.5 * (log_pi[i] - log_pi[j])).exp();
                }
            }
        }
    }
    // symmetrize away roundoff before the eigensolve
    for i in 0..size {
        for j in i + 1..size {
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }

    let mut eigenvalues: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let lambda1 = eigenvalues[0];
    if (lambda1 - 1.0).abs() > 1e-9 {
        return Err(Error::Inconsistency(format!(
            "leading eigenvalue is {lambda1}, expected 1"
        )));
    }
    let lambda2_modulus = eigenvalues[1]
        .abs()
        .max(eigenvalues.last().unwrap().abs())
        .min(1.0);
    Ok(SpectralReport {
        lambda1,
        lambda2_modulus,
        gap: (1.0 - lambda2_modulus).clamp(0.0, 1.0),
        eigen_method: "symmetrized-dense".to_string(),
    })
}

/// Second-largest eigenvalue modulus straight from the unsymmetrized
/// matrix (dense Schur decomposition). Slower and less accurate than
/// [`spectral_gap`]; kept as an independent cross-check route.
pub fn lambda2_modulus_nonsymmetric(p: &TransitionMatrix) -> f64 {
    let eigen = p.entries.clone().complex_eigenvalues();
    let mut moduli: Vec<f64> = eigen.iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
    moduli[1]
}

/// Asymptotic variance of the empirical frequency of each state for a
/// chain driven by `p` in stationarity: `v_i = pi_i (2 Z_ii - 1 - pi_i)`
/// with `Z = (I - P + 1 pi^T)^{-1}`. The variance of the visit frequency
/// after `M` steps is `v_i / M`; for an i.i.d. kernel this reduces to the
/// multinomial `pi_i (1 - pi_i)`.
pub fn indicator_asymptotic_variances(
    p: &TransitionMatrix,
    target: &BoltzmannTarget,
) -> Result<Vec<f64>> {
    let pi = exact_partition_capped(target, DENSE_TRANSITION_CAP)?.probabilities;
    let size = p.size();
    let mut m = DMatrix::<f64>::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            m[(i, j)] = f64::from(i == j) - p.entries[(i, j)] + pi[j];
        }
    }
    let fundamental = m
        .try_inverse()
        .ok_or_else(|| Error::Inconsistency("fundamental matrix is singular".to_string()))?;
    Ok((0..size)
        .map(|i| pi[i] * (2.0 * fundamental[(i, i)] - 1.0 - pi[i]))
        .collect())
}

/// Magnetization of a configuration, `m(x) = (1/n) sum_j x_j`.
pub fn magnetization(x: &SpinConfiguration) -> f64 {
    x.magnetization()
}

/// Per-step magnetization statistics of one chain.
#[derive(Debug, Clone)]
pub struct MagnetizationSeries {
    /// `m(x^(t))` for every recorded state.
    pub per_step: Vec<f64>,
    /// `(1/t) sum_{j<t} m_j` for `t = 1..=len`.
    pub running_mean: Vec<f64>,
    /// Squared running mean, the estimator tracked against step count.
    pub mhat_sq: Vec<f64>,
    pub burn_in: usize,
}

/// Running magnetization statistics over a chain. `burn_in` is carried
/// for downstream histogram/autocorrelation use; the running averages
/// start from step zero.
pub fn magnetization_series(chain: &Chain, burn_in: usize) -> Result<MagnetizationSeries> {
    if chain.states.is_empty() {
        return Err(Error::InvalidArgument("chain is empty".to_string()));
    }
    let per_step = chain.magnetizations();
    let mut running_mean = Vec::with_capacity(per_step.len());
    let mut mhat_sq = Vec::with_capacity(per_step.len());
    let mut acc = 0.0;
    for (t, &m) in per_step.iter().enumerate() {
        acc += m;
        let mean = acc / (t + 1) as f64;
        running_mean.push(mean);
        mhat_sq.push(mean * mean);
    }
    Ok(MagnetizationSeries {
        per_step,
        running_mean,
        mhat_sq,
        burn_in,
    })
}

/// Combine the squared-running-mean curves of several chains into
/// per-step mean and sample standard deviation across chains.
pub fn aggregate_mhat_sq(series: &[MagnetizationSeries]) -> Result<Vec<(f64, f64)>> {
    let Some(first) = series.first() else {
        return Err(Error::InvalidArgument("no chains to aggregate".to_string()));
    };
    let len = first.mhat_sq.len();
    if series.iter().any(|s| s.mhat_sq.len() != len) {
        return Err(Error::InvalidArgument(
            "chains have different lengths".to_string(),
        ));
    }
    let k = series.len() as f64;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let mean = series.iter().map(|s| s.mhat_sq[t]).sum::<f64>() / k;
        let std = if series.len() > 1 {
            (series
                .iter()
                .map(|s| (s.mhat_sq[t] - mean).powi(2))
                .sum::<f64>()
                / (k - 1.0))
                .sqrt()
        } else {
            0.0
        };
        out.push((mean, std));
    }
    Ok(out)
}

/// Histogram over the `n + 1` attainable magnetization values, one bin
/// per value, counting post-burn-in states.
pub fn magnetization_histogram(chain: &Chain, burn_in: usize) -> Result<Vec<(f64, u64)>> {
    if chain.states.len() <= burn_in {
        return Err(Error::InvalidArgument(format!(
            "chain has {} recorded states, burn-in of {burn_in} leaves nothing",
            chain.states.len()
        )));
    }
    let n = chain.n;
    // bin k counts states with k down spins; m = (n - 2k) / n
    let mut counts = vec![0u64; n + 1];
    for &state in &chain.states[burn_in..] {
        counts[state.count_ones() as usize] += 1;
    }
    Ok((0..=n)
        .rev()
        .map(|k| ((n as f64 - 2.0 * k as f64) / n as f64, counts[k]))
        .collect())
}

/// Normalized autocorrelation of a scalar series at lags `0..=max_lag`:
/// `c(tau) = [<m(t+tau) m(t)> - <m>^2] / [<m^2> - <m>^2]` with averages
/// over the post-burn-in window. `c(0) = 1` by construction.
pub fn autocorrelation(series: &[f64], burn_in: usize, max_lag: usize) -> Result<Vec<f64>> {
    if series.len() <= burn_in || series.len() - burn_in <= max_lag {
        return Err(Error::InvalidArgument(format!(
            "series of length {} cannot support burn-in {burn_in} and max lag {max_lag}",
            series.len()
        )));
    }
    let window = &series[burn_in..];
    let len = window.len();
    let mean = window.iter().sum::<f64>() / len as f64;
    let raw_moment = |lag: usize| -> f64 {
        let terms = len - lag;
        let mut acc = 0.0;
        for t in 0..terms {
            acc += window[t] * window[t + lag];
        }
        acc / terms as f64
    };
    let denom = raw_moment(0) - mean * mean;
    if denom.is_nan() || denom <= 1e-24 {
        return Err(Error::UndefinedAutocorrelation(format!(
            "series variance is {denom}"
        )));
    }
    Ok((0..=max_lag)
        .map(|lag| (raw_moment(lag) - mean * mean) / denom)
        .collect())
}

/// One spectral-gap measurement for the `(n, beta, instance, proposal)` grid.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub n: usize,
    pub beta: f64,
    pub instance_seed: u64,
    pub proposal: String,
    pub gap: f64,
}

/// `n,beta,instance_seed,proposal,gap` CSV.
pub fn write_gap_csv<W: Write>(rows: &[GapRow], out: &mut W) -> Result<()> {
    writeln!(out, "n,beta,instance_seed,proposal,gap")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.n, r.beta, r.instance_seed, r.proposal, r.gap
        )?;
    }
    Ok(())
}

/// `step,mhat2_mean,mhat2_std` CSV.
pub fn write_magnetization_csv<W: Write>(rows: &[(f64, f64)], out: &mut W) -> Result<()> {
    writeln!(out, "step,mhat2_mean,mhat2_std")?;
    for (step, (mean, std)) in rows.iter().enumerate() {
        writeln!(out, "{step},{mean},{std}")?;
    }
    Ok(())
}

/// `tau,c` CSV.
pub fn write_autocorrelation_csv<W: Write>(c: &[f64], out: &mut W) -> Result<()> {
    writeln!(out, "tau,c")?;
    for (tau, v) in c.iter().enumerate() {
        writeln!(out, "{tau},{v}")?;
    }
    Ok(())
}

/// `m_value,count` CSV.
pub fn write_histogram_csv<W: Write>(hist: &[(f64, u64)], out: &mut W) -> Result<()> {
    writeln!(out, "m_value,count")?;
    for (m, count) in hist {
        writeln!(out, "{m},{count}")?;
    }
    Ok(())
}
