//! Exact statevector simulation of the p-layer QAOA circuit for spin-glass
//! cost Hamiltonians, plus angle optimization and computational-basis
//! sampling.
//!
//! Only two layer types exist: the cost layer multiplies amplitude `i` by
//! `exp(-i gamma E_i)` and the mixer applies `exp(-i beta X)` to every
//! qubit. The circuit starts from the uniform superposition and the
//! simulation is noise-free.

#![allow(clippy::needless_range_loop)] // indexed loops mirror the matrix math

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::LazyLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, SeededRng};
use crate::spinglass::{SpinConfiguration, SpinGlassInstance};

/// Norm drift tolerated before a statevector is considered invalid.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// A 2^n-amplitude statevector.
#[derive(Debug, Clone)]
pub struct Statevector {
    amplitudes: Vec<Complex64>,
    n: usize,
}

impl Statevector {
    /// Wrap raw amplitudes; the length must be a power of two and the norm
    /// must be 1 within [`NORM_TOLERANCE`].
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "amplitude count must be a power of two >= 2, got {len}"
            )));
        }
        let state = Self {
            amplitudes,
            n: len.trailing_zeros() as usize,
        };
        let norm = state.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "statevector norm is {norm}, expected 1"
            )));
        }
        Ok(state)
    }

    /// The uniform superposition `|+>^n`.
    pub fn plus_state(n: usize) -> Result<Self> {
        if n == 0 || n > crate::spinglass::MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "qubit count must be in 1..={}, got {n}",
                crate::spinglass::MAX_SPINS
            )));
        }
        let size = 1usize << n;
        let amp = Complex64::new(1.0 / (size as f64).sqrt(), 0.0);
        Ok(Self {
            amplitudes: vec![amp; size],
            n,
        })
    }

    /// The computational basis state `|index>`.
    pub fn basis_state(n: usize, index: u64) -> Result<Self> {
        if n == 0 || n > crate::spinglass::MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "qubit count must be in 1..={}, got {n}",
                crate::spinglass::MAX_SPINS
            )));
        }
        let size = 1usize << n;
        if index as usize >= size {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for {n} qubits"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); size];
        amplitudes[index as usize] = Complex64::new(1.0, 0.0);
        Ok(Self { amplitudes, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Measurement probabilities `|amplitude_i|^2`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// QAOA angles: `p` cost angles and `p` mixer angles.
///
/// The mixer angles are named `betas_mix` to keep them apart from the
/// inverse temperature used elsewhere in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    pub gammas: Vec<f64>,
    #[serde(rename = "betas")]
    pub betas_mix: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gammas: Vec<f64>, betas_mix: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || gammas.len() != betas_mix.len() {
            return Err(Error::InvalidArgument(format!(
                "angle lists must have equal nonzero length, got {} gammas and {} betas",
                gammas.len(),
                betas_mix.len()
            )));
        }
        if gammas
            .iter()
            .chain(betas_mix.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("angles must be finite".to_string()));
        }
        Ok(Self { gammas, betas_mix })
    }

    pub fn depth(&self) -> usize {
        self.gammas.len()
    }

    fn to_flat(&self) -> DVector<f64> {
        let mut flat = Vec::with_capacity(2 * self.depth());
        flat.extend_from_slice(&self.gammas);
        flat.extend_from_slice(&self.betas_mix);
        DVector::from_vec(flat)
    }

    fn from_flat(flat: &DVector<f64>) -> Self {
        let p = flat.len() / 2;
        Self {
            gammas: flat.as_slice()[..p].to_vec(),
            betas_mix: flat.as_slice()[p..].to_vec(),
        }
    }
}

/// The diagonal of the cost Hamiltonian in the computational basis.
#[derive(Debug, Clone)]
pub struct CostDiagonal {
    energies: Vec<f64>,
    n: usize,
}

impl CostDiagonal {
    /// Wrap precomputed energies (length must be a power of two).
    pub fn from_energies(energies: Vec<f64>) -> Result<Self> {
        let len = energies.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "energy count must be a power of two >= 2, got {len}"
            )));
        }
        Ok(Self {
            n: len.trailing_zeros() as usize,
            energies,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn min_energy(&self) -> f64 {
        self.energies.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Tabulate `E(x)` for every basis state under the shared bit convention.
/// Each entry is computed independently, so the values agree bit-for-bit
/// with [`SpinGlassInstance::energy`].
pub fn build_cost_diagonal(instance: &SpinGlassInstance, cap: usize) -> Result<CostDiagonal> {
    let n = instance.n();
    if n > cap {
        return Err(Error::ResourceLimit(format!(
            "cost diagonal needs 2^{n} entries but the cap is 2^{cap}"
        )));
    }
    let size = 1usize << n;
    let energies: Vec<f64> = (0..size)
        .into_par_iter()
        .map(|idx| instance.energy_of_index(idx as u64))
        .collect();
    Ok(CostDiagonal { energies, n })
}

/// Multiply amplitude `i` by `exp(-i gamma E_i)` in place. Amplitudes are
/// updated independently, so the parallel result is bit-identical to a
/// serial pass.
pub fn apply_cost_phase(state: &mut Statevector, diag: &CostDiagonal, gamma: f64) -> Result<()> {
    if state.n != diag.n {
        return Err(Error::InvalidArgument(format!(
            "state has {} qubits, diagonal has {}",
            state.n, diag.n
        )));
    }
    state
        .amplitudes
        .par_iter_mut()
        .zip(diag.energies.par_iter())
        .for_each(|(amp, &e)| {
            *amp *= Complex64::from_polar(1.0, -gamma * e);
        });
    Ok(())
}

/// Apply `exp(-i beta X)` to every qubit in place. Each qubit sweep
/// splits the state into independent `2^(qubit+1)`-sized blocks, so the
/// chunked parallel update is bit-identical to a serial one.
pub fn apply_mixer(state: &mut Statevector, beta: f64) {
    let (c, s) = (beta.cos(), beta.sin());
    let off = Complex64::new(0.0, -s);
    for qubit in 0..state.n {
        let half = 1usize << qubit;
        state
            .amplitudes
            .par_chunks_mut(2 * half)
            .for_each(|block| {
                let (lo, hi) = block.split_at_mut(half);
                for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                    let new0 = c * *a0 + off * *a1;
                    let new1 = off * *a0 + c * *a1;
                    *a0 = new0;
                    *a1 = new1;
                }
            });
    }
}

/// Run the full circuit: `prod_l [U_B(beta_l) U_C(gamma_l)] |+>^n`.
pub fn run_qaoa(diag: &CostDiagonal, params: &QaoaParams) -> Result<Statevector> {
    let mut state = Statevector::plus_state(diag.n)?;
    for layer in 0..params.depth() {
        apply_cost_phase(&mut state, diag, params.gammas[layer])?;
        apply_mixer(&mut state, params.betas_mix[layer]);
    }
    Ok(state)
}

/// `<psi| H_C |psi> = sum_i |amplitude_i|^2 E_i`.
pub fn energy_expectation(state: &Statevector, diag: &CostDiagonal) -> Result<f64> {
    if state.n != diag.n {
        return Err(Error::InvalidArgument(format!(
            "state has {} qubits, diagonal has {}",
            state.n, diag.n
        )));
    }
    Ok(state
        .amplitudes
        .iter()
        .zip(diag.energies.iter())
        .map(|(a, &e)| a.norm_sqr() * e)
        .sum())
}

/// Stopping rules and finite-difference step for [`optimize_params`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Central-difference step for the numerical gradient.
    pub grad_step: f64,
    /// Converged when the gradient max-norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_step: 1e-5,
            grad_tol: 1e-6,
            max_iters: 500,
        }
    }
}

/// One optimizer iteration for the trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub energy: f64,
    pub gradient_norm: f64,
}

/// Write a trace as `iteration,energy,gradient_norm` CSV.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: &mut W) -> Result<()> {
    writeln!(out, "iteration,energy,gradient_norm")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{}",
            row.iteration, row.energy, row.gradient_norm
        )?;
    }
    Ok(())
}

/// Central-difference gradient of the energy expectation with respect to
/// every angle. This is the estimate the optimizer steps along.
pub fn numerical_gradient(diag: &CostDiagonal, params: &QaoaParams, step: f64) -> Result<Vec<f64>> {
    let flat = params.to_flat();
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        let mut minus = flat.clone();
        minus[i] -= step;
        let f_plus = energy_expectation(&run_qaoa(diag, &QaoaParams::from_flat(&plus))?, diag)?;
        let f_minus = energy_expectation(&run_qaoa(diag, &QaoaParams::from_flat(&minus))?, diag)?;
        grad.push((f_plus - f_minus) / (2.0 * step));
    }
    Ok(grad)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Minimize the energy expectation with BFGS on numerical gradients.
///
/// The returned angles never evaluate worse than `init` (steps are only
/// taken on sufficient decrease), the run is deterministic, and every
/// iteration is logged. A non-finite objective anywhere aborts with the
/// trace attached.
pub fn optimize_params(
    diag: &CostDiagonal,
    init: &QaoaParams,
    config: &OptimizerConfig,
) -> Result<(QaoaParams, f64, Vec<TraceRecord>)> {
    let dim = 2 * init.depth();
    let mut trace: Vec<TraceRecord> = Vec::new();

    let eval = |theta: &DVector<f64>, trace: &Vec<TraceRecord>| -> Result<f64> {
        let value = energy_expectation(&run_qaoa(diag, &QaoaParams::from_flat(theta))?, diag)?;
        if !value.is_finite() {
            return Err(Error::OptimizationFailure {
                reason: format!("objective became non-finite ({value})"),
                trace: trace.clone(),
            });
        }
        Ok(value)
    };
    let gradient = |theta: &DVector<f64>, trace: &Vec<TraceRecord>| -> Result<DVector<f64>> {
        let g = numerical_gradient(diag, &QaoaParams::from_flat(theta), config.grad_step)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::OptimizationFailure {
                reason: "gradient became non-finite".to_string(),
                trace: trace.clone(),
            });
        }
        Ok(DVector::from_vec(g))
    };

    let mut theta = init.to_flat();
    let mut value = eval(&theta, &trace)?;
    let mut grad = gradient(&theta, &trace)?;
    trace.push(TraceRecord {
        iteration: 0,
        energy: value,
        gradient_norm: max_norm(grad.as_slice()),
    });
    if max_norm(grad.as_slice()) < config.grad_tol {
        return Ok((init.clone(), value, trace));
    }

    let mut inv_hessian = DMatrix::<f64>::identity(dim, dim);
    for iteration in 1..=config.max_iters {
        let mut direction = -(&inv_hessian * &grad);
        let mut slope = direction.dot(&grad);
        if slope >= 0.0 {
            // Curvature information went stale; restart from steepest descent.
            inv_hessian = DMatrix::identity(dim, dim);
            direction = -grad.clone();
            slope = direction.dot(&grad);
        }

        // Backtracking line search with the Armijo decrease condition.
        let mut step_len = 1.0;
        let mut candidate = None;
        for _ in 0..60 {
            let trial = &theta + step_len * &direction;
            let trial_value = eval(&trial, &trace)?;
            if trial_value <= value + 1e-4 * step_len * slope {
                candidate = Some((trial, trial_value));
                break;
            }
            step_len *= 0.5;
        }
        let Some((next_theta, next_value)) = candidate else {
            break; // no decrease along this direction; accept current point
        };

        let next_grad = gradient(&next_theta, &trace)?;
        let s = &next_theta - &theta;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // BFGS inverse-Hessian update.
            let rho = 1.0 / sy;
            let hy = &inv_hessian * &y;
            let yhy = y.dot(&hy);
            inv_hessian += (sy + yhy) * rho * rho * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }

        theta = next_theta;
        value = next_value;
        grad = next_grad;
        trace.push(TraceRecord {
            iteration,
            energy: value,
            gradient_norm: max_norm(grad.as_slice()),
        });
        if max_norm(grad.as_slice()) < config.grad_tol {
            break;
        }
    }

    Ok((QaoaParams::from_flat(&theta), value, trace))
}

/// Draw `count` i.i.d. basis-state samples from `|amplitude_i|^2`.
pub fn sample_bitstrings(
    state: &Statevector,
    count: usize,
    seed: u64,
) -> Result<Vec<SpinConfiguration>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be >= 1".to_string(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    sample_bitstrings_with(state, count, &mut rng)
}

/// As [`sample_bitstrings`] but drawing from a caller-owned stream.
pub fn sample_bitstrings_with(
    state: &Statevector,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Vec<SpinConfiguration>> {
    let mut cdf = Vec::with_capacity(state.amplitudes.len());
    let mut acc = 0.0;
    for a in &state.amplitudes {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let total = acc;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        samples.push(SpinConfiguration::from_index(state.n, idx as u64)?);
    }
    Ok(samples)
}

/// Depth-keyed angle table plus the provenance of its entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleTable {
    pub provenance: String,
    pub depths: BTreeMap<usize, QaoaParams>,
}

static BUNDLED_TABLE: LazyLock<AngleTable> = LazyLock::new(|| {
    serde_json::from_str(include_str!("../data/sk_fixed_angles.json"))
        .expect("bundled angle table must parse")
});

impl AngleTable {
    /// The table shipped with the crate (see `data/sk_fixed_angles.json`
    /// for how its entries were produced).
    pub fn bundled() -> &'static AngleTable {
        &BUNDLED_TABLE
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: AngleTable = serde_json::from_str(text)?;
        for (depth, params) in &table.depths {
            if params.depth() != *depth {
                return Err(Error::InvalidArgument(format!(
                    "table entry for depth {depth} has {} layers",
                    params.depth()
                )));
            }
        }
        Ok(table)
    }
}

/// Look up tabulated angles for depth `p`, verbatim.
pub fn fixed_angles(p: usize, table: &AngleTable) -> Result<QaoaParams> {
    table.depths.get(&p).cloned().ok_or_else(|| {
        Error::NotFound(format!(
            "no fixed angles tabulated for depth {p}; use linear_ramp as a fallback"
        ))
    })
}

/// Default ramp amplitude for the cost angles, usable when the angle table
/// has no entry for the requested depth.
pub const RAMP_GAMMA_MAX: f64 = 0.35;
/// Default ramp amplitude for the mixer angles.
pub const RAMP_BETA_MAX: f64 = 0.55;

/// Fallback schedule: `gamma_l = (l/p) gamma_max`, `beta_l = (1 - l/p) beta_max`.
pub fn linear_ramp(p: usize, gamma_max: f64, beta_max: f64) -> Result<QaoaParams> {
    if p == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".to_string()));
    }
    let gammas = (1..=p).map(|l| l as f64 / p as f64 * gamma_max).collect();
    let betas_mix = (1..=p)
        .map(|l| (1.0 - l as f64 / p as f64) * beta_max)
        .collect();
    QaoaParams::new(gammas, betas_mix)
}

/// Table angles when available, otherwise the default linear ramp.
/// Returns the angles and the name of the source that produced them.
pub fn fixed_angles_or_ramp(p: usize, table: &AngleTable) -> Result<(QaoaParams, &'static str)> {
    match fixed_angles(p, table) {
        Ok(params) => Ok((params, "table")),
        Err(Error::NotFound(_)) => Ok((linear_ramp(p, RAMP_GAMMA_MAX, RAMP_BETA_MAX)?, "ramp")),
        Err(e) => Err(e),
    }
}
