//! Metropolis-Hastings kernel with pluggable proposal distributions:
//! single-spin-flip, uniform, and the trained-network independence
//! sampler.
//!
//! Acceptance is computed and compared entirely in log space
//! (`log[pi(x')/pi(x)] + log[Q(x|x')/Q(x'|x)]` against a log-uniform
//! variate), so deep low-temperature targets never underflow.

use std::f64::consts::LN_2;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::made::MadeModel;
use crate::seed::{rng_from_seed, SeededRng};
use crate::spinglass::{BoltzmannTarget, SpinConfiguration};

/// A proposal distribution: draws candidate configurations and evaluates
/// its own density exactly.
pub trait Proposal {
    fn name(&self) -> &'static str;

    /// Draw `x'` given the current configuration; returns the candidate
    /// and `log Q(x'|x)`.
    fn propose(
        &self,
        current: &SpinConfiguration,
        rng: &mut SeededRng,
    ) -> Result<(SpinConfiguration, f64)>;

    /// Exact `log Q(to|from)` for packed states of an `n`-spin system,
    /// `-inf` when `to` is outside the support.
    fn log_q(&self, n: usize, from: u64, to: u64) -> f64;

    /// Whether `Q(x'|x) = p(x')` ignores the current state.
    fn is_independence(&self) -> bool {
        false
    }

    /// For independence proposals: `log p(x)` for every packed state.
    /// `None` for state-dependent proposals.
    fn log_prob_table(&self, n: usize, cap: usize) -> Result<Option<Vec<f64>>> {
        let _ = (n, cap);
        Ok(None)
    }

    /// The spin count this proposal is tied to, if any.
    fn required_dim(&self) -> Option<usize> {
        None
    }
}

/// Flips one uniformly chosen spin; symmetric, `Q = 1/n` on Hamming-1 pairs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleSpinFlip;

impl Proposal for SingleSpinFlip {
    fn name(&self) -> &'static str {
        "ssf"
    }

    fn propose(
        &self,
        current: &SpinConfiguration,
        rng: &mut SeededRng,
    ) -> Result<(SpinConfiguration, f64)> {
        let n = current.n();
        let site = rng.random_range(0..n);
        Ok((current.flipped(site)?, -(n as f64).ln()))
    }

    fn log_q(&self, n: usize, from: u64, to: u64) -> f64 {
        if (from ^ to).count_ones() == 1 {
            -(n as f64).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Proposes a configuration uniformly over all `2^n`, the current state
/// included, so `Q = 2^-n` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct UniformProposal {
    n: usize,
}

impl UniformProposal {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > crate::spinglass::MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={}, got {n}",
                crate::spinglass::MAX_SPINS
            )));
        }
        Ok(Self { n })
    }
}

impl Proposal for UniformProposal {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn propose(
        &self,
        current: &SpinConfiguration,
        rng: &mut SeededRng,
    ) -> Result<(SpinConfiguration, f64)> {
        if current.n() != self.n {
            return Err(Error::InvalidArgument(format!(
                "proposal built for n={}, configuration has n={}",
                self.n,
                current.n()
            )));
        }
        let candidate = SpinConfiguration::random(self.n, rng)?;
        Ok((candidate, -(self.n as f64) * LN_2))
    }

    fn log_q(&self, n: usize, _from: u64, _to: u64) -> f64 {
        debug_assert_eq!(n, self.n);
        -(self.n as f64) * LN_2
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn log_prob_table(&self, n: usize, cap: usize) -> Result<Option<Vec<f64>>> {
        if n > cap {
            return Err(Error::ResourceLimit(format!(
                "proposal table needs 2^{n} entries but the cap is 2^{cap}"
            )));
        }
        Ok(Some(vec![-(self.n as f64) * LN_2; 1 << n]))
    }

    fn required_dim(&self) -> Option<usize> {
        Some(self.n)
    }
}

/// Independence sampler backed by a trained network: `Q(x'|x) = p(x')`
/// with the exact log-probability returned alongside every draw.
#[derive(Debug, Clone, Copy)]
pub struct GnsProposal<'a> {
    model: &'a MadeModel,
}

impl<'a> GnsProposal<'a> {
    pub fn new(model: &'a MadeModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &MadeModel {
        self.model
    }
}

impl Proposal for GnsProposal<'_> {
    fn name(&self) -> &'static str {
        "gns"
    }

    fn propose(
        &self,
        current: &SpinConfiguration,
        rng: &mut SeededRng,
    ) -> Result<(SpinConfiguration, f64)> {
        if current.n() != self.model.dim() {
            return Err(Error::InvalidArgument(format!(
                "model dimension {} does not match configuration size {}",
                self.model.dim(),
                current.n()
            )));
        }
        let sample = self.model.sample_one(rng);
        Ok((
            SpinConfiguration::from_index(current.n(), sample.bits)?,
            sample.log_prob,
        ))
    }

    fn log_q(&self, _n: usize, _from: u64, to: u64) -> f64 {
        self.model.log_prob_packed(to)
    }

    fn is_independence(&self) -> bool {
        true
    }

    fn log_prob_table(&self, n: usize, cap: usize) -> Result<Option<Vec<f64>>> {
        if n > cap {
            return Err(Error::ResourceLimit(format!(
                "proposal table needs 2^{n} entries but the cap is 2^{cap}"
            )));
        }
        Ok(Some(
            (0..1u64 << n)
                .map(|idx| self.model.log_prob_packed(idx))
                .collect(),
        ))
    }

    fn required_dim(&self) -> Option<usize> {
        Some(self.model.dim())
    }
}

/// `log[pi(x')/pi(x)] + log[Q(x|x')/Q(x'|x)]`; the acceptance probability
/// is `min(1, exp(.))`. Zero for the identity move. For symmetric
/// proposals the Q terms cancel exactly.
pub fn acceptance_log_ratio(
    target: &BoltzmannTarget,
    x: &SpinConfiguration,
    x_new: &SpinConfiguration,
    proposal: &dyn Proposal,
) -> Result<f64> {
    if x.n() != target.n() || x_new.n() != target.n() {
        return Err(Error::InvalidArgument(
            "configuration size does not match the target".to_string(),
        ));
    }
    if x.index() == x_new.index() {
        return Ok(0.0);
    }
    let n = target.n();
    let log_q_fwd = proposal.log_q(n, x.index(), x_new.index());
    if log_q_fwd == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "proposed move lies outside the proposal support".to_string(),
        ));
    }
    let log_q_rev = proposal.log_q(n, x_new.index(), x.index());
    let e_from = target.instance().energy(x)?;
    let e_to = target.instance().energy(x_new)?;
    Ok(target.log_weight_diff(e_from, e_to) + log_q_rev - log_q_fwd)
}

/// A recorded trajectory: the state sequence (initial state included),
/// per-state energies, and per-step acceptance flags.
#[derive(Debug, Clone)]
pub struct Chain {
    pub n: usize,
    pub beta: f64,
    pub seed: u64,
    pub proposal_name: String,
    /// `steps + 1` packed states, `states[0]` the initial configuration.
    pub states: Vec<u64>,
    /// `steps + 1` energies, `energies[t] = E(states[t])`.
    pub energies: Vec<f64>,
    /// `steps` flags; when `accept_flags[t]` is false,
    /// `states[t + 1] == states[t]`.
    pub accept_flags: Vec<bool>,
}

impl Chain {
    pub fn steps(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        let accepted = self.accept_flags.iter().filter(|&&a| a).count();
        accepted as f64 / self.accept_flags.len() as f64
    }

    /// Magnetization of every recorded state.
    pub fn magnetizations(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|&s| crate::spinglass::magnetization_of_index(self.n, s))
            .collect()
    }
}

/// Summary metadata stored next to chain traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub proposal: String,
    pub n: usize,
    pub beta: f64,
    pub seed: u64,
    pub steps: usize,
    pub acceptance_rate: f64,
}

impl ChainSummary {
    pub fn of(chain: &Chain) -> Self {
        Self {
            proposal: chain.proposal_name.clone(),
            n: chain.n,
            beta: chain.beta,
            seed: chain.seed,
            steps: chain.steps(),
            acceptance_rate: chain.acceptance_rate(),
        }
    }
}

/// Run the Metropolis-Hastings loop for `steps` proposal-accept events.
///
/// Proposals are drawn from `proposal`, accepted when a log-uniform
/// variate falls below the acceptance log-ratio, and the state repeats on
/// rejection. Deterministic for a given seed.
pub fn run_chain(
    target: &BoltzmannTarget,
    proposal: &dyn Proposal,
    steps: usize,
    initial: &SpinConfiguration,
    seed: u64,
) -> Result<Chain> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "step count must be >= 1".to_string(),
        ));
    }
    if initial.n() != target.n() {
        return Err(Error::InvalidArgument(format!(
            "initial configuration has {} spins, target has {}",
            initial.n(),
            target.n()
        )));
    }
    if let Some(dim) = proposal.required_dim() {
        if dim != target.n() {
            return Err(Error::InvalidArgument(format!(
                "proposal dimension {dim} does not match target size {}",
                target.n()
            )));
        }
    }

    let n = target.n();
    let instance = target.instance();
    let mut rng = rng_from_seed(seed);
    let independence = proposal.is_independence();

    let mut current = initial.clone();
    let mut current_energy = instance.energy(&current)?;
    // For independence proposals Q(x|x') = p(x) depends only on the
    // current state; cache it and refresh on acceptance.
    let mut current_log_q = if independence {
        proposal.log_q(n, current.index(), current.index())
    } else {
        0.0
    };

    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut accept_flags = Vec::with_capacity(steps);
    states.push(current.index());
    energies.push(current_energy);

    for _ in 0..steps {
        let (candidate, log_q_fwd) = proposal.propose(&current, &mut rng)?;
        let flip = current.index() ^ candidate.index();
        let candidate_energy = if flip == 0 {
            current_energy
        } else if flip.count_ones() == 1 {
            current_energy + instance.energy_delta(&current, flip.trailing_zeros() as usize)?
        } else {
            instance.energy(&candidate)?
        };

        let log_ratio = if flip == 0 {
            0.0
        } else {
            let log_q_rev = if independence {
                current_log_q
            } else {
                proposal.log_q(n, candidate.index(), current.index())
            };
            target.log_weight_diff(current_energy, candidate_energy) + log_q_rev - log_q_fwd
        };

        // u in (0, 1]: accept iff log(u) <= log_ratio, i.e. u <= min(1, e^ratio)
        let log_u = (1.0 - rng.random::<f64>()).ln();
        let accept = log_u <= log_ratio;
        if accept {
            current = candidate;
            current_energy = candidate_energy;
            if independence {
                current_log_q = log_q_fwd;
            }
        }
        states.push(current.index());
        energies.push(current_energy);
        accept_flags.push(accept);
    }

    Ok(Chain {
        n,
        beta: target.beta(),
        seed,
        proposal_name: proposal.name().to_string(),
        states,
        energies,
        accept_flags,
    })
}

/// Write a chain as `step,state_index,energy,accepted` CSV. Step 0 is the
/// initial configuration and carries no acceptance flag.
pub fn write_chain_csv<W: Write>(chain: &Chain, out: &mut W) -> Result<()> {
    writeln!(out, "step,state_index,energy,accepted")?;
    writeln!(out, "0,{},{},", chain.states[0], chain.energies[0])?;
    for t in 0..chain.steps() {
        writeln!(
            out,
            "{},{},{},{}",
            t + 1,
            chain.states[t + 1],
            chain.energies[t + 1],
            u8::from(chain.accept_flags[t])
        )?;
    }
    Ok(())
}

/// Parse a chain trace written by [`write_chain_csv`].
pub fn read_chain_csv(text: &str, n: usize, beta: f64, seed: u64, proposal: &str) -> Result<Chain> {
    let mut states = Vec::new();
    let mut energies = Vec::new();
    let mut accept_flags = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "chain trace line {} has {} fields, expected 4",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::InvalidArgument(format!("chain trace line {}: bad {what}", lineno + 1))
            })
        };
        states.push(parse(fields[1], "state")? as u64);
        energies.push(parse(fields[2], "energy")?);
        if !fields[3].is_empty() {
            accept_flags.push(fields[3] == "1");
        }
    }
    if states.is_empty() || states.len() != accept_flags.len() + 1 {
        return Err(Error::InvalidArgument(
            "chain trace is empty or inconsistent".to_string(),
        ));
    }
    Ok(Chain {
        n,
        beta,
        seed,
        proposal_name: proposal.to_string(),
        states,
        energies,
        accept_flags,
    })
}
