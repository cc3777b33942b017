//! Versioned experiment configuration.
//!
//! Configs are TOML with a strict schema: unknown keys are errors, so a
//! typoed hyperparameter never silently falls back to a default. Fields
//! with experiment-dependent defaults are optional and resolved by
//! [`ExperimentConfig::resolve`].
//!
//! Seed discipline: one `master_seed` drives everything. Instance seeds
//! derive from it, and every stochastic stage (circuit sampling, training,
//! each chain) derives its own seed from the instance seed and a role tag.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qnmc_core::analysis::{DEFAULT_BURN_IN, DENSE_TRANSITION_CAP};
use qnmc_core::seed;

/// Schema version accepted by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Default exact-simulation guardrail for the pipeline; large enough for
/// the 25-spin magnetization demonstration.
pub const DEFAULT_SIM_CAP: usize = 26;

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error at `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SpectralGapSweep,
    Magnetization,
    Autocorrelation,
}

impl ExperimentKind {
    pub fn runs_chains(self) -> bool {
        !matches!(self, ExperimentKind::SpectralGapSweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalChoice {
    Ssf,
    Uniform,
    GnsOptimized,
    GnsFixed,
}

impl ProposalChoice {
    pub fn label(self) -> &'static str {
        match self {
            ProposalChoice::Ssf => "ssf",
            ProposalChoice::Uniform => "uniform",
            ProposalChoice::GnsOptimized => "gns-optimized",
            ProposalChoice::GnsFixed => "gns-fixed",
        }
    }

    pub fn gns_mode(self) -> Option<GnsMode> {
        match self {
            ProposalChoice::GnsOptimized => Some(GnsMode::Optimized),
            ProposalChoice::GnsFixed => Some(GnsMode::Fixed),
            _ => None,
        }
    }
}

/// Whether circuit angles are variationally optimized per instance or
/// taken from the table verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GnsMode {
    Optimized,
    Fixed,
}

impl GnsMode {
    pub fn label(self) -> &'static str {
        match self {
            GnsMode::Optimized => "optimized",
            GnsMode::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Spin counts to sweep.
    pub sizes: Option<Vec<usize>>,
    /// Inverse temperatures to sweep.
    pub betas: Option<Vec<f64>>,
    /// Instances per size (seeds derived from the master seed).
    pub instances: Option<usize>,
    /// Explicit instance seeds; overrides `instances` when present.
    pub instance_seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QaoaSection {
    pub depth: usize,
    /// Total circuit shots per instance (training + test rows).
    pub dataset_size: Option<usize>,
    /// Path to an angle-table JSON; the bundled table when omitted.
    pub angle_table: Option<PathBuf>,
    pub grad_step: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Exact-simulation guardrail (statevector and cost diagonal).
    pub sim_cap: usize,
}

impl Default for QaoaSection {
    fn default() -> Self {
        let opt = qnmc_core::qsim::OptimizerConfig::default();
        Self {
            depth: 5,
            dataset_size: None,
            angle_table: None,
            grad_step: opt.grad_step,
            grad_tol: opt.grad_tol,
            max_iters: opt.max_iters,
            sim_cap: DEFAULT_SIM_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MadeSection {
    pub hidden_layers: usize,
    /// Hidden width = `width_factor * n`.
    pub width_factor: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_fraction: f64,
}

impl Default for MadeSection {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            width_factor: 2,
            learning_rate: 0.005,
            batch_size: 8,
            epochs: 30,
            test_fraction: 0.2,
        }
    }
}

fn default_proposals() -> Vec<ProposalChoice> {
    vec![
        ProposalChoice::Ssf,
        ProposalChoice::Uniform,
        ProposalChoice::GnsOptimized,
        ProposalChoice::GnsFixed,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub steps: Option<usize>,
    pub chains: Option<usize>,
    pub burn_in: usize,
    pub proposals: Vec<ProposalChoice>,
    /// Write full chain traces (summaries are always written).
    pub store_traces: bool,
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            steps: None,
            chains: None,
            burn_in: DEFAULT_BURN_IN,
            proposals: default_proposals(),
            store_traces: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub max_lag: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { max_lag: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads for instance-level parallelism; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub qaoa: QaoaSection,
    #[serde(default)]
    pub made: MadeSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err("<config>", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("<config>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fill experiment-dependent defaults and validate everything.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        let kind = self.experiment;

        let sizes = self.system.sizes.clone().unwrap_or_else(|| match kind {
            ExperimentKind::SpectralGapSweep => (3..=12).collect(),
            _ => vec![25],
        });
        if sizes.is_empty() {
            return Err(err("system.sizes", "must list at least one size"));
        }
        for &n in &sizes {
            if n < 2 {
                return Err(err("system.sizes", format!("size {n} is below 2")));
            }
            if kind == ExperimentKind::SpectralGapSweep && n > DENSE_TRANSITION_CAP {
                return Err(err(
                    "system.sizes",
                    format!("size {n} exceeds the dense-matrix cap {DENSE_TRANSITION_CAP}"),
                ));
            }
            if n > self.qaoa.sim_cap {
                return Err(err(
                    "system.sizes",
                    format!("size {n} exceeds qaoa.sim_cap = {}", self.qaoa.sim_cap),
                ));
            }
        }

        let betas = self.system.betas.clone().unwrap_or_else(|| match kind {
            ExperimentKind::SpectralGapSweep => vec![10.0],
            _ => vec![5.0],
        });
        if betas.is_empty() {
            return Err(err("system.betas", "must list at least one beta"));
        }
        for &b in &betas {
            if !b.is_finite() || b < 0.0 {
                return Err(err(
                    "system.betas",
                    format!("beta {b} must be finite and >= 0"),
                ));
            }
        }

        // TOML integers are signed; keep seeds within 63 bits so the
        // resolved config round-trips.
        let instance_seeds = match &self.system.instance_seeds {
            Some(seeds) => seeds.clone(),
            None => {
                let count = self.system.instances.unwrap_or(match kind {
                    ExperimentKind::SpectralGapSweep => 100,
                    _ => 1,
                });
                (0..count as u64)
                    .map(|i| seed::derive(self.master_seed, "instance", i) & (i64::MAX as u64))
                    .collect()
            }
        };

        if self.qaoa.depth == 0 {
            return Err(err("qaoa.depth", "depth must be >= 1"));
        }
        let dataset_size = self.qaoa.dataset_size.unwrap_or(match kind {
            ExperimentKind::SpectralGapSweep => 1250,
            _ => 10_000,
        });
        if dataset_size == 0 {
            return Err(err("qaoa.dataset_size", "must be >= 1"));
        }

        if self.made.hidden_layers == 0 || self.made.width_factor == 0 {
            return Err(err("made", "hidden_layers and width_factor must be >= 1"));
        }
        if self.made.learning_rate.is_nan() || self.made.learning_rate <= 0.0 {
            return Err(err("made.learning_rate", "must be > 0"));
        }
        if self.made.batch_size == 0 || self.made.epochs == 0 {
            return Err(err("made", "batch_size and epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.made.test_fraction) {
            return Err(err("made.test_fraction", "must be in [0, 1)"));
        }

        if self.mcmc.proposals.is_empty() {
            return Err(err("mcmc.proposals", "must list at least one proposal"));
        }
        let mut proposals = self.mcmc.proposals.clone();
        proposals.dedup();

        let steps = self.mcmc.steps.unwrap_or(100_000);
        let chains = self.mcmc.chains.unwrap_or(match kind {
            ExperimentKind::SpectralGapSweep => 0,
            _ => 10,
        });
        if kind.runs_chains() {
            if steps == 0 {
                return Err(err("mcmc.steps", "must be >= 1"));
            }
            if chains == 0 {
                return Err(err("mcmc.chains", "must be >= 1"));
            }
            if self.mcmc.burn_in >= steps {
                return Err(err("mcmc.burn_in", "must be below mcmc.steps"));
            }
            if self.analysis.max_lag + self.mcmc.burn_in >= steps {
                return Err(err(
                    "analysis.max_lag",
                    "burn_in + max_lag must be below mcmc.steps",
                ));
            }
        }

        Ok(Resolved {
            kind,
            master_seed: self.master_seed,
            output_dir: self.output_dir.clone(),
            workers: self.workers,
            sizes,
            betas,
            instance_seeds,
            depth: self.qaoa.depth,
            dataset_size,
            angle_table: self.qaoa.angle_table.clone(),
            optimizer: qnmc_core::qsim::OptimizerConfig {
                grad_step: self.qaoa.grad_step,
                grad_tol: self.qaoa.grad_tol,
                max_iters: self.qaoa.max_iters,
            },
            sim_cap: self.qaoa.sim_cap,
            made: self.made.clone(),
            steps,
            chains,
            burn_in: self.mcmc.burn_in,
            proposals,
            store_traces: self.mcmc.store_traces,
            max_lag: self.analysis.max_lag,
        })
    }
}

/// Fully resolved experiment parameters.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub sizes: Vec<usize>,
    pub betas: Vec<f64>,
    pub instance_seeds: Vec<u64>,
    pub depth: usize,
    pub dataset_size: usize,
    pub angle_table: Option<PathBuf>,
    pub optimizer: qnmc_core::qsim::OptimizerConfig,
    pub sim_cap: usize,
    pub made: MadeSection,
    pub steps: usize,
    pub chains: usize,
    pub burn_in: usize,
    pub proposals: Vec<ProposalChoice>,
    pub store_traces: bool,
    pub max_lag: usize,
}

impl Resolved {
    pub fn gns_modes(&self) -> Vec<GnsMode> {
        let mut modes: Vec<GnsMode> = self.proposals.iter().filter_map(|p| p.gns_mode()).collect();
        modes.sort();
        modes.dedup();
        modes
    }

    pub fn sample_seed(&self, instance_seed: u64, mode: GnsMode) -> u64 {
        seed::derive(instance_seed, &format!("qaoa-samples-{}", mode.label()), 0)
    }

    pub fn train_seed(&self, instance_seed: u64, mode: GnsMode) -> u64 {
        seed::derive(instance_seed, &format!("made-train-{}", mode.label()), 0)
    }

    pub fn chain_seed(
        &self,
        instance_seed: u64,
        proposal: ProposalChoice,
        beta_index: usize,
        chain_index: usize,
    ) -> u64 {
        seed::derive(
            instance_seed,
            &format!("chain-{}-{beta_index}", proposal.label()),
            chain_index as u64,
        )
    }
}
