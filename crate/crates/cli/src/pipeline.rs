//! End-to-end experiment execution.
//!
//! A run is split into units: per-instance preparation (instance file,
//! circuit angles, sampled dataset, trained model) followed by either
//! spectral-gap units or chain units. Every unit writes to its own paths,
//! so units parallelize freely and the merged outputs are byte-identical
//! regardless of worker count. Completed units are recorded in a manifest
//! keyed by a hash of the resolved config; rerunning resumes whatever is
//! missing and rebuilding results is deterministic.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qnmc_core::analysis::{
    aggregate_mhat_sq, autocorrelation, build_transition_matrix, magnetization_histogram,
    magnetization_series, spectral_gap, write_autocorrelation_csv, write_gap_csv,
    write_histogram_csv, write_magnetization_csv, GapRow,
};
use qnmc_core::made::{train, BitDataset, MadeArchitecture, MadeModel, TrainConfig};
use qnmc_core::mcmc::{
    run_chain, write_chain_csv, Chain, ChainSummary, GnsProposal, Proposal, SingleSpinFlip,
    UniformProposal,
};
use qnmc_core::qsim::{
    build_cost_diagonal, energy_expectation, fixed_angles_or_ramp, optimize_params, run_qaoa,
    sample_bitstrings, write_trace_csv, AngleTable, QaoaParams,
};
use qnmc_core::seed::{derive, rng_from_seed};
use qnmc_core::spinglass::{
    exact_partition_capped, magnetization_of_index, BoltzmannTarget, SpinConfiguration,
    SpinGlassInstance, DEFAULT_ENUMERATION_CAP,
};
use qnmc_core::Error as CoreError;

use crate::config::{ExperimentKind, GnsMode, ProposalChoice, Resolved};

const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config_hash: String,
    completed: BTreeSet<String>,
}

impl Manifest {
    fn load_or_new(dir: &Path, config_hash: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let manifest: Manifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            if manifest.config_hash != config_hash {
                bail!(
                    "output directory {} holds a run with a different config; \
                     use a fresh directory or delete it",
                    dir.display()
                );
            }
            Ok(manifest)
        } else {
            Ok(Manifest {
                schema_version: 1,
                config_hash: config_hash.to_string(),
                completed: BTreeSet::new(),
            })
        }
    }

    fn persist(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_NAME}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(&tmp, dir.join(MANIFEST_NAME))?;
        Ok(())
    }
}

/// Metadata written next to every set of circuit angles.
#[derive(Debug, Serialize, Deserialize)]
pub struct AngleRecord {
    pub mode: String,
    /// "table" or "ramp", depending on where the starting angles came from.
    pub source: String,
    pub depth: usize,
    pub init_energy: f64,
    pub final_energy: f64,
    pub angles: QaoaParams,
}

/// Reference quantities for chain experiments, when enumeration is viable.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExactReference {
    pub n: usize,
    pub beta: f64,
    pub instance_seed: u64,
    pub exact_oracle: String,
    /// `sum_x mu(x) m(x)`; zero by global spin-flip symmetry.
    pub exact_mean_magnetization: Option<f64>,
    /// Boltzmann weight of each attainable magnetization value, high m first.
    pub magnetization_weights: Option<Vec<(f64, f64)>>,
}

struct Ctx<'a> {
    cfg: &'a Resolved,
    table: AngleTable,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn instance_path(&self, n: usize, idx: usize) -> PathBuf {
        self.dir.join(format!("instances/n{n}_i{idx}.json"))
    }

    fn qaoa_dir(&self, n: usize, idx: usize) -> PathBuf {
        self.dir.join(format!("qaoa/n{n}_i{idx}"))
    }

    fn model_path(&self, n: usize, idx: usize, mode: GnsMode) -> PathBuf {
        self.dir
            .join(format!("models/n{n}_i{idx}/made_{}.json", mode.label()))
    }

    fn chain_dir(&self, n: usize, beta: f64, idx: usize, proposal: ProposalChoice) -> PathBuf {
        self.dir
            .join(format!("chains/n{n}_b{beta}_i{idx}/{}", proposal.label()))
    }

    fn results_dir(&self) -> PathBuf {
        self.dir.join("results")
    }

    fn unit_gap_path(&self, n: usize, idx: usize) -> PathBuf {
        self.results_dir()
            .join(format!("units/spectral_n{n}_i{idx}.csv"))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Run the configured experiment end to end; returns the output directory.
pub fn run_pipeline(cfg: &Resolved) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;

    let resolved_toml = toml::to_string_pretty(cfg).context("serializing the resolved config")?;
    write_file(&dir.join("config.resolved.toml"), &resolved_toml)?;
    let config_hash: String = Sha256::digest(resolved_toml.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let table = match &cfg.angle_table {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading angle table {}", path.display()))?;
            AngleTable::from_json(&text)?
        }
        None => AngleTable::bundled().clone(),
    };

    let ctx = Ctx {
        cfg,
        table,
        dir: dir.clone(),
    };
    let manifest = Mutex::new(Manifest::load_or_new(&dir, &config_hash)?);
    manifest.lock().unwrap().persist(&dir)?;

    // phase 1: per-(size, instance) preparation
    let mut prep_units = Vec::new();
    for &n in &cfg.sizes {
        for idx in 0..cfg.instance_seeds.len() {
            prep_units.push((n, idx));
        }
    }
    run_units(
        cfg,
        &prep_units,
        &manifest,
        &dir,
        |&(n, idx)| format!("prep-n{n}-i{idx}"),
        |&(n, idx)| prepare_instance(&ctx, n, idx),
    )?;

    // phase 2: measurements
    match cfg.kind {
        ExperimentKind::SpectralGapSweep => {
            run_units(
                cfg,
                &prep_units,
                &manifest,
                &dir,
                |&(n, idx)| format!("gaps-n{n}-i{idx}"),
                |&(n, idx)| spectral_unit(&ctx, n, idx),
            )?;
            merge_gap_rows(&ctx)?;
        }
        ExperimentKind::Magnetization | ExperimentKind::Autocorrelation => {
            let mut chain_units = Vec::new();
            for &n in &cfg.sizes {
                for (beta_idx, &beta) in cfg.betas.iter().enumerate() {
                    for idx in 0..cfg.instance_seeds.len() {
                        chain_units.push((n, beta_idx, beta, idx));
                    }
                }
            }
            run_units(
                cfg,
                &chain_units,
                &manifest,
                &dir,
                |&(n, beta_idx, _, idx)| format!("chains-n{n}-b{beta_idx}-i{idx}"),
                |&(n, beta_idx, beta, idx)| chain_unit(&ctx, n, beta_idx, beta, idx),
            )?;
            merge_chain_summaries(&ctx)?;
        }
    }

    Ok(dir)
}

/// Run `units` through `work` in parallel, skipping completed ones and
/// checkpointing the manifest after each completion.
fn run_units<U: Sync>(
    cfg: &Resolved,
    units: &[U],
    manifest: &Mutex<Manifest>,
    dir: &Path,
    key_of: impl Fn(&U) -> String + Sync,
    work: impl Fn(&U) -> Result<()> + Sync,
) -> Result<()> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                let key = key_of(unit);
                if manifest.lock().unwrap().completed.contains(&key) {
                    return Ok(());
                }
                work(unit).with_context(|| format!("unit {key}"))?;
                let mut guard = manifest.lock().unwrap();
                guard.completed.insert(key);
                guard.persist(dir)
            })
            .collect::<Result<Vec<()>>>()
    })?;
    Ok(())
}

fn prepare_instance(ctx: &Ctx<'_>, n: usize, idx: usize) -> Result<()> {
    let cfg = ctx.cfg;
    let instance_seed = cfg.instance_seeds[idx];
    let instance = SpinGlassInstance::generate(n, instance_seed)?;
    write_file(&ctx.instance_path(n, idx), &instance.to_json()?)?;

    let modes = cfg.gns_modes();
    if modes.is_empty() {
        return Ok(());
    }

    let diag = build_cost_diagonal(&instance, cfg.sim_cap)?;
    let (start_angles, source) = fixed_angles_or_ramp(cfg.depth, &ctx.table)?;
    let start_energy = energy_expectation(&run_qaoa(&diag, &start_angles)?, &diag)?;
    let qdir = ctx.qaoa_dir(n, idx);

    for mode in modes {
        let (angles, final_energy) = match mode {
            GnsMode::Fixed => (start_angles.clone(), start_energy),
            GnsMode::Optimized => {
                let (angles, energy, trace) =
                    optimize_params(&diag, &start_angles, &cfg.optimizer)?;
                let mut buf = Vec::new();
                write_trace_csv(&trace, &mut buf)?;
                write_file(&qdir.join("trace_optimized.csv"), &String::from_utf8(buf)?)?;
                (angles, energy)
            }
        };
        let record = AngleRecord {
            mode: mode.label().to_string(),
            source: source.to_string(),
            depth: cfg.depth,
            init_energy: start_energy,
            final_energy,
            angles: angles.clone(),
        };
        write_file(
            &qdir.join(format!("angles_{}.json", mode.label())),
            &serde_json::to_string_pretty(&record)?,
        )?;

        let state = run_qaoa(&diag, &angles)?;
        let samples = sample_bitstrings(
            &state,
            cfg.dataset_size,
            cfg.sample_seed(instance_seed, mode),
        )?;
        let dataset = BitDataset::from_configurations(&samples)?;
        write_file(
            &qdir.join(format!("samples_{}.txt", mode.label())),
            &dataset.to_text(),
        )?;

        let arch = MadeArchitecture::new(n, cfg.made.hidden_layers, cfg.made.width_factor * n)?;
        let train_seed = cfg.train_seed(instance_seed, mode);
        let model = MadeModel::new(arch, train_seed);
        let train_cfg = TrainConfig {
            learning_rate: cfg.made.learning_rate,
            batch_size: cfg.made.batch_size,
            epochs: cfg.made.epochs,
            test_fraction: cfg.made.test_fraction,
            seed: train_seed,
            ..TrainConfig::default()
        };
        let result = train(model, &dataset, &train_cfg)?;
        if result.monotone_warning {
            eprintln!(
                "warning: train loss increased over training (n={n}, instance {idx}, {} mode)",
                mode.label()
            );
        }
        let model_path = ctx.model_path(n, idx, mode);
        write_file(&model_path, &result.model.to_json()?)?;
        let mut buf = Vec::new();
        qnmc_core::made::write_loss_csv(&result.curve, &mut buf)?;
        write_file(
            &model_path.with_file_name(format!("loss_{}.csv", mode.label())),
            &String::from_utf8(buf)?,
        )?;
    }
    Ok(())
}

fn load_instance(ctx: &Ctx<'_>, n: usize, idx: usize) -> Result<SpinGlassInstance> {
    let path = ctx.instance_path(n, idx);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(SpinGlassInstance::from_json(&text)?)
}

fn load_model(ctx: &Ctx<'_>, n: usize, idx: usize, mode: GnsMode) -> Result<MadeModel> {
    let path = ctx.model_path(n, idx, mode);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MadeModel::from_json(&text)?)
}

fn spectral_unit(ctx: &Ctx<'_>, n: usize, idx: usize) -> Result<()> {
    let cfg = ctx.cfg;
    let instance = load_instance(ctx, n, idx)?;
    let instance_seed = cfg.instance_seeds[idx];

    let mut models = Vec::new();
    for mode in cfg.gns_modes() {
        models.push((mode, load_model(ctx, n, idx, mode)?));
    }

    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        let target = BoltzmannTarget::new(instance.clone(), beta)?;
        for &choice in &cfg.proposals {
            let gap = {
                let proposal: Box<dyn Proposal + '_> = match choice {
                    ProposalChoice::Ssf => Box::new(SingleSpinFlip),
                    ProposalChoice::Uniform => Box::new(UniformProposal::new(n)?),
                    ProposalChoice::GnsOptimized | ProposalChoice::GnsFixed => {
                        let mode = choice.gns_mode().unwrap();
                        let model = &models
                            .iter()
                            .find(|(m, _)| *m == mode)
                            .ok_or_else(|| anyhow!("model for {} missing", mode.label()))?
                            .1;
                        Box::new(GnsProposal::new(model))
                    }
                };
                let matrix = build_transition_matrix(&target, proposal.as_ref())?;
                spectral_gap(&matrix, &target)?.gap
            };
            rows.push(GapRow {
                n,
                beta,
                instance_seed,
                proposal: choice.label().to_string(),
                gap,
            });
        }
    }
    let mut buf = Vec::new();
    write_gap_csv(&rows, &mut buf)?;
    write_file(&ctx.unit_gap_path(n, idx), &String::from_utf8(buf)?)?;
    Ok(())
}

fn chain_unit(ctx: &Ctx<'_>, n: usize, beta_idx: usize, beta: f64, idx: usize) -> Result<()> {
    let cfg = ctx.cfg;
    let instance = load_instance(ctx, n, idx)?;
    let instance_seed = cfg.instance_seeds[idx];
    let target = BoltzmannTarget::new(instance, beta)?;
    let results = ctx.results_dir();

    let mut models = Vec::new();
    for mode in cfg.gns_modes() {
        models.push((mode, load_model(ctx, n, idx, mode)?));
    }

    for &choice in &cfg.proposals {
        let proposal: Box<dyn Proposal + '_> = match choice {
            ProposalChoice::Ssf => Box::new(SingleSpinFlip),
            ProposalChoice::Uniform => Box::new(UniformProposal::new(n)?),
            ProposalChoice::GnsOptimized | ProposalChoice::GnsFixed => {
                let mode = choice.gns_mode().unwrap();
                let model = &models
                    .iter()
                    .find(|(m, _)| *m == mode)
                    .ok_or_else(|| anyhow!("model for {} missing", mode.label()))?
                    .1;
                Box::new(GnsProposal::new(model))
            }
        };

        let cdir = ctx.chain_dir(n, beta, idx, choice);
        let mut chains: Vec<Chain> = Vec::with_capacity(cfg.chains);
        for c in 0..cfg.chains {
            let chain_seed = cfg.chain_seed(instance_seed, choice, beta_idx, c);
            let mut init_rng = rng_from_seed(derive(chain_seed, "init", 0));
            let initial = SpinConfiguration::random(n, &mut init_rng)?;
            let chain = run_chain(&target, proposal.as_ref(), cfg.steps, &initial, chain_seed)?;
            if cfg.store_traces {
                let mut buf = Vec::new();
                write_chain_csv(&chain, &mut buf)?;
                write_file(
                    &cdir.join(format!("chain_{c}.csv")),
                    &String::from_utf8(buf)?,
                )?;
            }
            write_file(
                &cdir.join(format!("summary_{c}.json")),
                &serde_json::to_string_pretty(&ChainSummary::of(&chain))?,
            )?;
            chains.push(chain);
        }

        let tag = format!("n{n}_b{beta}_i{idx}_{}", choice.label());
        if cfg.kind == ExperimentKind::Magnetization {
            let series: Vec<_> = chains
                .iter()
                .map(|c| magnetization_series(c, cfg.burn_in))
                .collect::<qnmc_core::Result<_>>()?;
            let agg = aggregate_mhat_sq(&series)?;
            let mut buf = Vec::new();
            write_magnetization_csv(&agg, &mut buf)?;
            write_file(
                &results.join(format!("magnetization_{tag}.csv")),
                &String::from_utf8(buf)?,
            )?;

            for (c, chain) in chains.iter().enumerate() {
                let hist = magnetization_histogram(chain, cfg.burn_in)?;
                let mut buf = Vec::new();
                write_histogram_csv(&hist, &mut buf)?;
                write_file(
                    &results.join(format!("histogram_{tag}_chain{c}.csv")),
                    &String::from_utf8(buf)?,
                )?;
            }
        }

        // both chain experiments emit autocorrelation curves
        for (c, chain) in chains.iter().enumerate() {
            let path = results.join(format!("autocorrelation_{tag}_chain{c}.csv"));
            match autocorrelation(&chain.magnetizations(), cfg.burn_in, cfg.max_lag) {
                Ok(acf) => {
                    let mut buf = Vec::new();
                    write_autocorrelation_csv(&acf, &mut buf)?;
                    write_file(&path, &String::from_utf8(buf)?)?;
                }
                Err(CoreError::UndefinedAutocorrelation(why)) => {
                    // a frozen chain is a data outcome, not a crash
                    eprintln!("warning: {tag} chain {c}: autocorrelation undefined ({why})");
                    write_file(&path, "tau,c\n")?;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    // exact references exist only while enumeration is affordable
    let reference = if n <= DEFAULT_ENUMERATION_CAP {
        let exact = exact_partition_capped(&target, DEFAULT_ENUMERATION_CAP)?;
        let mean: f64 = exact
            .probabilities
            .iter()
            .enumerate()
            .map(|(i, &p)| p * magnetization_of_index(n, i as u64))
            .sum();
        let mut weights = vec![0.0f64; n + 1];
        for (i, &p) in exact.probabilities.iter().enumerate() {
            weights[(i as u64).count_ones() as usize] += p;
        }
        ExactReference {
            n,
            beta,
            instance_seed,
            exact_oracle: "enumeration".to_string(),
            exact_mean_magnetization: Some(mean),
            magnetization_weights: Some(
                (0..=n)
                    .rev()
                    .map(|k| ((n as f64 - 2.0 * k as f64) / n as f64, weights[k]))
                    .collect(),
            ),
        }
    } else {
        ExactReference {
            n,
            beta,
            instance_seed,
            exact_oracle: "none".to_string(),
            exact_mean_magnetization: None,
            magnetization_weights: None,
        }
    };
    write_file(
        &results.join(format!("exact_reference_n{n}_b{beta}_i{idx}.json")),
        &serde_json::to_string_pretty(&reference)?,
    )?;
    Ok(())
}

/// Merge per-unit gap CSVs into `results/spectral_gaps.csv` with full seed
/// provenance, in deterministic unit order.
fn merge_gap_rows(ctx: &Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let mut out = String::from("master_seed,n,beta,instance_seed,proposal,gap\n");
    for &n in &cfg.sizes {
        for idx in 0..cfg.instance_seeds.len() {
            let path = ctx.unit_gap_path(n, idx);
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            for line in text.lines().skip(1) {
                out.push_str(&format!("{},{line}\n", cfg.master_seed));
            }
        }
    }
    write_file(&ctx.results_dir().join("spectral_gaps.csv"), &out)?;
    Ok(())
}

/// Merge chain summaries into one sorted JSON document.
fn merge_chain_summaries(ctx: &Ctx<'_>) -> Result<()> {
    let cfg = ctx.cfg;
    let mut all = Vec::new();
    for &n in &cfg.sizes {
        for &beta in &cfg.betas {
            for idx in 0..cfg.instance_seeds.len() {
                for &choice in &cfg.proposals {
                    for c in 0..cfg.chains {
                        let path = ctx
                            .chain_dir(n, beta, idx, choice)
                            .join(format!("summary_{c}.json"));
                        let text = fs::read_to_string(&path)
                            .with_context(|| format!("reading {}", path.display()))?;
                        let summary: ChainSummary = serde_json::from_str(&text)?;
                        all.push(summary);
                    }
                }
            }
        }
    }
    let mut buf = Vec::new();
    writeln!(buf, "{}", serde_json::to_string_pretty(&all)?)?;
    write_file(
        &ctx.results_dir().join("chain_summaries.json"),
        &String::from_utf8(buf)?,
    )?;
    Ok(())
}
