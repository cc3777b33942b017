//! Command-line driver: generate instances, sample circuits, train the
//! neural sampler, run chains, analyze, and orchestrate whole experiments
//! from TOML configs.

use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qnmc_cli::config::ExperimentConfig;
use qnmc_cli::{pipeline, report};
use qnmc_core::analysis::{
    aggregate_mhat_sq, autocorrelation, build_transition_matrix, magnetization_histogram,
    magnetization_series, spectral_gap, write_autocorrelation_csv, write_gap_csv,
    write_histogram_csv, write_magnetization_csv, GapRow,
};
use qnmc_core::made::{train, BitDataset, MadeArchitecture, MadeModel, TrainConfig};
use qnmc_core::mcmc::{
    read_chain_csv, run_chain, write_chain_csv, ChainSummary, GnsProposal, Proposal,
    SingleSpinFlip, UniformProposal,
};
use qnmc_core::qsim::{
    build_cost_diagonal, energy_expectation, fixed_angles, fixed_angles_or_ramp, linear_ramp,
    optimize_params, run_qaoa, sample_bitstrings, write_trace_csv, AngleTable, OptimizerConfig,
    RAMP_BETA_MAX, RAMP_GAMMA_MAX,
};
use qnmc_core::seed::{derive, rng_from_seed};
use qnmc_core::spinglass::{BoltzmannTarget, SpinConfiguration, SpinGlassInstance};

#[derive(Parser)]
#[command(
    name = "qnmc",
    version,
    about = "Spin-glass Boltzmann sampling with neural proposals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a fully connected Gaussian spin-glass instance.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the circuit for an instance and sample a bitstring dataset.
    Qaoa(QaoaArgs),
    /// Train the masked autoregressive sampler on a bitstring dataset.
    Train(TrainArgs),
    /// Run Metropolis-Hastings chains against a Boltzmann target.
    Mcmc(McmcArgs),
    /// Exact and empirical diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Run a whole experiment from a TOML config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        master_seed: Option<u64>,
        /// Override the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a finished run directory into plot-ready tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct QaoaArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// optimized | fixed | ramp
    #[arg(long, default_value = "optimized")]
    mode: String,
    /// Number of computational-basis samples to draw.
    #[arg(long, default_value_t = 1250)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Angle-table JSON path (bundled table when omitted).
    #[arg(long)]
    angle_table: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Output directory for angles, trace, and samples.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file, one '0'/'1' bitstring per line.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 2)]
    hidden_layers: usize,
    /// Hidden width as a multiple of the input dimension.
    #[arg(long, default_value_t = 2)]
    width_factor: usize,
    #[arg(long, default_value_t = 0.005)]
    learning_rate: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the checkpoint and loss curves.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct McmcArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    beta: f64,
    /// ssf | uniform | gns
    #[arg(long)]
    proposal: String,
    /// Model checkpoint (required for the gns proposal).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip full traces and write summaries only.
    #[arg(long, default_value_t = false)]
    summaries_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Exact spectral gap of a proposal kernel on a small instance.
    Gap {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        beta: f64,
        /// ssf | uniform | gns
        #[arg(long)]
        proposal: String,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output CSV (one row).
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate squared-running-mean magnetization over chains in a directory.
    Magnetization {
        /// Directory holding chain_<c>.csv and summary_<c>.json files.
        #[arg(long)]
        chains: PathBuf,
        #[arg(long, default_value_t = qnmc_core::analysis::DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Magnetization histogram of a single chain trace.
    Histogram {
        #[arg(long)]
        chain: PathBuf,
        /// summary_<c>.json next to the trace.
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, default_value_t = qnmc_core::analysis::DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Magnetization autocorrelation of a single chain trace.
    Autocorrelation {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, default_value_t = qnmc_core::analysis::DEFAULT_BURN_IN)]
        burn_in: usize,
        #[arg(long, default_value_t = 1000)]
        max_lag: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_instance(path: &PathBuf) -> Result<SpinGlassInstance> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading instance {}", path.display()))?;
    Ok(SpinGlassInstance::from_json(&text)?)
}

fn load_model(path: &PathBuf) -> Result<MadeModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    Ok(MadeModel::from_json(&text)?)
}

fn load_angle_table(path: Option<&PathBuf>) -> Result<AngleTable> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading angle table {}", p.display()))?;
            Ok(AngleTable::from_json(&text)?)
        }
        None => Ok(AngleTable::bundled().clone()),
    }
}

fn load_chain(trace: &PathBuf, summary: &PathBuf) -> Result<qnmc_core::mcmc::Chain> {
    let meta: ChainSummary = serde_json::from_str(
        &fs::read_to_string(summary)
            .with_context(|| format!("reading summary {}", summary.display()))?,
    )?;
    let text =
        fs::read_to_string(trace).with_context(|| format!("reading trace {}", trace.display()))?;
    Ok(read_chain_csv(
        &text,
        meta.n,
        meta.beta,
        meta.seed,
        &meta.proposal,
    )?)
}

fn build_proposal<'a>(
    kind: &str,
    n: usize,
    model: Option<&'a MadeModel>,
) -> Result<Box<dyn Proposal + 'a>> {
    match kind {
        "ssf" => Ok(Box::new(SingleSpinFlip)),
        "uniform" => Ok(Box::new(UniformProposal::new(n)?)),
        "gns" => {
            let model =
                model.ok_or_else(|| anyhow!("the gns proposal needs --model <checkpoint>"))?;
            Ok(Box::new(GnsProposal::new(model)))
        }
        other => bail!("unknown proposal {other:?} (expected ssf, uniform, or gns)"),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { n, seed, out } => {
            let instance = SpinGlassInstance::generate(n, seed)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, instance.to_json()?)?;
            println!("wrote {}", out.display());
        }
        Command::Qaoa(args) => run_qaoa_command(args)?,
        Command::Train(args) => run_train_command(args)?,
        Command::Mcmc(args) => run_mcmc_command(args)?,
        Command::Analyze(cmd) => run_analyze_command(cmd)?,
        Command::Pipeline {
            config,
            master_seed,
            workers,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config).map_err(|e| anyhow!("{e}"))?;
            if let Some(seed) = master_seed {
                cfg.master_seed = seed;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            let resolved = cfg.resolve().map_err(|e| anyhow!("{e}"))?;
            let dir = pipeline::run_pipeline(&resolved)?;
            println!("pipeline finished: {}", dir.display());
        }
        Command::Report { dir, out } => {
            let outcome = report::report(&dir, out.as_deref())?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("report written to {}", outcome.out_dir.display());
        }
    }
    Ok(())
}

fn run_qaoa_command(args: QaoaArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let diag = build_cost_diagonal(&instance, qnmc_cli::config::DEFAULT_SIM_CAP)?;
    let table = load_angle_table(args.angle_table.as_ref())?;

    let (angles, source, trace) = match args.mode.as_str() {
        "fixed" => {
            let params = fixed_angles(args.depth, &table)?;
            (params, "table", None)
        }
        "ramp" => (
            linear_ramp(args.depth, RAMP_GAMMA_MAX, RAMP_BETA_MAX)?,
            "ramp",
            None,
        ),
        "optimized" => {
            let (init, source) = fixed_angles_or_ramp(args.depth, &table)?;
            let optimizer = OptimizerConfig {
                max_iters: args.max_iters,
                ..OptimizerConfig::default()
            };
            let (params, _, trace) = optimize_params(&diag, &init, &optimizer)?;
            (params, source, Some(trace))
        }
        other => bail!("unknown mode {other:?} (expected optimized, fixed, or ramp)"),
    };

    fs::create_dir_all(&args.out)?;
    let state = run_qaoa(&diag, &angles)?;
    let energy = energy_expectation(&state, &diag)?;
    let record = pipeline::AngleRecord {
        mode: args.mode.clone(),
        source: source.to_string(),
        depth: args.depth,
        init_energy: energy,
        final_energy: energy,
        angles: angles.clone(),
    };
    fs::write(
        args.out.join(format!("angles_{}.json", args.mode)),
        serde_json::to_string_pretty(&record)?,
    )?;
    if let Some(trace) = trace {
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf)?;
        fs::write(args.out.join("trace_optimized.csv"), buf)?;
    }

    let samples = sample_bitstrings(&state, args.samples, args.seed)?;
    let dataset = BitDataset::from_configurations(&samples)?;
    let samples_path = args.out.join(format!("samples_{}.txt", args.mode));
    fs::write(&samples_path, dataset.to_text())?;
    println!(
        "energy expectation {energy:.6}; wrote {} samples to {}",
        args.samples,
        samples_path.display()
    );
    Ok(())
}

fn run_train_command(args: TrainArgs) -> Result<()> {
    let dataset = BitDataset::from_text(
        &fs::read_to_string(&args.dataset)
            .with_context(|| format!("reading dataset {}", args.dataset.display()))?,
    )?;
    let dim = dataset.dim();
    let arch = MadeArchitecture::new(dim, args.hidden_layers, args.width_factor * dim)?;
    let model = MadeModel::new(arch, args.seed);
    let cfg = TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        test_fraction: args.test_fraction,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let result = train(model, &dataset, &cfg)?;
    if result.monotone_warning {
        eprintln!("warning: train loss increased over training");
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("model.json"), result.model.to_json()?)?;
    let mut buf = Vec::new();
    qnmc_core::made::write_loss_csv(&result.curve, &mut buf)?;
    fs::write(args.out.join("loss.csv"), buf)?;
    let last = result.curve.last().unwrap();
    println!(
        "trained on {} rows ({} held out): final train loss {:.4}",
        result.train_size, result.test_size, last.train_loss
    );
    Ok(())
}

fn run_mcmc_command(args: McmcArgs) -> Result<()> {
    let instance = load_instance(&args.instance)?;
    let n = instance.n();
    let target = BoltzmannTarget::new(instance, args.beta)?;
    let model = args.model.as_ref().map(load_model).transpose()?;
    let proposal = build_proposal(&args.proposal, n, model.as_ref())?;

    fs::create_dir_all(&args.out)?;
    for c in 0..args.chains {
        let chain_seed = derive(args.seed, "chain", c as u64);
        let mut init_rng = rng_from_seed(derive(chain_seed, "init", 0));
        let initial = SpinConfiguration::random(n, &mut init_rng)?;
        let chain = run_chain(&target, proposal.as_ref(), args.steps, &initial, chain_seed)?;
        if !args.summaries_only {
            let mut buf = Vec::new();
            write_chain_csv(&chain, &mut buf)?;
            fs::write(args.out.join(format!("chain_{c}.csv")), buf)?;
        }
        fs::write(
            args.out.join(format!("summary_{c}.json")),
            serde_json::to_string_pretty(&ChainSummary::of(&chain))?,
        )?;
        println!("chain {c}: acceptance rate {:.4}", chain.acceptance_rate());
    }
    Ok(())
}

fn run_analyze_command(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Gap {
            instance,
            beta,
            proposal,
            model,
            out,
        } => {
            let instance = load_instance(&instance)?;
            let n = instance.n();
            let seed = instance.seed();
            let target = BoltzmannTarget::new(instance, beta)?;
            let model = model.as_ref().map(load_model).transpose()?;
            let kernel = build_proposal(&proposal, n, model.as_ref())?;
            let matrix = build_transition_matrix(&target, kernel.as_ref())?;
            let report = spectral_gap(&matrix, &target)?;
            let rows = vec![GapRow {
                n,
                beta,
                instance_seed: seed,
                proposal,
                gap: report.gap,
            }];
            let mut buf = Vec::new();
            write_gap_csv(&rows, &mut buf)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, buf)?;
            println!("gap {} (|lambda2| {})", report.gap, report.lambda2_modulus);
        }
        AnalyzeCommand::Magnetization {
            chains,
            burn_in,
            out,
        } => {
            let mut series = Vec::new();
            let mut c = 0usize;
            loop {
                let trace = chains.join(format!("chain_{c}.csv"));
                let summary = chains.join(format!("summary_{c}.json"));
                if !trace.exists() || !summary.exists() {
                    break;
                }
                let chain = load_chain(&trace, &summary)?;
                series.push(magnetization_series(&chain, burn_in)?);
                c += 1;
            }
            if series.is_empty() {
                bail!("no chain_<c>.csv traces found in {}", chains.display());
            }
            let agg = aggregate_mhat_sq(&series)?;
            let mut buf = Vec::new();
            write_magnetization_csv(&agg, &mut buf)?;
            fs::write(&out, buf)?;
            println!("aggregated {c} chains into {}", out.display());
        }
        AnalyzeCommand::Histogram {
            chain,
            summary,
            burn_in,
            out,
        } => {
            let chain = load_chain(&chain, &summary)?;
            let hist = magnetization_histogram(&chain, burn_in)?;
            let mut buf = Vec::new();
            write_histogram_csv(&hist, &mut buf)?;
            fs::write(&out, buf)?;
            println!("wrote {}", out.display());
        }
        AnalyzeCommand::Autocorrelation {
            chain,
            summary,
            burn_in,
            max_lag,
            out,
        } => {
            let chain = load_chain(&chain, &summary)?;
            let acf = autocorrelation(&chain.magnetizations(), burn_in, max_lag)?;
            let mut buf = Vec::new();
            write_autocorrelation_csv(&acf, &mut buf)?;
            fs::write(&out, buf)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
