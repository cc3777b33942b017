//! Turn a finished run directory into plot-ready tables and a summary:
//! gap-versus-size curves per proposal (optionally per temperature),
//! squared-magnetization trajectories, histograms, autocorrelation
//! curves, and per-instance gap ratios against the uniform baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qnmc_core::mcmc::ChainSummary;

/// Where the report landed plus anything worth flagging.
#[derive(Debug)]
pub struct ReportOutcome {
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct GapRecord {
    n: usize,
    beta: f64,
    instance_seed: u64,
    proposal: String,
    gap: f64,
}

#[derive(Debug, Serialize)]
struct GapAggregate {
    n: usize,
    beta: f64,
    proposal: String,
    instances: usize,
    gap_mean: f64,
    gap_median: f64,
    /// Geometric mean; absent when any gap is zero.
    gap_geomean: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RatioSummary {
    n: usize,
    beta: f64,
    proposal: String,
    median_ratio_vs_uniform: f64,
}

#[derive(Debug, Serialize)]
struct AcceptanceSummary {
    proposal: String,
    n: usize,
    beta: f64,
    mean_acceptance_rate: f64,
    chains: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    experiment: String,
    master_seed: u64,
    warnings: Vec<String>,
    gap_aggregates: Vec<GapAggregate>,
    gap_ratios_vs_uniform: Vec<RatioSummary>,
    acceptance: Vec<AcceptanceSummary>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Build the report for `run_dir`; writes into `out_override` or
/// `<run_dir>/report`.
pub fn report(run_dir: &Path, out_override: Option<&Path>) -> Result<ReportOutcome> {
    let config_path = run_dir.join("config.resolved.toml");
    if !config_path.exists() {
        bail!("not a run directory: missing {}", config_path.display());
    }
    let config: toml::Value = toml::from_str(&fs::read_to_string(&config_path)?)
        .context("parsing config.resolved.toml")?;
    let kind = config
        .get("kind")
        .and_then(|v| v.as_str())
        .unwrap_or("unknown")
        .to_string();
    let master_seed = config
        .get("master_seed")
        .and_then(|v| v.as_integer())
        .unwrap_or(0) as u64;
    let instance_seeds: Vec<u64> = config
        .get("instance_seeds")
        .and_then(|v| v.as_array())
        .map(|a| {
            a.iter()
                .filter_map(|v| v.as_integer())
                .map(|v| v as u64)
                .collect()
        })
        .unwrap_or_default();

    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_dir.join("report"));
    fs::create_dir_all(&out_dir)?;

    let mut warnings = Vec::new();
    let mut gap_aggregates = Vec::new();
    let mut gap_ratios = Vec::new();
    let mut acceptance = Vec::new();

    if kind == "spectral_gap_sweep" {
        let gaps_path = run_dir.join("results/spectral_gaps.csv");
        if !gaps_path.exists() {
            bail!("missing artifact: {}", gaps_path.display());
        }
        let records = parse_gap_csv(&fs::read_to_string(&gaps_path)?)?;
        if records.is_empty() {
            warnings.push("no gap rows recorded; report tables are empty".to_string());
        }

        // group by (n, beta, proposal), preserving insertion-compatible order
        let mut groups: BTreeMap<(usize, u64, String), Vec<&GapRecord>> = BTreeMap::new();
        for r in &records {
            groups
                .entry((r.n, r.beta.to_bits(), r.proposal.clone()))
                .or_default()
                .push(r);
        }
        for ((n, beta_bits, proposal), rows) in &groups {
            let mut gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            let geomean = if gaps.iter().all(|&g| g > 0.0) {
                Some((gaps.iter().map(|g| g.ln()).sum::<f64>() / gaps.len() as f64).exp())
            } else {
                None
            };
            gap_aggregates.push(GapAggregate {
                n: *n,
                beta: f64::from_bits(*beta_bits),
                proposal: proposal.clone(),
                instances: gaps.len(),
                gap_mean: mean,
                gap_median: median(&mut gaps),
                gap_geomean: geomean,
            });
        }

        let mut fig8 = String::from("beta,n,proposal,instances,gap_mean,gap_median,gap_geomean\n");
        for a in &gap_aggregates {
            fig8.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                a.beta,
                a.n,
                a.proposal,
                a.instances,
                a.gap_mean,
                a.gap_median,
                a.gap_geomean.map(|g| g.to_string()).unwrap_or_default()
            ));
        }
        fs::write(out_dir.join("fig_gap_vs_n_beta.csv"), &fig8)?;

        let max_beta = gap_aggregates
            .iter()
            .map(|a| a.beta)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut fig4 = String::from("n,proposal,instances,gap_mean,gap_median,gap_geomean\n");
        for a in gap_aggregates.iter().filter(|a| a.beta == max_beta) {
            fig4.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.n,
                a.proposal,
                a.instances,
                a.gap_mean,
                a.gap_median,
                a.gap_geomean.map(|g| g.to_string()).unwrap_or_default()
            ));
        }
        fs::write(out_dir.join("fig_gap_vs_n.csv"), &fig4)?;

        // per-instance ratios against the uniform baseline
        let mut uniform: BTreeMap<(usize, u64, u64), f64> = BTreeMap::new();
        for r in records.iter().filter(|r| r.proposal == "uniform") {
            uniform.insert((r.n, r.beta.to_bits(), r.instance_seed), r.gap);
        }
        let mut ratio_rows = String::from("n,beta,instance_seed,proposal,gap,uniform_gap,ratio\n");
        let mut ratio_groups: BTreeMap<(usize, u64, String), Vec<f64>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.proposal != "uniform") {
            let Some(&base) = uniform.get(&(r.n, r.beta.to_bits(), r.instance_seed)) else {
                continue;
            };
            if base > 0.0 {
                let ratio = r.gap / base;
                ratio_rows.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.n, r.beta, r.instance_seed, r.proposal, r.gap, base, ratio
                ));
                ratio_groups
                    .entry((r.n, r.beta.to_bits(), r.proposal.clone()))
                    .or_default()
                    .push(ratio);
            }
        }
        fs::write(out_dir.join("gap_ratios.csv"), &ratio_rows)?;
        if !records.is_empty() && uniform.is_empty() {
            warnings.push("uniform proposal absent; gap ratios are empty".to_string());
        }
        for ((n, beta_bits, proposal), mut ratios) in ratio_groups {
            gap_ratios.push(RatioSummary {
                n,
                beta: f64::from_bits(beta_bits),
                proposal,
                median_ratio_vs_uniform: median(&mut ratios),
            });
        }
    } else {
        merge_tagged_csvs(
            run_dir,
            &out_dir,
            "magnetization_",
            "fig_mhat2.csv",
            "n,beta,instance,proposal,step,mhat2_mean,mhat2_std\n",
            &mut warnings,
        )?;
        merge_tagged_csvs(
            run_dir,
            &out_dir,
            "histogram_",
            "fig_histogram.csv",
            "n,beta,instance,proposal,chain,m_value,count\n",
            &mut warnings,
        )?;
    }

    // autocorrelation curves exist for every chain experiment
    if kind != "spectral_gap_sweep" {
        merge_tagged_csvs(
            run_dir,
            &out_dir,
            "autocorrelation_",
            "fig_autocorrelation.csv",
            "n,beta,instance,proposal,chain,tau,c\n",
            &mut warnings,
        )?;

        let summaries_path = run_dir.join("results/chain_summaries.json");
        if summaries_path.exists() {
            let summaries: Vec<ChainSummary> =
                serde_json::from_str(&fs::read_to_string(&summaries_path)?)?;
            let mut groups: BTreeMap<(String, usize, u64), Vec<f64>> = BTreeMap::new();
            for s in &summaries {
                groups
                    .entry((s.proposal.clone(), s.n, s.beta.to_bits()))
                    .or_default()
                    .push(s.acceptance_rate);
            }
            for ((proposal, n, beta_bits), rates) in groups {
                acceptance.push(AcceptanceSummary {
                    proposal,
                    n,
                    beta: f64::from_bits(beta_bits),
                    mean_acceptance_rate: rates.iter().sum::<f64>() / rates.len() as f64,
                    chains: rates.len(),
                });
            }
        } else {
            bail!("missing artifact: {}", summaries_path.display());
        }
    }

    let summary = Summary {
        experiment: kind,
        master_seed,
        warnings: warnings.clone(),
        gap_aggregates,
        gap_ratios_vs_uniform: gap_ratios,
        acceptance,
    };
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let _ = instance_seeds; // provenance travels inside the merged CSVs

    Ok(ReportOutcome { out_dir, warnings })
}

fn parse_gap_csv(text: &str) -> Result<Vec<GapRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            bail!("spectral_gaps.csv line {}: expected 6 fields", lineno + 1);
        }
        out.push(GapRecord {
            n: fields[1].parse().context("n column")?,
            beta: fields[2].parse().context("beta column")?,
            instance_seed: fields[3].parse().context("instance_seed column")?,
            proposal: fields[4].to_string(),
            gap: fields[5].parse().context("gap column")?,
        });
    }
    Ok(out)
}

/// Concatenate `results/<prefix>*.csv` files into one table, prepending
/// the provenance parsed from each file name
/// (`<prefix>n{n}_b{beta}_i{idx}_{proposal}[_chain{c}].csv`).
fn merge_tagged_csvs(
    run_dir: &Path,
    out_dir: &Path,
    prefix: &str,
    out_name: &str,
    header: &str,
    warnings: &mut Vec<String>,
) -> Result<()> {
    let results = run_dir.join("results");
    let mut files: Vec<PathBuf> = Vec::new();
    if results.exists() {
        for entry in fs::read_dir(&results)? {
            let path = entry?.path();
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            if name.starts_with(prefix) && name.ends_with(".csv") {
                files.push(path);
            }
        }
    }
    files.sort();
    if files.is_empty() {
        warnings.push(format!("no {prefix}*.csv artifacts found"));
    }

    let mut out = String::from(header);
    for path in &files {
        let name = path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        let tag = &name[prefix.len()..];
        let mut n = String::new();
        let mut beta = String::new();
        let mut instance = String::new();
        let mut proposal = String::new();
        let mut chain = String::new();
        for part in tag.split('_') {
            if let Some(rest) = part.strip_prefix('n') {
                if n.is_empty() {
                    n = rest.to_string();
                    continue;
                }
            }
            if let Some(rest) = part.strip_prefix('b') {
                if beta.is_empty() {
                    beta = rest.to_string();
                    continue;
                }
            }
            if let Some(rest) = part.strip_prefix('i') {
                if instance.is_empty() {
                    instance = rest.to_string();
                    continue;
                }
            }
            if let Some(rest) = part.strip_prefix("chain") {
                chain = rest.to_string();
                continue;
            }
            proposal = part.to_string();
        }
        let provenance = if header.contains(",chain,") {
            format!("{n},{beta},{instance},{proposal},{chain}")
        } else {
            format!("{n},{beta},{instance},{proposal}")
        };
        let text = fs::read_to_string(path)?;
        for line in text.lines().skip(1) {
            out.push_str(&format!("{provenance},{line}\n"));
        }
    }
    fs::write(out_dir.join(out_name), &out)?;
    Ok(())
}
