//! End-to-end tests of the `qnmc` binary: every verb, driven exactly as a
//! user would, on desk-scale inputs.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn qnmc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qnmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &std::process::Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn verb_chain_generate_qaoa_train_mcmc_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).display().to_string();

    let out = qnmc(&[
        "generate",
        "--n",
        "6",
        "--seed",
        "99",
        "--out",
        &path("inst.json"),
    ]);
    assert_ok(&out, "generate");

    let out = qnmc(&[
        "qaoa",
        "--instance",
        &path("inst.json"),
        "--depth",
        "5",
        "--mode",
        "fixed",
        "--samples",
        "1250",
        "--seed",
        "3",
        "--out",
        &path("qaoa"),
    ]);
    assert_ok(&out, "qaoa");
    assert!(dir.path().join("qaoa/samples_fixed.txt").exists());
    assert!(dir.path().join("qaoa/angles_fixed.json").exists());

    let out = qnmc(&[
        "train",
        "--dataset",
        &path("qaoa/samples_fixed.txt"),
        "--epochs",
        "10",
        "--seed",
        "4",
        "--out",
        &path("model"),
    ]);
    assert_ok(&out, "train");
    assert!(dir.path().join("model/model.json").exists());
    assert!(dir.path().join("model/loss.csv").exists());

    let out = qnmc(&[
        "mcmc",
        "--instance",
        &path("inst.json"),
        "--beta",
        "2.0",
        "--proposal",
        "gns",
        "--model",
        &path("model/model.json"),
        "--steps",
        "20000",
        "--chains",
        "2",
        "--seed",
        "5",
        "--out",
        &path("chains"),
    ]);
    assert_ok(&out, "mcmc");
    assert!(dir.path().join("chains/chain_1.csv").exists());
    assert!(dir.path().join("chains/summary_1.json").exists());

    let out = qnmc(&[
        "analyze",
        "magnetization",
        "--chains",
        &path("chains"),
        "--burn-in",
        "1000",
        "--out",
        &path("mhat2.csv"),
    ]);
    assert_ok(&out, "analyze magnetization");
    let text = std::fs::read_to_string(dir.path().join("mhat2.csv")).unwrap();
    assert!(text.starts_with("step,mhat2_mean,mhat2_std"));
    assert_eq!(text.lines().count(), 20_002); // header + steps + initial state

    let out = qnmc(&[
        "analyze",
        "histogram",
        "--chain",
        &path("chains/chain_0.csv"),
        "--summary",
        &path("chains/summary_0.json"),
        "--burn-in",
        "1000",
        "--out",
        &path("hist.csv"),
    ]);
    assert_ok(&out, "analyze histogram");

    let out = qnmc(&[
        "analyze",
        "autocorrelation",
        "--chain",
        &path("chains/chain_0.csv"),
        "--summary",
        &path("chains/summary_0.json"),
        "--burn-in",
        "1000",
        "--max-lag",
        "100",
        "--out",
        &path("acf.csv"),
    ]);
    assert_ok(&out, "analyze autocorrelation");
    let acf = std::fs::read_to_string(dir.path().join("acf.csv")).unwrap();
    let first = acf.lines().nth(1).unwrap();
    assert_eq!(first, "0,1");

    let out = qnmc(&[
        "analyze",
        "gap",
        "--instance",
        &path("inst.json"),
        "--beta",
        "2.0",
        "--proposal",
        "gns",
        "--model",
        &path("model/model.json"),
        "--out",
        &path("gap.csv"),
    ]);
    assert_ok(&out, "analyze gap");
    let gap = std::fs::read_to_string(dir.path().join("gap.csv")).unwrap();
    assert!(gap.starts_with("n,beta,instance_seed,proposal,gap"));
}

/// The documented smoke configuration: tiny sweep, full pipeline plus
/// report, well under a minute.
#[test]
fn pipeline_smoke_run_is_fast_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("smoke.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1
experiment = "spectral_gap_sweep"
master_seed = 11
output_dir = "{}"

[system]
sizes = [4]
betas = [2.0]
instances = 2
"#,
            out_dir.display()
        ),
    )
    .unwrap();

    let start = Instant::now();
    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert_ok(&out, "pipeline");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "smoke run took {elapsed:?}");

    // spectral_gap validated reversibility and the leading eigenvalue for
    // every row it produced; all four proposals x 2 instances are present
    let gaps = std::fs::read_to_string(out_dir.join("results/spectral_gaps.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 1 + 8);

    let out = qnmc(&["report", "--dir", &out_dir.display().to_string()]);
    assert_ok(&out, "report");
    assert!(out_dir.join("report/summary.json").exists());
    assert!(out_dir.join("report/fig_gap_vs_n.csv").exists());
    assert!(out_dir.join("report/gap_ratios.csv").exists());
}

/// The chain-experiment pipeline produces traces, summaries, diagnostics,
/// exact references, and a report.
#[test]
fn magnetization_pipeline_produces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("mag.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1
experiment = "magnetization"
master_seed = 33
output_dir = "{}"

[system]
sizes = [6]
betas = [1.0]
instances = 1

[qaoa]
dataset_size = 600

[mcmc]
steps = 3000
chains = 2
burn_in = 500
proposals = ["ssf", "gns-optimized"]

[analysis]
max_lag = 200
"#,
            out_dir.display()
        ),
    )
    .unwrap();

    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert_ok(&out, "magnetization pipeline");

    assert!(out_dir.join("qaoa/n6_i0/trace_optimized.csv").exists());
    assert!(out_dir.join("models/n6_i0/made_optimized.json").exists());
    assert!(out_dir
        .join("chains/n6_b1_i0/gns-optimized/chain_1.csv")
        .exists());
    assert!(out_dir
        .join("results/magnetization_n6_b1_i0_ssf.csv")
        .exists());
    assert!(out_dir
        .join("results/histogram_n6_b1_i0_gns-optimized_chain0.csv")
        .exists());
    assert!(out_dir
        .join("results/autocorrelation_n6_b1_i0_ssf_chain1.csv")
        .exists());
    assert!(out_dir.join("results/chain_summaries.json").exists());

    // n = 6 is enumerable, so the reference is real
    let reference: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("results/exact_reference_n6_b1_i0.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(reference["exact_oracle"], "enumeration");
    assert!(reference["exact_mean_magnetization"].as_f64().unwrap().abs() < 1e-12);

    let out = qnmc(&["report", "--dir", &out_dir.display().to_string()]);
    assert_ok(&out, "report on magnetization run");
    for name in ["fig_mhat2.csv", "fig_histogram.csv", "fig_autocorrelation.csv"] {
        let text = std::fs::read_to_string(out_dir.join("report").join(name)).unwrap();
        assert!(text.lines().count() > 1, "{name} is empty");
    }
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("report/summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["acceptance"].as_array().unwrap().len(), 2);
}

/// An empty sweep reports success with a warning rather than failing.
#[test]
fn empty_sweep_reports_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("empty.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1
experiment = "spectral_gap_sweep"
output_dir = "{}"

[system]
sizes = [4]
instances = 0
"#,
            out_dir.display()
        ),
    )
    .unwrap();

    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert_ok(&out, "pipeline on empty sweep");

    let out = qnmc(&["report", "--dir", &out_dir.display().to_string()]);
    assert_ok(&out, "report on empty sweep");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("warning"),
        "expected a warning, got: {stderr}"
    );
}

/// Reporting a directory that is not a run fails with a clear message.
#[test]
fn report_lists_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = qnmc(&["report", "--dir", &dir.path().display().to_string()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("config.resolved.toml"),
        "error should name what is missing: {stderr}"
    );
}

/// Config typos are rejected with the offending key named.
#[test]
fn config_typos_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("typo.toml");
    std::fs::write(
        &config_path,
        r#"
schema_version = 1
experiment = "spectral_gap_sweep"
output_dir = "out"
[made]
learning_rte = 0.005
"#,
    )
    .unwrap();
    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rte"), "{stderr}");
}

/// Interrupted runs resume: wiping the manifest entry for one unit and
/// rerunning rebuilds only what is missing, with identical results.
#[test]
fn interrupted_pipeline_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("resume.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1
experiment = "spectral_gap_sweep"
master_seed = 21
output_dir = "{}"

[system]
sizes = [4]
betas = [1.0]
instances = 2
"#,
            out_dir.display()
        ),
    )
    .unwrap();

    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert_ok(&out, "first pipeline run");
    let gaps_before = std::fs::read(out_dir.join("results/spectral_gaps.csv")).unwrap();

    // simulate a crash after the first unit: drop one completed entry and
    // its output, then rerun
    let manifest_path = out_dir.join("manifest.json");
    let manifest = std::fs::read_to_string(&manifest_path).unwrap();
    let edited = manifest
        .replace("\"gaps-n4-i1\",", "")
        .replace("\"gaps-n4-i1\"", "");
    std::fs::write(&manifest_path, edited).unwrap();
    std::fs::remove_file(out_dir.join("results/units/spectral_n4_i1.csv")).unwrap();

    let out = qnmc(&["pipeline", "--config", &config_path.display().to_string()]);
    assert_ok(&out, "resumed pipeline run");
    let gaps_after = std::fs::read(out_dir.join("results/spectral_gaps.csv")).unwrap();
    assert_eq!(gaps_before, gaps_after);
    assert!(Path::new(&out_dir.join("results/units/spectral_n4_i1.csv")).exists());
}
