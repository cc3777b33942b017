//! Shared fixtures for the pipeline benchmarks.

use qnmc_core::made::{train, BitDataset, MadeArchitecture, MadeModel, TrainConfig};
use qnmc_core::qsim::{build_cost_diagonal, fixed_angles, run_qaoa, sample_bitstrings, AngleTable};
use qnmc_core::spinglass::{SpinGlassInstance, DEFAULT_ENUMERATION_CAP};

/// A deterministic trained model plus its instance, sized for benchmarks.
pub fn trained_fixture(n: usize, seed: u64) -> (SpinGlassInstance, MadeModel) {
    let instance = SpinGlassInstance::generate(n, seed).expect("instance");
    let diag = build_cost_diagonal(&instance, DEFAULT_ENUMERATION_CAP).expect("diagonal");
    let angles = fixed_angles(5, AngleTable::bundled()).expect("angles");
    let state = run_qaoa(&diag, &angles).expect("state");
    let samples = sample_bitstrings(&state, 1250, seed ^ 1).expect("samples");
    let dataset = BitDataset::from_configurations(&samples).expect("dataset");
    let arch = MadeArchitecture::new(n, 2, 2 * n).expect("arch");
    let config = TrainConfig {
        epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let result = train(MadeModel::new(arch, seed), &dataset, &config).expect("train");
    (instance, result.model)
}
