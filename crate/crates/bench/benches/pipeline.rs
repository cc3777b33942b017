use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use qnmc_bench::trained_fixture;
use qnmc_core::analysis::{build_transition_matrix, spectral_gap};
use qnmc_core::made::{MadeArchitecture, MadeModel};
use qnmc_core::mcmc::{run_chain, GnsProposal, SingleSpinFlip, UniformProposal};
use qnmc_core::qsim::{build_cost_diagonal, fixed_angles, run_qaoa, AngleTable, QaoaParams};
use qnmc_core::seed::rng_from_seed;
use qnmc_core::spinglass::{
    exact_partition, BoltzmannTarget, SpinConfiguration, SpinGlassInstance, DEFAULT_ENUMERATION_CAP,
};

fn bench_statevector(c: &mut Criterion) {
    let instance = SpinGlassInstance::generate(12, 7).unwrap();
    let diag = build_cost_diagonal(&instance, DEFAULT_ENUMERATION_CAP).unwrap();
    let angles = fixed_angles(5, AngleTable::bundled()).unwrap();
    c.bench_function("qaoa_depth5_n12", |b| {
        b.iter(|| black_box(run_qaoa(&diag, black_box(&angles)).unwrap()))
    });

    let shallow = QaoaParams::new(vec![0.2], vec![0.3]).unwrap();
    c.bench_function("qaoa_depth1_n12", |b| {
        b.iter(|| black_box(run_qaoa(&diag, black_box(&shallow)).unwrap()))
    });
}

fn bench_enumeration(c: &mut Criterion) {
    let instance = SpinGlassInstance::generate(14, 3).unwrap();
    let target = BoltzmannTarget::new(instance, 2.0).unwrap();
    c.bench_function("exact_partition_n14", |b| {
        b.iter(|| black_box(exact_partition(black_box(&target)).unwrap()))
    });
}

fn bench_made(c: &mut Criterion) {
    let (_, model) = trained_fixture(12, 11);
    let bits: Vec<u8> = (0..12).map(|j| (j % 2) as u8).collect();
    c.bench_function("made_log_prob_n12", |b| {
        b.iter(|| black_box(model.log_prob(black_box(&bits)).unwrap()))
    });
    c.bench_function("made_sample_n12", |b| {
        b.iter_batched(
            || rng_from_seed(5),
            |mut rng| black_box(model.sample_one(&mut rng)),
            BatchSize::SmallInput,
        )
    });
}

fn bench_chains(c: &mut Criterion) {
    let (instance, model) = trained_fixture(10, 13);
    let target = BoltzmannTarget::new(instance, 5.0).unwrap();
    let mut rng = rng_from_seed(17);
    let start = SpinConfiguration::random(10, &mut rng).unwrap();

    let mut group = c.benchmark_group("chain_10k_steps_n10");
    group.sample_size(10);
    group.bench_function("ssf", |b| {
        b.iter(|| run_chain(&target, &SingleSpinFlip, 10_000, &start, 23).unwrap())
    });
    group.bench_function("uniform", |b| {
        let proposal = UniformProposal::new(10).unwrap();
        b.iter(|| run_chain(&target, &proposal, 10_000, &start, 23).unwrap())
    });
    group.bench_function("gns", |b| {
        let proposal = GnsProposal::new(&model);
        b.iter(|| run_chain(&target, &proposal, 10_000, &start, 23).unwrap())
    });
    group.finish();
}

fn bench_spectral(c: &mut Criterion) {
    let instance = SpinGlassInstance::generate(8, 19).unwrap();
    let target = BoltzmannTarget::new(instance, 5.0).unwrap();
    let model = MadeModel::new(MadeArchitecture::new(8, 2, 16).unwrap(), 3);

    let mut group = c.benchmark_group("spectral_n8");
    group.sample_size(10);
    group.bench_function("build_matrix_gns", |b| {
        let proposal = GnsProposal::new(&model);
        b.iter(|| build_transition_matrix(&target, &proposal).unwrap())
    });
    group.bench_function("gap_ssf", |b| {
        let p = build_transition_matrix(&target, &SingleSpinFlip).unwrap();
        b.iter(|| spectral_gap(&p, &target).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_statevector,
    bench_enumeration,
    bench_made,
    bench_chains,
    bench_spectral
);
criterion_main!(benches);
