//! Fully connected spin-glass instances, their energy function, and exact
//! Boltzmann quantities by enumeration for small systems.
//!
//! The energy of a configuration `x` with spins in `{+1, -1}` is
//! `E(x) = -sum_{j<k} J_jk x_j x_k` with couplings drawn i.i.d. from a
//! standard normal distribution, deliberately without any `1/sqrt(n)`
//! scaling (the Sherrington-Kirkpatrick literature often scales; this
//! model does not).
//!
//! Bit convention, shared by every module in the crate: bit `j` of a basis
//! index is spin `j`, and bit value `0` encodes spin `+1`.

#![allow(clippy::needless_range_loop)] // indexed loops mirror the matrix math

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, SeededRng};

/// Default cap on exact enumeration (2^20 states). Callers with more
/// memory and patience may raise it per call.
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Configurations are packed into a `u64` basis index.
pub const MAX_SPINS: usize = 63;

/// A configuration of `n` spins, kept consistent with its basis index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinConfiguration {
    spins: Vec<i8>,
    index: u64,
}

impl SpinConfiguration {
    /// Decode a basis index: bit `j` set means spin `j` is `-1`.
    pub fn from_index(n: usize, index: u64) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={MAX_SPINS}, got {n}"
            )));
        }
        if n < 64 && index >> n != 0 {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for {n} spins"
            )));
        }
        let spins = (0..n)
            .map(|j| if index >> j & 1 == 0 { 1 } else { -1 })
            .collect();
        Ok(Self { spins, index })
    }

    pub fn from_spins(spins: Vec<i8>) -> Result<Self> {
        if spins.is_empty() || spins.len() > MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={MAX_SPINS}, got {}",
                spins.len()
            )));
        }
        let mut index = 0u64;
        for (j, &s) in spins.iter().enumerate() {
            match s {
                1 => {}
                -1 => index |= 1 << j,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "spin {j} is {other}, expected +1 or -1"
                    )))
                }
            }
        }
        Ok(Self { spins, index })
    }

    /// Draw a configuration uniformly at random.
    pub fn random(n: usize, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={MAX_SPINS}, got {n}"
            )));
        }
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Self::from_index(n, rng.random::<u64>() & mask)
    }

    pub fn n(&self) -> usize {
        self.spins.len()
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    /// Bits under the crate convention: `0` for spin `+1`, `1` for `-1`.
    pub fn bits(&self) -> Vec<u8> {
        (0..self.n()).map(|j| (self.index >> j & 1) as u8).collect()
    }

    /// The configuration with spin `site` flipped.
    pub fn flipped(&self, site: usize) -> Result<Self> {
        if site >= self.n() {
            return Err(Error::InvalidArgument(format!(
                "flip site {site} out of range for {} spins",
                self.n()
            )));
        }
        let mut out = self.clone();
        out.spins[site] = -out.spins[site];
        out.index ^= 1 << site;
        Ok(out)
    }

    /// The globally flipped configuration `-x`.
    pub fn global_flip(&self) -> Self {
        let spins = self.spins.iter().map(|&s| -s).collect();
        let mask = if self.n() == 64 {
            u64::MAX
        } else {
            (1u64 << self.n()) - 1
        };
        Self {
            spins,
            index: self.index ^ mask,
        }
    }

    /// Mean spin value `m(x) = (1/n) sum_j x_j`.
    pub fn magnetization(&self) -> f64 {
        magnetization_of_index(self.n(), self.index)
    }
}

/// Magnetization computed directly from a packed index.
pub fn magnetization_of_index(n: usize, index: u64) -> f64 {
    let down = index.count_ones() as f64;
    (n as f64 - 2.0 * down) / n as f64
}

/// A fully connected spin glass: `n` spins and one coupling per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinGlassInstance {
    n: usize,
    /// Upper-triangular couplings, row-major: (0,1), (0,2), ..., (n-2,n-1).
    couplings: Vec<f64>,
    seed: u64,
}

/// On-disk form: explicit `(j, k, J_jk)` triples.
#[derive(Serialize, Deserialize)]
struct InstanceFile {
    n: usize,
    seed: u64,
    couplings: Vec<(usize, usize, f64)>,
}

impl SpinGlassInstance {
    /// Draw a fully connected instance with i.i.d. standard-normal
    /// couplings. Deterministic for a given `(n, seed)`.
    pub fn generate(n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={MAX_SPINS}, got {n}"
            )));
        }
        let mut rng = rng_from_seed(seed);
        let couplings = (0..n * (n - 1) / 2)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(Self { n, couplings, seed })
    }

    /// Build an instance from explicit couplings (one per pair `j < k`,
    /// row-major). Mostly useful in tests.
    pub fn from_couplings(n: usize, couplings: Vec<f64>, seed: u64) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "spin count must be in 1..={MAX_SPINS}, got {n}"
            )));
        }
        if couplings.len() != n * (n - 1) / 2 {
            return Err(Error::InvalidArgument(format!(
                "expected {} couplings for n={n}, got {}",
                n * (n - 1) / 2,
                couplings.len()
            )));
        }
        if let Some(bad) = couplings.iter().find(|j| !j.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "couplings must be finite, found {bad}"
            )));
        }
        Ok(Self { n, couplings, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn pair_offset(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < k && k < self.n);
        j * self.n - j * (j + 1) / 2 + (k - j - 1)
    }

    /// Coupling `J_jk` for any `j != k`.
    pub fn coupling(&self, j: usize, k: usize) -> f64 {
        let (a, b) = if j < k { (j, k) } else { (k, j) };
        self.couplings[self.pair_offset(a, b)]
    }

    /// All couplings as `(j, k, J_jk)` with `j < k`.
    pub fn coupling_triples(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.couplings.len());
        for j in 0..self.n {
            for k in j + 1..self.n {
                out.push((j, k, self.couplings[self.pair_offset(j, k)]));
            }
        }
        out
    }

    /// `E(x) = -sum_{j<k} J_jk x_j x_k`.
    pub fn energy(&self, x: &SpinConfiguration) -> Result<f64> {
        if x.n() != self.n {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} spins, instance has {}",
                x.n(),
                self.n
            )));
        }
        Ok(self.energy_of_index(x.index()))
    }

    /// Energy of a packed basis index. Iteration order matches
    /// [`Self::energy`] exactly, so the two agree bit-for-bit.
    pub fn energy_of_index(&self, index: u64) -> f64 {
        let mut acc = 0.0;
        let mut offset = 0;
        for j in 0..self.n {
            let xj = 1.0 - 2.0 * (index >> j & 1) as f64;
            for k in j + 1..self.n {
                let xk = 1.0 - 2.0 * (index >> k & 1) as f64;
                acc -= self.couplings[offset] * xj * xk;
                offset += 1;
            }
        }
        acc
    }

    /// Energy change from flipping one spin:
    /// `E(x^flip) - E(x) = 2 x_j sum_{k != j} J_jk x_k`, in `O(n)`.
    pub fn energy_delta(&self, x: &SpinConfiguration, flip_site: usize) -> Result<f64> {
        if x.n() != self.n {
            return Err(Error::InvalidArgument(format!(
                "configuration has {} spins, instance has {}",
                x.n(),
                self.n
            )));
        }
        if flip_site >= self.n {
            return Err(Error::InvalidArgument(format!(
                "flip site {flip_site} out of range for n={}",
                self.n
            )));
        }
        let spins = x.spins();
        let mut field = 0.0;
        for k in 0..self.n {
            if k != flip_site {
                field += self.coupling(flip_site, k) * f64::from(spins[k]);
            }
        }
        Ok(2.0 * f64::from(spins[flip_site]) * field)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = InstanceFile {
            n: self.n,
            seed: self.seed,
            couplings: self.coupling_triples(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        let expected = file.n * file.n.saturating_sub(1) / 2;
        if file.couplings.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "instance file lists {} couplings, expected {expected} for n={}",
                file.couplings.len(),
                file.n
            )));
        }
        let mut flat = vec![f64::NAN; expected];
        for &(j, k, val) in &file.couplings {
            if j >= k || k >= file.n {
                return Err(Error::InvalidArgument(format!(
                    "coupling pair ({j}, {k}) is not an ordered pair below n={}",
                    file.n
                )));
            }
            flat[j * file.n - j * (j + 1) / 2 + (k - j - 1)] = val;
        }
        Self::from_couplings(file.n, flat, file.seed)
    }
}

/// A Boltzmann sampling target `mu(x) = exp(-beta E(x)) / Z`.
#[derive(Debug, Clone)]
pub struct BoltzmannTarget {
    instance: SpinGlassInstance,
    beta: f64,
}

impl BoltzmannTarget {
    pub fn new(instance: SpinGlassInstance, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be finite and >= 0, got {beta}"
            )));
        }
        Ok(Self { instance, beta })
    }

    pub fn instance(&self) -> &SpinGlassInstance {
        &self.instance
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.instance.n()
    }

    /// `log mu(x') - log mu(x) = -beta (E(x') - E(x))`; no partition
    /// function needed.
    pub fn log_weight_diff(&self, energy_from: f64, energy_to: f64) -> f64 {
        -self.beta * (energy_to - energy_from)
    }
}

/// Exact enumeration output for a [`BoltzmannTarget`].
#[derive(Debug, Clone)]
pub struct ExactBoltzmann {
    /// Partition function. May overflow to infinity at extreme `beta * E`;
    /// `log_z` is always finite.
    pub z: f64,
    pub log_z: f64,
    /// `probabilities[i] = exp(-beta E_i) / Z` for every basis index `i`.
    pub probabilities: Vec<f64>,
}

/// Enumerate the Boltzmann distribution with the default cap.
pub fn exact_partition(target: &BoltzmannTarget) -> Result<ExactBoltzmann> {
    exact_partition_capped(target, DEFAULT_ENUMERATION_CAP)
}

/// Enumerate the Boltzmann distribution for all `2^n` states.
///
/// Boltzmann factors are computed as `exp(-beta (E - E_min))` and
/// normalized afterward, so low-temperature targets do not overflow.
pub fn exact_partition_capped(target: &BoltzmannTarget, cap: usize) -> Result<ExactBoltzmann> {
    let n = target.n();
    if n > cap {
        return Err(Error::ResourceLimit(format!(
            "exact enumeration needs 2^{n} states but the cap is 2^{cap}"
        )));
    }
    let size = 1usize << n;
    let instance = target.instance();
    let mut energies = Vec::with_capacity(size);
    let mut e_min = f64::INFINITY;
    for idx in 0..size {
        let e = instance.energy_of_index(idx as u64);
        e_min = e_min.min(e);
        energies.push(e);
    }
    let beta = target.beta();
    let mut weights: Vec<f64> = energies
        .iter()
        .map(|&e| (-beta * (e - e_min)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let log_z = -beta * e_min + total.ln();
    Ok(ExactBoltzmann {
        z: log_z.exp(),
        log_z,
        probabilities: weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent energy oracle: naive double loop over the coupling map.
    fn energy_oracle(instance: &SpinGlassInstance, spins: &[i8]) -> f64 {
        let n = spins.len();
        let mut total = 0.0;
        for j in 0..n {
            for k in 0..n {
                if j < k {
                    total += instance.coupling(j, k) * f64::from(spins[j]) * f64::from(spins[k]);
                }
            }
        }
        -total
    }

    #[test]
    fn index_and_spins_stay_consistent() {
        let x = SpinConfiguration::from_index(4, 0b0101).unwrap();
        assert_eq!(x.spins(), &[-1, 1, -1, 1]);
        assert_eq!(x.bits(), vec![1, 0, 1, 0]);
        let y = SpinConfiguration::from_spins(vec![-1, 1, -1, 1]).unwrap();
        assert_eq!(y.index(), 0b0101);
        let flipped = x.flipped(1).unwrap();
        assert_eq!(flipped.index(), 0b0111);
        assert_eq!(flipped.spins(), &[-1, -1, -1, 1]);
    }

    #[test]
    fn bad_configurations_are_rejected() {
        assert!(SpinConfiguration::from_spins(vec![1, 0, -1]).is_err());
        assert!(SpinConfiguration::from_spins(vec![]).is_err());
        assert!(SpinConfiguration::from_index(2, 4).is_err());
    }

    #[test]
    fn single_spin_instance_has_no_couplings() {
        let instance = SpinGlassInstance::generate(1, 99).unwrap();
        assert_eq!(instance.coupling_triples().len(), 0);
        let x = SpinConfiguration::from_index(1, 0).unwrap();
        assert_eq!(instance.energy(&x).unwrap(), 0.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = SpinGlassInstance::generate(12, 7).unwrap();
        let b = SpinGlassInstance::generate(12, 7).unwrap();
        assert_eq!(a, b);
        let c = SpinGlassInstance::generate(12, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_spins_is_invalid() {
        assert!(matches!(
            SpinGlassInstance::generate(0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn couplings_look_standard_normal() {
        // 10^4 instances at n=4 give 6e4 coupling draws; test the sample
        // mean and variance against N(0, 1) at five sigma.
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for s in 0..10_000u64 {
            let inst = SpinGlassInstance::generate(4, s).unwrap();
            for (_, _, j) in inst.coupling_triples() {
                sum += j;
                sum_sq += j * j;
                count += 1;
            }
        }
        let m = count as f64;
        let mean = sum / m;
        let var = sum_sq / m - mean * mean;
        // mean estimator sd = 1/sqrt(m); variance estimator sd ~ sqrt(2/m)
        assert!(mean.abs() < 5.0 / m.sqrt(), "mean {mean} too far from 0");
        assert!(
            (var - 1.0).abs() < 5.0 * (2.0 / m).sqrt(),
            "variance {var} too far from 1"
        );
    }

    #[test]
    fn two_spin_energies() {
        let inst = SpinGlassInstance::from_couplings(2, vec![1.0], 0).unwrap();
        let up_up = SpinConfiguration::from_spins(vec![1, 1]).unwrap();
        let up_down = SpinConfiguration::from_spins(vec![1, -1]).unwrap();
        assert_eq!(inst.energy(&up_up).unwrap(), -1.0);
        assert_eq!(inst.energy(&up_down).unwrap(), 1.0);
    }

    #[test]
    fn energy_matches_oracle_on_all_states() {
        let inst = SpinGlassInstance::generate(6, 31).unwrap();
        for idx in 0..64u64 {
            let x = SpinConfiguration::from_index(6, idx).unwrap();
            let expected = energy_oracle(&inst, x.spins());
            let got = inst.energy(&x).unwrap();
            assert!(
                (got - expected).abs() < 1e-12,
                "state {idx}: {got} vs oracle {expected}"
            );
        }
    }

    #[test]
    fn energy_rejects_length_mismatch() {
        let inst = SpinGlassInstance::generate(4, 0).unwrap();
        let x = SpinConfiguration::from_index(3, 1).unwrap();
        assert!(inst.energy(&x).is_err());
    }

    #[test]
    fn delta_of_double_flip_cancels() {
        let inst = SpinGlassInstance::generate(5, 3).unwrap();
        let x = SpinConfiguration::from_index(5, 0b10110).unwrap();
        for j in 0..5 {
            let d1 = inst.energy_delta(&x, j).unwrap();
            let y = x.flipped(j).unwrap();
            let d2 = inst.energy_delta(&y, j).unwrap();
            assert!((d1 + d2).abs() < 1e-12);
        }
    }

    #[test]
    fn two_spin_delta() {
        let inst = SpinGlassInstance::from_couplings(2, vec![1.0], 0).unwrap();
        let x = SpinConfiguration::from_spins(vec![1, 1]).unwrap();
        assert_eq!(inst.energy_delta(&x, 0).unwrap(), 2.0);
    }

    #[test]
    fn delta_matches_full_energy_difference() {
        let inst = SpinGlassInstance::generate(8, 17).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..100 {
            let x = SpinConfiguration::random(8, &mut rng).unwrap();
            let e = inst.energy(&x).unwrap();
            for site in 0..8 {
                let delta = inst.energy_delta(&x, site).unwrap();
                let e_flip = inst.energy(&x.flipped(site).unwrap()).unwrap();
                assert!(
                    (delta - (e_flip - e)).abs() < 1e-12,
                    "site {site}: delta {delta} vs {}",
                    e_flip - e
                );
            }
        }
    }

    #[test]
    fn delta_rejects_out_of_range_site() {
        let inst = SpinGlassInstance::generate(4, 0).unwrap();
        let x = SpinConfiguration::from_index(4, 0).unwrap();
        assert!(inst.energy_delta(&x, 4).is_err());
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let inst = SpinGlassInstance::generate(5, 2).unwrap();
        let target = BoltzmannTarget::new(inst, 0.0).unwrap();
        let exact = exact_partition(&target).unwrap();
        for &p in &exact.probabilities {
            assert_eq!(p, 1.0 / 32.0);
        }
    }

    #[test]
    fn single_spin_is_a_fair_coin() {
        let inst = SpinGlassInstance::generate(1, 0).unwrap();
        let target = BoltzmannTarget::new(inst, 3.5).unwrap();
        let exact = exact_partition(&target).unwrap();
        assert_eq!(exact.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn partition_function_matches_direct_sum() {
        // Oracle: plain sum of Boltzmann factors with no stabilizing shift.
        let inst = SpinGlassInstance::generate(4, 11).unwrap();
        let target = BoltzmannTarget::new(inst.clone(), 2.0).unwrap();
        let exact = exact_partition(&target).unwrap();
        let mut z_oracle = 0.0;
        for idx in 0..16u64 {
            let x = SpinConfiguration::from_index(4, idx).unwrap();
            z_oracle += (-2.0 * inst.energy(&x).unwrap()).exp();
        }
        assert!(
            ((exact.z - z_oracle) / z_oracle).abs() < 1e-12,
            "Z {} vs oracle {z_oracle}",
            exact.z
        );
        for (idx, &p) in exact.probabilities.iter().enumerate() {
            let e = inst.energy_of_index(idx as u64);
            let expected = (-2.0 * e).exp() / z_oracle;
            assert!((p - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn probabilities_sum_to_one_and_stay_positive() {
        for beta in [0.5, 2.0, 10.0] {
            let inst = SpinGlassInstance::generate(8, 23).unwrap();
            let target = BoltzmannTarget::new(inst, beta).unwrap();
            let exact = exact_partition(&target).unwrap();
            let total: f64 = exact.probabilities.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "beta {beta}: sum {total}");
            assert!(exact.probabilities.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let inst = SpinGlassInstance::generate(12, 0).unwrap();
        let target = BoltzmannTarget::new(inst, 1.0).unwrap();
        assert!(matches!(
            exact_partition_capped(&target, 10),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn negative_beta_is_invalid() {
        let inst = SpinGlassInstance::generate(2, 0).unwrap();
        assert!(BoltzmannTarget::new(inst, -1.0).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let inst = SpinGlassInstance::generate(7, 123).unwrap();
        let text = inst.to_json().unwrap();
        let back = SpinGlassInstance::from_json(&text).unwrap();
        assert_eq!(inst.n(), back.n());
        assert_eq!(inst.seed(), back.seed());
        for (a, b) in inst
            .coupling_triples()
            .iter()
            .zip(back.coupling_triples().iter())
        {
            assert_eq!(a.2.to_bits(), b.2.to_bits());
        }
    }

    #[test]
    fn json_rejects_malformed_pairs() {
        let text = r#"{"n": 2, "seed": 0, "couplings": [[1, 0, 0.5]]}"#;
        assert!(SpinGlassInstance::from_json(text).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn global_flip_preserves_energy(seed in 0u64..1000, idx in 0u64..256) {
            let inst = SpinGlassInstance::generate(8, seed).unwrap();
            let x = SpinConfiguration::from_index(8, idx).unwrap();
            let e = inst.energy(&x).unwrap();
            let e_flip = inst.energy(&x.global_flip()).unwrap();
            prop_assert!((e - e_flip).abs() < 1e-12);
        }

        #[test]
        fn boltzmann_is_global_flip_invariant(seed in 0u64..200) {
            let inst = SpinGlassInstance::generate(6, seed).unwrap();
            let target = BoltzmannTarget::new(inst, 2.0).unwrap();
            let exact = exact_partition(&target).unwrap();
            for idx in 0..64usize {
                let partner = idx ^ 0b111111;
                prop_assert!(
                    (exact.probabilities[idx] - exact.probabilities[partner]).abs() < 1e-12
                );
            }
        }

        #[test]
        fn delta_consistency(seed in 0u64..200, idx in 0u64..64, site in 0usize..6) {
            let inst = SpinGlassInstance::generate(6, seed).unwrap();
            let x = SpinConfiguration::from_index(6, idx).unwrap();
            let delta = inst.energy_delta(&x, site).unwrap();
            let direct = inst.energy(&x.flipped(site).unwrap()).unwrap()
                - inst.energy(&x).unwrap();
            prop_assert!((delta - direct).abs() < 1e-12);
        }
    }
}
