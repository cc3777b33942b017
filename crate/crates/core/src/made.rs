//! Masked autoregressive distribution estimator over fixed-length bit
//! vectors: mask construction, cross-entropy training, exact
//! log-probabilities, and ancestral sampling.
//!
//! Binary masks on the weight matrices enforce the autoregressive
//! factorization `p(x) = prod_d p(x_{o_d} | x_{o_<d})`, so the model is an
//! explicit, normalized distribution: evaluation and sampling are both
//! polynomial in the input dimension. The ordering is fixed to the
//! identity permutation and the connectivity degrees are assigned
//! round-robin, so one architecture always denotes one distribution.
//!
//! Bit convention: bit value `0` encodes spin `+1` (see [`crate::spinglass`]).

#![allow(clippy::needless_range_loop)] // indexed loops mirror the matrix math

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive, rng_from_seed, SeededRng};
use crate::spinglass::SpinConfiguration;

/// Dense row-major matrix; small enough networks that hand-rolled loops
/// beat pulling in a tensor library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Network shape plus the fixed ordering and connectivity degrees the
/// masks are derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadeArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// `ordering[d]` is the 1-based position of variable `d` in the
    /// autoregressive order.
    pub ordering: Vec<usize>,
    /// Per hidden layer, per unit: degree `m(k)` in `1..=input_dim-1`.
    pub degrees: Vec<Vec<usize>>,
}

impl MadeArchitecture {
    /// Identity ordering, round-robin degrees `m(k) = ((k-1) mod (D-1)) + 1`.
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_width: usize) -> Result<Self> {
        if !(2..=crate::spinglass::MAX_SPINS).contains(&input_dim) {
            return Err(Error::InvalidArgument(format!(
                "input dimension must be in 2..={}, got {input_dim}",
                crate::spinglass::MAX_SPINS
            )));
        }
        if hidden_layers == 0 || hidden_width == 0 {
            return Err(Error::InvalidArgument(
                "need at least one hidden layer and one hidden unit".to_string(),
            ));
        }
        let ordering = (1..=input_dim).collect();
        let degrees = vec![
            (0..hidden_width)
                .map(|k| k % (input_dim - 1) + 1)
                .collect::<Vec<_>>();
            hidden_layers
        ];
        Self::custom(input_dim, hidden_layers, hidden_width, ordering, degrees)
    }

    /// Explicit ordering and degrees; validates that the ordering is a
    /// permutation of `1..=D` and every degree lies in `1..=D-1`.
    pub fn custom(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        ordering: Vec<usize>,
        degrees: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if ordering.len() != input_dim {
            return Err(Error::InvalidArgument(format!(
                "ordering has {} entries, expected {input_dim}",
                ordering.len()
            )));
        }
        let mut seen = vec![false; input_dim];
        for &o in &ordering {
            if o == 0 || o > input_dim || seen[o - 1] {
                return Err(Error::InvalidArgument(format!(
                    "ordering is not a permutation of 1..={input_dim}"
                )));
            }
            seen[o - 1] = true;
        }
        if degrees.len() != hidden_layers {
            return Err(Error::InvalidArgument(format!(
                "got degree lists for {} layers, expected {hidden_layers}",
                degrees.len()
            )));
        }
        for layer in &degrees {
            if layer.len() != hidden_width {
                return Err(Error::InvalidArgument(format!(
                    "degree list has {} entries, expected {hidden_width}",
                    layer.len()
                )));
            }
            for &m in layer {
                if m == 0 || m > input_dim - 1 {
                    return Err(Error::InvalidArgument(format!(
                        "degree {m} outside 1..={}",
                        input_dim - 1
                    )));
                }
            }
        }
        Ok(Self {
            input_dim,
            hidden_layers,
            hidden_width,
            ordering,
            degrees,
        })
    }

    /// Variable indices in ancestral order (position 1 first).
    fn sampling_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.input_dim).collect();
        order.sort_by_key(|&d| self.ordering[d]);
        order
    }
}

/// Binary masks for every weight matrix, input side first, output side last.
///
/// Entry conventions (1 keeps the connection): input-to-hidden
/// `m(k) >= o(d)`, hidden-to-hidden `m(k) >= m(k')`, hidden-to-output
/// `o(d) > m(k)`.
pub fn build_masks(arch: &MadeArchitecture) -> Vec<Matrix> {
    let d = arch.input_dim;
    let h = arch.hidden_width;
    let mut masks = Vec::with_capacity(arch.hidden_layers + 1);

    let mut input_mask = Matrix::zeros(h, d);
    for k in 0..h {
        for v in 0..d {
            if arch.degrees[0][k] >= arch.ordering[v] {
                input_mask.set(k, v, 1.0);
            }
        }
    }
    masks.push(input_mask);

    for layer in 1..arch.hidden_layers {
        let mut mask = Matrix::zeros(h, h);
        for k in 0..h {
            for k_prev in 0..h {
                if arch.degrees[layer][k] >= arch.degrees[layer - 1][k_prev] {
                    mask.set(k, k_prev, 1.0);
                }
            }
        }
        masks.push(mask);
    }

    let last = arch.hidden_layers - 1;
    let mut output_mask = Matrix::zeros(d, h);
    for v in 0..d {
        for k in 0..h {
            if arch.ordering[v] > arch.degrees[last][k] {
                output_mask.set(v, k, 1.0);
            }
        }
    }
    masks.push(output_mask);
    masks
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// The model: masked weights, biases, and the fixed masks.
///
/// Invariant: every weight entry whose mask is zero is exactly zero, so
/// the forward pass can skip the mask multiply; gradients are masked
/// before each update to preserve this.
#[derive(Debug, Clone)]
pub struct MadeModel {
    arch: MadeArchitecture,
    /// Hidden-layer weights then the output weights.
    weights: Vec<Matrix>,
    /// Hidden-layer biases then the output biases.
    biases: Vec<Vec<f64>>,
    masks: Vec<Matrix>,
    init_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    architecture: MadeArchitecture,
    init_seed: u64,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl MadeModel {
    /// Glorot-uniform initialization (masked afterward), zero biases.
    /// Deterministic for a given seed.
    pub fn new(arch: MadeArchitecture, seed: u64) -> Self {
        let masks = build_masks(&arch);
        let mut rng = rng_from_seed(derive(seed, "made-init", 0));
        let mut weights = Vec::with_capacity(masks.len());
        let mut biases = Vec::with_capacity(masks.len());
        for mask in &masks {
            let bound = (6.0 / (mask.rows + mask.cols) as f64).sqrt();
            let mut w = Matrix::zeros(mask.rows, mask.cols);
            for i in 0..w.data.len() {
                w.data[i] = rng.random_range(-bound..bound) * mask.data[i];
            }
            weights.push(w);
            biases.push(vec![0.0; mask.rows]);
        }
        Self {
            arch,
            weights,
            biases,
            masks,
            init_seed: seed,
        }
    }

    /// All-zero weights and biases: the uniform distribution over bits.
    pub fn zeroed(arch: MadeArchitecture) -> Self {
        let masks = build_masks(&arch);
        let weights = masks
            .iter()
            .map(|m| Matrix::zeros(m.rows, m.cols))
            .collect();
        let biases = masks.iter().map(|m| vec![0.0; m.rows]).collect();
        Self {
            arch,
            weights,
            biases,
            masks,
            init_seed: 0,
        }
    }

    pub fn arch(&self) -> &MadeArchitecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn masks(&self) -> &[Matrix] {
        &self.masks
    }

    /// Forward pass on real-valued inputs; returns the output logits and
    /// every intermediate activation (for backprop).
    fn forward_trace(&self, x: &[f64]) -> ForwardTrace {
        let layers = self.arch.hidden_layers;
        let mut pre_acts = Vec::with_capacity(layers);
        let mut hiddens = Vec::with_capacity(layers);
        let mut input: &[f64] = x;
        for l in 0..layers {
            let w = &self.weights[l];
            let mut pre = self.biases[l].clone();
            for r in 0..w.rows {
                let row = &w.data[r * w.cols..(r + 1) * w.cols];
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(input.iter()) {
                    acc += wv * xv;
                }
                pre[r] += acc;
            }
            let h: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
            pre_acts.push(pre);
            hiddens.push(h);
            input = hiddens.last().unwrap();
        }
        let w_out = &self.weights[layers];
        let mut logits = self.biases[layers].clone();
        for r in 0..w_out.rows {
            let row = &w_out.data[r * w_out.cols..(r + 1) * w_out.cols];
            let mut acc = 0.0;
            for (wv, hv) in row.iter().zip(input.iter()) {
                acc += wv * hv;
            }
            logits[r] += acc;
        }
        ForwardTrace {
            pre_acts,
            hiddens,
            logits,
        }
    }

    /// Output logits for a real-valued input vector. Exposed so tests can
    /// probe the network with perturbed inputs.
    pub fn logits_real(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.arch.input_dim {
            return Err(Error::InvalidArgument(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(self.forward_trace(x).logits)
    }

    /// The `D` conditionals `p(x_d = 1 | earlier bits of x)`, each strictly
    /// inside `(0, 1)`.
    pub fn forward(&self, bits: &[u8]) -> Result<Vec<f64>> {
        let x = bits_to_reals(bits, self.arch.input_dim)?;
        Ok(self
            .forward_trace(&x)
            .logits
            .iter()
            .map(|&a| sigmoid(a))
            .collect())
    }

    /// Exact log-probability of a bit vector, computed from logits in the
    /// numerically stable softplus form.
    pub fn log_prob(&self, bits: &[u8]) -> Result<f64> {
        let x = bits_to_reals(bits, self.arch.input_dim)?;
        let logits = self.forward_trace(&x).logits;
        Ok(log_prob_from_logits(&logits, &x))
    }

    /// Log-probability of a packed bit vector (bit `j` of the index is
    /// variable `j`).
    pub fn log_prob_packed(&self, packed: u64) -> f64 {
        let x: Vec<f64> = (0..self.arch.input_dim)
            .map(|j| (packed >> j & 1) as f64)
            .collect();
        let logits = self.forward_trace(&x).logits;
        log_prob_from_logits(&logits, &x)
    }

    /// Ancestral sampling in the model ordering. Every returned log-prob
    /// equals `log_prob` of the returned bits exactly.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<GnsSample>> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "sample count must be >= 1".to_string(),
            ));
        }
        let mut rng = rng_from_seed(seed);
        Ok((0..count).map(|_| self.sample_one(&mut rng)).collect())
    }

    /// Draw one sample from a caller-owned stream.
    pub fn sample_one(&self, rng: &mut SeededRng) -> GnsSample {
        let d = self.arch.input_dim;
        let mut x = vec![0.0f64; d];
        let mut packed = 0u64;
        for &var in &self.arch.sampling_order() {
            let logits = self.forward_trace(&x).logits;
            let p_one = sigmoid(logits[var]);
            if rng.random::<f64>() < p_one {
                x[var] = 1.0;
                packed |= 1 << var;
            }
        }
        let logits = self.forward_trace(&x).logits;
        GnsSample {
            bits: packed,
            log_prob: log_prob_from_logits(&logits, &x),
        }
    }

    /// Enumerate `p(x)` for every packed bit vector. Guarded by `cap` like
    /// the spin-glass enumerations.
    pub fn distribution_table(&self, cap: usize) -> Result<Vec<f64>> {
        let d = self.arch.input_dim;
        if d > cap {
            return Err(Error::ResourceLimit(format!(
                "distribution table needs 2^{d} entries but the cap is 2^{cap}"
            )));
        }
        Ok((0..1u64 << d)
            .map(|idx| self.log_prob_packed(idx).exp())
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            architecture: self.arch.clone(),
            init_seed: self.init_seed,
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        let arch = MadeArchitecture::custom(
            file.architecture.input_dim,
            file.architecture.hidden_layers,
            file.architecture.hidden_width,
            file.architecture.ordering.clone(),
            file.architecture.degrees.clone(),
        )?;
        let masks = build_masks(&arch);
        if file.weights.len() != masks.len() || file.biases.len() != masks.len() {
            return Err(Error::InvalidArgument(
                "checkpoint layer count does not match the architecture".to_string(),
            ));
        }
        for (w, mask) in file.weights.iter().zip(masks.iter()) {
            if w.rows != mask.rows || w.cols != mask.cols || w.data.len() != mask.data.len() {
                return Err(Error::InvalidArgument(
                    "checkpoint weight shape does not match the architecture".to_string(),
                ));
            }
            for (wv, mv) in w.data.iter().zip(mask.data.iter()) {
                if *mv == 0.0 && *wv != 0.0 {
                    return Err(Error::InvalidArgument(
                        "checkpoint has nonzero weights under the mask".to_string(),
                    ));
                }
            }
        }
        for (b, mask) in file.biases.iter().zip(masks.iter()) {
            if b.len() != mask.rows {
                return Err(Error::InvalidArgument(
                    "checkpoint bias shape does not match the architecture".to_string(),
                ));
            }
        }
        Ok(Self {
            arch,
            weights: file.weights,
            biases: file.biases,
            masks,
            init_seed: file.init_seed,
        })
    }
}

struct ForwardTrace {
    pre_acts: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

/// One draw from the model: packed bits and their exact log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnsSample {
    pub bits: u64,
    pub log_prob: f64,
}

fn bits_to_reals(bits: &[u8], dim: usize) -> Result<Vec<f64>> {
    if bits.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "input has {} bits, model expects {dim}",
            bits.len()
        )));
    }
    bits.iter()
        .map(|&b| match b {
            0 => Ok(0.0),
            1 => Ok(1.0),
            other => Err(Error::InvalidArgument(format!(
                "input entries must be 0 or 1, found {other}"
            ))),
        })
        .collect()
}

/// Cross-entropy of the logits against target bits, summed over variables:
/// `sum_d [x_d softplus(-a_d) + (1 - x_d) softplus(a_d)]`, negated into a
/// log-likelihood.
fn log_prob_from_logits(logits: &[f64], x: &[f64]) -> f64 {
    logits
        .iter()
        .zip(x.iter())
        .map(|(&a, &xv)| {
            if xv == 1.0 {
                -softplus(-a)
            } else {
                -softplus(a)
            }
        })
        .sum()
}

/// A set of fixed-length bit rows, packed one row per `u64`.
#[derive(Debug, Clone, PartialEq)]
pub struct BitDataset {
    dim: usize,
    rows: Vec<u64>,
}

impl BitDataset {
    pub fn from_rows(dim: usize, rows: Vec<u64>) -> Result<Self> {
        if dim == 0 || dim > crate::spinglass::MAX_SPINS {
            return Err(Error::InvalidArgument(format!(
                "bit dimension must be in 1..={}, got {dim}",
                crate::spinglass::MAX_SPINS
            )));
        }
        if dim < 64 {
            if let Some(bad) = rows.iter().find(|&&r| r >> dim != 0) {
                return Err(Error::InvalidArgument(format!(
                    "row {bad:#x} has bits beyond dimension {dim}"
                )));
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn from_configurations(configs: &[SpinConfiguration]) -> Result<Self> {
        let Some(first) = configs.first() else {
            return Err(Error::InvalidArgument("dataset is empty".to_string()));
        };
        let dim = first.n();
        if configs.iter().any(|c| c.n() != dim) {
            return Err(Error::InvalidArgument(
                "configurations have mixed lengths".to_string(),
            ));
        }
        Self::from_rows(dim, configs.iter().map(|c| c.index()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    pub fn bits(&self, row: usize) -> Vec<u8> {
        (0..self.dim)
            .map(|j| (self.rows[row] >> j & 1) as u8)
            .collect()
    }

    /// One bitstring per line, character `j` is bit `j`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * (self.dim + 1));
        for &row in &self.rows {
            for j in 0..self.dim {
                out.push(if row >> j & 1 == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let d = *dim.get_or_insert(line.len());
            if line.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "line {}: length {} differs from {d}",
                    lineno + 1,
                    line.len()
                )));
            }
            let mut packed = 0u64;
            for (j, ch) in line.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => packed |= 1 << j,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "line {}: unexpected character {other:?}",
                            lineno + 1
                        )))
                    }
                }
            }
            rows.push(packed);
        }
        match dim {
            Some(d) => Self::from_rows(d, rows),
            None => Err(Error::InvalidArgument("dataset file is empty".to_string())),
        }
    }
}

/// Training hyperparameters (adaptive-moment gradient descent).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the shuffled dataset held out as the test split (taken
    /// from the end).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 8,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch size and epoch count must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::InvalidArgument(format!(
                "test fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Mean losses after each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
}

/// Trained model plus its loss curves.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: MadeModel,
    pub curve: Vec<EpochStats>,
    pub train_size: usize,
    pub test_size: usize,
    /// Set when the final epoch's mean train loss exceeds the first
    /// epoch's; a soft signal, not an error.
    pub monotone_warning: bool,
}

/// Write loss curves as `epoch,train_loss,test_loss` CSV.
pub fn write_loss_csv<W: Write>(curve: &[EpochStats], out: &mut W) -> Result<()> {
    writeln!(out, "epoch,train_loss,test_loss")?;
    for row in curve {
        match row.test_loss {
            Some(t) => writeln!(out, "{},{},{}", row.epoch, row.train_loss, t)?,
            None => writeln!(out, "{},{},", row.epoch, row.train_loss)?,
        }
    }
    Ok(())
}

/// Per-parameter gradients in the same shapes as the model parameters.
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Mean cross-entropy loss over a batch of packed rows and its gradients,
/// masked so updates never touch pruned connections.
pub fn loss_and_gradients(model: &MadeModel, rows: &[u64]) -> (f64, Gradients) {
    let layers = model.arch.hidden_layers;
    let mut grad_w: Vec<Matrix> = model
        .masks
        .iter()
        .map(|m| Matrix::zeros(m.rows, m.cols))
        .collect();
    let mut grad_b: Vec<Vec<f64>> = model.masks.iter().map(|m| vec![0.0; m.rows]).collect();
    let mut total_loss = 0.0;

    for &row in rows {
        let x: Vec<f64> = (0..model.arch.input_dim)
            .map(|j| (row >> j & 1) as f64)
            .collect();
        let trace = model.forward_trace(&x);
        total_loss -= log_prob_from_logits(&trace.logits, &x);

        // output layer: d(loss)/d(logit) = sigmoid(logit) - x
        let mut delta: Vec<f64> = trace
            .logits
            .iter()
            .zip(x.iter())
            .map(|(&a, &xv)| sigmoid(a) - xv)
            .collect();

        // output weights
        {
            let g = &mut grad_w[layers];
            let h = &trace.hiddens[layers - 1];
            for r in 0..g.rows {
                let dr = delta[r];
                for c in 0..g.cols {
                    g.data[r * g.cols + c] += dr * h[c];
                }
            }
            for (gb, &dr) in grad_b[layers].iter_mut().zip(delta.iter()) {
                *gb += dr;
            }
        }

        // back through hidden layers
        for l in (0..layers).rev() {
            let w_up = &model.weights[l + 1];
            let mut dh = vec![0.0; model.arch.hidden_width];
            for r in 0..w_up.rows {
                let dr = delta[r];
                for c in 0..w_up.cols {
                    dh[c] += w_up.data[r * w_up.cols + c] * dr;
                }
            }
            // ReLU gate
            for (dv, &pre) in dh.iter_mut().zip(trace.pre_acts[l].iter()) {
                if pre <= 0.0 {
                    *dv = 0.0;
                }
            }
            let below: &[f64] = if l == 0 { &x } else { &trace.hiddens[l - 1] };
            let g = &mut grad_w[l];
            for r in 0..g.rows {
                let dr = dh[r];
                if dr != 0.0 {
                    for c in 0..g.cols {
                        g.data[r * g.cols + c] += dr * below[c];
                    }
                }
            }
            for (gb, &dr) in grad_b[l].iter_mut().zip(dh.iter()) {
                *gb += dr;
            }
            delta = dh;
        }
    }

    let scale = 1.0 / rows.len() as f64;
    for (g, mask) in grad_w.iter_mut().zip(model.masks.iter()) {
        for (gv, mv) in g.data.iter_mut().zip(mask.data.iter()) {
            *gv *= scale * mv;
        }
    }
    for g in &mut grad_b {
        for gv in g.iter_mut() {
            *gv *= scale;
        }
    }
    (
        total_loss * scale,
        Gradients {
            weights: grad_w,
            biases: grad_b,
        },
    )
}

fn mean_loss(model: &MadeModel, rows: &[u64]) -> f64 {
    let total: f64 = rows.iter().map(|&row| -model.log_prob_packed(row)).sum();
    total / rows.len() as f64
}

struct AdamState {
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: usize,
}

impl AdamState {
    fn new(model: &MadeModel) -> Self {
        Self {
            m_w: model
                .masks
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            v_w: model
                .masks
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
            m_b: model.masks.iter().map(|m| vec![0.0; m.rows]).collect(),
            v_b: model.masks.iter().map(|m| vec![0.0; m.rows]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MadeModel, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
        for l in 0..model.weights.len() {
            let w = &mut model.weights[l];
            let g = &grads.weights[l];
            let m = &mut self.m_w[l];
            let v = &mut self.v_w[l];
            for i in 0..w.data.len() {
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
                w.data[i] -= lr_t * m.data[i] / (v.data[i].sqrt() + cfg.epsilon);
            }
            let b = &mut model.biases[l];
            let gb = &grads.biases[l];
            let mb = &mut self.m_b[l];
            let vb = &mut self.v_b[l];
            for i in 0..b.len() {
                mb[i] = cfg.beta1 * mb[i] + (1.0 - cfg.beta1) * gb[i];
                vb[i] = cfg.beta2 * vb[i] + (1.0 - cfg.beta2) * gb[i] * gb[i];
                b[i] -= lr_t * mb[i] / (vb[i].sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Train by minibatch gradient descent on the cross-entropy loss.
///
/// The dataset is shuffled once for the train/test split (test = last
/// `test_fraction`), then the training rows are reshuffled every epoch.
/// Deterministic for a given config: identical seeds give bit-identical
/// weights.
pub fn train(model: MadeModel, dataset: &BitDataset, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument(
            "training dataset is empty".to_string(),
        ));
    }
    if dataset.dim() != model.arch.input_dim {
        return Err(Error::InvalidArgument(format!(
            "dataset dimension {} does not match model dimension {}",
            dataset.dim(),
            model.arch.input_dim
        )));
    }

    let mut split_rng = rng_from_seed(derive(config.seed, "made-split", 0));
    let mut rows: Vec<u64> = dataset.rows().to_vec();
    rows.shuffle(&mut split_rng);
    let test_len = ((rows.len() as f64) * config.test_fraction).round() as usize;
    let test_len = test_len.min(rows.len().saturating_sub(1));
    let split_at = rows.len() - test_len;
    let (train_rows, test_rows) = rows.split_at(split_at);
    let mut train_rows = train_rows.to_vec();

    let mut model = model;
    let mut adam = AdamState::new(&model);
    let mut shuffle_rng = rng_from_seed(derive(config.seed, "made-shuffle", 0));
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        train_rows.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in train_rows.chunks(config.batch_size) {
            let (loss, grads) = loss_and_gradients(&model, batch);
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model, &grads, config);
        }
        let train_loss = epoch_loss / train_rows.len() as f64;
        let test_loss = if test_rows.is_empty() {
            None
        } else {
            Some(mean_loss(&model, test_rows))
        };
        curve.push(EpochStats {
            epoch,
            train_loss,
            test_loss,
        });
    }

    let monotone_warning = match (curve.first(), curve.last()) {
        (Some(first), Some(last)) => last.train_loss > first.train_loss,
        _ => false,
    };
    Ok(TrainResult {
        model,
        curve,
        train_size: train_rows.len(),
        test_size: test_rows.len(),
        monotone_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_arch(d: usize) -> MadeArchitecture {
        MadeArchitecture::new(d, 2, 2 * d).unwrap()
    }

    /// Independent dense oracle: explicit mask-times-weight matrix products
    /// in the plainest possible form.
    fn forward_oracle(model: &MadeModel, bits: &[u8]) -> Vec<f64> {
        let arch = model.arch();
        let masks = build_masks(arch);
        let mut activ: Vec<f64> = bits.iter().map(|&b| f64::from(b)).collect();
        for l in 0..arch.hidden_layers {
            let w = &model.weights()[l];
            let mask = &masks[l];
            let mut next = vec![0.0; arch.hidden_width];
            for (r, out) in next.iter_mut().enumerate() {
                let mut acc = model.biases()[l][r];
                for (c, &a) in activ.iter().enumerate() {
                    acc += mask.get(r, c) * w.get(r, c) * a;
                }
                *out = if acc > 0.0 { acc } else { 0.0 };
            }
            activ = next;
        }
        let w = &model.weights()[arch.hidden_layers];
        let mask = &masks[arch.hidden_layers];
        (0..arch.input_dim)
            .map(|r| {
                let mut acc = model.biases()[arch.hidden_layers][r];
                for (c, &a) in activ.iter().enumerate() {
                    acc += mask.get(r, c) * w.get(r, c) * a;
                }
                1.0 / (1.0 + (-acc).exp())
            })
            .collect()
    }

    #[test]
    fn smallest_mask_case() {
        let arch = MadeArchitecture::custom(2, 1, 1, vec![1, 2], vec![vec![1]]).unwrap();
        let masks = build_masks(&arch);
        // input mask: the single unit (m = 1) sees only variable 1
        assert_eq!(masks[0].data, vec![1.0, 0.0]);
        // output mask: only y_2 (o = 2 > m = 1) receives the unit
        assert_eq!(masks[1].data, vec![0.0, 1.0]);
    }

    #[test]
    fn first_variable_output_is_disconnected() {
        // reachability product over mask matrices must leave row 1 empty
        let arch = small_arch(6);
        let masks = build_masks(&arch);
        let mut reach = masks[0].clone();
        for mask in &masks[1..] {
            let mut next = Matrix::zeros(mask.rows, reach.cols);
            for r in 0..mask.rows {
                for mid in 0..mask.cols {
                    if mask.get(r, mid) != 0.0 {
                        for c in 0..reach.cols {
                            if reach.get(mid, c) != 0.0 {
                                next.set(r, c, 1.0);
                            }
                        }
                    }
                }
            }
            reach = next;
        }
        let first = arch.ordering.iter().position(|&o| o == 1).unwrap();
        for c in 0..arch.input_dim {
            assert_eq!(reach.get(first, c), 0.0);
        }
    }

    #[test]
    fn degree_bounds_are_enforced() {
        assert!(MadeArchitecture::custom(3, 1, 2, vec![1, 2, 3], vec![vec![0, 1]]).is_err());
        assert!(MadeArchitecture::custom(3, 1, 2, vec![1, 2, 3], vec![vec![1, 3]]).is_err());
        assert!(MadeArchitecture::custom(3, 1, 2, vec![1, 1, 2], vec![vec![1, 2]]).is_err());
    }

    #[test]
    fn jacobian_is_autoregressively_sparse() {
        let model = MadeModel::new(small_arch(6), 11);
        let arch = model.arch();
        let x0: Vec<f64> = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let h = 1e-5;
        for e in 0..6 {
            let mut plus = x0.clone();
            plus[e] += h;
            let mut minus = x0.clone();
            minus[e] -= h;
            let yp = model.logits_real(&plus).unwrap();
            let ym = model.logits_real(&minus).unwrap();
            for d in 0..6 {
                if arch.ordering[e] >= arch.ordering[d] {
                    let deriv = (yp[d] - ym[d]) / (2.0 * h);
                    assert!(
                        deriv.abs() < 1e-9,
                        "output {d} depends on input {e}: {deriv}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_model_outputs_half_everywhere() {
        let model = MadeModel::zeroed(small_arch(5));
        let y = model.forward(&[0, 1, 0, 1, 1]).unwrap();
        for v in y {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn outputs_stay_strictly_inside_unit_interval() {
        let model = MadeModel::new(small_arch(6), 3);
        for idx in 0..64u64 {
            let bits: Vec<u8> = (0..6).map(|j| (idx >> j & 1) as u8).collect();
            for y in model.forward(&bits).unwrap() {
                assert!(y > 0.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn forward_rejects_non_binary_input() {
        let model = MadeModel::zeroed(small_arch(4));
        assert!(model.forward(&[0, 1, 2, 0]).is_err());
        assert!(model.forward(&[0, 1]).is_err());
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let model = MadeModel::new(small_arch(4), 19);
        for idx in 0..16u64 {
            let bits: Vec<u8> = (0..4).map(|j| (idx >> j & 1) as u8).collect();
            let got = model.forward(&bits).unwrap();
            let oracle = forward_oracle(&model, &bits);
            for (g, o) in got.iter().zip(oracle.iter()) {
                assert!((g - o).abs() < 1e-12, "{g} vs {o}");
            }
        }
    }

    #[test]
    fn zero_model_log_prob_is_uniform() {
        let model = MadeModel::zeroed(small_arch(7));
        let lp = model.log_prob(&[1, 0, 0, 1, 1, 0, 1]).unwrap();
        assert!((lp - (-7.0 * std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one() {
        for d in [4usize, 8, 10] {
            let model = MadeModel::new(small_arch(d), 5);
            let total: f64 = model
                .distribution_table(crate::spinglass::DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .iter()
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "D={d}: sum {total}");
        }
    }

    #[test]
    fn training_prefers_seen_states() {
        let dataset = BitDataset::from_rows(6, vec![0b101010u64; 300]).unwrap();
        let seen = 0b101010u64;
        let model = MadeModel::new(small_arch(6), 1);
        let result = train(model, &dataset, &TrainConfig::default()).unwrap();
        let lp_seen = result.model.log_prob_packed(seen);
        for unseen in [0b000000u64, 0b111111, 0b010101] {
            assert!(lp_seen > result.model.log_prob_packed(unseen));
        }
    }

    #[test]
    fn train_loss_declines_on_circuit_samples() {
        // soft invariant: with the reference hyperparameters the final
        // epoch's mean train loss does not exceed the first epoch's on a
        // circuit-sampled dataset
        let instance = crate::spinglass::SpinGlassInstance::generate(8, 606).unwrap();
        let diag = crate::qsim::build_cost_diagonal(
            &instance,
            crate::spinglass::DEFAULT_ENUMERATION_CAP,
        )
        .unwrap();
        let (angles, _) =
            crate::qsim::fixed_angles_or_ramp(5, crate::qsim::AngleTable::bundled()).unwrap();
        let state = crate::qsim::run_qaoa(&diag, &angles).unwrap();
        let samples = crate::qsim::sample_bitstrings(&state, 1250, 77).unwrap();
        let dataset = BitDataset::from_configurations(&samples).unwrap();
        let result = train(
            MadeModel::new(small_arch(8), 8),
            &dataset,
            &TrainConfig::default(),
        )
        .unwrap();
        assert!(!result.monotone_warning);
        assert!(
            result.curve.last().unwrap().train_loss <= result.curve[0].train_loss,
            "loss rose: {} -> {}",
            result.curve[0].train_loss,
            result.curve.last().unwrap().train_loss
        );
        assert_eq!(result.train_size, 1000);
        assert_eq!(result.test_size, 250);
    }

    #[test]
    fn single_bitstring_dataset_saturates() {
        let target = 0b110100u64;
        let dataset = BitDataset::from_rows(6, vec![target; 2500]).unwrap();
        let model = MadeModel::new(small_arch(6), 2);
        let result = train(model, &dataset, &TrainConfig::default()).unwrap();
        let p = result.model.log_prob_packed(target).exp();
        assert!(p > 0.99, "p(x*) = {p}");
        // still normalized afterward
        let total: f64 = result
            .model
            .distribution_table(crate::spinglass::DEFAULT_ENUMERATION_CAP)
            .unwrap()
            .iter()
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut model = MadeModel::new(small_arch(5), 23);
        // Fresh models have all-zero biases, which parks every hidden unit
        // exactly on the ReLU kink where central differences are one-sided;
        // jitter the biases so the check probes smooth territory.
        let mut rng = rng_from_seed(99);
        for layer in &mut model.biases {
            for b in layer.iter_mut() {
                *b = rng.random_range(0.1..0.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        let rows = vec![0b10110u64, 0b00101, 0b11000, 0b01111];
        let (_, grads) = loss_and_gradients(&model, &rows);
        let h = 1e-5;

        let loss_of = |m: &MadeModel| -> f64 {
            rows.iter().map(|&r| -m.log_prob_packed(r)).sum::<f64>() / rows.len() as f64
        };

        let mut checked = 0usize;
        for l in 0..model.weights().len() {
            let mask = &model.masks()[l];
            for i in (0..mask.data.len()).step_by(7) {
                if mask.data[i] == 0.0 {
                    continue;
                }
                let mut plus = model.clone();
                plus.weights[l].data[i] += h;
                let mut minus = model.clone();
                minus.weights[l].data[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.weights[l].data[i];
                let scale = an.abs().max(1e-6);
                assert!(
                    (fd - an).abs() / scale < 1e-5,
                    "layer {l} weight {i}: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
            for i in 0..model.biases()[l].len() {
                let mut plus = model.clone();
                plus.biases[l][i] += h;
                let mut minus = model.clone();
                minus.biases[l][i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.biases[l][i];
                let scale = an.abs().max(1e-6);
                assert!(
                    (fd - an).abs() / scale < 1e-5,
                    "layer {l} bias {i}: fd {fd} vs analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn training_is_deterministic() {
        let dataset =
            BitDataset::from_rows(4, (0..200u64).map(|i| i % 16).collect::<Vec<_>>()).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(MadeModel::new(small_arch(4), 9), &dataset, &cfg).unwrap();
        let b = train(MadeModel::new(small_arch(4), 9), &dataset, &cfg).unwrap();
        for (wa, wb) in a.model.weights().iter().zip(b.model.weights().iter()) {
            for (x, y) in wa.data.iter().zip(wb.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = MadeModel::zeroed(small_arch(4));
        let dataset = BitDataset::from_rows(4, vec![]).unwrap();
        assert!(matches!(
            train(model, &dataset, &TrainConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_model_samples_fair_coins() {
        let model = MadeModel::zeroed(small_arch(4));
        let count = 100_000usize;
        let samples = model.sample(count, 31).unwrap();
        for j in 0..4 {
            let ones = samples.iter().filter(|s| s.bits >> j & 1 == 1).count() as f64;
            let sigma = (count as f64 * 0.25).sqrt();
            assert!(
                (ones - count as f64 * 0.5).abs() < 5.0 * sigma,
                "bit {j}: {ones} ones"
            );
        }
    }

    #[test]
    fn sampled_log_probs_match_recomputation() {
        let model = MadeModel::new(small_arch(6), 44);
        for s in model.sample(500, 8).unwrap() {
            let lp = model.log_prob_packed(s.bits);
            assert!((lp - s.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_matches_enumerated_distribution() {
        // Train briefly so the distribution is not uniform, then compare
        // empirical frequencies to the enumerated p(x).
        let dataset = BitDataset::from_rows(
            6,
            (0..600u64)
                .map(|i| [0b000111u64, 0b111000, 0b000110][i as usize % 3])
                .collect(),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let result = train(MadeModel::new(small_arch(6), 3), &dataset, &cfg).unwrap();
        let model = result.model;
        let exact = model
            .distribution_table(crate::spinglass::DEFAULT_ENUMERATION_CAP)
            .unwrap();
        let count = 1_000_000usize;
        let mut hist = vec![0usize; 64];
        let mut rng = rng_from_seed(77);
        for _ in 0..count {
            hist[model.sample_one(&mut rng).bits as usize] += 1;
        }
        let tv: f64 = 0.5
            * hist
                .iter()
                .zip(exact.iter())
                .map(|(&c, &p)| (c as f64 / count as f64 - p).abs())
                .sum::<f64>();
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dataset =
            BitDataset::from_rows(5, (0..160u64).map(|i| i % 32).collect::<Vec<_>>()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let result = train(MadeModel::new(small_arch(5), 1), &dataset, &cfg).unwrap();
        let text = result.model.to_json().unwrap();
        let back = MadeModel::from_json(&text).unwrap();
        for (wa, wb) in result.model.weights().iter().zip(back.weights().iter()) {
            for (x, y) in wa.data.iter().zip(wb.data.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for idx in 0..32u64 {
            assert_eq!(
                result.model.log_prob_packed(idx).to_bits(),
                back.log_prob_packed(idx).to_bits()
            );
        }
    }

    #[test]
    fn dataset_text_round_trip() {
        let dataset = BitDataset::from_rows(5, vec![0b10011, 0b00000, 0b11111]).unwrap();
        let text = dataset.to_text();
        assert_eq!(text, "11001\n00000\n11111\n");
        assert_eq!(BitDataset::from_text(&text).unwrap(), dataset);
        assert!(BitDataset::from_text("01\n011\n").is_err());
        assert!(BitDataset::from_text("0x1\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn normalization_holds_for_random_models(seed in 0u64..10_000) {
            let model = MadeModel::new(small_arch(5), seed);
            let total: f64 = model
                .distribution_table(crate::spinglass::DEFAULT_ENUMERATION_CAP)
                .unwrap()
                .iter()
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-8);
        }
    }
}
