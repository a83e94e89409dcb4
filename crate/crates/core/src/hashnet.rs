//! Deep-hashing network: a rectifier feature layer (`fc1`), a sigmoid hashing
//! layer of width `K` and a softmax classification head.
//!
//! Row vectors throughout: a batch is an `N x d_in` matrix and each layer
//! computes `X W + b`. Stage-1 training minimizes
//! `alpha * E1 + beta * E2 + gamma * E3` with classical momentum SGD.
//! [`JointModel`] drops the softmax head and feeds the hashing activations
//! into an [`NndModel`].

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bch::{BinaryCode, CodeRole};
use crate::nnd::{self, llr_of, InputMode, NndDocument, NndError, NndGradients, NndModel, TrainHistory};

pub const FORMAT_VERSION: u32 = 1;
/// Probability floor applied before `ln` in the classification loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HashNetError {
    #[error("expected dimension {expected} for {what}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("label row {0} is not one-hot")]
    NotOneHot(usize),
    #[error("training data is empty")]
    EmptyData,
    #[error("loss weights must be finite and non-negative")]
    BadLossWeights,
    #[error("model document: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Nnd(#[from] NndError),
}

/// Layer sizes: input, fc1 width, hashing width `K`, classes `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_in: usize,
    pub d: usize,
    pub k: usize,
    pub m: usize,
}

impl Dims {
    /// fc1 width for a code length: 512 for K = 255, 2048 for K = 1023,
    /// otherwise the next power of two at or above `2K`.
    pub fn fc1_width_for(k: usize) -> usize {
        match k {
            255 => 512,
            1023 => 2048,
            _ => (2 * k).next_power_of_two(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.25, gamma: 0.25, lambda: 1e-4 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), HashNetError> {
        let ok = [self.alpha, self.beta, self.gamma, self.lambda].iter().all(|w| w.is_finite() && *w >= 0.0);
        ok.then_some(()).ok_or(HashNetError::BadLossWeights)
    }
}

/// Inputs and class labels for a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl TrainBatch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self, HashNetError> {
        if inputs.nrows() != labels.len() {
            return Err(HashNetError::Dimension { what: "label count", expected: inputs.nrows(), got: labels.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(HashNetError::Label { label, classes });
        }
        Ok(Self { inputs, labels, classes })
    }

    pub fn from_one_hot(inputs: Array2<f64>, one_hot: ArrayView2<f64>) -> Result<Self, HashNetError> {
        let mut labels = Vec::with_capacity(one_hot.nrows());
        for (i, row) in one_hot.outer_iter().enumerate() {
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return Err(HashNetError::NotOneHot(i));
            }
            labels.push(ones[0]);
        }
        Self::new(inputs, labels, one_hot.ncols())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn one_hot(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.len(), self.classes));
        for (i, &l) in self.labels.iter().enumerate() {
            y[[i, l]] = 1.0;
        }
        y
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        }
    }
}

/// Single-sample forward values.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub fc1: Array1<f64>,
    pub hash: Array1<f64>,
    pub probs: Array1<f64>,
}

/// Batch forward values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub inputs: Array2<f64>,
    pub pre_fc1: Array2<f64>,
    pub fc1: Array2<f64>,
    pub hash: Array2<f64>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashNetModel {
    dims: Dims,
    seed: u64,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub wh: Array2<f64>,
    pub bh: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashNetGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub wh: Array2<f64>,
    pub bh: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

impl HashNetGradients {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            w1: Array2::zeros((dims.d_in, dims.d)),
            b1: Array1::zeros(dims.d),
            wh: Array2::zeros((dims.d, dims.k)),
            bh: Array1::zeros(dims.k),
            wo: Array2::zeros((dims.k, dims.m)),
            bo: Array1::zeros(dims.m),
        }
    }

    fn parts(&self) -> [ndarray::ArrayViewD<'_, f64>; 6] {
        [
            self.w1.view().into_dyn(),
            self.b1.view().into_dyn(),
            self.wh.view().into_dyn(),
            self.bh.view().into_dyn(),
            self.wo.view().into_dyn(),
            self.bo.view().into_dyn(),
        ]
    }

    /// Flattened in the same order as [`HashNetModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|p| p.iter().copied().collect::<Vec<_>>()).collect()
    }
}

/// Uniform Xavier initialization in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..=a))
}

pub fn sigmoid(z: f64) -> f64 {
    nnd::sigmoid(z)
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

/// `E1 = (1/N) sum_i -ln p_i[label_i] + lambda * weight_sq_norm`.
pub fn loss_classification(probs: ArrayView2<f64>, labels: &[usize], lambda: f64, weight_sq_norm: f64) -> f64 {
    let n = probs.nrows() as f64;
    let ce: f64 = labels.iter().enumerate().map(|(i, &l)| -probs[[i, l]].max(PROB_EPS).ln()).sum();
    ce / n + lambda * weight_sq_norm
}

/// `E2 = -(1/K) sum_i ||v_i - 0.5 e||^2`.
pub fn loss_quantization(hash: ArrayView2<f64>) -> f64 {
    let k = hash.ncols() as f64;
    -hash.iter().map(|&v| (v - 0.5) * (v - 0.5)).sum::<f64>() / k
}

/// `E3 = sum_i (mean(v_i) - 0.5)^2`.
pub fn loss_entropy(hash: ArrayView2<f64>) -> f64 {
    hash.outer_iter().map(|row| (row.mean().unwrap_or(0.5) - 0.5).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub quantization: f64,
    pub entropy: f64,
    pub total: f64,
}

/// `alpha E1 + beta E2 + gamma E3` for a forward pass.
pub fn loss_total(fwd: &BatchForward, labels: &[usize], lw: &LossWeights, weight_sq_norm: f64) -> LossBreakdown {
    let classification = loss_classification(fwd.probs.view(), labels, lw.lambda, weight_sq_norm);
    let quantization = loss_quantization(fwd.hash.view());
    let entropy = loss_entropy(fwd.hash.view());
    LossBreakdown {
        classification,
        quantization,
        entropy,
        total: lw.alpha * classification + lw.beta * quantization + lw.gamma * entropy,
    }
}

/// Bit `i` is 1 iff `hash[i] > 0.5`.
pub fn binarize(hash: ArrayView1<f64>) -> BinaryCode {
    BinaryCode::new(hash.iter().map(|&v| v > 0.5).collect(), CodeRole::Intermediate)
}

impl HashNetModel {
    /// Xavier-initialized weights, zero biases.
    pub fn new(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = xavier(&mut rng, dims.d_in, dims.d);
        let wh = xavier(&mut rng, dims.d, dims.k);
        let wo = xavier(&mut rng, dims.k, dims.m);
        Self {
            dims,
            seed,
            w1,
            b1: Array1::zeros(dims.d),
            wh,
            bh: Array1::zeros(dims.k),
            wo,
            bo: Array1::zeros(dims.m),
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let g = HashNetGradients::zeros(dims);
        Self { dims, seed: 0, w1: g.w1, b1: g.b1, wh: g.wh, bh: g.bh, wo: g.wo, bo: g.bo }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Multiplies the hashing weights and biases by `gain`.
    pub fn scale_hash_layer(&mut self, gain: f64) {
        self.wh *= gain;
        self.bh *= gain;
    }

    /// Zeroes the softmax head so its first updates follow the current codes.
    pub fn zero_head(&mut self) {
        self.wo.fill(0.0);
        self.bo.fill(0.0);
    }

    /// Sets each hashing bias to minus the median, over classes, of the
    /// class-mean pre-activation, so every unit starts with half of the
    /// classes on each side of 0.5.
    pub fn center_hash_bias(&mut self, batch: &TrainBatch) -> Result<(), HashNetError> {
        self.check_input(batch.inputs.ncols())?;
        if batch.is_empty() {
            return Err(HashNetError::EmptyData);
        }
        let fc1 = (batch.inputs.dot(&self.w1) + &self.b1).mapv(|a| a.max(0.0));
        let pre = fc1.dot(&self.wh);
        let mut sums = Array2::<f64>::zeros((batch.classes, self.dims.k));
        let mut counts = vec![0usize; batch.classes];
        for (row, &label) in pre.outer_iter().zip(&batch.labels) {
            sums.row_mut(label).scaled_add(1.0, &row);
            counts[label] += 1;
        }
        let present: Vec<usize> = (0..batch.classes).filter(|&c| counts[c] > 0).collect();
        for k in 0..self.dims.k {
            let mut v: Vec<f64> = present.iter().map(|&c| sums[[c, k]] / counts[c] as f64).collect();
            v.sort_by(f64::total_cmp);
            let mid = v.len() / 2;
            let median = if v.len().is_multiple_of(2) { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
            self.bh[k] = -median;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sum of squared weight-matrix entries (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        [&self.w1, &self.wh, &self.wo].iter().map(|w| w.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let as_grad = HashNetGradients {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            wh: self.wh.clone(),
            bh: self.bh.clone(),
            wo: self.wo.clone(),
            bo: self.bo.clone(),
        };
        as_grad.flatten()
    }

    /// Mutable references to every parameter in flattening order.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.wh.iter_mut())
            .chain(self.bh.iter_mut())
            .chain(self.wo.iter_mut())
            .chain(self.bo.iter_mut())
            .collect()
    }

    fn check_input(&self, got: usize) -> Result<(), HashNetError> {
        if got != self.dims.d_in {
            return Err(HashNetError::Dimension { what: "input features", expected: self.dims.d_in, got });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Forward, HashNetError> {
        self.check_input(x.len())?;
        let fc1 = (x.dot(&self.w1) + &self.b1).mapv(|a| a.max(0.0));
        let hash = (fc1.dot(&self.wh) + &self.bh).mapv(sigmoid);
        let mut s = (hash.dot(&self.wo) + &self.bo).insert_axis(Axis(0));
        softmax_rows(&mut s);
        Ok(Forward { fc1, hash, probs: s.index_axis_move(Axis(0), 0) })
    }

    /// Hashing-layer activations only.
    pub fn hash(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, HashNetError> {
        self.check_input(x.len())?;
        let fc1 = (x.dot(&self.w1) + &self.b1).mapv(|a| a.max(0.0));
        Ok((fc1.dot(&self.wh) + &self.bh).mapv(sigmoid))
    }

    pub fn intermediate_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, HashNetError> {
        Ok(binarize(self.hash(x)?.view()))
    }

    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<BatchForward, HashNetError> {
        self.check_input(inputs.ncols())?;
        let pre_fc1 = inputs.dot(&self.w1) + &self.b1;
        let fc1 = pre_fc1.mapv(|a| a.max(0.0));
        let hash = (fc1.dot(&self.wh) + &self.bh).mapv(sigmoid);
        let mut probs = hash.dot(&self.wo) + &self.bo;
        softmax_rows(&mut probs);
        Ok(BatchForward { inputs: inputs.clone(), pre_fc1, fc1, hash, probs })
    }

    pub fn loss(&self, batch: &TrainBatch, lw: &LossWeights) -> Result<LossBreakdown, HashNetError> {
        let fwd = self.forward_batch(&batch.inputs)?;
        Ok(loss_total(&fwd, &batch.labels, lw, self.weight_sq_norm()))
    }

    /// Backpropagates a gradient on the hashing activations through the sigmoid,
    /// the hashing layer and the rectifier layer. `wo`/`bo` gradients are zero.
    pub fn backward_from_hash(&self, fwd: &BatchForward, d_hash: &Array2<f64>) -> HashNetGradients {
        let mut d_z = d_hash.clone();
        Zip::from(&mut d_z).and(&fwd.hash).for_each(|g, &v| *g *= v * (1.0 - v));
        self.backward_from_preactivation(fwd, &d_z)
    }

    fn backward_from_preactivation(&self, fwd: &BatchForward, d_z: &Array2<f64>) -> HashNetGradients {
        let wh = fwd.fc1.t().dot(d_z);
        let bh = d_z.sum_axis(Axis(0));
        let mut d_pre = d_z.dot(&self.wh.t());
        Zip::from(&mut d_pre).and(&fwd.pre_fc1).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        let w1 = fwd.inputs.t().dot(&d_pre);
        let b1 = d_pre.sum_axis(Axis(0));
        HashNetGradients {
            w1,
            b1,
            wh,
            bh,
            wo: Array2::zeros(self.wo.raw_dim()),
            bo: Array1::zeros(self.bo.raw_dim()),
        }
    }

    /// Exact gradients of `alpha E1 + beta E2 + gamma E3`. The softmax/cross-entropy
    /// part uses `(p - y) / N`.
    pub fn gradients(&self, batch: &TrainBatch, lw: &LossWeights) -> Result<(LossBreakdown, HashNetGradients), HashNetError> {
        let fwd = self.forward_batch(&batch.inputs)?;
        let loss = loss_total(&fwd, &batch.labels, lw, self.weight_sq_norm());
        let n = batch.len() as f64;
        let k = self.dims.k as f64;

        let mut d_s = fwd.probs.clone();
        for (i, &l) in batch.labels.iter().enumerate() {
            d_s[[i, l]] -= 1.0;
        }
        d_s *= lw.alpha / n;

        let mut d_hash = d_s.dot(&self.wo.t());
        for (mut row, v) in d_hash.outer_iter_mut().zip(fwd.hash.outer_iter()) {
            let mean_shift = v.mean().unwrap_or(0.5) - 0.5;
            let entropy = lw.gamma * 2.0 * mean_shift / k;
            Zip::from(&mut row).and(&v).for_each(|g, &x| {
                *g += lw.beta * (-2.0 / k) * (x - 0.5) + entropy;
            });
        }

        let mut grads = self.backward_from_hash(&fwd, &d_hash);
        grads.wo = fwd.hash.t().dot(&d_s);
        grads.bo = d_s.sum_axis(Axis(0));
        let reg = 2.0 * lw.alpha * lw.lambda;
        grads.w1.scaled_add(reg, &self.w1);
        grads.wh.scaled_add(reg, &self.wh);
        grads.wo.scaled_add(reg, &self.wo);
        Ok((loss, grads))
    }

    pub fn to_document(&self, loss_weights: LossWeights) -> HashNetDocument {
        let rows = |a: &Array2<f64>| a.outer_iter().map(|r| r.to_vec()).collect();
        HashNetDocument {
            format_version: FORMAT_VERSION,
            dims: self.dims,
            seed: self.seed,
            loss_weights,
            w1: rows(&self.w1),
            b1: self.b1.to_vec(),
            wh: rows(&self.wh),
            bh: self.bh.to_vec(),
            wo: rows(&self.wo),
            bo: self.bo.to_vec(),
        }
    }

    pub fn from_document(doc: &HashNetDocument) -> Result<Self, HashNetError> {
        if doc.format_version != FORMAT_VERSION {
            return Err(HashNetError::Format(format!("unsupported format_version {}", doc.format_version)));
        }
        let d = doc.dims;
        let matrix = |name: &str, rows: &Vec<Vec<f64>>, r: usize, c: usize| -> Result<Array2<f64>, HashNetError> {
            if rows.len() != r || rows.iter().any(|row| row.len() != c) {
                return Err(HashNetError::Format(format!("{name} must be {r} x {c}")));
            }
            Ok(Array2::from_shape_vec((r, c), rows.iter().flatten().copied().collect()).expect("shape checked"))
        };
        let vector = |name: &str, v: &Vec<f64>, len: usize| -> Result<Array1<f64>, HashNetError> {
            if v.len() != len {
                return Err(HashNetError::Format(format!("{name} must have length {len}")));
            }
            Ok(Array1::from(v.clone()))
        };
        let model = Self {
            dims: d,
            seed: doc.seed,
            w1: matrix("w1", &doc.w1, d.d_in, d.d)?,
            b1: vector("b1", &doc.b1, d.d)?,
            wh: matrix("wh", &doc.wh, d.d, d.k)?,
            bh: vector("bh", &doc.bh, d.k)?,
            wo: matrix("wo", &doc.wo, d.k, d.m)?,
            bo: vector("bo", &doc.bo, d.m)?,
        };
        if model.flat_params().iter().any(|x| !x.is_finite()) {
            return Err(HashNetError::Format("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self, loss_weights: LossWeights) -> Result<String, HashNetError> {
        Ok(serde_json::to_string_pretty(&self.to_document(loss_weights))?)
    }

    pub fn from_json(s: &str) -> Result<(Self, LossWeights), HashNetError> {
        let doc: HashNetDocument = serde_json::from_str(s)?;
        Ok((Self::from_document(&doc)?, doc.loss_weights))
    }
}

/// On-disk form of a [`HashNetModel`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashNetDocument {
    pub format_version: u32,
    pub dims: Dims,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub wh: Vec<Vec<f64>>,
    pub bh: Vec<f64>,
    pub wo: Vec<Vec<f64>>,
    pub bo: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { learning_rate: 0.05, momentum: 0.9, epochs: 60, batch_size: 32, seed: 11 }
    }
}

/// Mean mini-batch total loss before training and during each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1History {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl Stage1History {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

struct Velocity(Vec<f64>);

impl Velocity {
    fn step(&mut self, params: Vec<&mut f64>, grads: &[f64], lr: f64, momentum: f64) {
        for ((p, v), g) in params.into_iter().zip(self.0.iter_mut()).zip(grads) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    }
}

fn shuffled_batches(rng: &mut ChaCha8Rng, len: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Stage 1: momentum SGD on the three-term objective.
pub fn train_stage1(
    model: &mut HashNetModel,
    data: &TrainBatch,
    lw: &LossWeights,
    cfg: &Stage1Config,
) -> Result<Stage1History, HashNetError> {
    if data.is_empty() {
        return Err(HashNetError::EmptyData);
    }
    lw.validate()?;
    model.check_input(data.inputs.ncols())?;
    if data.classes != model.dims.m {
        return Err(HashNetError::Dimension { what: "class count", expected: model.dims.m, got: data.classes });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = Velocity(vec![0.0; model.flat_params().len()]);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;
    for epoch in 0..=cfg.epochs {
        let batches = shuffled_batches(&mut rng, data.len(), cfg.batch_size);
        if epoch == 0 {
            // loss of the untrained model over one pass of batches
            let mut sum = 0.0;
            for rows in &batches {
                sum += model.loss(&data.select(rows), lw)?.total;
            }
            initial_loss = Some(sum / batches.len() as f64);
            continue;
        }
        let mut sum = 0.0;
        for rows in &batches {
            let batch = data.select(rows);
            let (loss, grads) = model.gradients(&batch, lw)?;
            sum += loss.total;
            velocity.step(model.params_mut(), &grads.flatten(), cfg.learning_rate, cfg.momentum);
        }
        epoch_losses.push(sum / batches.len() as f64);
    }
    Ok(Stage1History { initial_loss: initial_loss.expect("epoch 0 ran"), epoch_losses })
}

/// Hashing network with the softmax head discarded, feeding an NND.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub dh: HashNetModel,
    pub nnd: NndModel,
    pub input_mode: InputMode,
}

/// Gradients of the joint BCE loss. `dh.wo`/`dh.bo` are always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGradients {
    pub dh: HashNetGradients,
    pub nnd: NndGradients,
}

/// One Stage-3 example: input features and the target codeword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    pub input: Vec<f64>,
    pub target: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointTrainConfig {
    pub dh_learning_rate: f64,
    pub nnd_learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for JointTrainConfig {
    fn default() -> Self {
        Self { dh_learning_rate: 0.001, nnd_learning_rate: 0.001, momentum: 0.9, epochs: 20, batch_size: 16, seed: 23 }
    }
}

/// Connects the hashing layer to the decoder. Requires `K = n`.
pub fn integrate(dh: HashNetModel, nnd: NndModel, input_mode: InputMode) -> Result<JointModel, HashNetError> {
    if dh.dims.k != nnd.n() {
        return Err(HashNetError::Dimension { what: "hashing width vs code length", expected: nnd.n(), got: dh.dims.k });
    }
    Ok(JointModel { dh, nnd, input_mode })
}

impl JointModel {
    pub fn code_length(&self) -> usize {
        self.nnd.n()
    }

    /// Decoder outputs in (0, 1) for one input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Vec<f64>, HashNetError> {
        let hash = self.dh.hash(x)?;
        let llr = self.nnd.input_llr(hash.as_slice().expect("contiguous"), self.input_mode);
        Ok(self.nnd.forward(&llr)?)
    }

    pub fn final_code(&self, x: ArrayView1<f64>) -> Result<BinaryCode, HashNetError> {
        Ok(BinaryCode::new(nnd::hard_decision(&self.forward(x)?), CodeRole::Final))
    }

    /// Mean BCE over `samples` and the gradients for both weight sets.
    pub fn loss_and_gradients(&self, samples: &[JointSample]) -> Result<(f64, JointGradients), HashNetError> {
        if samples.is_empty() {
            return Err(HashNetError::EmptyData);
        }
        let n = self.dh.dims.d_in;
        for s in samples {
            self.dh.check_input(s.input.len())?;
            if s.target.len() != self.nnd.n() {
                return Err(HashNetError::Dimension { what: "target codeword", expected: self.nnd.n(), got: s.target.len() });
            }
        }
        let inputs = Array2::from_shape_vec(
            (samples.len(), n),
            samples.iter().flat_map(|s| s.input.iter().copied()).collect(),
        )
        .expect("rows checked");
        let fwd = self.dh.forward_batch(&inputs)?;
        let clamp = self.nnd.llr_clamp();
        let per: Vec<(f64, NndGradients, Vec<f64>)> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let hash = fwd.hash.row(i);
                let (llr, clamped): (Vec<f64>, Vec<bool>) = match self.input_mode {
                    InputMode::Soft => hash.iter().map(|&p| llr_of(p, clamp)).unzip(),
                    InputMode::Hard => hash.iter().map(|&p| (if p > 0.5 { -clamp } else { clamp }, true)).unzip(),
                };
                let (loss, g, _) = self.nnd.loss_and_gradients(&llr, &s.target)?;
                // llr = ln((1-p)/p) = -z inside the clamp, so dL/dz = -dL/dllr
                let d_z = g.llr.iter().zip(&clamped).map(|(&d, &c)| if c { 0.0 } else { -d }).collect();
                Ok((loss, g, d_z))
            })
            .collect::<Result<_, NndError>>()?;

        let scale = 1.0 / samples.len() as f64;
        let mut d_z = Array2::zeros((samples.len(), self.dh.dims.k));
        let mut loss = 0.0;
        let mut nnd_grads = NndGradients::zeros_like(&self.nnd);
        for (i, (l, g, dz)) in per.into_iter().enumerate() {
            loss += l;
            d_z.row_mut(i).assign(&Array1::from(dz));
            nnd_grads.add_assign(&g);
        }
        nnd_grads.scale(scale);
        d_z *= scale;
        let dh = self.dh.backward_from_preactivation(&fwd, &d_z);
        Ok((loss * scale, JointGradients { dh, nnd: nnd_grads }))
    }

    pub fn mean_loss(&self, samples: &[JointSample]) -> Result<f64, HashNetError> {
        Ok(self.loss_and_gradients(samples)?.0)
    }

    pub fn to_document(&self, loss_weights: LossWeights) -> Result<JointDocument, HashNetError> {
        Ok(JointDocument {
            format_version: FORMAT_VERSION,
            input_mode: self.input_mode,
            dh: self.dh.to_document(loss_weights),
            nnd: self.nnd.to_document()?,
        })
    }

    pub fn to_json(&self, loss_weights: LossWeights) -> Result<String, HashNetError> {
        Ok(serde_json::to_string_pretty(&self.to_document(loss_weights)?)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HashNetError> {
        let doc: JointDocument = serde_json::from_str(s)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(HashNetError::Format(format!("unsupported format_version {}", doc.format_version)));
        }
        integrate(HashNetModel::from_document(&doc.dh)?, NndModel::from_document(doc.nnd)?, doc.input_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDocument {
    pub format_version: u32,
    pub input_mode: InputMode,
    pub dh: HashNetDocument,
    pub nnd: NndDocument,
}

/// Stage 3 end-to-end optimization of the hashing and decoder weights.
pub fn train_joint(model: &mut JointModel, data: &[JointSample], cfg: &JointTrainConfig) -> Result<TrainHistory, HashNetError> {
    if data.is_empty() {
        return Err(HashNetError::EmptyData);
    }
    let initial_loss = model.mean_loss(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dh_velocity = Velocity(vec![0.0; model.dh.flat_params().len()]);
    let mut nnd_velocity = Velocity(vec![0.0; model.nnd.flat_weights().len()]);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for rows in shuffled_batches(&mut rng, data.len(), cfg.batch_size) {
            let batch: Vec<JointSample> = rows.iter().map(|&i| data[i].clone()).collect();
            let (_, g) = model.loss_and_gradients(&batch)?;
            dh_velocity.step(model.dh.params_mut(), &g.dh.flatten(), cfg.dh_learning_rate, cfg.momentum);
            nnd_velocity.step(model.nnd.params_mut(), &g.nnd.flat_weights(), cfg.nnd_learning_rate, cfg.momentum);
        }
        epoch_losses.push(model.mean_loss(data)?);
    }
    Ok(TrainHistory { initial_loss, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> HashNetModel {
        HashNetModel::new(Dims { d_in: 4, d: 6, k: 8, m: 3 }, 5)
    }

    #[test]
    fn zero_model_outputs() {
        let m = HashNetModel::zeros(Dims { d_in: 4, d: 6, k: 8, m: 5 });
        let f = m.forward(array![1.0, -2.0, 0.5, 3.0].view()).unwrap();
        assert!(f.hash.iter().all(|&v| v == 0.5));
        assert!(f.probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        assert_eq!(binarize(f.hash.view()).weight(), 0);
    }

    #[test]
    fn saturating_preactivation() {
        let mut m = HashNetModel::zeros(Dims { d_in: 2, d: 2, k: 2, m: 2 });
        m.bh[0] = 1e3;
        m.bh[1] = -1e3;
        let f = m.forward(array![0.0, 0.0].view()).unwrap();
        assert_eq!(f.hash[0], 1.0);
        assert_eq!(f.hash[1], 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(tiny().forward(array![1.0].view()), Err(HashNetError::Dimension { .. })));
    }

    #[test]
    fn binarize_tie_rule() {
        assert_eq!(binarize(array![0.5, 0.5].view()).weight(), 0);
        let c = binarize(array![0.9, 0.1, 0.51].view());
        assert_eq!(c.bits(), &[true, false, true]);
    }

    #[test]
    fn loss_fixtures() {
        let half = Array2::from_elem((3, 8), 0.5);
        assert_eq!(loss_quantization(half.view()), 0.0);
        let bin = array![[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]];
        assert_eq!(loss_quantization(bin.view()), -0.25);
        assert_eq!(loss_entropy(bin.view()), 0.0);
        let ones = Array2::from_elem((1, 8), 1.0);
        assert_eq!(loss_entropy(ones.view()), 0.25);
        let two = ndarray::concatenate![Axis(0), bin, Array2::from_elem((1, 8), 0.0)];
        assert_eq!(loss_quantization(two.view()), -0.5);
        let means = array![[0.6, 0.6], [0.4, 0.4]];
        assert!((loss_entropy(means.view()) - 0.02).abs() < 1e-15);

        let uniform = Array2::from_elem((2, 4), 0.25);
        assert!((loss_classification(uniform.view(), &[0, 3], 0.0, 0.0) - 4f64.ln()).abs() < 1e-12);
        let perfect = array![[0.0, 1.0, 0.0]];
        assert_eq!(loss_classification(perfect.view(), &[1], 0.0, 0.0), 0.0);
        let p = array![[0.7, 0.2, 0.1]];
        assert!((loss_classification(p.view(), &[0], 0.0, 0.0) + 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn one_hot_validation() {
        let x = Array2::zeros((2, 4));
        assert!(TrainBatch::from_one_hot(x.clone(), array![[1.0, 0.0], [0.0, 1.0]].view()).is_ok());
        assert!(matches!(
            TrainBatch::from_one_hot(x.clone(), array![[1.0, 1.0], [0.0, 1.0]].view()),
            Err(HashNetError::NotOneHot(0))
        ));
        assert!(matches!(TrainBatch::new(x, vec![0, 2], 2), Err(HashNetError::Label { label: 2, .. })));
    }

    #[test]
    fn entropy_gradient_vanishes_at_balance() {
        let m = tiny();
        let lw = LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0, lambda: 0.0 };
        // force every hash activation to exactly 0.5
        let mut m = m;
        m.wh.fill(0.0);
        m.bh.fill(0.0);
        let batch = TrainBatch::new(array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]], vec![0, 1], 3).unwrap();
        let (_, g) = m.gradients(&batch, &lw).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn classification_only_when_beta_gamma_zero() {
        let m = tiny();
        let batch = TrainBatch::new(array![[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]], vec![0, 2], 3).unwrap();
        let lw = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0, lambda: 1e-3 };
        let (loss, g) = m.gradients(&batch, &lw).unwrap();
        assert_eq!(loss.total, loss.classification);
        let lw2 = LossWeights { beta: 0.0, gamma: 0.0, ..LossWeights { alpha: 1.0, beta: 0.7, gamma: 0.3, lambda: 1e-3 } };
        let (_, g2) = m.gradients(&batch, &lw2).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn stage1_lr_zero_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((12, 4), || rng.random_range(-1.0..1.0));
        let batch = TrainBatch::new(x, (0..12).map(|i| i % 3).collect(), 3).unwrap();
        let lw = LossWeights::default();
        let base = tiny();
        let mut frozen = base.clone();
        train_stage1(&mut frozen, &batch, &lw, &Stage1Config { learning_rate: 0.0, epochs: 3, ..Default::default() }).unwrap();
        assert_eq!(frozen, base);

        let cfg = Stage1Config { epochs: 5, batch_size: 4, ..Default::default() };
        let (mut a, mut b) = (base.clone(), base.clone());
        train_stage1(&mut a, &batch, &lw, &cfg).unwrap();
        train_stage1(&mut b, &batch, &lw, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, base);
        let empty = TrainBatch::new(Array2::zeros((0, 4)), vec![], 3).unwrap();
        assert!(matches!(train_stage1(&mut a, &empty, &lw, &cfg), Err(HashNetError::EmptyData)));
    }

    #[test]
    fn json_roundtrip() {
        let m = tiny();
        let lw = LossWeights { alpha: 1.0, beta: 0.5, gamma: 0.125, lambda: 0.0 };
        let (back, lw_back) = HashNetModel::from_json(&m.to_json(lw).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(lw_back, lw);
    }

    #[test]
    fn fc1_sizing_rule() {
        assert_eq!(Dims::fc1_width_for(255), 512);
        assert_eq!(Dims::fc1_width_for(1023), 2048);
        assert_eq!(Dims::fc1_width_for(63), 128);
    }
}
