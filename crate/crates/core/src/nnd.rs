//! Neural network decoder: sum-product belief propagation unrolled over a
//! fixed number of iterations, with a trainable weight on every
//! check-to-variable message.
//!
//! LLRs follow `ln(P(bit = 0) / P(bit = 1))`. Iteration `t` first forms the
//! variable-to-check messages from the previous check messages (scaled by
//! `edge_weights[t]`), then runs the unweighted tanh-rule check update. The
//! marginal of variable `v` adds the last check messages scaled by
//! `output_weights` and the decoder emits `sigmoid(-marginal)`, an estimate of
//! `P(bit = 1)`. Check messages start at zero, so `edge_weights[0]` never
//! influences the output; it is kept so every iteration has the same shape.
//! With every weight equal to one the model is plain flooding sum-product BP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bch::{BchCode, BchError, BinaryCode, BitMatrix, CodeRole};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_LLR_CLAMP: f64 = 15.0;
/// Margin keeping the tanh product strictly inside (-1, 1) before `atanh`.
pub const ATANH_EPS: f64 = 1e-12;
/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NndError {
    #[error("expected a vector of length {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("decoder needs at least one iteration")]
    NoIterations,
    #[error("llr clamp must be positive and finite, got {0}")]
    BadClamp(f64),
    #[error("model document: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Bch(#[from] BchError),
}

/// How hashing-layer activations are turned into decoder LLRs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// `ln((1 - p) / p)` of the sigmoid activation.
    #[default]
    Soft,
    /// Threshold at 0.5 first, then map bit `b` to `(1 - 2b) * clamp`.
    Hard,
}

/// Bipartite graph of a parity-check matrix. Edges are numbered in
/// row-major scan order of the matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TannerGraph {
    variables: usize,
    checks: usize,
    edges: Vec<(usize, usize)>,
    var_edges: Vec<Vec<usize>>,
    check_edges: Vec<Vec<usize>>,
}

impl TannerGraph {
    pub fn from_parity_check(h: &BitMatrix) -> Self {
        let variables = h.col_count();
        let checks = h.row_count();
        let mut edges = Vec::with_capacity(h.nonzero_count());
        let mut var_edges = vec![Vec::new(); variables];
        let mut check_edges = vec![Vec::new(); checks];
        for (c, row) in h.rows().enumerate() {
            for (v, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                let e = edges.len();
                edges.push((v, c));
                var_edges[v].push(e);
                check_edges[c].push(e);
            }
        }
        Self { variables, checks, edges, var_edges, check_edges }
    }

    pub fn from_code(code: &BchCode) -> Self {
        Self::from_parity_check(code.parity_check())
    }

    pub fn variable_count(&self) -> usize {
        self.variables
    }

    pub fn check_count(&self) -> usize {
        self.checks
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(variable, check)` pairs in edge order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn variable_edges(&self, v: usize) -> &[usize] {
        &self.var_edges[v]
    }

    pub fn check_edges(&self, c: usize) -> &[usize] {
        &self.check_edges[c]
    }

    pub fn variable_degree(&self, v: usize) -> usize {
        self.var_edges[v].len()
    }
}

/// Identifies the BCH code a decoder was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub m: u32,
    pub t: usize,
    pub n: usize,
    pub k: usize,
}

impl CodeParams {
    pub fn of(code: &BchCode) -> Self {
        Self { m: code.m(), t: code.t(), n: code.n(), k: code.k() }
    }

    pub fn build(&self) -> Result<BchCode, NndError> {
        let code = BchCode::new(self.m, self.t)?;
        if code.n() != self.n || code.k() != self.k {
            return Err(NndError::Format(format!(
                "code (m={}, t={}) builds as ({}, {}), document says ({}, {})",
                self.m,
                self.t,
                code.n(),
                code.k(),
                self.n,
                self.k
            )));
        }
        Ok(code)
    }
}

/// Weighted BP decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct NndModel {
    graph: TannerGraph,
    code: Option<CodeParams>,
    edge_weights: Vec<Vec<f64>>,
    output_weights: Vec<f64>,
    llr_clamp: f64,
}

/// Intermediate values of one forward pass, kept for [`NndModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub llr: Vec<f64>,
    /// `v2c[t][e]`: variable-to-check message consumed by check update `t`.
    pub v2c: Vec<Vec<f64>>,
    /// `c2v[t][e]`: check-to-variable message produced by check update `t`.
    pub c2v: Vec<Vec<f64>>,
    c2v_clamped: Vec<Vec<bool>>,
    /// Output pre-activations; `outputs = sigmoid(-marginals)`.
    pub marginals: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// Gradients with the same layout as the model weights, plus the input LLRs.
#[derive(Debug, Clone, PartialEq)]
pub struct NndGradients {
    pub edge_weights: Vec<Vec<f64>>,
    pub output_weights: Vec<f64>,
    pub llr: Vec<f64>,
}

impl NndGradients {
    pub fn zeros_like(model: &NndModel) -> Self {
        let e = model.graph.edge_count();
        Self {
            edge_weights: vec![vec![0.0; e]; model.iterations()],
            output_weights: vec![0.0; e],
            llr: vec![0.0; model.graph.variable_count()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.edge_weights.iter_mut().zip(&other.edge_weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.output_weights.iter_mut().zip(&other.output_weights).for_each(|(x, y)| *x += y);
        self.llr.iter_mut().zip(&other.llr).for_each(|(x, y)| *x += y);
    }

    /// Weight gradients in [`NndModel::flat_weights`] order.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.edge_weights.iter().flatten().chain(&self.output_weights).copied().collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.edge_weights.iter_mut().flatten().for_each(|x| *x *= s);
        self.output_weights.iter_mut().for_each(|x| *x *= s);
        self.llr.iter_mut().for_each(|x| *x *= s);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln((1 - p) / p)` clamped to `[-clamp, clamp]`; `p` is read as `P(bit = 1)`.
pub fn llr_from_soft(activations: &[f64], clamp: f64) -> Vec<f64> {
    activations.iter().map(|&p| llr_of(p, clamp).0).collect()
}

/// LLR of one activation and whether the clamp was active.
pub(crate) fn llr_of(p: f64, clamp: f64) -> (f64, bool) {
    let raw = ((1.0 - p) / p).ln();
    if raw.is_nan() {
        return (0.0, true);
    }
    if raw >= clamp {
        (clamp, true)
    } else if raw <= -clamp {
        (-clamp, true)
    } else {
        (raw, false)
    }
}

/// `(1 - 2b) * clamp` for each hard bit.
pub fn llr_from_hard(bits: &[bool], clamp: f64) -> Vec<f64> {
    bits.iter().map(|&b| if b { -clamp } else { clamp }).collect()
}

/// Mean binary cross-entropy with outputs clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(outputs: &[f64], target: &[bool]) -> f64 {
    assert_eq!(outputs.len(), target.len(), "output/target length mismatch");
    let n = outputs.len() as f64;
    -outputs
        .iter()
        .zip(target)
        .map(|(&o, &y)| {
            let o = o.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y {
                o.ln()
            } else {
                (1.0 - o).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Bit `i` is 1 iff `outputs[i] > 0.5`.
pub fn hard_decision(outputs: &[f64]) -> Vec<bool> {
    outputs.iter().map(|&o| o > 0.5).collect()
}

impl NndModel {
    /// All weights start at one (plain sum-product).
    pub fn new(graph: TannerGraph, iterations: usize, llr_clamp: f64) -> Result<Self, NndError> {
        if iterations == 0 {
            return Err(NndError::NoIterations);
        }
        if !(llr_clamp.is_finite() && llr_clamp > 0.0) {
            return Err(NndError::BadClamp(llr_clamp));
        }
        let e = graph.edge_count();
        Ok(Self {
            graph,
            code: None,
            edge_weights: vec![vec![1.0; e]; iterations],
            output_weights: vec![1.0; e],
            llr_clamp,
        })
    }

    pub fn for_code(code: &BchCode, iterations: usize, llr_clamp: f64) -> Result<Self, NndError> {
        let mut model = Self::new(TannerGraph::from_code(code), iterations, llr_clamp)?;
        model.code = Some(CodeParams::of(code));
        Ok(model)
    }

    pub fn graph(&self) -> &TannerGraph {
        &self.graph
    }

    pub fn code_params(&self) -> Option<CodeParams> {
        self.code
    }

    pub fn n(&self) -> usize {
        self.graph.variable_count()
    }

    pub fn iterations(&self) -> usize {
        self.edge_weights.len()
    }

    pub fn llr_clamp(&self) -> f64 {
        self.llr_clamp
    }

    pub fn edge_weights(&self) -> &[Vec<f64>] {
        &self.edge_weights
    }

    pub fn edge_weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.edge_weights
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.output_weights
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        &mut self.output_weights
    }

    /// Parameters flattened as edge weights (iteration-major) then output weights.
    pub fn flat_weights(&self) -> Vec<f64> {
        self.edge_weights.iter().flatten().chain(&self.output_weights).copied().collect()
    }

    /// Mutable references to every weight in [`Self::flat_weights`] order.
    pub fn params_mut(&mut self) -> Vec<&mut f64> {
        self.edge_weights.iter_mut().flatten().chain(self.output_weights.iter_mut()).collect()
    }

    fn check_len(&self, got: usize) -> Result<(), NndError> {
        if got != self.n() {
            return Err(NndError::Length { expected: self.n(), got });
        }
        Ok(())
    }

    /// Maps hashing-layer activations to clamped LLRs under `mode`.
    pub fn input_llr(&self, activations: &[f64], mode: InputMode) -> Vec<f64> {
        match mode {
            InputMode::Soft => llr_from_soft(activations, self.llr_clamp),
            InputMode::Hard => {
                let bits: Vec<bool> = activations.iter().map(|&p| p > 0.5).collect();
                llr_from_hard(&bits, self.llr_clamp)
            }
        }
    }

    pub fn forward(&self, llr: &[f64]) -> Result<Vec<f64>, NndError> {
        Ok(self.forward_trace(llr)?.outputs)
    }

    pub fn forward_trace(&self, llr: &[f64]) -> Result<ForwardTrace, NndError> {
        self.check_len(llr.len())?;
        let g = &self.graph;
        let e_count = g.edge_count();
        let llr: Vec<f64> = llr.iter().map(|x| x.clamp(-self.llr_clamp, self.llr_clamp)).collect();
        let iterations = self.iterations();
        let mut v2c = Vec::with_capacity(iterations);
        let mut c2v: Vec<Vec<f64>> = Vec::with_capacity(iterations);
        let mut c2v_clamped = Vec::with_capacity(iterations);
        let zeros = vec![0.0; e_count];

        for t in 0..iterations {
            let prev = c2v.last().unwrap_or(&zeros);
            let w = &self.edge_weights[t];
            let mut out = vec![0.0; e_count];
            for v in 0..g.variable_count() {
                let edges = g.variable_edges(v);
                let total: f64 = edges.iter().map(|&e| w[e] * prev[e]).sum();
                for &e in edges {
                    out[e] = llr[v] + total - w[e] * prev[e];
                }
            }
            let (msgs, clamped) = self.check_update(&out);
            v2c.push(out);
            c2v.push(msgs);
            c2v_clamped.push(clamped);
        }

        let last = c2v.last().expect("at least one iteration");
        let marginals: Vec<f64> = (0..g.variable_count())
            .map(|v| {
                llr[v]
                    + g.variable_edges(v)
                        .iter()
                        .map(|&e| self.output_weights[e] * last[e])
                        .sum::<f64>()
            })
            .collect();
        let outputs = marginals.iter().map(|&s| sigmoid(-s)).collect();
        Ok(ForwardTrace { llr, v2c, c2v, c2v_clamped, marginals, outputs })
    }

    fn check_update(&self, v2c: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let g = &self.graph;
        let mut msgs = vec![0.0; g.edge_count()];
        let mut clamped = vec![false; g.edge_count()];
        let bound = 1.0 - ATANH_EPS;
        let mut tanhs = Vec::new();
        let mut suffix = Vec::new();
        for c in 0..g.check_count() {
            let edges = g.check_edges(c);
            tanhs.clear();
            tanhs.extend(edges.iter().map(|&e| (v2c[e] / 2.0).tanh()));
            suffix.clear();
            suffix.resize(edges.len() + 1, 1.0);
            for i in (0..edges.len()).rev() {
                suffix[i] = suffix[i + 1] * tanhs[i];
            }
            let mut prefix = 1.0;
            for (i, &e) in edges.iter().enumerate() {
                let p = prefix * suffix[i + 1];
                let (p, hit) = if p > bound {
                    (bound, true)
                } else if p < -bound {
                    (-bound, true)
                } else {
                    (p, false)
                };
                msgs[e] = 2.0 * p.atanh();
                clamped[e] = hit;
                prefix *= tanhs[i];
            }
        }
        (msgs, clamped)
    }

    /// Reverse-mode pass. `d_marginals[v]` is the loss gradient with respect
    /// to the output pre-activation of variable `v`.
    pub fn backward(&self, trace: &ForwardTrace, d_marginals: &[f64]) -> NndGradients {
        let g = &self.graph;
        let iterations = self.iterations();
        let mut grads = NndGradients::zeros_like(self);
        let e_count = g.edge_count();

        let last = &trace.c2v[iterations - 1];
        let mut d_c2v = vec![0.0; e_count];
        for v in 0..g.variable_count() {
            grads.llr[v] += d_marginals[v];
            for &e in g.variable_edges(v) {
                grads.output_weights[e] = d_marginals[v] * last[e];
                d_c2v[e] = d_marginals[v] * self.output_weights[e];
            }
        }

        let mut pre_val = Vec::new();
        let mut pre_eps = Vec::new();
        let mut suf_val = Vec::new();
        let mut suf_eps = Vec::new();
        for t in (0..iterations).rev() {
            // check update: c2v[t] = 2 atanh(prod of tanh(v2c[t]/2) over the other edges)
            let mut d_v2c = vec![0.0; e_count];
            for c in 0..g.check_count() {
                let edges = g.check_edges(c);
                let d = edges.len();
                let tanhs: Vec<f64> = edges.iter().map(|&e| (trace.v2c[t][e] / 2.0).tanh()).collect();
                // a_i = dL/dP_i
                let a: Vec<f64> = edges
                    .iter()
                    .map(|&e| {
                        if trace.c2v_clamped[t][e] {
                            0.0
                        } else {
                            let p = (trace.c2v[t][e] / 2.0).tanh();
                            d_c2v[e] * 2.0 / (1.0 - p * p)
                        }
                    })
                    .collect();
                // dL/dtanh_j = first-order coefficient of prod_{i != j} (tanh_i + a_i eps)
                pre_val.clear();
                pre_eps.clear();
                suf_val.clear();
                suf_eps.clear();
                pre_val.push(1.0);
                pre_eps.push(0.0);
                for i in 0..d {
                    let (v, ep) = (pre_val[i], pre_eps[i]);
                    pre_val.push(v * tanhs[i]);
                    pre_eps.push(v * a[i] + ep * tanhs[i]);
                }
                suf_val.resize(d + 1, 1.0);
                suf_eps.resize(d + 1, 0.0);
                suf_val[d] = 1.0;
                suf_eps[d] = 0.0;
                for i in (0..d).rev() {
                    suf_val[i] = suf_val[i + 1] * tanhs[i];
                    suf_eps[i] = suf_val[i + 1] * a[i] + suf_eps[i + 1] * tanhs[i];
                }
                for (j, &e) in edges.iter().enumerate() {
                    let d_tanh = pre_val[j] * suf_eps[j + 1] + pre_eps[j] * suf_val[j + 1];
                    d_v2c[e] = d_tanh * (1.0 - tanhs[j] * tanhs[j]) / 2.0;
                }
            }

            // variable update: v2c[t][e] = llr_v + sum_{e' != e} w[t][e'] c2v[t-1][e']
            let mut next_d_c2v = vec![0.0; e_count];
            for v in 0..g.variable_count() {
                let edges = g.variable_edges(v);
                let total: f64 = edges.iter().map(|&e| d_v2c[e]).sum();
                grads.llr[v] += total;
                if t == 0 {
                    continue;
                }
                for &e in edges {
                    let upstream = total - d_v2c[e];
                    grads.edge_weights[t][e] = upstream * trace.c2v[t - 1][e];
                    next_d_c2v[e] = upstream * self.edge_weights[t][e];
                }
            }
            d_c2v = next_d_c2v;
        }
        grads
    }

    /// BCE loss against `target` and its gradients. The marginal gradient
    /// uses the logit form `(y - o) / n`.
    pub fn loss_and_gradients(&self, llr: &[f64], target: &[bool]) -> Result<(f64, NndGradients, ForwardTrace), NndError> {
        self.check_len(target.len())?;
        let trace = self.forward_trace(llr)?;
        let loss = bce_loss(&trace.outputs, target);
        let n = self.n() as f64;
        let d_marg: Vec<f64> = trace
            .outputs
            .iter()
            .zip(target)
            .map(|(&o, &y)| ((y as u8 as f64) - o) / n)
            .collect();
        let mut grads = self.backward(&trace, &d_marg);
        // input llrs saturated at the clamp carry no gradient
        for (g, &x) in grads.llr.iter_mut().zip(llr) {
            if x.abs() >= self.llr_clamp {
                *g = 0.0;
            }
        }
        Ok((loss, grads, trace))
    }

    /// Final code: bit `i` is 1 iff the decoder output exceeds 0.5.
    pub fn decode(&self, llr: &[f64]) -> Result<BinaryCode, NndError> {
        Ok(BinaryCode::new(hard_decision(&self.forward(llr)?), CodeRole::Final))
    }

    /// Decodes soft hashing activations under `mode`.
    pub fn decode_soft(&self, activations: &[f64], mode: InputMode) -> Result<BinaryCode, NndError> {
        self.decode(&self.input_llr(activations, mode))
    }

    /// Optional post-step: runs the algebraic decoder on the NND decision and
    /// keeps the corrected codeword when it succeeds.
    pub fn decode_projected(&self, code: &BchCode, llr: &[f64]) -> Result<BinaryCode, NndError> {
        let hard = self.decode(llr)?;
        let r = code.decode(hard.bits())?;
        if r.success {
            Ok(BinaryCode::new(r.codeword, CodeRole::Final))
        } else {
            Ok(hard)
        }
    }

    pub fn apply_gradients(&mut self, grads: &NndGradients, learning_rate: f64) {
        for (w, g) in self.edge_weights.iter_mut().zip(&grads.edge_weights) {
            w.iter_mut().zip(g).for_each(|(w, g)| *w -= learning_rate * g);
        }
        self.output_weights
            .iter_mut()
            .zip(&grads.output_weights)
            .for_each(|(w, g)| *w -= learning_rate * g);
    }

    /// Mean loss and summed gradients over a set of samples, reduced in sample order.
    pub fn batch_gradients(&self, samples: &[(&[f64], &[bool])]) -> Result<(f64, NndGradients), NndError> {
        let per: Vec<(f64, NndGradients)> = samples
            .par_iter()
            .map(|(llr, y)| self.loss_and_gradients(llr, y).map(|(l, g, _)| (l, g)))
            .collect::<Result<_, _>>()?;
        let mut total = NndGradients::zeros_like(self);
        let mut loss = 0.0;
        for (l, g) in &per {
            loss += l;
            total.add_assign(g);
        }
        let scale = 1.0 / samples.len() as f64;
        total.scale(scale);
        Ok((loss * scale, total))
    }

    pub fn to_document(&self) -> Result<NndDocument, NndError> {
        let code = self
            .code
            .ok_or_else(|| NndError::Format("only code-backed decoders can be serialized".into()))?;
        Ok(NndDocument {
            format_version: FORMAT_VERSION,
            code,
            iterations: self.iterations(),
            llr_clamp: self.llr_clamp,
            edge_order: EDGE_ORDER.to_string(),
            edge_weights: self.edge_weights.clone(),
            output_weights: self.output_weights.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String, NndError> {
        Ok(serde_json::to_string_pretty(&self.to_document()?)?)
    }

    pub fn from_document(doc: NndDocument) -> Result<Self, NndError> {
        if doc.format_version != FORMAT_VERSION {
            return Err(NndError::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                doc.format_version
            )));
        }
        if doc.edge_order != EDGE_ORDER {
            return Err(NndError::Format(format!("unknown edge order {:?}", doc.edge_order)));
        }
        let code = doc.code.build()?;
        let mut model = Self::for_code(&code, doc.iterations, doc.llr_clamp)?;
        let e = model.graph.edge_count();
        if doc.edge_weights.len() != doc.iterations
            || doc.edge_weights.iter().any(|w| w.len() != e)
            || doc.output_weights.len() != e
        {
            return Err(NndError::Format(format!(
                "weight arrays do not match {} iterations x {e} edges",
                doc.iterations
            )));
        }
        if doc.edge_weights.iter().flatten().chain(&doc.output_weights).any(|w| !w.is_finite()) {
            return Err(NndError::Format("non-finite weight".into()));
        }
        model.edge_weights = doc.edge_weights;
        model.output_weights = doc.output_weights;
        Ok(model)
    }

    pub fn from_json(s: &str) -> Result<Self, NndError> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

const EDGE_ORDER: &str = "parity_check_row_major";

/// On-disk form of an [`NndModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NndDocument {
    pub format_version: u32,
    pub code: CodeParams,
    pub iterations: usize,
    pub llr_clamp: f64,
    pub edge_order: String,
    pub edge_weights: Vec<Vec<f64>>,
    pub output_weights: Vec<f64>,
}

/// One training example: hashing-layer activations and the target codeword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NndSample {
    pub soft: Vec<f64>,
    pub target: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NndTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub input_mode: InputMode,
}

impl Default for NndTrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 30, batch_size: 16, seed: 17, input_mode: InputMode::Soft }
    }
}

/// Loss before training and after every epoch, each over the full dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// Mini-batch gradient descent on the mean BCE loss.
pub fn train(model: &mut NndModel, data: &[NndSample], cfg: &NndTrainConfig) -> Result<TrainHistory, NndError> {
    if data.is_empty() {
        return Err(NndError::EmptyDataset);
    }
    let llrs: Vec<Vec<f64>> = data.iter().map(|s| model.input_llr(&s.soft, cfg.input_mode)).collect();
    for (l, s) in llrs.iter().zip(data) {
        model.check_len(l.len())?;
        model.check_len(s.target.len())?;
    }
    let full: Vec<(&[f64], &[bool])> =
        llrs.iter().zip(data).map(|(l, s)| (l.as_slice(), s.target.as_slice())).collect();
    let initial_loss = model.batch_gradients(&full)?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let samples: Vec<(&[f64], &[bool])> = chunk.iter().map(|&i| full[i]).collect();
            let (_, grads) = model.batch_gradients(&samples)?;
            model.apply_gradients(&grads, cfg.learning_rate);
        }
        epoch_losses.push(model.batch_gradients(&full)?.0);
    }
    Ok(TrainHistory { initial_loss, epoch_losses })
}

/// Random codewords sent as BPSK (bit 0 -> +1) over an AWGN channel, stored
/// as activations `sigmoid(-llr)` with channel LLR `2y / sigma^2`.
pub fn awgn_dataset(code: &BchCode, count: usize, snr_db: (f64, f64), seed: u64) -> Result<Vec<NndSample>, NndError> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = code.k() as f64 / code.n() as f64;
    (0..count)
        .map(|_| {
            let msg: Vec<bool> = (0..code.k()).map(|_| rng.random::<bool>()).collect();
            let cw = code.encode(&msg)?;
            let snr = if snr_db.1 > snr_db.0 { rng.random_range(snr_db.0..snr_db.1) } else { snr_db.0 };
            let sigma = (1.0 / (2.0 * rate * 10f64.powf(snr / 10.0))).sqrt();
            let soft = cw
                .bits()
                .iter()
                .map(|&b| {
                    let x = if b { -1.0 } else { 1.0 };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let y = x + sigma * noise;
                    sigmoid(-2.0 * y / (sigma * sigma))
                })
                .collect();
            Ok(NndSample { soft, target: cw.into_bits() })
        })
        .collect()
}
