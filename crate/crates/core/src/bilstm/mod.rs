//! Bidirectional LSTM usage classifier with hand-written backpropagation.
//!
//! The forward cell reads the tokens left of the target (left to right), the
//! backward cell reads the tokens right of the target (right to left). Their
//! final hidden states are concatenated and passed through a tanh layer and a
//! sigmoid output unit. Embeddings are frozen; only out-of-vocabulary tokens
//! share one learned vector.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingTable, Sentence, Token, WordEntry};
use crate::error::{Error, Result};

mod dd;
mod reference;

use dd::Dd;

pub const BILSTM_FILE_VERSION: u32 = 1;
/// Negatives sampled per positive pool sentence.
pub const DEFAULT_NEG_RATIO: usize = 10;
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        t
    }

    fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(0)
    }

    fn is_consistent(&self) -> bool {
        self.shape.iter().product::<usize>() == self.data.len()
    }
}

/// Gate weights act on `[x; h_prev]`, shape `hidden × (dim + hidden)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub w_forget: Tensor,
    pub w_output: Tensor,
    pub w_candidate: Tensor,
    pub b_input: Tensor,
    pub b_forget: Tensor,
    pub b_output: Tensor,
    pub b_candidate: Tensor,
}

impl LstmCell {
    fn zeros(dim: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[hidden, dim + hidden]);
        let b = Tensor::zeros(&[hidden]);
        Self {
            w_input: w.clone(),
            w_forget: w.clone(),
            w_output: w.clone(),
            w_candidate: w,
            b_input: b.clone(),
            b_forget: b.clone(),
            b_output: b.clone(),
            b_candidate: b,
        }
    }

    fn init(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let shape = [hidden, dim + hidden];
        Self {
            w_input: Tensor::uniform(&shape, scale, rng),
            w_forget: Tensor::uniform(&shape, scale, rng),
            w_output: Tensor::uniform(&shape, scale, rng),
            w_candidate: Tensor::uniform(&shape, scale, rng),
            b_input: Tensor::zeros(&[hidden]),
            b_forget: Tensor::filled(&[hidden], 1.0),
            b_output: Tensor::zeros(&[hidden]),
            b_candidate: Tensor::zeros(&[hidden]),
        }
    }

    fn hidden(&self) -> usize {
        self.b_input.data.len()
    }

    fn blocks<'a>(&'a self, prefix: &'static str, out: &mut Vec<(String, &'a Tensor)>) {
        let named = [
            ("w_input", &self.w_input),
            ("w_forget", &self.w_forget),
            ("w_output", &self.w_output),
            ("w_candidate", &self.w_candidate),
            ("b_input", &self.b_input),
            ("b_forget", &self.b_forget),
            ("b_output", &self.b_output),
            ("b_candidate", &self.b_candidate),
        ];
        out.extend(named.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
    }

    fn blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([
            &mut self.w_input,
            &mut self.w_forget,
            &mut self.w_output,
            &mut self.w_candidate,
            &mut self.b_input,
            &mut self.b_forget,
            &mut self.b_output,
            &mut self.b_candidate,
        ]);
    }
}

/// Every trainable tensor. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub forward: LstmCell,
    pub backward: LstmCell,
    /// `d1 × 2·hidden`
    pub dense1_w: Tensor,
    pub dense1_b: Tensor,
    /// `1 × d1`
    pub dense2_w: Tensor,
    pub dense2_b: Tensor,
    pub unknown: Tensor,
}

impl BiLstmParams {
    pub fn zeros(dim: usize, hidden: usize, d1: usize) -> Self {
        Self {
            forward: LstmCell::zeros(dim, hidden),
            backward: LstmCell::zeros(dim, hidden),
            dense1_w: Tensor::zeros(&[d1, 2 * hidden]),
            dense1_b: Tensor::zeros(&[d1]),
            dense2_w: Tensor::zeros(&[1, d1]),
            dense2_b: Tensor::zeros(&[1]),
            unknown: Tensor::zeros(&[dim]),
        }
    }

    fn init(dim: usize, hidden: usize, d1: usize, rng: &mut ChaCha8Rng) -> Self {
        let forward = LstmCell::init(dim, hidden, rng);
        let backward = LstmCell::init(dim, hidden, rng);
        let s1 = (6.0 / (2 * hidden + d1) as f64).sqrt();
        let s2 = (6.0 / (d1 + 1) as f64).sqrt();
        Self {
            forward,
            backward,
            dense1_w: Tensor::uniform(&[d1, 2 * hidden], s1, rng),
            dense1_b: Tensor::zeros(&[d1]),
            dense2_w: Tensor::uniform(&[1, d1], s2, rng),
            dense2_b: Tensor::zeros(&[1]),
            unknown: Tensor::uniform(&[dim], 0.1, rng),
        }
    }

    pub fn blocks(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(21);
        self.forward.blocks("forward", &mut out);
        self.backward.blocks("backward", &mut out);
        out.push(("dense1_w".into(), &self.dense1_w));
        out.push(("dense1_b".into(), &self.dense1_b));
        out.push(("dense2_w".into(), &self.dense2_w));
        out.push(("dense2_b".into(), &self.dense2_b));
        out.push(("unknown".into(), &self.unknown));
        out
    }

    /// Same order as [`BiLstmParams::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(21);
        self.forward.blocks_mut(&mut out);
        self.backward.blocks_mut(&mut out);
        out.extend([
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
            &mut self.unknown,
        ]);
        out
    }

    fn axpy(&mut self, scale: f64, other: &BiLstmParams) {
        for (dst, (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }

    fn fill_zero(&mut self) {
        for t in self.blocks_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiLstmHyper {
    pub hidden_dim: usize,
    pub d1: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weight of positive samples, offsetting the 1:10 class ratio.
    pub pos_weight: f64,
    /// Tokens kept on each side of the target, nearest first.
    pub max_context: usize,
}

impl Default for BiLstmHyper {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            d1: 16,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            pos_weight: 10.0,
            max_context: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmTrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    /// Mean weighted training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmModel {
    pub dim: usize,
    pub hyper: BiLstmHyper,
    pub params: BiLstmParams,
    pub train_meta: BiLstmTrainMeta,
}

impl BiLstmModel {
    /// Seeded initial parameters, before any update.
    pub fn init(dim: usize, hyper: &BiLstmHyper) -> Result<Self> {
        if dim == 0 || hyper.hidden_dim == 0 || hyper.d1 == 0 {
            return Err(Error::InvalidArgument("dim, hidden_dim and d1 must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        Ok(Self::init_with(dim, hyper, &mut rng))
    }

    fn init_with(dim: usize, hyper: &BiLstmHyper, rng: &mut ChaCha8Rng) -> Self {
        Self {
            dim,
            hyper: *hyper,
            params: BiLstmParams::init(dim, hyper.hidden_dim, hyper.d1, rng),
            train_meta: BiLstmTrainMeta {
                seed: hyper.seed,
                epochs: 0,
                final_loss: None,
                epoch_losses: Vec::new(),
            },
        }
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.params.forward.hidden();
        let d1 = self.params.dense1_b.data.len();
        let expect = BiLstmParams::zeros(self.dim, h, d1);
        let ok = self
            .params
            .blocks()
            .iter()
            .zip(expect.blocks())
            .all(|((_, a), (_, b))| a.shape == b.shape && a.is_consistent());
        if !ok || h != self.hyper.hidden_dim || d1 != self.hyper.d1 {
            return Err(Error::InvalidArgument("inconsistent BiLSTM shapes".into()));
        }
        Ok(())
    }
}

/// Tokens left and right of a (pseudo-)target; the target itself is dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledContext {
    pub source_id: String,
    pub left: Vec<Token>,
    pub right: Vec<Token>,
    pub label: u8,
}

impl LabeledContext {
    pub fn from_sentence(sentence: &Sentence, label: u8) -> Result<Self> {
        let t = sentence.target()?;
        Ok(Self::split(sentence, t, label))
    }

    fn split(sentence: &Sentence, at: usize, label: u8) -> Self {
        Self {
            source_id: sentence.id.clone(),
            left: sentence.tokens[..at].to_vec(),
            right: sentence.tokens[at + 1..].to_vec(),
            label,
        }
    }
}

/// One positive per pool sentence plus `neg_ratio` negatives each, sampled
/// without replacement from corpus sentences that contain no form of `word`.
/// Negatives are split at a uniformly drawn pseudo-target position.
pub fn build_training_set(
    pool: &[Sentence],
    corpus: &[Sentence],
    word: &WordEntry,
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledContext>> {
    let mut out = pool
        .iter()
        .map(|s| LabeledContext::from_sentence(s, 1))
        .collect::<Result<Vec<_>>>()?;
    let needed = pool.len() * neg_ratio;
    if needed == 0 {
        return Ok(out);
    }
    let candidates: Vec<&Sentence> = corpus.iter().filter(|s| !s.contains_any(&word.forms)).collect();
    if candidates.len() < needed {
        return Err(Error::NotEnoughNegatives {
            needed,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, candidates.len(), needed);
    for i in picks.iter() {
        let s = candidates[i];
        let at = rng.random_range(0..s.tokens.len());
        out.push(LabeledContext::split(s, at, 0));
    }
    Ok(out)
}

enum Input<'a> {
    Known(&'a [f64]),
    Unknown,
}

impl<'a> Input<'a> {
    fn values<'b>(&'b self, params: &'b BiLstmParams) -> &'b [f64]
    where
        'a: 'b,
    {
        match self {
            Input::Known(v) => v,
            Input::Unknown => &params.unknown.data,
        }
    }
}

fn lookup<'a>(table: &'a EmbeddingTable, tokens: &[&Token]) -> Vec<Input<'a>> {
    tokens
        .iter()
        .map(|t| table.embed(t).map_or(Input::Unknown, Input::Known))
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

struct Step {
    concat: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

fn matvec(w: &Tensor, x: &[f64], bias: &Tensor, out: &mut [f64]) {
    let cols = w.cols();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data[r * cols..(r + 1) * cols];
        *o = bias.data[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Runs the cell over `inputs` from a zero state. Returns the final hidden
/// state and the per-step caches needed for backpropagation.
fn run_cell(cell: &LstmCell, params: &BiLstmParams, inputs: &[Input]) -> (Vec<f64>, Vec<Step>) {
    let h = cell.hidden();
    let mut hidden = vec![0.0; h];
    let mut state = vec![0.0; h];
    let mut steps = Vec::with_capacity(inputs.len());
    for input in inputs {
        let mut concat = input.values(params).to_vec();
        concat.extend_from_slice(&hidden);
        let mut i = vec![0.0; h];
        let mut f = vec![0.0; h];
        let mut o = vec![0.0; h];
        let mut g = vec![0.0; h];
        matvec(&cell.w_input, &concat, &cell.b_input, &mut i);
        matvec(&cell.w_forget, &concat, &cell.b_forget, &mut f);
        matvec(&cell.w_output, &concat, &cell.b_output, &mut o);
        matvec(&cell.w_candidate, &concat, &cell.b_candidate, &mut g);
        i.iter_mut().for_each(|v| *v = sigmoid(*v));
        f.iter_mut().for_each(|v| *v = sigmoid(*v));
        o.iter_mut().for_each(|v| *v = sigmoid(*v));
        g.iter_mut().for_each(|v| *v = v.tanh());
        let c_prev = state.clone();
        let mut tanh_c = vec![0.0; h];
        for k in 0..h {
            state[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = state[k].tanh();
            hidden[k] = o[k] * tanh_c[k];
        }
        steps.push(Step {
            concat,
            c_prev,
            i,
            f,
            o,
            g,
            tanh_c,
        });
    }
    (hidden, steps)
}

fn accumulate_gate(w: &Tensor, dz: &[f64], concat: &[f64], gw: &mut Tensor, gb: &mut Tensor, dconcat: &mut [f64]) {
    let cols = w.cols();
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb.data[r] += d;
        let row = &w.data[r * cols..(r + 1) * cols];
        let grow = &mut gw.data[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] += d * concat[c];
            dconcat[c] += d * row[c];
        }
    }
}

/// Backpropagates `d_hidden` (gradient at the final hidden state) through
/// the unrolled cell, accumulating into `grad_cell` and `grad_unknown`.
fn backprop_cell(
    cell: &LstmCell,
    steps: &[Step],
    inputs: &[Input],
    d_hidden: Vec<f64>,
    grad_cell: &mut LstmCell,
    grad_unknown: &mut Tensor,
) {
    let h = cell.hidden();
    let dim = cell.w_input.cols() - h;
    let mut dh = d_hidden;
    let mut dc = vec![0.0; h];
    let mut dz_i = vec![0.0; h];
    let mut dz_f = vec![0.0; h];
    let mut dz_o = vec![0.0; h];
    let mut dz_g = vec![0.0; h];
    for (step, input) in steps.iter().zip(inputs).rev() {
        for k in 0..h {
            let d_o = dh[k] * step.tanh_c[k];
            let d_c = dc[k] + dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            dz_i[k] = d_c * step.g[k] * step.i[k] * (1.0 - step.i[k]);
            dz_f[k] = d_c * step.c_prev[k] * step.f[k] * (1.0 - step.f[k]);
            dz_o[k] = d_o * step.o[k] * (1.0 - step.o[k]);
            dz_g[k] = d_c * step.i[k] * (1.0 - step.g[k] * step.g[k]);
            dc[k] = d_c * step.f[k];
        }
        let mut dconcat = vec![0.0; dim + h];
        accumulate_gate(
            &cell.w_input,
            &dz_i,
            &step.concat,
            &mut grad_cell.w_input,
            &mut grad_cell.b_input,
            &mut dconcat,
        );
        accumulate_gate(
            &cell.w_forget,
            &dz_f,
            &step.concat,
            &mut grad_cell.w_forget,
            &mut grad_cell.b_forget,
            &mut dconcat,
        );
        accumulate_gate(
            &cell.w_output,
            &dz_o,
            &step.concat,
            &mut grad_cell.w_output,
            &mut grad_cell.b_output,
            &mut dconcat,
        );
        accumulate_gate(
            &cell.w_candidate,
            &dz_g,
            &step.concat,
            &mut grad_cell.w_candidate,
            &mut grad_cell.b_candidate,
            &mut dconcat,
        );
        if let Input::Unknown = input {
            for (g, d) in grad_unknown.data.iter_mut().zip(&dconcat[..dim]) {
                *g += d;
            }
        }
        dh = dconcat[dim..].to_vec();
    }
}

struct Forward<'a> {
    left: Vec<Input<'a>>,
    right: Vec<Input<'a>>,
    left_steps: Vec<Step>,
    right_steps: Vec<Step>,
    joined: Vec<f64>,
    dense1: Vec<f64>,
    logit: f64,
}

/// Left context read nearest-last, right context reversed so the backward
/// cell also ends next to the target.
fn forward<'a>(model: &BiLstmModel, table: &'a EmbeddingTable, left: &[Token], right: &[Token]) -> Forward<'a> {
    let p = &model.params;
    let keep = model.hyper.max_context;
    let left_tokens: Vec<&Token> = left[left.len().saturating_sub(keep)..].iter().collect();
    let right_tokens: Vec<&Token> = right.iter().take(keep).rev().collect();
    let left = lookup(table, &left_tokens);
    let right = lookup(table, &right_tokens);
    let (h_f, left_steps) = run_cell(&p.forward, p, &left);
    let (h_b, right_steps) = run_cell(&p.backward, p, &right);
    let mut joined = h_f;
    joined.extend(h_b);
    let mut dense1 = vec![0.0; p.dense1_b.data.len()];
    matvec(&p.dense1_w, &joined, &p.dense1_b, &mut dense1);
    dense1.iter_mut().for_each(|v| *v = v.tanh());
    let logit = p.dense2_b.data[0] + p.dense2_w.data.iter().zip(&dense1).map(|(a, b)| a * b).sum::<f64>();
    Forward {
        left,
        right,
        left_steps,
        right_steps,
        joined,
        dense1,
        logit,
    }
}

fn sample_loss(model: &BiLstmModel, logit: f64, label: u8) -> f64 {
    if label == 1 {
        model.hyper.pos_weight * softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Weighted cross-entropy of one sample.
pub fn loss(model: &BiLstmModel, sample: &LabeledContext, table: &EmbeddingTable) -> f64 {
    let fwd = forward(model, table, &sample.left, &sample.right);
    sample_loss(model, fwd.logit, sample.label)
}

/// Adds the sample's loss gradient into `grads`; returns the loss.
fn accumulate_gradients(
    model: &BiLstmModel,
    sample: &LabeledContext,
    table: &EmbeddingTable,
    grads: &mut BiLstmParams,
) -> f64 {
    let p = &model.params;
    let fwd = forward(model, table, &sample.left, &sample.right);
    let weight = if sample.label == 1 { model.hyper.pos_weight } else { 1.0 };
    let d_logit = weight * (sigmoid(fwd.logit) - f64::from(sample.label));

    grads.dense2_b.data[0] += d_logit;
    let d1 = fwd.dense1.len();
    let mut dz1 = vec![0.0; d1];
    for k in 0..d1 {
        grads.dense2_w.data[k] += d_logit * fwd.dense1[k];
        dz1[k] = d_logit * p.dense2_w.data[k] * (1.0 - fwd.dense1[k] * fwd.dense1[k]);
    }
    let width = fwd.joined.len();
    let mut d_joined = vec![0.0; width];
    for (r, &d) in dz1.iter().enumerate() {
        grads.dense1_b.data[r] += d;
        for c in 0..width {
            grads.dense1_w.data[r * width + c] += d * fwd.joined[c];
            d_joined[c] += d * p.dense1_w.data[r * width + c];
        }
    }
    let h = width / 2;
    let d_back = d_joined.split_off(h);
    backprop_cell(
        &p.forward,
        &fwd.left_steps,
        &fwd.left,
        d_joined,
        &mut grads.forward,
        &mut grads.unknown,
    );
    backprop_cell(
        &p.backward,
        &fwd.right_steps,
        &fwd.right,
        d_back,
        &mut grads.backward,
        &mut grads.unknown,
    );
    sample_loss(model, fwd.logit, sample.label)
}

/// Loss and its analytic gradient for a single sample.
pub fn loss_and_gradients(model: &BiLstmModel, sample: &LabeledContext, table: &EmbeddingTable) -> (f64, BiLstmParams) {
    let mut grads = BiLstmParams::zeros(model.dim, model.hyper.hidden_dim, model.hyper.d1);
    let loss = accumulate_gradients(model, sample, table, &mut grads);
    (loss, grads)
}

/// Central differences of the sample loss for every parameter entry.
///
/// The perturbed losses are evaluated by an independent forward pass in
/// double-double precision, so the differences resolve gradients far below
/// the f64 rounding floor of `loss(θ+h) - loss(θ-h)`.
pub fn numeric_gradients(
    model: &BiLstmModel,
    sample: &LabeledContext,
    table: &EmbeddingTable,
    step: f64,
) -> BiLstmParams {
    let mut grads = BiLstmParams::zeros(model.dim, model.hyper.hidden_dim, model.hyper.d1);
    let originals: Vec<Vec<f64>> = model.params.blocks().iter().map(|(_, t)| t.data.clone()).collect();
    let h = Dd::from_f64(step);
    let scale = Dd::from_f64(2.0 * step);
    for (block, (values, out)) in originals.iter().zip(grads.blocks_mut()).enumerate() {
        for (index, (&theta, g)) in values.iter().zip(out.data.iter_mut()).enumerate() {
            let at = |value| reference::Override { block, index, value };
            let plus = reference::loss(model, sample, table, Some(at(Dd::from_f64(theta) + h)));
            let minus = reference::loss(model, sample, table, Some(at(Dd::from_f64(theta) - h)));
            *g = ((plus - minus) / scale).to_f64();
        }
    }
    grads
}

/// `max |a - n| / (|a| + |n| + 1e-12)` over every entry of every block.
pub fn max_relative_error(analytic: &BiLstmParams, numeric: &BiLstmParams) -> f64 {
    analytic
        .blocks()
        .iter()
        .zip(numeric.blocks())
        .flat_map(|((_, a), (_, n))| a.data.iter().zip(n.data.iter()))
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + 1e-12))
        .fold(0.0, f64::max)
}

/// Largest relative disagreement between backpropagated and finite-difference
/// gradients.
pub fn gradient_check(model: &BiLstmModel, sample: &LabeledContext, table: &EmbeddingTable) -> f64 {
    let (_, analytic) = loss_and_gradients(model, sample, table);
    let numeric = numeric_gradients(model, sample, table, GRADIENT_CHECK_STEP);
    max_relative_error(&analytic, &numeric)
}

/// Mini-batch gradient descent on the weighted cross-entropy. Batches follow
/// a per-epoch shuffle drawn from the same seeded stream as the initial
/// weights.
pub fn train_bilstm(data: &[LabeledContext], table: &EmbeddingTable, hyper: &BiLstmHyper) -> Result<BiLstmModel> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "batch_size and learning_rate must be positive".into(),
        ));
    }
    if hyper.hidden_dim == 0 || hyper.d1 == 0 {
        return Err(Error::InvalidArgument("hidden_dim and d1 must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut model = BiLstmModel::init_with(table.dim(), hyper, &mut rng);
    let mut grads = BiLstmParams::zeros(table.dim(), hyper.hidden_dim, hyper.d1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            grads.fill_zero();
            for &i in batch {
                total += accumulate_gradients(&model, &data[i], table, &mut grads);
            }
            model.params.axpy(-hyper.learning_rate / batch.len() as f64, &grads);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.params.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        model.train_meta.epoch_losses.push(mean);
        model.train_meta.epochs = epoch;
        model.train_meta.final_loss = Some(mean);
    }
    Ok(model)
}

/// Predicted probability that the context belongs to the model's word,
/// kept inside the open interval (0, 1).
pub fn context_probability(model: &BiLstmModel, left: &[Token], right: &[Token], table: &EmbeddingTable) -> f64 {
    let fwd = forward(model, table, left, right);
    sigmoid(fwd.logit).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// P(s|w): the probability of the sentence's context around its target.
pub fn bilstm_fitness(model: &BiLstmModel, sentence: &Sentence, table: &EmbeddingTable) -> Result<f64> {
    let t = sentence.target()?;
    Ok(context_probability(
        model,
        &sentence.tokens[..t],
        &sentence.tokens[t + 1..],
        table,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmFile {
    pub version: u32,
    pub word: String,
    pub dim: usize,
    pub hyper: BiLstmHyper,
    pub params: BiLstmParams,
    pub train_meta: BiLstmTrainMeta,
}

impl BiLstmFile {
    pub fn new(word: &str, model: &BiLstmModel) -> Self {
        Self {
            version: BILSTM_FILE_VERSION,
            word: word.to_string(),
            dim: model.dim,
            hyper: model.hyper,
            params: model.params.clone(),
            train_meta: model.train_meta.clone(),
        }
    }

    pub fn into_model(self) -> Result<BiLstmModel> {
        if self.version != BILSTM_FILE_VERSION {
            return Err(Error::Version {
                kind: "bilstm",
                found: self.version,
                expected: BILSTM_FILE_VERSION,
            });
        }
        let model = BiLstmModel {
            dim: self.dim,
            hyper: self.hyper,
            params: self.params,
            train_meta: self.train_meta,
        };
        model.check_shapes()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_embeddings, SourceTag};

    fn table() -> EmbeddingTable {
        let text = "a 0.5 -0.2 0.1\nb -0.3 0.8 0.4\nc 0.9 0.1 -0.7\nd -0.6 -0.5 0.2\n";
        load_embeddings(text.as_bytes(), 3).unwrap()
    }

    fn tokens(words: &[&str]) -> Vec<Token> {
        words.iter().map(|w| Token::new(*w).unwrap()).collect()
    }

    fn small_hyper(seed: u64) -> BiLstmHyper {
        BiLstmHyper {
            hidden_dim: 4,
            d1: 3,
            seed,
            ..BiLstmHyper::default()
        }
    }

    fn sample(left: &[&str], right: &[&str], label: u8) -> LabeledContext {
        LabeledContext {
            source_id: "s".into(),
            left: tokens(left),
            right: tokens(right),
            label,
        }
    }

    #[test]
    fn zero_output_layer_gives_half() {
        let mut model = BiLstmModel::init(3, &small_hyper(1)).unwrap();
        model.params.dense2_w.data.iter_mut().for_each(|v| *v = 0.0);
        model.params.dense2_b.data[0] = 0.0;
        let s = Sentence::new("x", tokens(&["a", "zz", "b", "c"]), SourceTag::Corpus)
            .unwrap()
            .with_target(1)
            .unwrap();
        assert_eq!(bilstm_fitness(&model, &s, &table()).unwrap(), 0.5);
    }

    #[test]
    fn empty_left_side_is_zero_state() {
        let model = BiLstmModel::init(3, &small_hyper(2)).unwrap();
        let t = table();
        let fwd = forward(&model, &t, &[], &tokens(&["a", "b"]));
        assert!(fwd.left_steps.is_empty());
        assert!(fwd.joined[..4].iter().all(|v| *v == 0.0));
        assert!(fwd.joined[4..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn output_stays_inside_unit_interval() {
        let mut model = BiLstmModel::init(3, &small_hyper(3)).unwrap();
        let s = Sentence::new("x", tokens(&["a", "t", "b"]), SourceTag::Corpus)
            .unwrap()
            .with_target(1)
            .unwrap();
        for bias in [-1e4, -50.0, 0.0, 50.0, 1e4] {
            model.params.dense2_b.data[0] = bias;
            let p = bilstm_fitness(&model, &s, &table()).unwrap();
            assert!(p > 0.0 && p < 1.0, "{bias}: {p}");
        }
    }

    #[test]
    fn fitness_ignores_target_surface() {
        let model = BiLstmModel::init(3, &small_hyper(4)).unwrap();
        let t = table();
        let base = Sentence::new("x", tokens(&["a", "b", "refused", "c", "d"]), SourceTag::Corpus)
            .unwrap()
            .with_target(2)
            .unwrap();
        let reference = bilstm_fitness(&model, &base, &t).unwrap();
        for w in ["rejected", "a", "qq"] {
            let mut s = base.clone();
            s.tokens[2] = Token::new(w).unwrap();
            assert_eq!(bilstm_fitness(&model, &s, &t).unwrap(), reference);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = table();
        for seed in 0..5 {
            let model = BiLstmModel::init(3, &small_hyper(seed)).unwrap();
            let s = sample(&["a", "qq", "b"], &["c", "d"], (seed % 2) as u8);
            let err = gradient_check(&model, &s, &t);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn reference_loss_matches_fast_path() {
        let t = table();
        for seed in 0..4 {
            let model = BiLstmModel::init(3, &small_hyper(seed)).unwrap();
            for label in [0, 1] {
                let s = sample(&["b", "a", "zz", "c"], &["d", "zz"], label);
                let fast = loss(&model, &s, &t);
                let exact = reference::loss(&model, &s, &t, None).to_f64();
                assert!((fast - exact).abs() < 1e-12 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn context_truncation_keeps_nearest_tokens() {
        let t = table();
        let hyper = BiLstmHyper {
            max_context: 2,
            ..small_hyper(12)
        };
        let model = BiLstmModel::init(3, &hyper).unwrap();
        let long = sample(&["zz", "d", "c", "a", "b"], &["c", "d", "a", "b"], 1);
        let short = sample(&["a", "b"], &["c", "d"], 1);
        assert_eq!(loss(&model, &long, &t), loss(&model, &short, &t));
        assert!(gradient_check(&model, &long, &t) < 1e-4);
    }

    #[test]
    fn stationary_point_has_zero_gradients() {
        let t = table();
        let mut model = BiLstmModel::init(3, &small_hyper(5)).unwrap();
        model.params.dense2_b.data[0] = -1000.0;
        let s = sample(&["a", "b"], &["c"], 0);
        let (loss, grads) = loss_and_gradients(&model, &s, &t);
        assert_eq!(loss, 0.0);
        assert!(grads.blocks().iter().all(|(_, g)| g.data.iter().all(|v| *v == 0.0)));
        assert_eq!(gradient_check(&model, &s, &t), 0.0);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let t = table();
        let model = BiLstmModel::init(3, &small_hyper(6)).unwrap();
        let s = sample(&["a", "b", "c"], &["d", "a"], 1);
        let (_, mut analytic) = loss_and_gradients(&model, &s, &t);
        let numeric = numeric_gradients(&model, &s, &t, GRADIENT_CHECK_STEP);
        assert!(max_relative_error(&analytic, &numeric) < 1e-4);
        analytic.dense1_w.data[2] *= 1.1;
        assert!(max_relative_error(&analytic, &numeric) > 1e-2);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let t = table();
        let hyper = BiLstmHyper {
            epochs: 0,
            ..small_hyper(7)
        };
        let trained = train_bilstm(&[sample(&["a"], &["b"], 1)], &t, &hyper).unwrap();
        let init = BiLstmModel::init(3, &hyper).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn constant_input_converges_to_label_rate() {
        let t = table();
        let data: Vec<LabeledContext> = (0..10).map(|i| sample(&["a", "b"], &["c"], u8::from(i < 3))).collect();
        let hyper = BiLstmHyper {
            pos_weight: 1.0,
            learning_rate: 0.5,
            epochs: 400,
            batch_size: 10,
            ..small_hyper(8)
        };
        let model = train_bilstm(&data, &t, &hyper).unwrap();
        let s = Sentence::new("x", tokens(&["a", "b", "T", "c"]), SourceTag::Corpus)
            .unwrap()
            .with_target(2)
            .unwrap();
        let p = bilstm_fitness(&model, &s, &t).unwrap();
        assert!((p - 0.3).abs() < 0.01, "{p}");
    }

    #[test]
    fn empty_data_is_rejected() {
        assert!(train_bilstm(&[], &table(), &small_hyper(0)).is_err());
    }

    #[test]
    fn divergence_names_epoch() {
        let t = table();
        let hyper = BiLstmHyper {
            learning_rate: f64::MAX,
            epochs: 3,
            batch_size: 1,
            ..small_hyper(9)
        };
        let data = vec![sample(&["a"], &["b"], 1), sample(&["c"], &["d"], 0)];
        match train_bilstm(&data, &t, &hyper) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn corpus_sentences(lines: &[&str]) -> Vec<Sentence> {
        crate::corpus::read_corpus(lines.join("\n").as_bytes(), "c", SourceTag::Corpus).unwrap()
    }

    #[test]
    fn training_set_counts_and_exclusion() {
        let word = WordEntry::new("refuse", ["refused"]);
        let corpus = corpus_sentences(&[
            "she refused the offer",
            "the cat sat",
            "dogs bark loudly",
            "we refuse nothing",
            "rain fell all day",
            "a b c",
        ]);
        let pool = crate::corpus::build_pool(&corpus, &word, 10);
        assert_eq!(pool.len(), 2);

        let set = build_training_set(&pool, &corpus, &word, 2, 11).unwrap();
        assert_eq!(set.iter().filter(|s| s.label == 1).count(), 2);
        assert_eq!(set.iter().filter(|s| s.label == 0).count(), 4);
        for neg in set.iter().filter(|s| s.label == 0) {
            assert!(!["c0000000", "c0000003"].contains(&neg.source_id.as_str()));
        }
        let mut ids: Vec<&str> = set
            .iter()
            .filter(|s| s.label == 0)
            .map(|s| s.source_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4, "negatives drawn without replacement");

        let positives_only = build_training_set(&pool, &corpus, &word, 0, 11).unwrap();
        assert_eq!(positives_only.len(), 2);

        let err = build_training_set(&pool, &corpus, &word, 3, 11).unwrap_err();
        assert!(matches!(
            err,
            Error::NotEnoughNegatives {
                needed: 6,
                available: 4
            }
        ));
    }

    #[test]
    fn training_set_is_replayable() {
        let word = WordEntry::new("x", Vec::<String>::new());
        let lines: Vec<String> = (0..50).map(|i| format!("w{i} v{i} u{i} t{i}")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let mut corpus = corpus_sentences(&refs);
        corpus.extend(corpus_sentences(&["the x here"]));
        corpus.last_mut().unwrap().id = "target".into();
        let pool = crate::corpus::build_pool(&corpus, &word, 10);
        let a = build_training_set(&pool, &corpus, &word, 10, 5).unwrap();
        let b = build_training_set(&pool, &corpus, &word, 10, 5).unwrap();
        assert_eq!(a, b);
        let c = build_training_set(&pool, &corpus, &word, 10, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn file_round_trip() {
        let model = BiLstmModel::init(3, &small_hyper(10)).unwrap();
        let file = BiLstmFile::new("refuse", &model);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"shape\":[4,7]"));
        let back: BiLstmFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_model().unwrap(), model);
    }
}
