//! Frozen random embedding, single-layer LSTM, and a tied output projection
//! over the final hidden state.
//!
//! The only trainable parameters are the LSTM gate weights ([`LstmWeights`]).
//! The embedding lives behind an `Arc` that is never mutated; the output
//! projection is that same matrix, so `logits = E · h_n` with no output bias.
//!
//! Gate rows inside every `4d` block are laid out as `(i, f, g, o)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::datagen::{label_index, Example};
use crate::error::{Error, Result};
use crate::numkit::{self, gemm, init_uniform, Matrix, Op, RandomStream};

pub const GATE_I: usize = 0;
pub const GATE_F: usize = 1;
pub const GATE_G: usize = 2;
pub const GATE_O: usize = 3;

/// The frozen embedding is initialized on `±gain/√d`. With gain 1 the tied
/// output logits are too small to move off the uniform prediction; with a
/// fixed `±1` the d=200 model fits training pairs by lookup long before it
/// learns to copy.
pub const DEFAULT_EMBEDDING_GAIN: f64 = 7.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Hidden size; also the embedding width because of weight tying.
    pub hidden: usize,
    pub seed: u64,
    /// Half-width of the uniform init for `W_x` and `W_h`.
    pub init_scale: f64,
    /// Half-width of the uniform init for the frozen embedding.
    pub embedding_scale: f64,
}

impl ModelConfig {
    /// Defaults: gate weights on `±1/√d`, embedding entries on
    /// `±DEFAULT_EMBEDDING_GAIN/√d`.
    pub fn new(vocab_size: usize, hidden: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            hidden,
            seed,
            init_scale: 1.0 / (hidden.max(1) as f64).sqrt(),
            embedding_scale: DEFAULT_EMBEDDING_GAIN / (hidden.max(1) as f64).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocabulary size must be >= 2, got {}", self.vocab_size)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be >= 1".into()));
        }
        for (name, v) in [("init_scale", self.init_scale), ("embedding_scale", self.embedding_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The trainable LSTM parameters. Also used for gradients and Adam moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    /// `4d × d`, input to gates.
    pub w_x: Matrix,
    /// `4d × d`, previous hidden state to gates.
    pub w_h: Matrix,
    /// `4d`
    pub b: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden, hidden),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_x.cols()
    }

    pub fn tensors(&self) -> [&[f64]; 3] {
        [self.w_x.data(), self.w_h.data(), &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [self.w_x.data_mut(), self.w_h.data_mut(), &mut self.b]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w_x.shape() == other.w_x.shape() && self.w_h.shape() == other.w_h.shape() && self.b.len() == other.b.len()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Flat copy in `(w_x, w_h, b)` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        let d = self.hidden();
        &self.b[gate * d..(gate + 1) * d]
    }
}

/// Everything the model computes with.
#[derive(Clone, Debug)]
pub struct LstmParams {
    config: ModelConfig,
    pub weights: LstmWeights,
    embedding: Arc<Matrix>,
}

impl LstmParams {
    pub fn from_parts(config: ModelConfig, weights: LstmWeights, embedding: Matrix) -> Result<Self> {
        config.validate()?;
        let d = config.hidden;
        if embedding.shape() != (config.vocab_size, d) {
            return Err(Error::Shape(format!(
                "embedding is {:?}, expected ({}, {d})",
                embedding.shape(),
                config.vocab_size
            )));
        }
        if weights.w_x.shape() != (4 * d, d) || weights.w_h.shape() != (4 * d, d) || weights.b.len() != 4 * d {
            return Err(Error::Shape(format!("LSTM weights do not match hidden size {d}")));
        }
        Ok(Self {
            config,
            weights,
            embedding: Arc::new(embedding),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    /// Frozen input embedding, `V × d`.
    pub fn embedding(&self) -> &Matrix {
        &self.embedding
    }

    /// Output projection; the same storage as [`Self::embedding`].
    pub fn output_projection(&self) -> &Matrix {
        &self.embedding
    }

    pub fn embedding_handle(&self) -> &Arc<Matrix> {
        &self.embedding
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Data("empty input sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Data(format!(
                "token id {bad} out of range for V={}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Random initialization: embedding and gate weights uniform, biases zero
/// except the forget-gate slice at +1.
pub fn init_model(config: &ModelConfig) -> Result<LstmParams> {
    config.validate()?;
    let d = config.hidden;
    let embedding = init_uniform(
        &mut RandomStream::new(config.seed, "model/embedding-init"),
        config.vocab_size,
        d,
        config.embedding_scale,
    )?;
    let mut lstm_rng = RandomStream::new(config.seed, "model/lstm-init");
    let w_x = init_uniform(&mut lstm_rng, 4 * d, d, config.init_scale)?;
    let w_h = init_uniform(&mut lstm_rng, 4 * d, d, config.init_scale)?;
    let mut b = vec![0.0; 4 * d];
    b[GATE_F * d..(GATE_F + 1) * d].fill(1.0);
    LstmParams::from_parts(config.clone(), LstmWeights { w_x, w_h, b }, embedding)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Activated gates for one step, `(i, f, g, o)` blocks of width `d`.
fn activate_gates(pre: &mut [f64], d: usize) {
    let (sig_lo, rest) = pre.split_at_mut(GATE_G * d);
    let (g, sig_hi) = rest.split_at_mut(d);
    numkit::sigmoid_slice(sig_lo);
    numkit::tanh_slice(g);
    numkit::sigmoid_slice(sig_hi);
}

fn step_with_gates(w: &LstmWeights, state: &LstmState, x: &[f64]) -> (Vec<f64>, LstmState, Vec<f64>) {
    let d = w.hidden();
    let mut pre = w.b.clone();
    for (r, p) in pre.iter_mut().enumerate() {
        *p += numkit::dot(w.w_x.row(r), x) + numkit::dot(w.w_h.row(r), &state.h);
    }
    activate_gates(&mut pre, d);
    let gates = pre;
    let mut c = vec![0.0; d];
    let mut h = vec![0.0; d];
    let mut tanh_c = vec![0.0; d];
    for j in 0..d {
        let (i, f, g) = (gates[j], gates[d + j], gates[2 * d + j]);
        c[j] = f * state.c[j] + i * g;
    }
    tanh_c.copy_from_slice(&c);
    numkit::tanh_slice(&mut tanh_c);
    for j in 0..d {
        h[j] = gates[3 * d + j] * tanh_c[j];
    }
    (gates, LstmState { h, c }, tanh_c)
}

/// One LSTM transition: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(weights: &LstmWeights, state: &LstmState, x: &[f64]) -> Result<LstmState> {
    let d = weights.hidden();
    if x.len() != d || state.h.len() != d || state.c.len() != d {
        return Err(Error::Shape(format!(
            "lstm_step: hidden size {d}, got x={}, h={}, c={}",
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    Ok(step_with_gates(weights, state, x).1)
}

#[derive(Clone, Debug)]
pub struct StepCache {
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

/// Per-timestep activations kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepCache>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn final_state(&self) -> LstmState {
        let last = self.steps.last().expect("non-empty cache");
        LstmState {
            h: last.h.clone(),
            c: last.c.clone(),
        }
    }
}

/// Embed, run the LSTM from the zero state, project the last hidden state.
pub fn forward(params: &LstmParams, tokens: &[TokenId]) -> Result<(Vec<f64>, ForwardCache)> {
    params.check_tokens(tokens)?;
    let d = params.hidden();
    let mut state = LstmState::zeros(d);
    let mut steps = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let (gates, next, tanh_c) = step_with_gates(&params.weights, &state, params.embedding().row(t as usize));
        steps.push(StepCache {
            gates,
            c: next.c.clone(),
            tanh_c,
            h: next.h.clone(),
        });
        state = next;
    }
    let logits = params.output_projection().matvec(&state.h)?;
    Ok((
        logits.clone(),
        ForwardCache {
            tokens: tokens.to_vec(),
            steps,
            logits,
        },
    ))
}

/// Backpropagation through time for one example. Returns the loss and the
/// gradient with respect to the trainable weights only.
pub fn backward(params: &LstmParams, cache: &ForwardCache, label: TokenId) -> Result<(f64, LstmWeights)> {
    let d = params.hidden();
    let label = label as usize;
    if label >= params.vocab_size() {
        return Err(Error::Data(format!("label {label} out of range for V={}", params.vocab_size())));
    }
    let loss = numkit::softmax_cross_entropy(&cache.logits, label)?;
    let mut dlogits = numkit::softmax(&cache.logits)?;
    dlogits[label] -= 1.0;
    let mut dh = params.output_projection().matvec_t(&dlogits)?;
    let mut dc = vec![0.0; d];

    let mut grad = LstmWeights::zeros(d);
    let mut da = vec![0.0; 4 * d];
    let zeros = vec![0.0; d];
    for t in (0..cache.steps.len()).rev() {
        let s = &cache.steps[t];
        let (c_prev, h_prev) = if t > 0 {
            (&cache.steps[t - 1].c, &cache.steps[t - 1].h)
        } else {
            (&zeros, &zeros)
        };
        for j in 0..d {
            let (i, f, g, o) = (s.gates[j], s.gates[d + j], s.gates[2 * d + j], s.gates[3 * d + j]);
            let tc = s.tanh_c[j];
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            let d_o = dh[j] * tc;
            let d_i = dc[j] * g;
            let d_g = dc[j] * i;
            let d_f = dc[j] * c_prev[j];
            da[j] = d_i * i * (1.0 - i);
            da[d + j] = d_f * f * (1.0 - f);
            da[2 * d + j] = d_g * (1.0 - g * g);
            da[3 * d + j] = d_o * o * (1.0 - o);
            dc[j] *= f;
        }
        let x = params.embedding().row(cache.tokens[t] as usize);
        for (r, &a) in da.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            numkit::axpy(a, x, grad.w_x.row_mut(r));
            numkit::axpy(a, h_prev, grad.w_h.row_mut(r));
            grad.b[r] += a;
        }
        dh = params.weights.w_h.matvec_t(&da)?;
    }
    Ok((loss, grad))
}

/// Argmax of the logits, lowest id on ties.
pub fn predict(params: &LstmParams, tokens: &[TokenId]) -> Result<TokenId> {
    let (logits, _) = forward(params, tokens)?;
    Ok(numkit::argmax(&logits) as TokenId)
}

/// `(h_t, c_t)` after each of the `n` inputs.
pub fn record_states(params: &LstmParams, tokens: &[TokenId]) -> Result<Vec<LstmState>> {
    let (_, cache) = forward(params, tokens)?;
    Ok(cache
        .steps
        .into_iter()
        .map(|s| LstmState { h: s.h, c: s.c })
        .collect())
}

/// Per-step matrices for a batch, rows are examples.
struct BatchStep {
    x: Matrix,
    gates: Matrix,
    c: Matrix,
    tanh_c: Matrix,
    h: Matrix,
}

fn check_batch(params: &LstmParams, batch: &[&Example]) -> Result<usize> {
    let first = batch.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let n = first.tokens.len();
    for ex in batch {
        if ex.tokens.len() != n {
            return Err(Error::Data(format!(
                "batch mixes sequence lengths {n} and {}",
                ex.tokens.len()
            )));
        }
        params.check_tokens(&ex.tokens)?;
        if ex.label as usize >= params.vocab_size() {
            return Err(Error::Data(format!("label {} out of range", ex.label)));
        }
    }
    Ok(n)
}

fn batch_forward(params: &LstmParams, batch: &[&Example], n: usize, keep: bool) -> (Vec<BatchStep>, Matrix) {
    let d = params.hidden();
    let bsz = batch.len();
    let mut steps: Vec<BatchStep> = Vec::with_capacity(if keep { n } else { 1 });
    let mut h = Matrix::zeros(bsz, d);
    let mut c = Matrix::zeros(bsz, d);
    for t in 0..n {
        let x = params
            .embedding()
            .gather_rows(batch.iter().map(|ex| ex.tokens[t] as usize));
        let mut gates = Matrix::zeros(bsz, 4 * d);
        gemm(1.0, &x, Op::N, &params.weights.w_x, Op::T, 0.0, &mut gates);
        gemm(1.0, &h, Op::N, &params.weights.w_h, Op::T, 1.0, &mut gates);
        for r in 0..bsz {
            let row = gates.row_mut(r);
            for (v, b) in row.iter_mut().zip(&params.weights.b) {
                *v += b;
            }
            activate_gates(row, d);
        }
        let mut c_new = Matrix::zeros(bsz, d);
        let mut tanh_c = Matrix::zeros(bsz, d);
        let mut h_new = Matrix::zeros(bsz, d);
        for r in 0..bsz {
            let g = gates.row(r);
            let cp = c.row(r);
            let (cn, tc, hn) = (
                &mut c_new.data_mut()[r * d..(r + 1) * d],
                &mut tanh_c.data_mut()[r * d..(r + 1) * d],
                &mut h_new.data_mut()[r * d..(r + 1) * d],
            );
            for j in 0..d {
                cn[j] = g[d + j] * cp[j] + g[j] * g[2 * d + j];
            }
            tc.copy_from_slice(cn);
            numkit::tanh_slice(tc);
            for j in 0..d {
                hn[j] = g[3 * d + j] * tc[j];
            }
        }
        c = c_new;
        h = h_new;
        if keep {
            steps.push(BatchStep {
                x,
                gates,
                c: c.clone(),
                tanh_c,
                h: h.clone(),
            });
        }
    }
    let mut logits = Matrix::zeros(bsz, params.vocab_size());
    gemm(1.0, &h, Op::N, params.output_projection(), Op::T, 0.0, &mut logits);
    (steps, logits)
}

/// Summed loss and number of correct argmax predictions over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub count: usize,
}

impl std::ops::AddAssign for BatchStats {
    fn add_assign(&mut self, o: Self) {
        self.loss_sum += o.loss_sum;
        self.correct += o.correct;
        self.count += o.count;
    }
}

fn score_logits(logits: &Matrix, batch: &[&Example]) -> Result<BatchStats> {
    let mut stats = BatchStats {
        count: batch.len(),
        ..Default::default()
    };
    for (r, ex) in batch.iter().enumerate() {
        let row = logits.row(r);
        stats.loss_sum += numkit::softmax_cross_entropy(row, ex.label as usize)?;
        if numkit::argmax(row) == ex.label as usize {
            stats.correct += 1;
        }
    }
    Ok(stats)
}

/// Forward-only loss/accuracy over a batch of equal-length examples.
pub fn batch_stats(params: &LstmParams, batch: &[&Example]) -> Result<BatchStats> {
    let n = check_batch(params, batch)?;
    let (_, logits) = batch_forward(params, batch, n, false);
    score_logits(&logits, batch)
}

/// Batched argmax predictions.
pub fn batch_predict(params: &LstmParams, batch: &[&Example]) -> Result<Vec<TokenId>> {
    let n = check_batch(params, batch)?;
    let (_, logits) = batch_forward(params, batch, n, false);
    Ok((0..batch.len()).map(|r| numkit::argmax(logits.row(r)) as TokenId).collect())
}

/// Mean loss over the batch and its gradient (averaged over examples).
pub fn batch_loss_and_grad(params: &LstmParams, batch: &[&Example]) -> Result<(BatchStats, LstmWeights)> {
    let n = check_batch(params, batch)?;
    let d = params.hidden();
    let bsz = batch.len();
    let (steps, mut dlogits) = batch_forward(params, batch, n, true);

    // loss and softmax gradient from a single exp pass per row
    let inv_b = 1.0 / bsz as f64;
    let mut stats = BatchStats {
        count: bsz,
        ..Default::default()
    };
    for (r, ex) in batch.iter().enumerate() {
        let row = dlogits.row_mut(r);
        let label = ex.label as usize;
        let top = numkit::argmax(row);
        let max = row[top];
        if top == label {
            stats.correct += 1;
        }
        let target = row[label];
        let (_, sum) = numkit::exp_shifted(row);
        stats.loss_sum += max + sum.ln() - target;
        let scale = inv_b / sum;
        for v in row.iter_mut() {
            *v *= scale;
        }
        row[label] -= inv_b;
    }
    let mut dh = Matrix::zeros(bsz, d);
    gemm(1.0, &dlogits, Op::N, params.output_projection(), Op::N, 0.0, &mut dh);
    drop(dlogits);

    let mut grad = LstmWeights::zeros(d);
    let mut dc = Matrix::zeros(bsz, d);
    let mut da = Matrix::zeros(bsz, 4 * d);
    let zeros = Matrix::zeros(bsz, d);
    for t in (0..n).rev() {
        let s = &steps[t];
        let (c_prev, h_prev) = if t > 0 {
            (&steps[t - 1].c, &steps[t - 1].h)
        } else {
            (&zeros, &zeros)
        };
        for r in 0..bsz {
            let g = s.gates.row(r);
            let tc = s.tanh_c.row(r);
            let cp = c_prev.row(r);
            let dhr = dh.row(r);
            let dcr = &mut dc.data_mut()[r * d..(r + 1) * d];
            let dar = &mut da.data_mut()[r * 4 * d..(r + 1) * 4 * d];
            for j in 0..d {
                let (i, f, gg, o) = (g[j], g[d + j], g[2 * d + j], g[3 * d + j]);
                dcr[j] += dhr[j] * o * (1.0 - tc[j] * tc[j]);
                let d_o = dhr[j] * tc[j];
                dar[j] = dcr[j] * gg * i * (1.0 - i);
                dar[d + j] = dcr[j] * cp[j] * f * (1.0 - f);
                dar[2 * d + j] = dcr[j] * i * (1.0 - gg * gg);
                dar[3 * d + j] = d_o * o * (1.0 - o);
                dcr[j] *= f;
            }
        }
        gemm(1.0, &da, Op::T, &s.x, Op::N, 1.0, &mut grad.w_x);
        if t > 0 {
            gemm(1.0, &da, Op::T, h_prev, Op::N, 1.0, &mut grad.w_h);
        }
        for r in 0..bsz {
            for (gb, a) in grad.b.iter_mut().zip(da.row(r)) {
                *gb += a;
            }
        }
        gemm(1.0, &da, Op::N, &params.weights.w_h, Op::N, 0.0, &mut dh);
    }
    Ok((stats, grad))
}

/// A hand-wired network that solves the task exactly for length `n`.
///
/// The last hidden unit is a counter (`c` grows by a fixed step each input);
/// the input and forget gates of every other unit are sharp thresholds on that
/// counter, so those units overwrite themselves with `tanh(κ·x)` up to and
/// including the label position and hold the value afterwards. The
/// embedding's last column is zero so the counter never enters the logits.
pub fn middle_token_model(vocab_size: usize, hidden: usize, n: usize, seed: u64) -> Result<LstmParams> {
    if hidden < 2 {
        return Err(Error::Config("middle_token_model needs hidden >= 2".into()));
    }
    let config = ModelConfig::new(vocab_size, hidden, seed);
    config.validate()?;
    let d = hidden;
    let k = d - 1;
    let m = label_index(n)?;

    let mut embedding = init_uniform(
        &mut RandomStream::new(seed, "model/embedding-init"),
        vocab_size,
        d,
        config.embedding_scale,
    )?;
    for r in 0..vocab_size {
        embedding.set(r, k, 0.0);
    }

    let sat = 30.0;
    let step = 1.0 / n as f64;
    // counter value seen at input t (1-based) is tanh((t-1)·step); the label is input m+1
    let theta = ((m as f64 + 0.5) * step).tanh();
    let margin = 0.5 * step * (1.0 - ((n as f64 + 1.0) * step).tanh().powi(2));
    let sharp = 40.0 / margin;
    let kappa = 4.0 / config.embedding_scale;

    let mut w = LstmWeights::zeros(d);
    let row = |gate: usize, j: usize| gate * d + j;
    w.b[row(GATE_I, k)] = sat;
    w.b[row(GATE_F, k)] = sat;
    w.b[row(GATE_G, k)] = step.atanh();
    w.b[row(GATE_O, k)] = sat;
    for j in 0..k {
        w.w_h.set(row(GATE_I, j), k, -sharp);
        w.b[row(GATE_I, j)] = sharp * theta;
        w.w_h.set(row(GATE_F, j), k, sharp);
        w.b[row(GATE_F, j)] = -sharp * theta;
        w.w_x.set(row(GATE_G, j), j, kappa);
        w.b[row(GATE_O, j)] = sat;
    }
    LstmParams::from_parts(config, w, embedding)
}
