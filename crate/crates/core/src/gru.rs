//! Stacked GRU many-to-one classifier, built from scratch: forward
//! recurrence, full backpropagation through time, cross-entropy loss,
//! Adam, padded batching, and multi-stream logit summation.
//!
//! Gate equations (update gate `z`, reset gate `r`):
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
//! h~_t = tanh(W_h x_t + U_h (r_t . h_{t-1}) + b_h)
//! h_t = (1 - z_t) . h_{t-1} + z_t . h~_t
//! ```
//!
//! Classification reads the top layer's state at the last true timestep,
//! so outputs are bitwise independent of padding content.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::ClassProbs;

#[derive(Debug, Error)]
pub enum GruError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

// ---------------------------------------------------------------------------
// Minimal dense matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, k: f64, rng: &mut ChaCha8Rng) -> Self {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-k..k)).collect(),
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *yr += acc;
        }
    }

    /// y += A^T x
    pub fn matvec_t(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (yc, a) in y.iter_mut().zip(row) {
                *yc += xr * a;
            }
        }
    }

    /// A += a b^T
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (cell, &bc) in row.iter_mut().zip(b) {
                *cell += ar * bc;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// One GRU layer's parameters. `W_*` act on the layer input, `U_*` on the
/// previous hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayerParams {
    pub w_z: Mat,
    pub w_r: Mat,
    pub w_h: Mat,
    pub u_z: Mat,
    pub u_r: Mat,
    pub u_h: Mat,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruLayerParams {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        GruLayerParams {
            w_z: Mat::zeros(hidden, input_dim),
            w_r: Mat::zeros(hidden, input_dim),
            w_h: Mat::zeros(hidden, input_dim),
            u_z: Mat::zeros(hidden, hidden),
            u_r: Mat::zeros(hidden, hidden),
            u_h: Mat::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }

    fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        GruLayerParams {
            w_z: Mat::uniform(hidden, input_dim, k, rng),
            w_r: Mat::uniform(hidden, input_dim, k, rng),
            w_h: Mat::uniform(hidden, input_dim, k, rng),
            u_z: Mat::uniform(hidden, hidden, k, rng),
            u_r: Mat::uniform(hidden, hidden, k, rng),
            u_h: Mat::uniform(hidden, hidden, k, rng),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
        }
    }
}

/// Stacked GRU; layer 0 consumes D-dimensional input, the rest H.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruStack {
    pub layers: Vec<GruLayerParams>,
    pub hidden: usize,
    pub input_dim: usize,
}

impl GruStack {
    pub fn zeros(input_dim: usize, hidden: usize, n_layers: usize) -> Self {
        assert!(n_layers >= 1);
        let layers = (0..n_layers)
            .map(|l| GruLayerParams::zeros(if l == 0 { input_dim } else { hidden }, hidden))
            .collect();
        GruStack {
            layers,
            hidden,
            input_dim,
        }
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, n_layers: usize, seed: u64) -> Self {
        assert!(n_layers >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|l| GruLayerParams::init(if l == 0 { input_dim } else { hidden }, hidden, &mut rng))
            .collect();
        GruStack {
            layers,
            hidden,
            input_dim,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Linear head mapping the final hidden state to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl ClassifierHead {
    pub fn zeros(n_classes: usize, hidden: usize) -> Self {
        ClassifierHead {
            w: Mat::zeros(n_classes, hidden),
            b: vec![0.0; n_classes],
        }
    }

    pub fn init(n_classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden as f64).sqrt();
        ClassifierHead {
            w: Mat::uniform(n_classes, hidden, k, &mut rng),
            b: vec![0.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w.rows
    }
}

fn flat_tensors<'a>(stack: &'a GruStack, head: &'a ClassifierHead) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    for l in &stack.layers {
        out.extend([
            l.w_z.data.as_slice(),
            l.w_r.data.as_slice(),
            l.w_h.data.as_slice(),
            l.u_z.data.as_slice(),
            l.u_r.data.as_slice(),
            l.u_h.data.as_slice(),
            l.b_z.as_slice(),
            l.b_r.as_slice(),
            l.b_h.as_slice(),
        ]);
    }
    out.push(head.w.data.as_slice());
    out.push(head.b.as_slice());
    out
}

fn flat_tensors_mut<'a>(
    stack: &'a mut GruStack,
    head: &'a mut ClassifierHead,
) -> Vec<&'a mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for l in &mut stack.layers {
        out.push(&mut l.w_z.data);
        out.push(&mut l.w_r.data);
        out.push(&mut l.w_h.data);
        out.push(&mut l.u_z.data);
        out.push(&mut l.u_r.data);
        out.push(&mut l.u_h.data);
        out.push(&mut l.b_z);
        out.push(&mut l.b_r);
        out.push(&mut l.b_h);
    }
    out.push(&mut head.w.data);
    out.push(&mut head.b);
    out
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LayerCache {
    // per timestep, each of length H
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    hcand: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
}

fn check_input(stack: &GruStack, dim: usize, timesteps: usize) -> Result<(), GruError> {
    if dim != stack.input_dim {
        return Err(GruError::Shape(format!(
            "input dim {dim} != stack input dim {}",
            stack.input_dim
        )));
    }
    if timesteps == 0 {
        return Err(GruError::Domain("sequence must have T >= 1".into()));
    }
    Ok(())
}

/// Runs the stack over `steps` timesteps of a flat row-major `T x dim`
/// input; caches per layer for backprop. `h_0 = 0` everywhere.
fn forward_cached(
    stack: &GruStack,
    xs: &[f64],
    dim: usize,
    steps: usize,
) -> Vec<LayerCache> {
    let h = stack.hidden;
    let mut caches: Vec<LayerCache> = Vec::with_capacity(stack.n_layers());
    let mut input: Vec<f64> = xs[..steps * dim].to_vec();
    let mut input_dim = dim;
    for layer in &stack.layers {
        let mut cache = LayerCache {
            z: Vec::with_capacity(steps),
            r: Vec::with_capacity(steps),
            hcand: Vec::with_capacity(steps),
            h: Vec::with_capacity(steps),
        };
        let mut h_prev = vec![0.0; h];
        for t in 0..steps {
            let x_t = &input[t * input_dim..(t + 1) * input_dim];
            let mut az = layer.b_z.clone();
            layer.w_z.matvec(x_t, &mut az);
            layer.u_z.matvec(&h_prev, &mut az);
            let z: Vec<f64> = az.iter().map(|&a| sigmoid(a)).collect();

            let mut ar = layer.b_r.clone();
            layer.w_r.matvec(x_t, &mut ar);
            layer.u_r.matvec(&h_prev, &mut ar);
            let r: Vec<f64> = ar.iter().map(|&a| sigmoid(a)).collect();

            let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
            let mut ah = layer.b_h.clone();
            layer.w_h.matvec(x_t, &mut ah);
            layer.u_h.matvec(&rh, &mut ah);
            let hcand: Vec<f64> = ah.iter().map(|&a| a.tanh()).collect();

            let h_t: Vec<f64> = (0..h)
                .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * hcand[i])
                .collect();

            cache.z.push(z);
            cache.r.push(r);
            cache.hcand.push(hcand);
            cache.h.push(h_t.clone());
            h_prev = h_t;
        }
        // this layer's outputs feed the next layer
        input = cache.h.iter().flat_map(|v| v.iter().copied()).collect();
        input_dim = h;
        caches.push(cache);
    }
    caches
}

/// Top-layer hidden states for every timestep of a `T x dim` input.
pub fn gru_forward(
    stack: &GruStack,
    xs: &[f64],
    dim: usize,
    timesteps: usize,
) -> Result<Vec<Vec<f64>>, GruError> {
    check_input(stack, dim, timesteps)?;
    if xs.len() != dim * timesteps {
        return Err(GruError::Shape("input length != T * dim".into()));
    }
    let caches = forward_cached(stack, xs, dim, timesteps);
    Ok(caches.last().unwrap().h.clone())
}

/// Class logits from the top-layer state at the last true timestep.
/// Timesteps beyond `length` are padding and never touched.
pub fn classify(
    stack: &GruStack,
    head: &ClassifierHead,
    xs: &[f64],
    dim: usize,
    timesteps: usize,
    length: usize,
) -> Result<Vec<f64>, GruError> {
    check_input(stack, dim, timesteps)?;
    if length == 0 {
        return Err(GruError::Domain("true length must be >= 1".into()));
    }
    if length > timesteps {
        return Err(GruError::Shape(format!(
            "length {length} exceeds sequence timesteps {timesteps}"
        )));
    }
    if head.w.cols != stack.hidden {
        return Err(GruError::Shape("head width != hidden size".into()));
    }
    let caches = forward_cached(stack, xs, dim, length);
    let h_last = &caches.last().unwrap().h[length - 1];
    let mut logits = head.b.clone();
    head.w.matvec(h_last, &mut logits);
    Ok(logits)
}

// ---------------------------------------------------------------------------
// Softmax, cross-entropy, stream combination
// ---------------------------------------------------------------------------

/// Overflow-safe softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `softmax(sum of logits)` over one or more streams of equal width.
pub fn combine_streams(logit_list: &[Vec<f64>]) -> Result<ClassProbs, GruError> {
    let first = logit_list
        .first()
        .ok_or_else(|| GruError::Domain("no logit streams".into()))?;
    let c = first.len();
    if logit_list.iter().any(|l| l.len() != c) {
        return Err(GruError::Shape("streams have mixed widths".into()));
    }
    let mut sum = vec![0.0; c];
    for stream in logit_list {
        for (s, l) in sum.iter_mut().zip(stream) {
            *s += l;
        }
    }
    ClassProbs::new(softmax(&sum)).map_err(|e| GruError::Domain(e.to_string()))
}

/// Cross-entropy loss and its gradient w.r.t. the logits
/// (`softmax(logits) - onehot(label)`).
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), GruError> {
    if label >= logits.len() {
        return Err(GruError::Domain(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let p = softmax(logits);
    let loss = -(p[label].max(1e-300)).ln();
    let mut grad = p;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

/// Loss and full analytic gradients for one sequence. Gradients come back
/// in zero-initialized parameter mirrors.
pub fn loss_and_grads(
    stack: &GruStack,
    head: &ClassifierHead,
    xs: &[f64],
    dim: usize,
    length: usize,
    label: usize,
) -> Result<(f64, GruStack, ClassifierHead), GruError> {
    check_input(stack, dim, length)?;
    let h_dim = stack.hidden;
    let caches = forward_cached(stack, xs, dim, length);
    let h_last = &caches.last().unwrap().h[length - 1];
    let mut logits = head.b.clone();
    head.w.matvec(h_last, &mut logits);
    let (loss, dlogits) = cross_entropy(&logits, label)?;

    let mut g_stack = GruStack::zeros(stack.input_dim, h_dim, stack.n_layers());
    let mut g_head = ClassifierHead::zeros(head.n_classes(), h_dim);
    g_head.w.add_outer(&dlogits, h_last);
    for (gb, dl) in g_head.b.iter_mut().zip(&dlogits) {
        *gb += dl;
    }

    // d(output h_t) per timestep for the layer currently being processed
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; h_dim]; length];
    head.w.matvec_t(&dlogits, &mut d_out[length - 1]);

    for l in (0..stack.n_layers()).rev() {
        let layer = &stack.layers[l];
        let grads = &mut g_stack.layers[l];
        let cache = &caches[l];
        let in_dim = if l == 0 { dim } else { h_dim };
        // inputs to this layer
        let input_row = |t: usize| -> &[f64] {
            if l == 0 {
                &xs[t * dim..(t + 1) * dim]
            } else {
                &caches[l - 1].h[t]
            }
        };
        let mut d_input: Vec<Vec<f64>> = vec![vec![0.0; in_dim]; length];
        let mut dh_carry = vec![0.0; h_dim];
        for t in (0..length).rev() {
            let mut dh: Vec<f64> = d_out[t].iter().zip(&dh_carry).map(|(a, b)| a + b).collect();
            dh_carry = vec![0.0; h_dim];
            let zero = vec![0.0; h_dim];
            let h_prev = if t == 0 { &zero } else { &cache.h[t - 1] };
            let (z, r, hc) = (&cache.z[t], &cache.r[t], &cache.hcand[t]);

            // h_t = (1 - z) . h_prev + z . hcand
            let da_h: Vec<f64> = (0..h_dim)
                .map(|i| dh[i] * z[i] * (1.0 - hc[i] * hc[i]))
                .collect();
            for (i, d) in dh.iter_mut().enumerate() {
                dh_carry[i] += *d * (1.0 - z[i]);
            }
            let da_z: Vec<f64> = (0..h_dim)
                .map(|i| dh[i] * (hc[i] - h_prev[i]) * z[i] * (1.0 - z[i]))
                .collect();

            // candidate path
            let x_t = input_row(t);
            let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
            grads.w_h.add_outer(&da_h, x_t);
            grads.u_h.add_outer(&da_h, &rh);
            for (g, d) in grads.b_h.iter_mut().zip(&da_h) {
                *g += d;
            }
            let mut d_rh = vec![0.0; h_dim];
            layer.u_h.matvec_t(&da_h, &mut d_rh);
            let da_r: Vec<f64> = (0..h_dim)
                .map(|i| d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]))
                .collect();
            for i in 0..h_dim {
                dh_carry[i] += d_rh[i] * r[i];
            }

            // gate paths
            grads.w_z.add_outer(&da_z, x_t);
            grads.u_z.add_outer(&da_z, h_prev);
            for (g, d) in grads.b_z.iter_mut().zip(&da_z) {
                *g += d;
            }
            grads.w_r.add_outer(&da_r, x_t);
            grads.u_r.add_outer(&da_r, h_prev);
            for (g, d) in grads.b_r.iter_mut().zip(&da_r) {
                *g += d;
            }
            layer.u_z.matvec_t(&da_z, &mut dh_carry);
            layer.u_r.matvec_t(&da_r, &mut dh_carry);

            // input gradient (flows to the layer below)
            layer.w_z.matvec_t(&da_z, &mut d_input[t]);
            layer.w_r.matvec_t(&da_r, &mut d_input[t]);
            layer.w_h.matvec_t(&da_h, &mut d_input[t]);
        }
        d_out = d_input;
    }
    Ok((loss, g_stack, g_head))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 64,
            lr: 3e-4,
            max_epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(stack: &GruStack, head: &ClassifierHead) -> Self {
        let shapes: Vec<usize> = flat_tensors(stack, head).iter().map(|t| t.len()).collect();
        AdamState {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update over every parameter tensor.
pub fn adam_step(
    stack: &mut GruStack,
    head: &mut ClassifierHead,
    g_stack: &GruStack,
    g_head: &ClassifierHead,
    state: &mut AdamState,
    config: &TrainingConfig,
) -> Result<(), GruError> {
    let grads = flat_tensors(g_stack, g_head);
    for (tensor_idx, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(GruError::Training(format!(
                "non-finite gradient in tensor {tensor_idx} at step {}",
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let params = flat_tensors_mut(stack, head);
    for ((param, grad), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..param.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batching and training
// ---------------------------------------------------------------------------

/// One labeled training sample: flat row-major `timesteps x dim` data.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: Vec<f64>,
    pub dim: usize,
    pub timesteps: usize,
    pub label: usize,
}

impl Sample {
    pub fn from_embedding(seq: &crate::media::EmbeddingSequence, label: usize) -> Self {
        Sample {
            data: seq.rows().flatten().copied().collect(),
            dim: seq.dim(),
            timesteps: seq.timesteps(),
            label,
        }
    }
}

/// Sequences padded to the batch maximum with their true lengths.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub data: Vec<f64>, // B x T_max x D
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    pub t_max: usize,
    pub dim: usize,
}

impl PaddedBatch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self, GruError> {
        let first = samples
            .first()
            .ok_or_else(|| GruError::Domain("empty batch".into()))?;
        let dim = first.dim;
        if samples.iter().any(|s| s.dim != dim) {
            return Err(GruError::Shape("mixed sample dims in a batch".into()));
        }
        if samples.iter().any(|s| s.timesteps == 0) {
            return Err(GruError::Domain("zero-length sample".into()));
        }
        let t_max = samples.iter().map(|s| s.timesteps).max().unwrap();
        let mut data = vec![0.0; samples.len() * t_max * dim];
        for (i, s) in samples.iter().enumerate() {
            data[i * t_max * dim..i * t_max * dim + s.data.len()].copy_from_slice(&s.data);
        }
        Ok(PaddedBatch {
            data,
            lengths: samples.iter().map(|s| s.timesteps).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            t_max,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[f64] {
        &self.data[i * self.t_max * self.dim..(i + 1) * self.t_max * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub stack: GruStack,
    pub head: ClassifierHead,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

fn accumulate(acc_stack: &mut GruStack, acc_head: &mut ClassifierHead, g_stack: &GruStack, g_head: &ClassifierHead, scale: f64) {
    let acc = flat_tensors_mut(acc_stack, acc_head);
    let g = flat_tensors(g_stack, g_head);
    for (a, b) in acc.into_iter().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

fn val_accuracy(
    stack: &GruStack,
    head: &ClassifierHead,
    val: &[Sample],
) -> Result<f64, GruError> {
    if val.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in val {
        let logits = classify(stack, head, &s.data, s.dim, s.timesteps, s.timesteps)?;
        let pred = ClassProbs::new(softmax(&logits))
            .map_err(|e| GruError::Domain(e.to_string()))?
            .argmax();
        if pred == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / val.len() as f64)
}

/// Mini-batch training with seeded shuffling and padded batches; returns
/// the parameters of the epoch with the best validation accuracy (ties
/// toward the earlier epoch).
pub fn train(
    mut stack: GruStack,
    mut head: ClassifierHead,
    train_set: &[Sample],
    config: &TrainingConfig,
    val_set: &[Sample],
) -> Result<TrainedModel, GruError> {
    if train_set.is_empty() {
        return Err(GruError::Domain("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(GruError::Domain("batch size must be >= 1".into()));
    }
    let n_classes = head.n_classes();
    if train_set.iter().chain(val_set).any(|s| s.label >= n_classes) {
        return Err(GruError::Domain("label out of range".into()));
    }
    let mut state = AdamState::new(&stack, &head);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, GruStack, ClassifierHead)> = None;
    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = PaddedBatch::from_samples(&samples)?;
            let mut g_stack = GruStack::zeros(stack.input_dim, stack.hidden, stack.n_layers());
            let mut g_head = ClassifierHead::zeros(n_classes, stack.hidden);
            let scale = 1.0 / batch.len() as f64;
            for i in 0..batch.len() {
                let (loss, gs, gh) = loss_and_grads(
                    &stack,
                    &head,
                    batch.sequence(i),
                    batch.dim,
                    batch.lengths[i],
                    batch.labels[i],
                )?;
                epoch_loss += loss;
                accumulate(&mut g_stack, &mut g_head, &gs, &gh, scale);
            }
            adam_step(&mut stack, &mut head, &g_stack, &g_head, &mut state, config)?;
        }
        let acc = val_accuracy(&stack, &head, val_set)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_accuracy: acc,
        });
        let better = match &best {
            None => true,
            Some((_, best_acc, _, _)) => acc > *best_acc,
        };
        if better {
            best = Some((epoch, acc, stack.clone(), head.clone()));
        }
    }
    let (best_epoch, _, best_stack, best_head) = best.unwrap();
    Ok(TrainedModel {
        stack: best_stack,
        head: best_head,
        history,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GruCheckpoint {
    pub version: u32,
    pub stack: GruStack,
    pub head: ClassifierHead,
}

pub fn checkpoint_to_json(stack: &GruStack, head: &ClassifierHead) -> String {
    serde_json::to_string(&GruCheckpoint {
        version: 1,
        stack: stack.clone(),
        head: head.clone(),
    })
    .expect("serializable")
}

pub fn checkpoint_from_json(text: &str) -> Result<GruCheckpoint, GruError> {
    serde_json::from_str(text).map_err(|e| GruError::Serialization(e.to_string()))
}
