//! A small trainable transducer.
//!
//! * encoder: feed-forward over a window of `2c + 1` frames centred on the
//!   current one (zero padded at the edges), `(2c + 1) F -> H (tanh) -> E`;
//!   `c = 0` is a purely per-frame encoder;
//! * predictor: stateless, concatenating the embeddings of the last two
//!   emitted labels (begin-of-sequence id `V` pads short histories);
//! * joint: `tanh(W_e enc + W_p ctx + b) -> V + |N|` outputs.
//!
//! Backpropagation is written out by hand; [`crate::loss::loss_and_grad`]
//! supplies the gradient with respect to the joint outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::decode::Scorer;
use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, ActivationLattice, BlankSet, LossConfig};
use crate::numerics::Tensor3;

pub const CHECKPOINT_FORMAT: &str = "multiblank-toy-checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Input feature size `F`.
    pub features: usize,
    /// Frames of context on each side of the current frame.
    #[serde(default)]
    pub context: usize,
    /// Encoder hidden size `H`.
    pub hidden: usize,
    /// Encoder output size `E`.
    pub encoder: usize,
    /// Label embedding size `D`.
    pub embedding: usize,
    /// Joint hidden size `J`.
    pub joint: usize,
    /// Label vocabulary size `V`.
    pub vocab: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            features: 8,
            context: 3,
            hidden: 32,
            encoder: 32,
            embedding: 16,
            joint: 32,
            vocab: 8,
        }
    }
}

impl ModelDims {
    /// Width of the encoder input window, `(2c + 1) F`.
    pub fn window_width(&self) -> usize {
        (2 * self.context + 1) * self.features
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("features", self.features),
            ("hidden", self.hidden),
            ("encoder", self.encoder),
            ("embedding", self.embedding),
            ("joint", self.joint),
            ("vocab", self.vocab),
        ];
        match all.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::usage(format!("model dimension {name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self * x + bias`
    fn affine(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            *o = bias[r] + dot(self.row(r), x);
        }
    }

    /// `out += self^T * y`
    fn add_transposed_product(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += y x^T`
    fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, x, self.row_mut(r));
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// All trainable weights. Also used as the container for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub dims: ModelDims,
    pub blank_set: BlankSet,
    pub enc_hidden_w: Matrix,
    pub enc_hidden_b: Vec<f64>,
    pub enc_out_w: Matrix,
    pub enc_out_b: Vec<f64>,
    /// `(V + 1) x D`; row `V` is begin-of-sequence.
    pub embeddings: Matrix,
    pub joint_enc_w: Matrix,
    pub joint_pred_w: Matrix,
    pub joint_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

const TENSOR_NAMES: [&str; 10] = [
    "enc_hidden_w",
    "enc_hidden_b",
    "enc_out_w",
    "enc_out_b",
    "embeddings",
    "joint_enc_w",
    "joint_pred_w",
    "joint_b",
    "out_w",
    "out_b",
];

impl ToyModelParams {
    pub fn zeros(dims: ModelDims, blank_set: BlankSet) -> Self {
        let f = dims.window_width();
        let ModelDims {
            hidden: h,
            encoder: e,
            embedding: d,
            joint: j,
            vocab: v,
            ..
        } = dims;
        let k = v + blank_set.len();
        Self {
            dims,
            blank_set,
            enc_hidden_w: Matrix::zeros(h, f),
            enc_hidden_b: vec![0.0; h],
            enc_out_w: Matrix::zeros(e, h),
            enc_out_b: vec![0.0; e],
            embeddings: Matrix::zeros(v + 1, d),
            joint_enc_w: Matrix::zeros(j, e),
            joint_pred_w: Matrix::zeros(j, 2 * d),
            joint_b: vec![0.0; j],
            out_w: Matrix::zeros(k, j),
            out_b: vec![0.0; k],
        }
    }

    /// Output width `V + |N|`.
    pub fn output_width(&self) -> usize {
        self.dims.vocab + self.blank_set.len()
    }

    fn bos(&self) -> usize {
        self.dims.vocab
    }

    /// Parameter arrays in a fixed order, with their names.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 10] {
        [
            (TENSOR_NAMES[0], &self.enc_hidden_w.data),
            (TENSOR_NAMES[1], &self.enc_hidden_b),
            (TENSOR_NAMES[2], &self.enc_out_w.data),
            (TENSOR_NAMES[3], &self.enc_out_b),
            (TENSOR_NAMES[4], &self.embeddings.data),
            (TENSOR_NAMES[5], &self.joint_enc_w.data),
            (TENSOR_NAMES[6], &self.joint_pred_w.data),
            (TENSOR_NAMES[7], &self.joint_b),
            (TENSOR_NAMES[8], &self.out_w.data),
            (TENSOR_NAMES[9], &self.out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.enc_hidden_w.data,
            &mut self.enc_hidden_b,
            &mut self.enc_out_w.data,
            &mut self.enc_out_b,
            &mut self.embeddings.data,
            &mut self.joint_enc_w.data,
            &mut self.joint_pred_w.data,
            &mut self.joint_b,
            &mut self.out_w.data,
            &mut self.out_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`
    fn add_scaled(&mut self, alpha: f64, other: &ToyModelParams) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(alpha, src, dst);
        }
    }

    fn sum_sq(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| dot(t, t)).sum()
    }
}

/// Deterministic initialization, uniform in `[-s, s]` with `s = 1 / sqrt(fan_in)`.
///
/// Embedding rows are lookups with fan-in 1.
pub fn init_params(seed: u64, dims: ModelDims, blank_set: BlankSet) -> Result<ToyModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ToyModelParams::zeros(dims, blank_set);
    let fan_ins = [
        dims.window_width(),
        dims.window_width(),
        dims.hidden,
        dims.hidden,
        1,
        dims.encoder,
        2 * dims.embedding,
        2 * dims.embedding,
        dims.joint,
        dims.joint,
    ];
    for (tensor, fan_in) in p.tensors_mut().into_iter().zip(fan_ins) {
        let s = 1.0 / (fan_in as f64).sqrt();
        for w in tensor.iter_mut() {
            *w = rng.random_range(-s..=s);
        }
    }
    Ok(p)
}

fn context_tokens(history: &[usize], bos: usize) -> [usize; 2] {
    match history {
        [] => [bos, bos],
        [a] => [bos, *a],
        [.., a, b] => [*a, *b],
    }
}

struct EncodedFrame {
    input: Vec<f64>,
    hidden: Vec<f64>,
    output: Vec<f64>,
    /// `W_e * output`
    projection: Vec<f64>,
}

/// Concatenated frames `t - c ..= t + c`, zeros outside the utterance.
fn frame_window(frames: &[Vec<f64>], t: usize, dims: &ModelDims) -> Vec<f64> {
    let mut window = Vec::with_capacity(dims.window_width());
    for offset in 0..=2 * dims.context {
        match (t + offset).checked_sub(dims.context).and_then(|i| frames.get(i)) {
            Some(f) => window.extend_from_slice(f),
            None => window.extend(std::iter::repeat_n(0.0, dims.features)),
        }
    }
    window
}

fn encode_frame(p: &ToyModelParams, frames: &[Vec<f64>], t: usize) -> EncodedFrame {
    let d = p.dims;
    let input = frame_window(frames, t, &d);
    let mut hidden = vec![0.0; d.hidden];
    p.enc_hidden_w.affine(&input, &p.enc_hidden_b, &mut hidden);
    hidden.iter_mut().for_each(|v| *v = v.tanh());
    let mut output = vec![0.0; d.encoder];
    p.enc_out_w.affine(&hidden, &p.enc_out_b, &mut output);
    let mut projection = vec![0.0; d.joint];
    p.joint_enc_w.affine(&output, &vec![0.0; d.joint], &mut projection);
    EncodedFrame {
        input,
        hidden,
        output,
        projection,
    }
}

struct Context {
    tokens: [usize; 2],
    vector: Vec<f64>,
    /// `W_p * vector + b`
    projection: Vec<f64>,
}

fn encode_context(p: &ToyModelParams, history: &[usize]) -> Context {
    let tokens = context_tokens(history, p.bos());
    let mut vector = Vec::with_capacity(2 * p.dims.embedding);
    vector.extend_from_slice(p.embeddings.row(tokens[0]));
    vector.extend_from_slice(p.embeddings.row(tokens[1]));
    let mut projection = vec![0.0; p.dims.joint];
    p.joint_pred_w.affine(&vector, &p.joint_b, &mut projection);
    Context {
        tokens,
        vector,
        projection,
    }
}

/// Joint network: returns the tanh hidden layer and writes the activations into `out`.
fn joint(p: &ToyModelParams, enc_proj: &[f64], ctx_proj: &[f64], out: &mut [f64]) -> Vec<f64> {
    let hidden: Vec<f64> = enc_proj
        .iter()
        .zip(ctx_proj)
        .map(|(a, b)| (a + b).tanh())
        .collect();
    p.out_w.affine(&hidden, &p.out_b, out);
    hidden
}

fn check_frames(p: &ToyModelParams, frames: &[Vec<f64>]) -> Result<()> {
    if let Some(f) = frames.iter().find(|f| f.len() != p.dims.features) {
        return Err(Error::Config(format!(
            "frame has {} features, model expects {}",
            f.len(),
            p.dims.features
        )));
    }
    Ok(())
}

fn check_labels(p: &ToyModelParams, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= p.dims.vocab) {
        return Err(Error::usage(format!(
            "label id {bad} outside vocabulary of size {}",
            p.dims.vocab
        )));
    }
    Ok(())
}

struct ForwardCache {
    frames: Vec<EncodedFrame>,
    contexts: Vec<Context>,
    /// `T x (U + 1) x J` joint hidden activations.
    joint_hidden: Tensor3,
}

fn forward_with_cache(
    p: &ToyModelParams,
    frames: &[Vec<f64>],
    labels: &[usize],
) -> Result<(ActivationLattice, ForwardCache)> {
    check_frames(p, frames)?;
    check_labels(p, labels)?;
    let encoded: Vec<EncodedFrame> = (0..frames.len()).map(|t| encode_frame(p, frames, t)).collect();
    let contexts: Vec<Context> = (0..=labels.len())
        .map(|u| encode_context(p, &labels[..u]))
        .collect();
    let (t_len, u_len, k) = (frames.len(), labels.len() + 1, p.output_width());
    let mut z = Tensor3::zeros(t_len, u_len, k);
    let mut joint_hidden = Tensor3::zeros(t_len, u_len, p.dims.joint);
    for (t, enc) in encoded.iter().enumerate() {
        for (u, ctx) in contexts.iter().enumerate() {
            let h = joint(p, &enc.projection, &ctx.projection, z.row_mut(t, u));
            joint_hidden.row_mut(t, u).copy_from_slice(&h);
        }
    }
    let lattice = ActivationLattice::new(z, p.dims.vocab, &p.blank_set)?;
    Ok((
        lattice,
        ForwardCache {
            frames: encoded,
            contexts,
            joint_hidden,
        },
    ))
}

/// Joint activations `z(t, u, ·) = joint(encoder(frame t), context(u))`.
pub fn forward_activations(
    params: &ToyModelParams,
    frames: &[Vec<f64>],
    labels: &[usize],
) -> Result<ActivationLattice> {
    forward_with_cache(params, frames, labels).map(|(z, _)| z)
}

fn backward(
    p: &ToyModelParams,
    cache: &ForwardCache,
    dz: &Tensor3,
) -> ToyModelParams {
    let d = p.dims;
    let mut g = ToyModelParams::zeros(d, p.blank_set.clone());
    let (t_len, u_len, _) = dz.dims();
    let mut d_enc_proj = vec![vec![0.0; d.joint]; t_len];
    let mut d_ctx_proj = vec![vec![0.0; d.joint]; u_len];
    let mut dh = vec![0.0; d.joint];
    for t in 0..t_len {
        for u in 0..u_len {
            let dzr = dz.row(t, u);
            let h = cache.joint_hidden.row(t, u);
            g.out_w.add_outer(dzr, h);
            axpy(1.0, dzr, &mut g.out_b);
            dh.iter_mut().for_each(|v| *v = 0.0);
            p.out_w.add_transposed_product(dzr, &mut dh);
            for j in 0..d.joint {
                let da = dh[j] * (1.0 - h[j] * h[j]);
                d_enc_proj[t][j] += da;
                d_ctx_proj[u][j] += da;
            }
        }
    }
    for (t, enc) in cache.frames.iter().enumerate() {
        let dproj = &d_enc_proj[t];
        g.joint_enc_w.add_outer(dproj, &enc.output);
        let mut d_out = vec![0.0; d.encoder];
        p.joint_enc_w.add_transposed_product(dproj, &mut d_out);
        g.enc_out_w.add_outer(&d_out, &enc.hidden);
        axpy(1.0, &d_out, &mut g.enc_out_b);
        let mut d_hidden = vec![0.0; d.hidden];
        p.enc_out_w.add_transposed_product(&d_out, &mut d_hidden);
        for (dv, hv) in d_hidden.iter_mut().zip(&enc.hidden) {
            *dv *= 1.0 - hv * hv;
        }
        g.enc_hidden_w.add_outer(&d_hidden, &enc.input);
        axpy(1.0, &d_hidden, &mut g.enc_hidden_b);
    }
    for (u, ctx) in cache.contexts.iter().enumerate() {
        let dproj = &d_ctx_proj[u];
        g.joint_pred_w.add_outer(dproj, &ctx.vector);
        axpy(1.0, dproj, &mut g.joint_b);
        let mut d_vec = vec![0.0; 2 * d.embedding];
        p.joint_pred_w.add_transposed_product(dproj, &mut d_vec);
        let (first, second) = d_vec.split_at(d.embedding);
        axpy(1.0, first, g.embeddings.row_mut(ctx.tokens[0]));
        axpy(1.0, second, g.embeddings.row_mut(ctx.tokens[1]));
    }
    g
}

/// Loss of one utterance and its gradient with respect to every parameter.
pub fn utterance_loss_and_grad(
    params: &ToyModelParams,
    utterance: &Utterance,
    sigma: f64,
) -> Result<(f64, ToyModelParams)> {
    let (z, cache) = forward_with_cache(params, &utterance.frames, &utterance.labels)?;
    let config = LossConfig::new(sigma, params.blank_set.clone())?;
    let res = loss_and_grad(&z, &utterance.labels, &config)?;
    let grad = backward(params, &cache, &res.grad);
    Ok((res.loss, grad))
}

/// Loss only, for evaluation and finite differences.
pub fn utterance_loss(params: &ToyModelParams, utterance: &Utterance, sigma: f64) -> Result<f64> {
    let z = forward_activations(params, &utterance.frames, &utterance.labels)?;
    let config = LossConfig::new(sigma, params.blank_set.clone())?;
    Ok(loss_and_grad(&z, &utterance.labels, &config)?.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sigma: f64,
    pub blank_set: BlankSet,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub dims: ModelDims,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            blank_set: BlankSet::standard(),
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 8,
            steps: 1000,
            seed: 0,
            dims: ModelDims::default(),
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.dims.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean loss over the utterances that contributed.
    pub mean_loss: f64,
    /// Utterances skipped because no alignment exists.
    pub skipped: usize,
}

/// Momentum SGD over a [`ToyModelParams`].
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ToyModelParams,
    velocity: ToyModelParams,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(params: ToyModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if params.blank_set != config.blank_set || params.dims != config.dims {
            return Err(Error::Config(
                "parameters and training config disagree on dims or blank set".into(),
            ));
        }
        let velocity = ToyModelParams::zeros(params.dims, params.blank_set.clone());
        Ok(Self {
            params,
            velocity,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One update from the mean gradient over `batch`.
    ///
    /// Per-utterance gradients are computed in parallel and summed in batch
    /// order, so results do not depend on thread scheduling.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::usage("training batch is empty"));
        }
        let params = &self.params;
        let sigma = self.config.sigma;
        let results: Vec<Option<(f64, ToyModelParams)>> = batch
            .par_iter()
            .map(|utt| {
                if utt.frames.is_empty() {
                    return Ok(None);
                }
                match utterance_loss_and_grad(params, utt, sigma) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::Infeasible { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;

        let skipped = results.iter().filter(|r| r.is_none()).count();
        let used = results.len() - skipped;
        if used == 0 {
            return Ok(StepStats {
                mean_loss: 0.0,
                skipped,
            });
        }
        let mut grad = ToyModelParams::zeros(params.dims, params.blank_set.clone());
        let mut total = 0.0;
        for (loss, g) in results.into_iter().flatten() {
            total += loss;
            grad.add_scaled(1.0, &g);
        }
        let scale = 1.0 / used as f64;
        let norm = grad.sum_sq().sqrt() * scale;
        let clip = match self.config.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let mu = self.config.momentum;
        let lr = self.config.learning_rate;
        for ((v, p), (_, g)) in self
            .velocity
            .tensors_mut()
            .into_iter()
            .zip(self.params.tensors_mut())
            .zip(grad.tensors())
        {
            for i in 0..v.len() {
                v[i] = mu * v[i] + g[i] * scale * clip;
                p[i] -= lr * v[i];
            }
        }
        Ok(StepStats {
            mean_loss: total * scale,
            skipped,
        })
    }

    /// Runs `config.steps` updates on batches drawn from shuffled passes over
    /// `data`, calling `on_step(step, stats)` after each one.
    pub fn fit(
        &mut self,
        data: &[Utterance],
        mut on_step: impl FnMut(usize, &StepStats),
    ) -> Result<Vec<StepStats>> {
        if data.is_empty() {
            return Err(Error::usage("training data is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x005e_ed0f_da7a);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        let mut history = Vec::with_capacity(self.config.steps);
        for step in 0..self.config.steps {
            let mut batch = Vec::with_capacity(self.config.batch_size);
            while batch.len() < self.config.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(&data[order[cursor]]);
                cursor += 1;
            }
            let stats = self.train_step(&batch)?;
            on_step(step, &stats);
            history.push(stats);
        }
        Ok(history)
    }
}

/// Decoding-time scorer over one utterance's precomputed encoder outputs.
pub struct ToyScorer<'a> {
    params: &'a ToyModelParams,
    encoded: Vec<Vec<f64>>,
}

impl<'a> ToyScorer<'a> {
    pub fn new(params: &'a ToyModelParams, frames: &[Vec<f64>]) -> Result<Self> {
        check_frames(params, frames)?;
        let encoded = (0..frames.len())
            .map(|t| encode_frame(params, frames, t).projection)
            .collect();
        Ok(Self { params, encoded })
    }

    pub fn num_frames(&self) -> usize {
        self.encoded.len()
    }
}

impl Scorer for ToyScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.params.dims.vocab
    }

    fn score(&self, frame: usize, history: &[usize]) -> Vec<f64> {
        let ctx = encode_context(self.params, history);
        let mut out = vec![0.0; self.params.output_width()];
        joint(self.params, &self.encoded[frame], &ctx.projection, &mut out);
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    dims: ModelDims,
    blank_set: BlankSet,
    sigma: f64,
    tensors: BTreeMap<String, Vec<f64>>,
}

/// A trained model together with the sigma it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ToyModelParams,
    pub sigma: f64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let tensors = self
            .params
            .tensors()
            .iter()
            .map(|(name, t)| (name.to_string(), t.to_vec()))
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: self.params.dims,
            blank_set: self.params.blank_set.clone(),
            sigma: self.sigma,
            tensors,
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                file.format
            )));
        }
        file.dims.validate()?;
        let mut params = ToyModelParams::zeros(file.dims, file.blank_set);
        let mut tensors = file.tensors;
        for (name, dst) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
            let src = tensors
                .remove(*name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
            if src.len() != dst.len() {
                return Err(Error::Config(format!(
                    "tensor {name} has {} values, dims require {}",
                    src.len(),
                    dst.len()
                )));
            }
            *dst = src;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Config(format!("unknown checkpoint tensor {extra}")));
        }
        Ok(Self {
            params,
            sigma: file.sigma,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
