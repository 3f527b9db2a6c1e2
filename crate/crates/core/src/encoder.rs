//! Dual text encoder with index-blind batching.
//!
//! Text is tokenized into hashed bag-of-n-gram counts (L2-normalized before
//! use) and passed through one of two independent feedforward paths:
//!
//! ```text
//! x ─ W1·x + b1 ─ activation ─ dropout ─ W2·h + b2 ─ project to sphere ─ e
//! ```
//!
//! The context path embeds `context ⊕ question`; the result path embeds
//! `context ⊕ question ⊕ answer_j`. Result rows are flattened across the batch
//! and answer dimensions before encoding, so no computation can depend on the
//! position of an answer in its list.
//!
//! Any encoder exposing text-in, unit-embedding-out and a matching backward
//! pass can stand in for this one.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::distributions::Uniform;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::McqaInstance;
use crate::loss::LossOutput;
use crate::manifold::{project_to_sphere, project_to_sphere_backward, Embedding, EmbeddingBatch};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of hash buckets.
    pub vocab_dim: usize,
    /// 1 for unigrams, 2 for unigrams plus bigrams.
    pub n_gram: usize,
    pub hidden: usize,
    /// Embedding width.
    pub dim: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_dim: 1024,
            n_gram: 1,
            hidden: 128,
            dim: crate::manifold::DEFAULT_DIM,
            dropout_rate: 0.1,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_dim < 8 {
            return Err(Error::config(format!(
                "vocab_dim must be at least 8, got {}",
                self.vocab_dim
            )));
        }
        if !matches!(self.n_gram, 1 | 2) {
            return Err(Error::config(format!("n_gram must be 1 or 2, got {}", self.n_gram)));
        }
        if self.hidden == 0 || self.dim == 0 {
            return Err(Error::config("hidden and dim must be positive"));
        }
        check_rate(self.dropout_rate)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Hashed n-gram counts as a sparse vector sorted by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedText {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl TokenizedText {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(k, x) in &self.entries {
            v[k] = x;
        }
        v
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unit-L2 copy; the zero vector stays zero.
    pub fn l2_normalized(&self) -> TokenizedText {
        let norm = self.entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return self.clone();
        }
        TokenizedText {
            dim: self.dim,
            entries: self.entries.iter().map(|&(k, x)| (k, x / norm)).collect(),
        }
    }
}

/// Bucket of a token under the FNV-1a hash.
pub fn bucket_of(token: &str, vocab_dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    (h.finish() % vocab_dim as u64) as usize
}

pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercased alphanumeric tokens (plus space-joined bigrams when
/// `n_gram == 2`) hashed into `vocab_dim` count buckets.
pub fn tokenize(text: &str, vocab_dim: usize, n_gram: usize) -> Result<TokenizedText> {
    if vocab_dim < 8 {
        return Err(Error::config(format!("vocab_dim must be at least 8, got {vocab_dim}")));
    }
    if !matches!(n_gram, 1 | 2) {
        return Err(Error::config(format!("n_gram must be 1 or 2, got {n_gram}")));
    }
    let tokens = words(text);
    let mut counts = std::collections::BTreeMap::<usize, f64>::new();
    for t in &tokens {
        *counts.entry(bucket_of(t, vocab_dim)).or_default() += 1.0;
    }
    if n_gram == 2 {
        for pair in tokens.windows(2) {
            let bigram = format!("{} {}", pair[0], pair[1]);
            *counts.entry(bucket_of(&bigram, vocab_dim)).or_default() += 1.0;
        }
    }
    Ok(TokenizedText {
        dim: vocab_dim,
        entries: counts.into_iter().collect(),
    })
}

/// Shape of a flattened `batch × n_answers` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatShape {
    pub batch: usize,
    pub n_answers: usize,
}

/// Row-major flattening of a rectangular `B × N` grid into `B·N` rows.
pub fn flatten_index_blind<T>(nested: Vec<Vec<T>>) -> Result<(Vec<T>, FlatShape)> {
    let batch = nested.len();
    let n_answers = nested.first().map_or(0, Vec::len);
    if let Some((i, row)) = nested.iter().enumerate().find(|(_, r)| r.len() != n_answers) {
        return Err(Error::shape(format!(
            "ragged batch: row {i} has {} items, row 0 has {n_answers}",
            row.len()
        )));
    }
    let flat = nested.into_iter().flatten().collect();
    Ok((flat, FlatShape { batch, n_answers }))
}

pub fn unflatten<T>(flat: Vec<T>, shape: FlatShape) -> Result<Vec<Vec<T>>> {
    if flat.len() != shape.batch * shape.n_answers {
        return Err(Error::shape(format!(
            "{} rows cannot fill a {}x{} grid",
            flat.len(),
            shape.batch,
            shape.n_answers
        )));
    }
    let mut it = flat.into_iter();
    Ok((0..shape.batch)
        .map(|_| it.by_ref().take(shape.n_answers).collect())
        .collect())
}

/// Inverted dropout. Returns the output and the per-unit multipliers (0 or
/// `1 / (1 − rate)`); eval mode is the identity with an all-ones mask.
pub fn dropout(activations: &[f64], rate: f64, seed: u64, mode: Mode) -> Result<(Vec<f64>, Vec<f64>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((activations.to_vec(), vec![1.0; activations.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = activations
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let out = activations.iter().zip(&mask).map(|(a, m)| a * m).collect();
    Ok((out, mask))
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.sample(dist)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::shape(format!(
                "{name}: {} weights and {} biases for a {}x{} layer",
                self.weights.len(),
                self.bias.len(),
                self.outputs,
                self.inputs
            )));
        }
        Ok(())
    }

    fn forward_sparse(&self, x: &TokenizedText) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for &(k, v) in &x.entries {
                *zo += row[k] * v;
            }
        }
        z
    }

    fn forward_dense(&self, x: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// One encoder path: hidden layer then projection to the embedding width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub hidden: Dense,
    pub output: Dense,
}

impl PathParams {
    fn zeros_like(&self) -> Self {
        PathParams {
            hidden: Dense::zeros(self.hidden.inputs, self.hidden.outputs),
            output: Dense::zeros(self.output.inputs, self.output.outputs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: ModelConfig,
    pub context_path: PathParams,
    pub result_path: PathParams,
}

pub const TENSOR_NAMES: [&str; 8] = [
    "context.hidden.weights",
    "context.hidden.bias",
    "context.output.weights",
    "context.output.bias",
    "result.hidden.weights",
    "result.hidden.bias",
    "result.output.weights",
    "result.output.bias",
];

fn tensors_of<'a>(ctx: &'a PathParams, res: &'a PathParams) -> [&'a [f64]; 8] {
    [
        &ctx.hidden.weights,
        &ctx.hidden.bias,
        &ctx.output.weights,
        &ctx.output.bias,
        &res.hidden.weights,
        &res.hidden.bias,
        &res.output.weights,
        &res.output.bias,
    ]
}

fn tensors_of_mut<'a>(ctx: &'a mut PathParams, res: &'a mut PathParams) -> [&'a mut [f64]; 8] {
    [
        &mut ctx.hidden.weights,
        &mut ctx.hidden.bias,
        &mut ctx.output.weights,
        &mut ctx.output.bias,
        &mut res.hidden.weights,
        &mut res.hidden.bias,
        &mut res.output.weights,
        &mut res.output.bias,
    ]
}

const CHECKPOINT_FORMAT: &str = "polytuplet-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    params: EncoderParams,
}

impl EncoderParams {
    /// Fresh parameters: context path first, then result path, drawn from a
    /// ChaCha stream seeded with `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = |rng: &mut ChaCha8Rng| PathParams {
            hidden: Dense::glorot(config.vocab_dim, config.hidden, rng),
            output: Dense::glorot(config.hidden, config.dim, rng),
        };
        let context_path = path(&mut rng);
        let result_path = path(&mut rng);
        Ok(EncoderParams {
            config,
            context_path,
            result_path,
        })
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        tensors_of(&self.context_path, &self.result_path)
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        tensors_of_mut(&mut self.context_path, &mut self.result_path)
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            context_path: self.context_path.zeros_like(),
            result_path: self.result_path.zeros_like(),
        }
    }

    /// Checks that every layer matches the declared configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        for (name, path) in [("context", &self.context_path), ("result", &self.result_path)] {
            path.hidden.check(&format!("{name}.hidden"))?;
            path.output.check(&format!("{name}.output"))?;
            let dims = [
                ("vocab_dim", c.vocab_dim, "hidden inputs", path.hidden.inputs),
                ("hidden", c.hidden, "hidden outputs", path.hidden.outputs),
                ("hidden", c.hidden, "output inputs", path.output.inputs),
                ("dim", c.dim, "output outputs", path.output.outputs),
            ];
            for (field, declared, layer, actual) in dims {
                if declared != actual {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint declares {field}={declared} but {name} path has {layer}={actual}"
                    )));
                }
            }
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint_json(&self) -> String {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            offset: crate::data::byte_offset_of(text.as_bytes(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.params.validate().map_err(|e| match e {
            Error::Checkpoint(_) => e,
            other => Error::Checkpoint(other.to_string()),
        })?;
        Ok(ckpt.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint_json(&text)
    }
}

/// Parameter gradients, laid out like [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub context_path: PathParams,
    pub result_path: PathParams,
}

impl EncoderGrads {
    pub fn tensors(&self) -> [&[f64]; 8] {
        tensors_of(&self.context_path, &self.result_path)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }
}

/// Cached intermediates of one encoded row.
#[derive(Debug, Clone)]
struct RowTrace {
    input: TokenizedText,
    pre_hidden: Vec<f64>,
    mask: Vec<f64>,
    hidden_out: Vec<f64>,
    raw: Vec<f64>,
}

/// Everything [`encode_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    context: Vec<RowTrace>,
    results: Vec<RowTrace>,
    shape: FlatShape,
    activation: Activation,
}

impl ForwardTrace {
    pub fn shape(&self) -> FlatShape {
        self.shape
    }

    /// Smallest `|pre-activation|` over all hidden units of all rows. Finite
    /// difference checks use it to stay clear of ReLU kinks.
    pub fn min_abs_pre_activation(&self) -> f64 {
        self.context
            .iter()
            .chain(&self.results)
            .flat_map(|r| r.pre_hidden.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

fn context_text(inst: &McqaInstance) -> String {
    format!("{} {}", inst.context, inst.question)
}

fn result_text(inst: &McqaInstance, answer: &str) -> String {
    format!("{} {} {}", inst.context, inst.question, answer)
}

fn encode_row(
    path: &PathParams,
    config: &ModelConfig,
    input: TokenizedText,
    mode: Mode,
    seed: u64,
) -> Result<(Embedding, RowTrace)> {
    let pre_hidden = path.hidden.forward_sparse(&input);
    let activated: Vec<f64> = pre_hidden.iter().map(|&z| config.activation.apply(z)).collect();
    let (hidden_out, mask) = dropout(&activated, config.dropout_rate, seed, mode)?;
    let raw = path.output.forward_dense(&hidden_out);
    let emb = project_to_sphere(&raw)?;
    Ok((
        emb,
        RowTrace {
            input,
            pre_hidden,
            mask,
            hidden_out,
            raw,
        },
    ))
}

/// Context and result embeddings with the trace needed for backprop.
pub struct Embedded {
    pub context: Vec<Embedding>,
    pub results: Vec<Vec<Embedding>>,
    pub trace: ForwardTrace,
}

/// Embeds every instance; labels are not required.
///
/// Dropout seeds for each row are drawn in order (contexts, then flattened
/// results) from a ChaCha stream seeded with `seed`. Eval mode never touches
/// the stream.
pub fn embed(
    instances: &[McqaInstance],
    params: &EncoderParams,
    mode: Mode,
    seed: u64,
) -> Result<Embedded> {
    if instances.is_empty() {
        return Err(Error::shape("cannot encode an empty batch"));
    }
    let cfg = &params.config;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut next_seed = || match mode {
        Mode::Train => seeds.next_u64(),
        Mode::Eval => 0,
    };

    let mut context = Vec::with_capacity(instances.len());
    let mut context_trace = Vec::with_capacity(instances.len());
    for inst in instances {
        let x = tokenize(&context_text(inst), cfg.vocab_dim, cfg.n_gram)?.l2_normalized();
        let (e, t) = encode_row(&params.context_path, cfg, x, mode, next_seed())?;
        context.push(e);
        context_trace.push(t);
    }

    let nested: Vec<Vec<String>> = instances
        .iter()
        .map(|inst| inst.answers.iter().map(|a| result_text(inst, a)).collect())
        .collect();
    let (flat, shape) = flatten_index_blind(nested)?;
    let mut result_embs = Vec::with_capacity(flat.len());
    let mut result_trace = Vec::with_capacity(flat.len());
    for text in &flat {
        let x = tokenize(text, cfg.vocab_dim, cfg.n_gram)?.l2_normalized();
        let (e, t) = encode_row(&params.result_path, cfg, x, mode, next_seed())?;
        result_embs.push(e);
        result_trace.push(t);
    }

    Ok(Embedded {
        context,
        results: unflatten(result_embs, shape)?,
        trace: ForwardTrace {
            context: context_trace,
            results: result_trace,
            shape,
            activation: cfg.activation,
        },
    })
}

/// Encodes labeled instances into an [`EmbeddingBatch`].
pub fn encode_batch(
    instances: &[McqaInstance],
    params: &EncoderParams,
    mode: Mode,
    seed: u64,
) -> Result<(EmbeddingBatch, ForwardTrace)> {
    let labels = instances
        .iter()
        .map(|inst| {
            inst.label.ok_or_else(|| Error::Validation {
                id: inst.id.clone(),
                reason: "missing label".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let embedded = embed(instances, params, mode, seed)?;
    let batch = EmbeddingBatch::new(embedded.context, embedded.results, labels)?;
    Ok((batch, embedded.trace))
}

fn backward_row(
    path: &PathParams,
    grads: &mut PathParams,
    row: &RowTrace,
    activation: Activation,
    upstream: &[f64],
) -> Result<()> {
    let g_raw = project_to_sphere_backward(&row.raw, upstream)?;

    let out = &path.output;
    let g_out = &mut grads.output;
    let mut g_hidden = vec![0.0; out.inputs];
    for (o, &g) in g_raw.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        g_out.bias[o] += g;
        let w_row = &out.weights[o * out.inputs..(o + 1) * out.inputs];
        let gw_row = &mut g_out.weights[o * out.inputs..(o + 1) * out.inputs];
        for k in 0..out.inputs {
            gw_row[k] += g * row.hidden_out[k];
            g_hidden[k] += g * w_row[k];
        }
    }

    let hid = &mut grads.hidden;
    for (o, g_h) in g_hidden.iter().enumerate() {
        let g = g_h * row.mask[o] * activation.derivative(row.pre_hidden[o]);
        if g == 0.0 {
            continue;
        }
        hid.bias[o] += g;
        let gw_row = &mut hid.weights[o * hid.inputs..(o + 1) * hid.inputs];
        for &(k, v) in &row.input.entries {
            gw_row[k] += g * v;
        }
    }
    Ok(())
}

/// Backpropagates embedding gradients to every encoder parameter.
///
/// Result-path gradients from all `B·N` flattened rows accumulate into the
/// shared result-path weights, in row order.
pub fn encode_backward(
    params: &EncoderParams,
    trace: ForwardTrace,
    grad_batch: &LossOutput,
) -> Result<EncoderGrads> {
    let shape = trace.shape;
    if grad_batch.grad_context.len() != trace.context.len()
        || grad_batch.grad_results.len() != shape.batch
        || grad_batch.grad_results.iter().any(|r| r.len() != shape.n_answers)
    {
        return Err(Error::shape(format!(
            "gradient batch does not match a {}x{} trace",
            shape.batch, shape.n_answers
        )));
    }
    let d = params.config.dim;
    let mut grads = params.zero_grads();
    for (row, g) in trace.context.iter().zip(&grad_batch.grad_context) {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.len(),
            });
        }
        backward_row(&params.context_path, &mut grads.context_path, row, trace.activation, g)?;
    }
    let flat_grads = grad_batch.grad_results.iter().flatten();
    for (row, g) in trace.results.iter().zip(flat_grads) {
        if g.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: g.len(),
            });
        }
        backward_row(&params.result_path, &mut grads.result_path, row, trace.activation, g)?;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            vocab_dim: 64,
            n_gram: 2,
            hidden: 8,
            dim: 4,
            dropout_rate: 0.3,
            activation: Activation::Relu,
        }
    }

    fn instance() -> McqaInstance {
        McqaInstance {
            context: "The cat sat on the mat".into(),
            question: "Where did the cat sit?".into(),
            answers: vec!["on the mat".into(), "in a hat".into(), "by the door".into()],
            label: Some(0),
            id: "t".into(),
        }
    }

    #[test]
    fn tokenize_counts() {
        let t = tokenize("a a b", 1 << 16, 1).unwrap();
        let (ba, bb) = (bucket_of("a", 1 << 16), bucket_of("b", 1 << 16));
        assert_ne!(ba, bb);
        let dense = t.to_dense();
        assert_eq!(dense[ba], 2.0);
        assert_eq!(dense[bb], 1.0);
        assert_eq!(dense.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn tokenize_is_case_and_punctuation_blind() {
        let a = tokenize("Hello, World!", 128, 2).unwrap();
        let b = tokenize("hello world", 128, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.entries.iter().map(|e| e.1).sum::<f64>(), 3.0);
    }

    #[test]
    fn tokenize_empty_and_invalid() {
        assert!(tokenize("", 32, 1).unwrap().is_zero());
        assert!(tokenize(" ,. ", 32, 2).unwrap().is_zero());
        assert!(tokenize("x", 4, 1).is_err());
        assert!(tokenize("x", 32, 3).is_err());
    }

    #[test]
    fn flatten_row_major() {
        let (flat, shape) =
            flatten_index_blind(vec![vec!["r00", "r01"], vec!["r10", "r11"]]).unwrap();
        assert_eq!(flat, vec!["r00", "r01", "r10", "r11"]);
        assert_eq!(shape, FlatShape { batch: 2, n_answers: 2 });
        assert_eq!(
            unflatten(flat, shape).unwrap(),
            vec![vec!["r00", "r01"], vec!["r10", "r11"]]
        );
        let (flat, shape) = flatten_index_blind(vec![vec![1, 2, 3]]).unwrap();
        assert_eq!(flat, vec![1, 2, 3]);
        assert_eq!(shape.batch, 1);
    }

    #[test]
    fn flatten_rejects_ragged() {
        assert!(flatten_index_blind(vec![vec![1, 2], vec![3]]).is_err());
        assert!(unflatten(vec![1, 2, 3], FlatShape { batch: 2, n_answers: 2 }).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = [1.0, -2.0, 3.0];
        let (y, m) = dropout(&x, 0.0, 1, Mode::Train).unwrap();
        assert_eq!(y, x);
        assert_eq!(m, vec![1.0; 3]);
        let (y, _) = dropout(&x, 0.9, 1, Mode::Eval).unwrap();
        assert_eq!(y, x);
        let (y, m) = dropout(&x, 0.5, 1, Mode::Train).unwrap();
        for ((yi, xi), mi) in y.iter().zip(x).zip(m) {
            assert!(mi == 0.0 || mi == 2.0);
            assert_eq!(*yi, xi * mi);
        }
        assert!(dropout(&x, 1.0, 1, Mode::Train).is_err());
        assert!(dropout(&x, -0.1, 1, Mode::Train).is_err());
    }

    #[test]
    fn eval_is_deterministic_and_unit_norm() {
        let params = EncoderParams::init(small_config(), 3).unwrap();
        let insts = vec![instance()];
        let (a, _) = encode_batch(&insts, &params, Mode::Eval, 1).unwrap();
        let (b, _) = encode_batch(&insts, &params, Mode::Eval, 99).unwrap();
        assert_eq!(a, b);
        for e in a.context.iter().chain(a.results.iter().flatten()) {
            assert!((e.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..small_config()
        };
        let params = EncoderParams::init(cfg, 3).unwrap();
        let insts = vec![instance()];
        let (a, _) = encode_batch(&insts, &params, Mode::Train, 5).unwrap();
        let (b, _) = encode_batch(&insts, &params, Mode::Eval, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unlabeled_batch_needs_embed() {
        let params = EncoderParams::init(small_config(), 3).unwrap();
        let mut inst = instance();
        inst.label = None;
        assert!(encode_batch(&[inst.clone()], &params, Mode::Eval, 0).is_err());
        assert!(embed(&[inst], &params, Mode::Eval, 0).is_ok());
        assert!(embed(&[], &params, Mode::Eval, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let params = EncoderParams::init(small_config(), 3).unwrap();
        let (batch, trace) = encode_batch(&[instance()], &params, Mode::Train, 2).unwrap();
        let zeros = LossOutput {
            value: 0.0,
            grad_context: vec![vec![0.0; 4]; 1],
            grad_results: vec![vec![vec![0.0; 4]; batch.n_answers()]],
        };
        let g = encode_backward(&params, trace, &zeros).unwrap();
        assert!(g.flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_checks_shapes() {
        let params = EncoderParams::init(small_config(), 3).unwrap();
        let (_, trace) = encode_batch(&[instance()], &params, Mode::Eval, 2).unwrap();
        let wrong = LossOutput {
            value: 0.0,
            grad_context: vec![vec![0.0; 4]; 1],
            grad_results: vec![vec![vec![0.0; 4]; 2]],
        };
        assert!(encode_backward(&params, trace, &wrong).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let params = EncoderParams::init(small_config(), 17).unwrap();
        let text = params.to_checkpoint_json();
        let back = EncoderParams::from_checkpoint_json(&text).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn checkpoint_dimension_mismatch_names_both() {
        let mut params = EncoderParams::init(small_config(), 17).unwrap();
        params.config.vocab_dim = 128;
        let err = EncoderParams::from_checkpoint_json(&params.to_checkpoint_json())
            .unwrap_err()
            .to_string();
        assert!(err.contains("vocab_dim=128"), "{err}");
        assert!(err.contains("=64"), "{err}");
    }

    #[test]
    fn init_is_seeded() {
        let a = EncoderParams::init(small_config(), 1).unwrap();
        let b = EncoderParams::init(small_config(), 1).unwrap();
        let c = EncoderParams::init(small_config(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / (64.0 + 8.0)).sqrt();
        assert!(a.context_path.hidden.weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a.context_path, a.result_path);
    }
}
