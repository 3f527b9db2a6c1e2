//! Training, evaluation and hyperparameter search.

use std::collections::HashSet;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::McqaInstance;
use crate::encoder::{embed, encode_backward, encode_batch, EncoderGrads, EncoderParams, ModelConfig, Mode};
use crate::loss::{distance_cce_loss, hybrid_loss_parts, PolytupletConfig};
use crate::manifold::{distance_matrix, sq_dist};
use crate::mining::{classify_negatives, MiningCounts};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Optimizers

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

fn check_len(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<()> {
    check_len(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// Adam moments for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    check_len(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("Adam state does not match parameter length"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Optimizer state over every tensor of an [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    adam: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &EncoderParams) -> Self {
        let adam = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => params
                .tensors()
                .iter()
                .map(|t| AdamState::new(t.len()))
                .collect(),
        };
        Optimizer {
            kind,
            learning_rate,
            adam,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderGrads) -> Result<()> {
        let lr = self.learning_rate;
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => sgd_step(p, g, lr)?,
                OptimizerKind::Adam {
                    beta1,
                    beta2,
                    epsilon,
                } => adam_step(p, g, &mut self.adam[k], lr, beta1, beta2, epsilon)?,
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration and reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Polytuplet plus cross-entropy.
    Hybrid,
    /// Cross-entropy on distance logits only (the baseline).
    CceOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss: PolytupletConfig,
    pub model: ModelConfig,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            loss: PolytupletConfig::default(),
            model: ModelConfig::default(),
            mode: TrainMode::Hybrid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean objective over the epoch's batches.
    pub loss_total: f64,
    /// Unweighted polytuplet component; absent in `cce_only` mode.
    pub loss_polytuplet: Option<f64>,
    pub loss_cce: f64,
    /// Accuracy of the train-mode forward passes seen during the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mining: MiningCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    /// Test accuracy of the parameters before the first update.
    pub initial_test_accuracy: f64,
    pub epochs: Vec<EpochReport>,
    pub best_test_accuracy: f64,
    /// 1-based epoch at which `best_test_accuracy` was first reached.
    pub best_epoch: usize,
    /// Excluded from serialized reports so repeated runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// End-of-run figures written as the last line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: TrainMode,
    pub epochs: usize,
    pub initial_test_accuracy: f64,
    pub final_loss_total: f64,
    pub final_loss_polytuplet: Option<f64>,
    pub final_loss_cce: f64,
    pub final_test_accuracy: f64,
    pub best_test_accuracy: f64,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn summary(&self) -> TrainSummary {
        let last = self.epochs.last().expect("a report has at least one epoch");
        TrainSummary {
            mode: self.mode,
            epochs: self.epochs.len(),
            initial_test_accuracy: self.initial_test_accuracy,
            final_loss_total: last.loss_total,
            final_loss_polytuplet: last.loss_polytuplet,
            final_loss_cce: last.loss_cce,
            final_test_accuracy: last.test_accuracy,
            best_test_accuracy: self.best_test_accuracy,
            best_epoch: self.best_epoch,
        }
    }

    /// One JSON object per epoch (`"kind": "epoch"`), then the summary
    /// (`"kind": "summary"`).
    pub fn to_json_lines(&self) -> String {
        #[derive(Serialize)]
        struct Tagged<'a, T: Serialize> {
            kind: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&Tagged { kind: "epoch", body: e }).unwrap());
            out.push('\n');
        }
        let summary = self.summary();
        out.push_str(
            &serde_json::to_string(&Tagged {
                kind: "summary",
                body: &summary,
            })
            .unwrap(),
        );
        out.push('\n');
        out
    }
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    /// Lower is better; for the encoder these are squared distances.
    pub scores: Vec<f64>,
}

/// Index of the smallest score, lowest index on ties.
pub fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = j;
        }
    }
    best
}

/// Anything that scores answer choices, lower meaning more likely correct.
pub trait AnswerScorer {
    fn scores(&self, instances: &[McqaInstance]) -> Result<Vec<Vec<f64>>>;
}

impl AnswerScorer for EncoderParams {
    fn scores(&self, instances: &[McqaInstance]) -> Result<Vec<Vec<f64>>> {
        let emb = embed(instances, self, Mode::Eval, 0)?;
        Ok(emb
            .context
            .iter()
            .zip(&emb.results)
            .map(|(c, rs)| rs.iter().map(|r| sq_dist(c.values(), r.values())).collect())
            .collect())
    }
}

/// Scores each answer by minus the number of distinct tokens it shares with
/// the context.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlapScorer;

impl AnswerScorer for TokenOverlapScorer {
    fn scores(&self, instances: &[McqaInstance]) -> Result<Vec<Vec<f64>>> {
        Ok(instances
            .iter()
            .map(|inst| {
                let ctx: HashSet<String> = crate::encoder::words(&inst.context).into_iter().collect();
                inst.answers
                    .iter()
                    .map(|a| {
                        let ans: HashSet<String> = crate::encoder::words(a).into_iter().collect();
                        -(ans.intersection(&ctx).count() as f64)
                    })
                    .collect()
            })
            .collect())
    }
}

pub fn predict_with(scorer: &dyn AnswerScorer, instances: &[McqaInstance]) -> Result<Vec<Prediction>> {
    Ok(scorer
        .scores(instances)?
        .into_iter()
        .map(|scores| Prediction {
            index: argmin(&scores),
            scores,
        })
        .collect())
}

/// The answer whose embedding is closest to the context embedding.
pub fn predict(instance: &McqaInstance, params: &EncoderParams) -> Result<Prediction> {
    let mut p = predict_with(params, std::slice::from_ref(instance))?;
    Ok(p.remove(0))
}

pub fn evaluate_with(dataset: &[McqaInstance], scorer: &dyn AnswerScorer) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate an empty dataset"));
    }
    let labels = dataset
        .iter()
        .map(|inst| {
            inst.label.ok_or_else(|| Error::Validation {
                id: inst.id.clone(),
                reason: "missing label".into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds = predict_with(scorer, dataset)?;
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p.index == **y).count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Fraction of `dataset` whose prediction matches its label.
pub fn evaluate(dataset: &[McqaInstance], params: &EncoderParams) -> Result<f64> {
    evaluate_with(dataset, params)
}

// ---------------------------------------------------------------------------
// Training loop

fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// Non-finite embeddings mean the parameters have blown up.
fn as_divergence(err: Error, step: usize, learning_rate: f64) -> Error {
    match err {
        Error::DegenerateInput { norm, .. } if !norm.is_finite() => Error::Divergence {
            step,
            learning_rate,
            value: norm,
        },
        other => other,
    }
}

/// Trains fresh parameters initialized from `cfg.seed`.
pub fn train(
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainReport)> {
    let params = EncoderParams::init(cfg.model, cfg.seed)?;
    train_from(params, train_set, test_set, cfg)
}

/// Mini-batch training starting from `params`.
///
/// Each epoch shuffles the training set with a seeded stream, and each step
/// encodes a batch in train mode, computes the hybrid (or CCE-only) loss,
/// backpropagates and applies one optimizer update. Aborts with
/// [`Error::Divergence`] on a non-finite loss or gradient.
pub fn train_from(
    mut params: EncoderParams,
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    cfg: &TrainConfig,
) -> Result<(EncoderParams, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if params.config != cfg.model {
        return Err(Error::config("initial parameters do not match the model config"));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let initial_test_accuracy = evaluate(test_set, &params)?;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_poly = 0.0;
        let mut sum_cce = 0.0;
        let mut correct = 0usize;
        let mut mining = MiningCounts::default();

        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch_insts: Vec<McqaInstance> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let dropout_seed = rng.next_u64();
            let (batch, trace) = encode_batch(&batch_insts, &params, Mode::Train, dropout_seed)
                .map_err(|e| as_divergence(e, step, cfg.learning_rate))?;

            let (loss, poly, cce) = match cfg.mode {
                TrainMode::Hybrid => {
                    let parts = hybrid_loss_parts(&batch, &cfg.loss)?;
                    (parts.total, parts.polytuplet, parts.cce)
                }
                TrainMode::CceOnly => {
                    let out = distance_cce_loss(&batch, cfg.loss.temperature)?;
                    let v = out.value;
                    (out, 0.0, v)
                }
            };
            if !loss.value.is_finite() || !all_finite(&loss.flat_grads()) {
                return Err(Error::Divergence {
                    step,
                    learning_rate: cfg.learning_rate,
                    value: loss.value,
                });
            }

            let w = chunk.len() as f64;
            sum_total += loss.value * w;
            sum_poly += poly * w;
            sum_cce += cce * w;
            mining.add(&classify_negatives(&batch, cfg.loss.margin)?.counts);
            for (row, &y) in distance_matrix(&batch)?.iter().zip(&batch.labels) {
                if argmin(row) == y {
                    correct += 1;
                }
            }

            let grads = encode_backward(&params, trace, &loss)?;
            if !all_finite(&grads.flat()) {
                return Err(Error::Divergence {
                    step,
                    learning_rate: cfg.learning_rate,
                    value: f64::NAN,
                });
            }
            optimizer.step(&mut params, &grads)?;
            if !params.tensors().iter().all(|t| all_finite(t)) {
                return Err(Error::Divergence {
                    step,
                    learning_rate: cfg.learning_rate,
                    value: f64::NAN,
                });
            }
        }

        let n = train_set.len() as f64;
        epochs.push(EpochReport {
            epoch,
            loss_total: sum_total / n,
            loss_polytuplet: (cfg.mode == TrainMode::Hybrid).then_some(sum_poly / n),
            loss_cce: sum_cce / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: evaluate(test_set, &params)
                .map_err(|e| as_divergence(e, step, cfg.learning_rate))?,
            mining,
        });
    }

    let (best_epoch, best_test_accuracy) = epochs
        .iter()
        .fold((0, f64::NEG_INFINITY), |(be, ba), e| {
            if e.test_accuracy > ba {
                (e.epoch, e.test_accuracy)
            } else {
                (be, ba)
            }
        });
    Ok((
        params,
        TrainReport {
            mode: cfg.mode,
            initial_test_accuracy,
            epochs,
            best_test_accuracy,
            best_epoch,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}

/// Side-by-side CCE-only and hybrid runs on identical data and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cce_only: TrainSummary,
    pub hybrid: TrainSummary,
    /// Relative change of best test accuracy, hybrid over CCE-only, in percent.
    pub improvement_pct: f64,
}

impl Comparison {
    pub fn table(&self) -> String {
        format!(
            "{:<16}{:>10}\n{:<16}{:>10.1}\n{:<16}{:>10.1}\n{:<16}{:>10.1}\n",
            "",
            "accuracy",
            "Acc. (CCE)",
            100.0 * self.cce_only.best_test_accuracy,
            "Acc. (CCE + P)",
            100.0 * self.hybrid.best_test_accuracy,
            "% Improvement",
            self.improvement_pct,
        )
    }
}

pub fn compare_modes(
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    cfg: &TrainConfig,
) -> Result<Comparison> {
    let run = |mode| {
        let cfg = TrainConfig { mode, ..*cfg };
        train(train_set, test_set, &cfg).map(|(_, r)| r.summary())
    };
    let cce_only = run(TrainMode::CceOnly)?;
    let hybrid = run(TrainMode::Hybrid)?;
    let improvement_pct = if cce_only.best_test_accuracy > 0.0 {
        100.0 * (hybrid.best_test_accuracy - cce_only.best_test_accuracy)
            / cce_only.best_test_accuracy
    } else {
        f64::NAN
    };
    Ok(Comparison {
        cce_only,
        hybrid,
        improvement_pct,
    })
}

// ---------------------------------------------------------------------------
// Successive halving

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamRange {
    Uniform { min: f64, max: f64 },
    LogUniform { min: f64, max: f64 },
    Choice(Vec<f64>),
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            ParamRange::Uniform { min, max } => min.is_finite() && max.is_finite() && min <= max,
            ParamRange::LogUniform { min, max } => {
                min.is_finite() && max.is_finite() && *min > 0.0 && min <= max
            }
            ParamRange::Choice(v) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid search range for {name}: {self:?}")))
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            ParamRange::Uniform { min, max } if min == max => *min,
            ParamRange::Uniform { min, max } => Uniform::new_inclusive(min, max).sample(rng),
            ParamRange::LogUniform { min, max } if min == max => *min,
            ParamRange::LogUniform { min, max } => {
                Uniform::new_inclusive(min.ln(), max.ln()).sample(rng).exp()
            }
            ParamRange::Choice(v) => v[rng.gen_range(0..v.len())],
        }
    }
}

/// Ranges to search; `None` keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub margin: Option<ParamRange>,
    pub dropout_rate: Option<ParamRange>,
    pub learning_rate: Option<ParamRange>,
    pub w_hard: Option<ParamRange>,
    pub w_semi: Option<ParamRange>,
    pub lambda_poly: Option<ParamRange>,
    pub lambda_cce: Option<ParamRange>,
    pub temperature: Option<ParamRange>,
}

impl SearchSpace {
    /// A modest default space around the library defaults.
    pub fn standard() -> Self {
        SearchSpace {
            margin: Some(ParamRange::Uniform { min: 0.25, max: 2.0 }),
            dropout_rate: Some(ParamRange::Uniform { min: 0.0, max: 0.5 }),
            learning_rate: Some(ParamRange::LogUniform {
                min: 3e-4,
                max: 1e-2,
            }),
            w_hard: Some(ParamRange::Uniform { min: 0.5, max: 2.0 }),
            w_semi: Some(ParamRange::Uniform { min: 0.5, max: 2.0 }),
            lambda_poly: None,
            lambda_cce: None,
            temperature: Some(ParamRange::LogUniform { min: 0.25, max: 1.0 }),
        }
    }

    fn entries(&self) -> [(&'static str, &Option<ParamRange>); 8] {
        [
            ("margin", &self.margin),
            ("dropout_rate", &self.dropout_rate),
            ("learning_rate", &self.learning_rate),
            ("w_hard", &self.w_hard),
            ("w_semi", &self.w_semi),
            ("lambda_poly", &self.lambda_poly),
            ("lambda_cce", &self.lambda_cce),
            ("temperature", &self.temperature),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, range) in self.entries() {
            if let Some(r) = range {
                r.validate(name)?;
            }
        }
        Ok(())
    }

    /// Draws one configuration; fields are sampled in declaration order.
    pub fn sample(&self, base: &TrainConfig, rng: &mut impl Rng) -> TrainConfig {
        let mut cfg = *base;
        let mut draw = |range: &Option<ParamRange>, slot: &mut f64| {
            if let Some(r) = range {
                *slot = r.sample(rng);
            }
        };
        draw(&self.margin, &mut cfg.loss.margin);
        draw(&self.dropout_rate, &mut cfg.model.dropout_rate);
        draw(&self.learning_rate, &mut cfg.learning_rate);
        draw(&self.w_hard, &mut cfg.loss.w_hard);
        draw(&self.w_semi, &mut cfg.loss.w_semi);
        draw(&self.lambda_poly, &mut cfg.loss.lambda_poly);
        draw(&self.lambda_cce, &mut cfg.loss.lambda_cce);
        draw(&self.temperature, &mut cfg.loss.temperature);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rung: usize,
    pub trial: usize,
    pub epochs: usize,
    /// Best-epoch test accuracy; 0 when the trial diverged or was invalid.
    pub test_accuracy: f64,
    pub diverged: bool,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TrainConfig,
    pub best_trial: usize,
    pub rung_sizes: Vec<usize>,
    pub rung_epochs: Vec<usize>,
    pub leaderboard: Vec<LeaderboardEntry>,
}

/// Survivor counts `k, ⌈k/η⌉, …, 1`, each rung strictly smaller than the
/// last.
pub fn rung_sizes(k: usize, eta: f64) -> Vec<usize> {
    let mut sizes = vec![k];
    let mut n = k;
    while n > 1 {
        n = ((n as f64 / eta).ceil() as usize).clamp(1, n - 1);
        sizes.push(n);
    }
    sizes
}

/// Epochs per rung: the last rung gets `budget` and each earlier rung `η`
/// times fewer, floored.
pub fn rung_epochs(n_rungs: usize, budget: usize, eta: f64) -> Result<Vec<usize>> {
    let first = budget as f64 / eta.powi(n_rungs as i32 - 1);
    if first < 1.0 {
        return Err(Error::config(format!(
            "budget {budget} is too small for {n_rungs} rungs at eta {eta}: \
             the first rung would get {first:.3} epochs"
        )));
    }
    Ok((0..n_rungs)
        .map(|r| (budget as f64 / eta.powi((n_rungs - 1 - r) as i32)).floor() as usize)
        .collect())
}

fn run_trial(
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    cfg: &TrainConfig,
    epochs: usize,
) -> (f64, bool) {
    let cfg = TrainConfig { epochs, ..*cfg };
    match train(train_set, test_set, &cfg) {
        Ok((_, report)) => (report.best_test_accuracy, false),
        Err(_) => (0.0, true),
    }
}

/// Successive halving over explicit candidates.
///
/// Every rung trains its survivors from scratch for that rung's epoch count
/// (trials run in parallel, results are ordered by trial index), ranks them by
/// best test accuracy with ties to the lower trial index, and keeps the top
/// `⌈n/η⌉`.
pub fn successive_halving(
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    candidates: &[TrainConfig],
    budget: usize,
    eta: f64,
) -> Result<TuneResult> {
    if candidates.is_empty() {
        return Err(Error::config("no candidate configurations"));
    }
    if !(eta > 1.0 && eta.is_finite()) {
        return Err(Error::config(format!("eta must exceed 1, got {eta}")));
    }
    if (budget as f64) < eta {
        return Err(Error::config(format!("budget {budget} must be at least eta {eta}")));
    }
    let sizes = rung_sizes(candidates.len(), eta);
    let epochs = rung_epochs(sizes.len(), budget, eta)?;

    let mut survivors: Vec<usize> = (0..candidates.len()).collect();
    let mut leaderboard = Vec::new();
    for (rung, &rung_epochs) in epochs.iter().enumerate() {
        let results: Vec<(usize, f64, bool)> = survivors
            .par_iter()
            .map(|&t| {
                let (acc, diverged) = run_trial(train_set, test_set, &candidates[t], rung_epochs);
                (t, acc, diverged)
            })
            .collect();
        for &(trial, test_accuracy, diverged) in &results {
            leaderboard.push(LeaderboardEntry {
                rung,
                trial,
                epochs: rung_epochs,
                test_accuracy,
                diverged,
                config: TrainConfig {
                    epochs: rung_epochs,
                    ..candidates[trial]
                },
            });
        }
        let mut ranked = results;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keep = sizes.get(rung + 1).copied().unwrap_or(1);
        survivors = ranked.iter().take(keep).map(|r| r.0).collect();
        survivors.sort_unstable();
    }

    let best_trial = survivors[0];
    Ok(TuneResult {
        best: TrainConfig {
            epochs: budget,
            ..candidates[best_trial]
        },
        best_trial,
        rung_sizes: sizes,
        rung_epochs: epochs,
        leaderboard,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    /// Number of sampled configurations in the first rung.
    pub n_configs: usize,
    /// Epochs given to the final survivor.
    pub budget: usize,
    pub eta: f64,
    pub seed: u64,
}

/// Samples `n_configs` configurations from `space` around `base` and runs
/// successive halving. Trial `t` trains with a seed drawn from stream `t` of
/// a ChaCha generator keyed by `seed`.
pub fn tune(
    train_set: &[McqaInstance],
    test_set: &[McqaInstance],
    base: &TrainConfig,
    space: &SearchSpace,
    tc: &TuneConfig,
) -> Result<TuneResult> {
    space.validate()?;
    if tc.n_configs == 0 {
        return Err(Error::config("need at least one configuration"));
    }
    let mut sampler = ChaCha8Rng::seed_from_u64(tc.seed);
    let candidates: Vec<TrainConfig> = (0..tc.n_configs)
        .map(|t| {
            let mut cfg = space.sample(base, &mut sampler);
            let mut seeds = ChaCha8Rng::seed_from_u64(tc.seed);
            seeds.set_stream(t as u64 + 1);
            cfg.seed = seeds.next_u64();
            cfg
        })
        .collect();
    successive_halving(train_set, test_set, &candidates, tc.budget, tc.eta)
}
