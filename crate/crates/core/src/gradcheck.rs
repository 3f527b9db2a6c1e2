//! Central finite-difference checks of every analytic gradient.
//!
//! Losses are treated as functions of unconstrained embedding coordinates
//! (the distance formulas are defined off the sphere too), so each check
//! compares the analytic gradient with `(f(x + h e_k) − f(x − h e_k)) / 2h`.
//! Random cases whose hinge or ReLU kinks lie within reach of the step are
//! redrawn.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{generate_synthetic, Difficulty};
use crate::encoder::{encode_backward, encode_batch, Activation, EncoderParams, ModelConfig, Mode};
use crate::loss::{
    cce_loss, hybrid_loss, polytuplet_loss, triplet_loss, LossOutput, PolytupletConfig,
    TripletConfig,
};
use crate::manifold::{
    distance_matrix, project_to_sphere, project_to_sphere_backward, Embedding, EmbeddingBatch,
};
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Magnitudes below this fraction of the largest gradient entry (or below it
/// outright, for small gradients) are compared absolutely rather than
/// relatively. Central differences at `h = 1e-5` carry about `ε·|f|/h ≈ 1e-10`
/// of rounding noise, which stays well under the tolerance at this floor.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Distance to a kink below which a random case is redrawn.
const KINK_CLEARANCE: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Worst entry of `|a − n| / max(|a|, |n|, GRAD_FLOOR · max(1, ‖a‖∞))`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0_f64, |m, a| m.max(a.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR * scale))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + step;
            let plus = f(&probe);
            probe[k] = orig - step;
            let minus = f(&probe);
            probe[k] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentResult {
    pub component: String,
    pub trials: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            trials: 100,
            tolerance: DEFAULT_TOLERANCE,
            step: DEFAULT_STEP,
        }
    }
}

fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let u = Uniform::new(-1.0, 1.0);
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(u)).collect();
        if let Ok(e) = project_to_sphere(&v) {
            return e.0;
        }
    }
}

/// Random unit-embedding batch.
pub fn random_batch(rng: &mut impl Rng, b: usize, n: usize, d: usize) -> EmbeddingBatch {
    let context = (0..b).map(|_| Embedding(random_vec(rng, d))).collect();
    let results = (0..b)
        .map(|_| (0..n).map(|_| Embedding(random_vec(rng, d))).collect())
        .collect();
    let labels = (0..b).map(|_| rng.gen_range(0..n)).collect();
    EmbeddingBatch {
        context,
        results,
        labels,
    }
}

fn flatten_batch(batch: &EmbeddingBatch) -> Vec<f64> {
    batch
        .context
        .iter()
        .flat_map(|e| e.0.iter())
        .chain(batch.results.iter().flatten().flat_map(|e| e.0.iter()))
        .copied()
        .collect()
}

fn rebuild_batch(template: &EmbeddingBatch, flat: &[f64]) -> EmbeddingBatch {
    let d = template.dim();
    let mut chunks = flat.chunks(d).map(|c| Embedding(c.to_vec()));
    let context = template.context.iter().map(|_| chunks.next().unwrap()).collect();
    let results = template
        .results
        .iter()
        .map(|r| r.iter().map(|_| chunks.next().unwrap()).collect())
        .collect();
    EmbeddingBatch {
        context,
        results,
        labels: template.labels.clone(),
    }
}

/// True when every hinge gap is at least `KINK_CLEARANCE` from 0 and from
/// the margin.
pub fn clear_of_kinks(batch: &EmbeddingBatch, margin: f64) -> bool {
    let Ok(dist) = distance_matrix(batch) else {
        return false;
    };
    dist.iter().zip(&batch.labels).all(|(row, &y)| {
        row.iter().enumerate().all(|(j, &dj)| {
            let gap = dj - row[y];
            j == y || (gap.abs() > KINK_CLEARANCE && (gap - margin).abs() > KINK_CLEARANCE)
        })
    })
}

/// Dimension used by trial `t`: alternates between 2 and 64.
fn trial_dim(t: usize) -> usize {
    if t % 2 == 0 {
        2
    } else {
        64
    }
}

fn random_loss_config(rng: &mut impl Rng) -> PolytupletConfig {
    PolytupletConfig {
        margin: rng.gen_range(0.1..2.0),
        w_hard: rng.gen_range(0.5..2.0),
        w_semi: rng.gen_range(0.5..2.0),
        lambda_poly: rng.gen_range(0.1..2.0),
        lambda_cce: rng.gen_range(0.1..2.0),
        temperature: rng.gen_range(0.25..2.0),
    }
}

fn kink_free_batch(rng: &mut impl Rng, d: usize, margin: f64) -> EmbeddingBatch {
    loop {
        let b = rng.gen_range(1..=3);
        let n = rng.gen_range(2..=4);
        let batch = random_batch(rng, b, n, d);
        if clear_of_kinks(&batch, margin) {
            return batch;
        }
    }
}

fn check_embedding_loss(
    opts: &GradCheckOptions,
    salt: u64,
    loss: impl Fn(&EmbeddingBatch, &PolytupletConfig) -> Result<LossOutput>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt);
    let mut worst: f64 = 0.0;
    for t in 0..opts.trials {
        let cfg = random_loss_config(&mut rng);
        let batch = kink_free_batch(&mut rng, trial_dim(t), cfg.margin);
        let analytic = loss(&batch, &cfg)?.flat_grads();
        let x = flatten_batch(&batch);
        let numeric = central_difference(
            |p| loss(&rebuild_batch(&batch, p), &cfg).map_or(f64::NAN, |o| o.value),
            &x,
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

pub fn check_sphere_projection(opts: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51);
    let mut worst: f64 = 0.0;
    for t in 0..opts.trials {
        let d = trial_dim(t);
        let scale = rng.gen_range(0.5..3.0);
        let raw: Vec<f64> = random_vec(&mut rng, d).iter().map(|v| v * scale).collect();
        let upstream = random_vec(&mut rng, d);
        let analytic = project_to_sphere_backward(&raw, &upstream)?;
        let numeric = central_difference(
            |x| {
                project_to_sphere(x).map_or(f64::NAN, |e| {
                    e.0.iter().zip(&upstream).map(|(a, b)| a * b).sum()
                })
            },
            &raw,
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

pub fn check_triplet(opts: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7419);
    let mut worst: f64 = 0.0;
    for t in 0..opts.trials {
        let d = trial_dim(t);
        let cfg = TripletConfig {
            alpha: rng.gen_range(0.1..2.0),
        };
        let (a, p, n) = loop {
            let a = random_vec(&mut rng, d);
            let p = random_vec(&mut rng, d);
            let n = random_vec(&mut rng, d);
            let z = crate::manifold::sq_dist(&a, &p) - crate::manifold::sq_dist(&a, &n) + cfg.alpha;
            if z.abs() > KINK_CLEARANCE {
                break (a, p, n);
            }
        };
        let out = triplet_loss(&Embedding(a.clone()), &Embedding(p.clone()), &Embedding(n.clone()), &cfg)?;
        let analytic: Vec<f64> = out
            .grad_anchor
            .iter()
            .chain(&out.grad_positive)
            .chain(&out.grad_negative)
            .copied()
            .collect();
        let x: Vec<f64> = a.iter().chain(&p).chain(&n).copied().collect();
        let numeric = central_difference(
            |x| {
                let e = |k: usize| Embedding(x[k * d..(k + 1) * d].to_vec());
                triplet_loss(&e(0), &e(1), &e(2), &cfg).map_or(f64::NAN, |o| o.value)
            },
            &x,
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

pub fn check_polytuplet(opts: &GradCheckOptions) -> Result<f64> {
    check_embedding_loss(opts, 0x9013, polytuplet_loss)
}

pub fn check_hybrid(opts: &GradCheckOptions) -> Result<f64> {
    check_embedding_loss(opts, 0x4b1d, hybrid_loss)
}

pub fn check_cce(opts: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xcce);
    let mut worst: f64 = 0.0;
    for _ in 0..opts.trials {
        let b = rng.gen_range(1..=4);
        let n = rng.gen_range(2..=6);
        let logits: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..n)).collect();
        let analytic: Vec<f64> = cce_loss(&logits, &labels)?.grad_logits.concat();
        let x = logits.concat();
        let numeric = central_difference(
            |p| {
                let rows: Vec<Vec<f64>> = p.chunks(n).map(<[f64]>::to_vec).collect();
                cce_loss(&rows, &labels).map_or(f64::NAN, |o| o.value)
            },
            &x,
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

fn encoder_loss(params: &EncoderParams, insts: &[crate::McqaInstance], seed: u64, cfg: &PolytupletConfig) -> f64 {
    encode_batch(insts, params, Mode::Train, seed)
        .and_then(|(batch, _)| hybrid_loss(&batch, cfg))
        .map_or(f64::NAN, |o| o.value)
}

/// Hybrid loss through the full encoder, differentiated w.r.t. every
/// parameter. Dropout is active with a fixed seed, so both sides see the same
/// mask. Hidden widths alternate 4 / 32 and embedding widths 2 / 64.
pub fn check_encoder(opts: &GradCheckOptions) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xe4c0);
    let mut worst: f64 = 0.0;
    for t in 0..opts.trials {
        let model = ModelConfig {
            vocab_dim: 16,
            n_gram: 1 + t % 2,
            hidden: if (t / 2) % 2 == 0 { 4 } else { 32 },
            dim: trial_dim(t),
            dropout_rate: 0.25,
            activation: if t % 3 == 0 {
                Activation::Tanh
            } else {
                Activation::Relu
            },
        };
        let cfg = random_loss_config(&mut rng);
        let (params, insts, seed, grads) = loop {
            let params = EncoderParams::init(model, rng.gen())?;
            let b = rng.gen_range(1..=2);
            let n = rng.gen_range(2..=3);
            let insts = generate_synthetic(b, 24, n, Difficulty::Noisy, rng.gen())?;
            let seed: u64 = rng.gen();
            // Every hidden unit can be dropped or inactive, leaving a zero output.
            let (batch, trace) = match encode_batch(&insts, &params, Mode::Train, seed) {
                Err(Error::DegenerateInput { .. }) => continue,
                other => other?,
            };
            if !clear_of_kinks(&batch, cfg.margin)
                || (model.activation == Activation::Relu
                    && trace.min_abs_pre_activation() < KINK_CLEARANCE)
            {
                continue;
            }
            let loss = hybrid_loss(&batch, &cfg)?;
            let grads = encode_backward(&params, trace, &loss)?;
            break (params, insts, seed, grads);
        };

        let analytic = grads.flat();
        let x: Vec<f64> = params.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let mut probe = params.clone();
        let numeric = central_difference(
            |flat| {
                let mut offset = 0;
                for tensor in probe.tensors_mut() {
                    let len = tensor.len();
                    tensor.copy_from_slice(&flat[offset..offset + len]);
                    offset += len;
                }
                encoder_loss(&probe, &insts, seed, &cfg)
            },
            &x,
            opts.step,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Runs every component check.
pub fn run_all(opts: &GradCheckOptions) -> Result<Vec<ComponentResult>> {
    if opts.trials == 0 {
        return Err(Error::config("need at least one trial"));
    }
    if !(opts.tolerance > 0.0 && opts.step > 0.0) {
        return Err(Error::config("tolerance and step must be positive"));
    }
    let checks: [(&str, fn(&GradCheckOptions) -> Result<f64>); 6] = [
        ("sphere_projection", check_sphere_projection),
        ("triplet", check_triplet),
        ("polytuplet", check_polytuplet),
        ("cce", check_cce),
        ("hybrid", check_hybrid),
        ("encoder", check_encoder),
    ];
    checks
        .iter()
        .map(|(name, check)| {
            let err = check(opts)?;
            Ok(ComponentResult {
                component: name.to_string(),
                trials: opts.trials,
                max_relative_error: err,
                passed: err < opts.tolerance,
            })
        })
        .collect()
}
