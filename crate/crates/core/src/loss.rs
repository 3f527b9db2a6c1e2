//! Loss functions with analytic gradients.
//!
//! * [`triplet_loss`] - `max(0, d(a,p) − d(a,n) + α)` for a single triplet.
//! * [`polytuplet_loss`] - the triplet hinge summed over every wrong answer of
//!   a question, anchored at the context embedding and weighted by mining
//!   category. Averaged over the batch.
//! * [`cce_loss`] - categorical cross-entropy on logits.
//! * [`hybrid_loss`] - `λ_poly · polytuplet + λ_cce · cce(−distance / T)`.
//!
//! All hinge subgradients at zero are taken as zero, so a batch with zero loss
//! produces exactly zero gradients.

use serde::{Deserialize, Serialize};

use crate::manifold::{distance_matrix, Embedding, EmbeddingBatch};
use crate::mining::{classify_distances, mining_weights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub alpha: f64,
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(format!(
                "triplet margin must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of the polytuplet and hybrid objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolytupletConfig {
    /// Required gap between the positive and each negative distance.
    pub margin: f64,
    /// Weight on hinge terms from hard negatives.
    pub w_hard: f64,
    /// Weight on hinge terms from semi-hard negatives.
    pub w_semi: f64,
    pub lambda_poly: f64,
    pub lambda_cce: f64,
    /// Logits are `−distance / temperature`.
    pub temperature: f64,
}

impl Default for PolytupletConfig {
    fn default() -> Self {
        PolytupletConfig {
            margin: 1.0,
            w_hard: 1.0,
            w_semi: 1.0,
            lambda_poly: 1.0,
            lambda_cce: 1.0,
            temperature: 1.0,
        }
    }
}

impl PolytupletConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("margin", self.margin),
            ("w_hard", self.w_hard),
            ("w_semi", self.w_semi),
            ("lambda_poly", self.lambda_poly),
            ("lambda_cce", self.lambda_cce),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!(
                "temperature must be finite and positive, got {}",
                self.temperature
            )));
        }
        if self.lambda_poly + self.lambda_cce <= 0.0 {
            return Err(Error::config("lambda_poly + lambda_cce must be positive"));
        }
        Ok(())
    }
}

/// Loss value with gradients shaped like the [`EmbeddingBatch`] it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_context: Vec<Vec<f64>>,
    pub grad_results: Vec<Vec<Vec<f64>>>,
}

impl LossOutput {
    fn zeros(batch: &EmbeddingBatch) -> Self {
        let d = batch.dim();
        LossOutput {
            value: 0.0,
            grad_context: vec![vec![0.0; d]; batch.batch_size()],
            grad_results: batch
                .results
                .iter()
                .map(|r| vec![vec![0.0; d]; r.len()])
                .collect(),
        }
    }

    /// `self += scale · other`.
    fn add_scaled(&mut self, other: &LossOutput, scale: f64) {
        self.value += scale * other.value;
        for (dst, src) in self.grad_context.iter_mut().zip(&other.grad_context) {
            axpy(dst, scale, src);
        }
        for (dst_row, src_row) in self.grad_results.iter_mut().zip(&other.grad_results) {
            for (dst, src) in dst_row.iter_mut().zip(src_row) {
                axpy(dst, scale, src);
            }
        }
    }

    /// Every gradient entry, contexts first, then results in row-major order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.grad_context
            .iter()
            .flatten()
            .chain(self.grad_results.iter().flatten().flatten())
            .copied()
            .collect()
    }
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// `dst += scale · 2 (a − b)`, the gradient of `‖a − b‖²` w.r.t. `a`.
fn add_sq_dist_grad(dst: &mut [f64], scale: f64, a: &[f64], b: &[f64]) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += scale * 2.0 * (x - y);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub value: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

pub fn triplet_loss(
    anchor: &Embedding,
    positive: &Embedding,
    negative: &Embedding,
    cfg: &TripletConfig,
) -> Result<TripletOutput> {
    cfg.validate()?;
    let d = anchor.dim();
    for e in [positive, negative] {
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: e.dim(),
            });
        }
    }
    let (a, p, n) = (anchor.values(), positive.values(), negative.values());
    let d_ap = crate::manifold::sq_dist(a, p);
    let d_an = crate::manifold::sq_dist(a, n);
    let z = d_ap - d_an + cfg.alpha;

    let mut out = TripletOutput {
        value: 0.0,
        grad_anchor: vec![0.0; d],
        grad_positive: vec![0.0; d],
        grad_negative: vec![0.0; d],
    };
    if z > 0.0 {
        out.value = z;
        add_sq_dist_grad(&mut out.grad_anchor, 1.0, a, p);
        add_sq_dist_grad(&mut out.grad_anchor, -1.0, a, n);
        add_sq_dist_grad(&mut out.grad_positive, 1.0, p, a);
        add_sq_dist_grad(&mut out.grad_negative, -1.0, n, a);
    }
    Ok(out)
}

/// Mining-weighted polytuplet loss, averaged over the batch.
///
/// Sample `i` contributes `Σ_{j≠y} w(i,j) · max(0, d(a,y) − d(a,j) + m)`; the
/// batch value is the mean of those sums.
pub fn polytuplet_loss(batch: &EmbeddingBatch, cfg: &PolytupletConfig) -> Result<LossOutput> {
    Ok(polytuplet_with_terms(batch, cfg)?.0)
}

/// Polytuplet loss plus the un-normalized per-sample sums.
pub fn polytuplet_with_terms(
    batch: &EmbeddingBatch,
    cfg: &PolytupletConfig,
) -> Result<(LossOutput, Vec<f64>)> {
    cfg.validate()?;
    let distances = distance_matrix(batch)?;
    let report = classify_distances(&distances, &batch.labels, cfg.margin);
    let weights = mining_weights(&report, cfg.w_hard, cfg.w_semi);

    let scale = 1.0 / batch.batch_size() as f64;
    let mut out = LossOutput::zeros(batch);
    let mut per_sample = Vec::with_capacity(batch.batch_size());
    for i in 0..batch.batch_size() {
        let y = batch.labels[i];
        let a = batch.context[i].values();
        let pos = batch.results[i][y].values();
        let mut sample = 0.0;
        for j in 0..batch.n_answers() {
            if j == y {
                continue;
            }
            let hinge = distances[i][y] - distances[i][j] + cfg.margin;
            if hinge <= 0.0 {
                continue;
            }
            let w = weights[i][j];
            sample += w * hinge;
            let neg = batch.results[i][j].values();
            let s = w * scale;
            add_sq_dist_grad(&mut out.grad_context[i], s, a, pos);
            add_sq_dist_grad(&mut out.grad_context[i], -s, a, neg);
            add_sq_dist_grad(&mut out.grad_results[i][y], s, pos, a);
            add_sq_dist_grad(&mut out.grad_results[i][j], -s, neg, a);
        }
        per_sample.push(sample);
    }
    out.value = per_sample.iter().sum::<f64>() * scale;
    Ok((out, per_sample))
}

/// `logit_j = −distance_j / temperature`.
pub fn distances_to_logits(distances: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(distances.iter().map(|d| -d / temperature).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CceOutput {
    pub value: f64,
    pub grad_logits: Vec<Vec<f64>>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean categorical cross-entropy. The gradient is `(softmax − onehot) / B`.
pub fn cce_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<CceOutput> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let scale = 1.0 / logits.len() as f64;
    let mut value = 0.0;
    let mut grad_logits = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        if y >= row.len() {
            return Err(Error::shape(format!(
                "label {y} out of range for {} classes",
                row.len()
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        value += log_sum - row[y];
        let mut g = softmax(row);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
        grad_logits.push(g);
    }
    Ok(CceOutput {
        value: value * scale,
        grad_logits,
    })
}

/// Cross-entropy on `−distance / temperature`, differentiated back to the
/// embeddings.
pub fn distance_cce_loss(batch: &EmbeddingBatch, temperature: f64) -> Result<LossOutput> {
    let distances = distance_matrix(batch)?;
    let logits = distances
        .iter()
        .map(|row| distances_to_logits(row, temperature))
        .collect::<Result<Vec<_>>>()?;
    let cce = cce_loss(&logits, &batch.labels)?;

    let mut out = LossOutput::zeros(batch);
    out.value = cce.value;
    for i in 0..batch.batch_size() {
        let a = batch.context[i].values();
        for (j, g) in cce.grad_logits[i].iter().enumerate() {
            // dL/dd_ij = g · (−1/T)
            let s = -g / temperature;
            let r = batch.results[i][j].values();
            add_sq_dist_grad(&mut out.grad_context[i], s, a, r);
            add_sq_dist_grad(&mut out.grad_results[i][j], s, r, a);
        }
    }
    Ok(out)
}

/// Hybrid loss together with its unweighted components.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub total: LossOutput,
    pub polytuplet: f64,
    pub cce: f64,
}

pub fn hybrid_loss_parts(batch: &EmbeddingBatch, cfg: &PolytupletConfig) -> Result<HybridOutput> {
    cfg.validate()?;
    let poly = polytuplet_loss(batch, cfg)?;
    let cce = distance_cce_loss(batch, cfg.temperature)?;
    let mut total = LossOutput::zeros(batch);
    total.add_scaled(&poly, cfg.lambda_poly);
    total.add_scaled(&cce, cfg.lambda_cce);
    Ok(HybridOutput {
        total,
        polytuplet: poly.value,
        cce: cce.value,
    })
}

/// `λ_poly · polytuplet_loss + λ_cce · cce(distances_to_logits(distances))`.
pub fn hybrid_loss(batch: &EmbeddingBatch, cfg: &PolytupletConfig) -> Result<LossOutput> {
    Ok(hybrid_loss_parts(batch, cfg)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    fn single(ctx: &[f64], results: &[&[f64]], y: usize) -> EmbeddingBatch {
        EmbeddingBatch::new(
            vec![e(ctx)],
            vec![results.iter().map(|r| e(r)).collect()],
            vec![y],
        )
        .unwrap()
    }

    #[test]
    fn triplet_landmarks() {
        let a = e(&[1.0, 0.0]);
        let anti = e(&[-1.0, 0.0]);
        let satisfied = triplet_loss(&a, &a, &anti, &TripletConfig { alpha: 0.5 }).unwrap();
        assert_eq!(satisfied.value, 0.0);
        assert!(satisfied.grad_anchor.iter().all(|g| *g == 0.0));

        let violated = triplet_loss(&a, &anti, &a, &TripletConfig { alpha: 0.0 }).unwrap();
        assert_eq!(violated.value, 4.0);

        let out = triplet_loss(
            &a,
            &e(&[0.6, 0.8]),
            &e(&[0.0, 1.0]),
            &TripletConfig { alpha: 1.5 },
        )
        .unwrap();
        // 0.8 − 2 + 1.5
        assert!((out.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn triplet_rejects_bad_input() {
        let a = e(&[1.0, 0.0]);
        assert!(triplet_loss(&a, &a, &e(&[1.0]), &TripletConfig { alpha: 0.1 }).is_err());
        assert!(triplet_loss(&a, &a, &a, &TripletConfig { alpha: -1.0 }).is_err());
    }

    #[test]
    fn polytuplet_hand_example() {
        let b = single(&[1.0, 0.0], &[&[0.6, 0.8], &[0.0, 1.0], &[-1.0, 0.0]], 0);
        let cfg = PolytupletConfig {
            margin: 1.5,
            ..Default::default()
        };
        let (out, terms) = polytuplet_with_terms(&b, &cfg).unwrap();
        assert!((out.value - 0.3).abs() < 1e-12);
        assert!((terms[0] - 0.3).abs() < 1e-12);
        // the antipodal negative is easy and receives no gradient
        assert_eq!(out.grad_results[0][2], vec![0.0, 0.0]);
    }

    #[test]
    fn polytuplet_all_coincident_zero_margin() {
        let p = [0.6, 0.8];
        let b = single(&p, &[&p, &p, &p, &p], 1);
        let cfg = PolytupletConfig {
            margin: 0.0,
            ..Default::default()
        };
        let out = polytuplet_loss(&b, &cfg).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.flat_grads().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn polytuplet_two_answers_matches_triplet() {
        let ctx = [0.0, 1.0, 0.0];
        let pos = [0.6, 0.0, 0.8];
        let neg = [0.0, 0.8, 0.6];
        let b = single(&ctx, &[&neg, &pos], 1);
        let cfg = PolytupletConfig {
            margin: 0.7,
            ..Default::default()
        };
        let poly = polytuplet_loss(&b, &cfg).unwrap();
        let tri = triplet_loss(&e(&ctx), &e(&pos), &e(&neg), &TripletConfig { alpha: 0.7 }).unwrap();
        assert_eq!(poly.value, tri.value);
        assert_eq!(poly.grad_context[0], tri.grad_anchor);
        assert_eq!(poly.grad_results[0][1], tri.grad_positive);
        assert_eq!(poly.grad_results[0][0], tri.grad_negative);
    }

    #[test]
    fn mining_weights_scale_terms() {
        // one hard (d=0 < d_pos=0.8) and one semi-hard negative
        let b = single(&[1.0, 0.0], &[&[0.6, 0.8], &[0.0, 1.0], &[1.0, 0.0]], 0);
        let cfg = PolytupletConfig {
            margin: 1.5,
            w_hard: 2.0,
            w_semi: 0.5,
            ..Default::default()
        };
        let out = polytuplet_loss(&b, &cfg).unwrap();
        let expected = 0.5 * 0.3 + 2.0 * (0.8 - 0.0 + 1.5);
        assert!((out.value - expected).abs() < 1e-12);
    }

    #[test]
    fn logits_from_distances() {
        assert_eq!(
            distances_to_logits(&[0.0, 2.0, 4.0, 4.0], 1.0).unwrap(),
            vec![0.0, -2.0, -4.0, -4.0]
        );
        let l = distances_to_logits(&[0.8, 2.0, 4.0], 2.0).unwrap();
        for (a, b) in l.iter().zip([-0.4, -1.0, -2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(distances_to_logits(&[1.0], 0.0).is_err());
        assert!(distances_to_logits(&[1.0], -1.0).is_err());
    }

    #[test]
    fn cce_values() {
        let uniform = cce_loss(&[vec![0.3; 4]], &[2]).unwrap();
        assert!((uniform.value - 4f64.ln()).abs() < 1e-12);

        let peaked = cce_loss(&[vec![800.0, 0.0, 0.0]], &[0]).unwrap();
        assert_eq!(peaked.value, 0.0);

        let out = cce_loss(&[vec![0.0, -2.0, -4.0, -4.0]], &[0]).unwrap();
        assert!((out.value - 0.158_683_159_189_837_08).abs() < 1e-12);
        let g = &out.grad_logits[0];
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(g[0] < 0.0);

        assert!(cce_loss(&[vec![0.0, 1.0]], &[2]).is_err());
        assert!(cce_loss(&[], &[]).is_err());
    }

    #[test]
    fn hybrid_degenerate_weights() {
        let b = single(&[1.0, 0.0], &[&[0.6, 0.8], &[0.0, 1.0], &[0.8, 0.6]], 0);
        let base = PolytupletConfig {
            margin: 1.5,
            ..Default::default()
        };
        let poly = polytuplet_loss(&b, &base).unwrap();
        let cce = distance_cce_loss(&b, 1.0).unwrap();

        let only_poly = hybrid_loss(
            &b,
            &PolytupletConfig {
                lambda_poly: 2.0,
                lambda_cce: 0.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(only_poly.value, 2.0 * poly.value);

        let only_cce = hybrid_loss(
            &b,
            &PolytupletConfig {
                lambda_poly: 0.0,
                lambda_cce: 1.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(only_cce.value, cce.value);
        assert_eq!(only_cce.grad_context, cce.grad_context);
    }

    #[test]
    fn config_validation() {
        assert!(PolytupletConfig::default().validate().is_ok());
        let bad = [
            PolytupletConfig {
                margin: -1.0,
                ..Default::default()
            },
            PolytupletConfig {
                temperature: 0.0,
                ..Default::default()
            },
            PolytupletConfig {
                lambda_poly: 0.0,
                lambda_cce: 0.0,
                ..Default::default()
            },
            PolytupletConfig {
                w_hard: f64::NAN,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
