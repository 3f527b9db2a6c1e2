//! Reference implementations used by the integration and acceptance tests.
//!
//! Nothing here calls into the library's loss or mining code; each function is
//! a plain loop over the definitions so that disagreements point at the
//! library, not at a shared helper.

#![allow(dead_code)]

use polytuplet::{Embedding, EmbeddingBatch};
use rand::distributions::Uniform;
use rand::Rng;

pub fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let u = Uniform::new(-1.0, 1.0);
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(u)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn random_unit_batch(rng: &mut impl Rng, b: usize, n: usize, d: usize) -> EmbeddingBatch {
    let context = (0..b).map(|_| Embedding(unit_vector(rng, d))).collect();
    let results = (0..b)
        .map(|_| (0..n).map(|_| Embedding(unit_vector(rng, d))).collect())
        .collect();
    let labels = (0..b).map(|_| rng.gen_range(0..n)).collect();
    EmbeddingBatch::new(context, results, labels).unwrap()
}

pub fn naive_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s
}

/// 0 = hard, 1 = semi-hard, 2 = easy, `None` for the positive.
pub fn naive_categories(batch: &EmbeddingBatch, margin: f64) -> Vec<Vec<Option<u8>>> {
    let mut out = Vec::new();
    for i in 0..batch.context.len() {
        let a = &batch.context[i].0;
        let y = batch.labels[i];
        let dp = naive_sq_dist(a, &batch.results[i][y].0);
        let mut row = Vec::new();
        for j in 0..batch.results[i].len() {
            if j == y {
                row.push(None);
                continue;
            }
            let dn = naive_sq_dist(a, &batch.results[i][j].0);
            let cat = if dp >= dn {
                0
            } else if dn - dp <= margin {
                1
            } else {
                2
            };
            row.push(Some(cat));
        }
        out.push(row);
    }
    out
}

/// Unnormalized hinge term `max(0, d(a,y) − d(a,j) + m)` for every pair.
pub fn naive_hinges(batch: &EmbeddingBatch, margin: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..batch.context.len() {
        let a = &batch.context[i].0;
        let y = batch.labels[i];
        let dp = naive_sq_dist(a, &batch.results[i][y].0);
        let row = (0..batch.results[i].len())
            .map(|j| {
                let dn = naive_sq_dist(a, &batch.results[i][j].0);
                if j == y {
                    0.0
                } else {
                    (dp - dn + margin).max(0.0)
                }
            })
            .collect();
        out.push(row);
    }
    out
}

/// Mean over samples of the weighted hinge sum.
pub fn naive_polytuplet(batch: &EmbeddingBatch, margin: f64, w_hard: f64, w_semi: f64) -> f64 {
    let cats = naive_categories(batch, margin);
    let hinges = naive_hinges(batch, margin);
    let mut total = 0.0;
    for i in 0..hinges.len() {
        for j in 0..hinges[i].len() {
            let w = match cats[i][j] {
                None => 0.0,
                Some(0) => w_hard,
                Some(1) => w_semi,
                Some(_) => 1.0,
            };
            total += w * hinges[i][j];
        }
    }
    total / batch.context.len() as f64
}

/// Mean cross-entropy over logits `−d/T`, computed with an explicit
/// log-sum-exp.
pub fn naive_distance_cce(batch: &EmbeddingBatch, temperature: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.context.len() {
        let logits: Vec<f64> = batch.results[i]
            .iter()
            .map(|r| -naive_sq_dist(&batch.context[i].0, &r.0) / temperature)
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        total += lse - logits[batch.labels[i]];
    }
    total / batch.context.len() as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Flattens a batch as contexts then results, row-major.
pub fn flatten(batch: &EmbeddingBatch) -> Vec<f64> {
    let mut v: Vec<f64> = batch.context.iter().flat_map(|e| e.0.clone()).collect();
    for row in &batch.results {
        for e in row {
            v.extend_from_slice(&e.0);
        }
    }
    v
}

/// Inverse of [`flatten`] given the batch's shape and labels.
pub fn rebuild(template: &EmbeddingBatch, flat: &[f64]) -> EmbeddingBatch {
    let d = template.dim();
    let mut chunks = flat.chunks(d).map(|c| Embedding(c.to_vec()));
    let context = (0..template.batch_size())
        .map(|_| chunks.next().unwrap())
        .collect();
    let results = (0..template.batch_size())
        .map(|_| (0..template.n_answers()).map(|_| chunks.next().unwrap()).collect())
        .collect();
    EmbeddingBatch {
        context,
        results,
        labels: template.labels.clone(),
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
