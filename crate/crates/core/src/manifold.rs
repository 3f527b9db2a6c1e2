//! Embedding geometry on the unit hypersphere.
//!
//! Raw encoder outputs are projected onto the sphere with [`project_to_sphere`].
//! Distances are squared Euclidean throughout; for unit vectors
//! `‖a − b‖² = 2 − 2⟨a, b⟩`, so every pairwise distance lies in `[0, 4]`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inputs with an L2 norm below this are rejected by the projection.
pub const MIN_NORM: f64 = 1e-12;

/// Default embedding width.
pub const DEFAULT_DIM: usize = 64;

/// A point in embedding space.
///
/// Values produced by [`project_to_sphere`] have unit norm. The type does not
/// enforce that on construction so that gradient checks can perturb
/// coordinates freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Embedding(values)
    }
}

/// Context embeddings, per-answer result embeddings and gold labels for a
/// mini-batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub context: Vec<Embedding>,
    pub results: Vec<Vec<Embedding>>,
    pub labels: Vec<usize>,
}

impl EmbeddingBatch {
    /// Builds a batch and checks its shape invariants.
    pub fn new(
        context: Vec<Embedding>,
        results: Vec<Vec<Embedding>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let batch = EmbeddingBatch {
            context,
            results,
            labels,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.context.len()
    }

    /// Number of answers per sample.
    pub fn n_answers(&self) -> usize {
        self.results.first().map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.context.first().map_or(0, Embedding::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.context.len();
        if b == 0 {
            return Err(Error::shape("empty embedding batch"));
        }
        if self.results.len() != b || self.labels.len() != b {
            return Err(Error::shape(format!(
                "batch has {} contexts, {} result lists and {} labels",
                b,
                self.results.len(),
                self.labels.len()
            )));
        }
        let n = self.results[0].len();
        if n < 2 {
            return Err(Error::shape(format!("need at least 2 answers, got {n}")));
        }
        let d = self.context[0].dim();
        for (i, (ctx, res)) in self.context.iter().zip(&self.results).enumerate() {
            if ctx.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: ctx.dim(),
                });
            }
            if res.len() != n {
                return Err(Error::shape(format!(
                    "sample {i} has {} answers, expected {n}",
                    res.len()
                )));
            }
            if let Some(bad) = res.iter().find(|e| e.dim() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: bad.dim(),
                });
            }
            if self.labels[i] >= n {
                return Err(Error::shape(format!(
                    "sample {i} label {} out of range for {n} answers",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn checked_norm(raw: &[f64]) -> Result<f64> {
    let n = norm(raw);
    // NaN fails this comparison too
    if !(n >= MIN_NORM) {
        return Err(Error::DegenerateInput {
            norm: n,
            epsilon: MIN_NORM,
        });
    }
    Ok(n)
}

/// Maps `raw` to `raw / ‖raw‖`.
pub fn project_to_sphere(raw: &[f64]) -> Result<Embedding> {
    let n = checked_norm(raw)?;
    Ok(Embedding(raw.iter().map(|v| v / n).collect()))
}

/// Vector-Jacobian product of the sphere projection at `raw`:
/// `(I − u uᵀ) g / ‖raw‖` with `u = raw / ‖raw‖`.
pub fn project_to_sphere_backward(raw: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            found: upstream.len(),
        });
    }
    let n = checked_norm(raw)?;
    let radial: f64 = raw.iter().zip(upstream).map(|(x, g)| x * g).sum::<f64>() / n;
    Ok(raw
        .iter()
        .zip(upstream)
        .map(|(x, g)| (g - radial * x / n) / n)
        .collect())
}

/// `Σ_k (a_k − b_k)²`.
pub fn sq_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(sq_dist(&a.0, &b.0))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Row `i` holds the distances from `context[i]` to each of its results.
pub fn distance_matrix(batch: &EmbeddingBatch) -> Result<Vec<Vec<f64>>> {
    batch.validate()?;
    Ok(batch
        .context
        .iter()
        .zip(&batch.results)
        .map(|(ctx, res)| res.iter().map(|r| sq_dist(&ctx.0, &r.0)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    #[test]
    fn projects_three_four_five() {
        let e = project_to_sphere(&[3.0, 4.0]).unwrap();
        assert!((e.0[0] - 0.6).abs() < 1e-15);
        assert!((e.0[1] - 0.8).abs() < 1e-15);
        let e = project_to_sphere(&[1.0; 4]).unwrap();
        assert_eq!(e.0, vec![0.5; 4]);
    }

    #[test]
    fn projection_is_idempotent_on_unit_vectors() {
        let u = [0.0, 1.0, 0.0];
        assert_eq!(project_to_sphere(&u).unwrap().0, u.to_vec());
    }

    #[test]
    fn rejects_zero_and_nan() {
        assert!(matches!(
            project_to_sphere(&[0.0, 0.0]),
            Err(Error::DegenerateInput { .. })
        ));
        assert!(project_to_sphere(&[1e-13, 0.0]).is_err());
        assert!(project_to_sphere(&[f64::NAN, 1.0]).is_err());
        assert!(project_to_sphere_backward(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn backward_known_values() {
        let g = project_to_sphere_backward(&[2.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.5]);
        let g = project_to_sphere_backward(&[2.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn distances_at_landmarks() {
        let a = emb(&[1.0, 0.0]);
        assert_eq!(sq_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(sq_distance(&a, &emb(&[0.0, 1.0])).unwrap(), 2.0);
        assert_eq!(sq_distance(&a, &emb(&[-1.0, 0.0])).unwrap(), 4.0);
        assert!(matches!(
            sq_distance(&a, &emb(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn distance_matrix_small() {
        let batch = EmbeddingBatch::new(
            vec![emb(&[1.0, 0.0])],
            vec![vec![emb(&[1.0, 0.0]), emb(&[0.0, 1.0])]],
            vec![0],
        )
        .unwrap();
        assert_eq!(distance_matrix(&batch).unwrap(), vec![vec![0.0, 2.0]]);

        let same = EmbeddingBatch::new(
            vec![emb(&[0.6, 0.8])],
            vec![vec![emb(&[0.6, 0.8]); 3]],
            vec![2],
        )
        .unwrap();
        assert_eq!(distance_matrix(&same).unwrap(), vec![vec![0.0; 3]]);
    }

    #[test]
    fn batch_validation() {
        let e = emb(&[1.0, 0.0]);
        assert!(EmbeddingBatch::new(vec![e.clone()], vec![vec![e.clone(), e.clone()]], vec![2])
            .is_err());
        assert!(EmbeddingBatch::new(vec![e.clone()], vec![vec![e.clone()]], vec![0]).is_err());
        assert!(EmbeddingBatch::new(
            vec![e.clone()],
            vec![vec![e.clone(), emb(&[1.0, 0.0, 0.0])]],
            vec![0]
        )
        .is_err());
        assert!(EmbeddingBatch::new(vec![], vec![], vec![]).is_err());
    }
}
