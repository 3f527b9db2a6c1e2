//! Hard and semi-hard negative classification.
//!
//! For a sample with anchor `a` (the context embedding), positive `y` and
//! negative `j`, let `gap = d(a, j) − d(a, y)`:
//!
//! * hard: `gap ≤ 0`, the negative is at least as close as the positive;
//! * semi-hard: `0 < gap ≤ m`, farther than the positive but inside the margin;
//! * easy: `gap > m`, the hinge is inactive.
//!
//! Both boundaries are closed towards the harder class so that every negative
//! has exactly one category. Every negative in the batch is classified; there
//! is no sampling, the categories only modulate per-term loss weights.

use serde::{Deserialize, Serialize};

use crate::manifold::{distance_matrix, EmbeddingBatch};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCategory {
    Hard,
    SemiHard,
    Easy,
}

impl NegativeCategory {
    /// Category of a negative whose distance gap to the positive is
    /// `d(a, j) − d(a, y)`.
    pub fn from_gap(gap: f64, margin: f64) -> Self {
        if gap <= 0.0 {
            NegativeCategory::Hard
        } else if gap <= margin {
            NegativeCategory::SemiHard
        } else {
            NegativeCategory::Easy
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningCounts {
    pub hard: usize,
    pub semi_hard: usize,
    pub easy: usize,
}

impl MiningCounts {
    pub fn total(&self) -> usize {
        self.hard + self.semi_hard + self.easy
    }

    pub fn add(&mut self, other: &MiningCounts) {
        self.hard += other.hard;
        self.semi_hard += other.semi_hard;
        self.easy += other.easy;
    }

    fn record(&mut self, category: NegativeCategory) {
        match category {
            NegativeCategory::Hard => self.hard += 1,
            NegativeCategory::SemiHard => self.semi_hard += 1,
            NegativeCategory::Easy => self.easy += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub counts: MiningCounts,
    /// `mask[i][j]` is the category of answer `j` of sample `i`, or `None`
    /// for the positive.
    pub mask: Vec<Vec<Option<NegativeCategory>>>,
}

/// Classifies every negative of every sample in `batch`.
pub fn classify_negatives(batch: &EmbeddingBatch, margin: f64) -> Result<MiningReport> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::config(format!(
            "margin must be finite and non-negative, got {margin}"
        )));
    }
    let distances = distance_matrix(batch)?;
    Ok(classify_distances(&distances, &batch.labels, margin))
}

pub(crate) fn classify_distances(
    distances: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
) -> MiningReport {
    let mut counts = MiningCounts::default();
    let mask = distances
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let positive = row[y];
            row.iter()
                .enumerate()
                .map(|(j, &dist)| {
                    (j != y).then(|| {
                        let c = NegativeCategory::from_gap(dist - positive, margin);
                        counts.record(c);
                        c
                    })
                })
                .collect()
        })
        .collect();
    MiningReport { counts, mask }
}

/// Per-term weights: hard → `w_hard`, semi-hard → `w_semi`, easy → 1.
/// Positive slots get 0 since they carry no hinge term.
pub fn mining_weights(report: &MiningReport, w_hard: f64, w_semi: f64) -> Vec<Vec<f64>> {
    report
        .mask
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| match c {
                    None => 0.0,
                    Some(NegativeCategory::Hard) => w_hard,
                    Some(NegativeCategory::SemiHard) => w_semi,
                    Some(NegativeCategory::Easy) => 1.0,
                })
                .collect()
        })
        .collect()
}
