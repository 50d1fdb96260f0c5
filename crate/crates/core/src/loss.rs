//! In-batch N-pairs hinge loss over Euclidean distances.
//!
//! For every anchor `i` labeled positive, every other candidate `j ≠ i` in
//! the batch is a negative, whatever its own label:
//!
//! ```text
//! L = (1/count) · Σ_{i: label_i = 1} Σ_{j ≠ i} max(0, ‖A_i − P_i‖ − ‖A_i − P_j‖ + margin)
//! ```
//!
//! `count` is the number of `(i, j)` terms visited, active or not. With no
//! positive anchor the loss is `0` and all gradients vanish.

use crate::error::{validation, Result};

pub const DEFAULT_MARGIN: f64 = 1.0;

/// Distances below this are treated as zero when normalizing directions.
const DIST_EPS: f64 = 1e-12;

/// A batch of `n` anchors and `n` candidates, both row-major `n × dim`.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub anchors: &'a [f64],
    pub candidates: &'a [f64],
    pub labels: &'a [u8],
    pub dim: usize,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_anchors: Vec<f64>,
    pub grad_candidates: Vec<f64>,
    pub active_terms: usize,
    pub count: usize,
}

pub fn pairwise_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(validation(format!(
            "distance between vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(euclidean(x, y))
}

#[inline]
pub(crate) fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

impl LossBatch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.dim == 0 {
            return Err(validation("loss batch dimension must be positive"));
        }
        if self.anchors.len() != n * self.dim || self.candidates.len() != n * self.dim {
            return Err(validation(format!(
                "anchors ({}) and candidates ({}) must both hold {n} rows of dim {}",
                self.anchors.len(),
                self.candidates.len(),
                self.dim
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > 1) {
            return Err(validation(format!("label {l} is not 0 or 1")));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(validation(format!(
                "margin {} must be finite and >= 0",
                self.margin
            )));
        }
        if self
            .anchors
            .iter()
            .chain(self.candidates)
            .any(|v| !v.is_finite())
        {
            return Err(validation("non-finite embedding in loss batch"));
        }
        Ok(())
    }
}

pub fn npairs_loss(batch: &LossBatch<'_>) -> Result<LossResult> {
    batch.validate()?;
    let n = batch.len();
    let d = batch.dim;
    let anchor = |i: usize| &batch.anchors[i * d..(i + 1) * d];
    let cand = |i: usize| &batch.candidates[i * d..(i + 1) * d];

    let positives = batch.labels.iter().filter(|&&l| l == 1).count();
    let count = positives * n.saturating_sub(1);
    let mut grad_anchors = vec![0.0; n * d];
    let mut grad_candidates = vec![0.0; n * d];
    if count == 0 {
        return Ok(LossResult {
            value: 0.0,
            grad_anchors,
            grad_candidates,
            active_terms: 0,
            count: 0,
        });
    }
    let inv = 1.0 / count as f64;

    let mut total = 0.0;
    let mut active_terms = 0;
    let mut unit_pos = vec![0.0; d];
    let mut unit_neg = vec![0.0; d];
    for i in (0..n).filter(|&i| batch.labels[i] == 1) {
        let a_i = anchor(i);
        let pos_dist = euclidean(a_i, cand(i));
        unit_direction(a_i, cand(i), pos_dist, &mut unit_pos);
        for j in (0..n).filter(|&j| j != i) {
            let neg_dist = euclidean(a_i, cand(j));
            let slack = pos_dist - neg_dist + batch.margin;
            if slack <= 0.0 {
                continue;
            }
            total += slack;
            active_terms += 1;
            unit_direction(a_i, cand(j), neg_dist, &mut unit_neg);
            // ∂‖a − p‖/∂a = (a − p)/‖a − p‖, and the negative of that for p.
            for k in 0..d {
                grad_anchors[i * d + k] += inv * (unit_pos[k] - unit_neg[k]);
                grad_candidates[i * d + k] -= inv * unit_pos[k];
                grad_candidates[j * d + k] += inv * unit_neg[k];
            }
        }
    }

    Ok(LossResult {
        value: total * inv,
        grad_anchors,
        grad_candidates,
        active_terms,
        count,
    })
}

fn unit_direction(a: &[f64], p: &[f64], dist: f64, out: &mut [f64]) {
    if dist < DIST_EPS {
        out.fill(0.0);
        return;
    }
    for ((o, x), y) in out.iter_mut().zip(a).zip(p) {
        *o = (x - y) / dist;
    }
}
