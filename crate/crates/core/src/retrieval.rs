//! Exact top-k retrieval by linear scan.
//!
//! Euclidean scores are distances (ascending), cosine scores are
//! similarities (descending). Equal scores rank by insertion order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::projection::ProjectionParams;
use crate::store::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!(
                "unknown metric {other:?} (expected euclidean or cosine)"
            )),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::Cosine => "cosine",
        })
    }
}

impl Metric {
    /// Orders `(index, score)` pairs best-first.
    pub fn compare(self, x: &(usize, f64), y: &(usize, f64)) -> Ordering {
        let by_score = match self {
            Self::Euclidean => x.1.total_cmp(&y.1),
            Self::Cosine => y.1.total_cmp(&x.1),
        };
        by_score.then(x.0.cmp(&y.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn top(&self) -> Option<&Hit> {
        self.hits.first()
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    entries: EmbeddingSet,
    metric: Metric,
    rows: Vec<f64>,
    norms: Vec<f64>,
}

pub fn build_index(set: EmbeddingSet, metric: Metric) -> Result<RetrievalIndex> {
    if set.is_empty() {
        return Err(validation("cannot index an empty embedding set"));
    }
    let rows: Vec<f64> = set.vectors().iter().map(|&v| f64::from(v)).collect();
    let norms: Vec<f64> = rows
        .chunks_exact(set.dim())
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(validation(format!(
                "entry {:?} has zero norm, undefined under cosine",
                set.ids()[i]
            )));
        }
    }
    Ok(RetrievalIndex {
        entries: set,
        metric,
        rows,
        norms,
    })
}

impl RetrievalIndex {
    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn entries(&self) -> &EmbeddingSet {
        &self.entries
    }

    /// Score of every entry against `q`, in insertion order.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if q.len() != d {
            return Err(validation(format!(
                "query has dim {}, index has dim {d}",
                q.len()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(validation("query contains a non-finite value"));
        }
        let rows = self.rows.chunks_exact(d);
        Ok(match self.metric {
            Metric::Euclidean => rows
                .map(|r| {
                    r.iter()
                        .zip(q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
            Metric::Cosine => {
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if qn == 0.0 {
                    return Err(validation("zero-norm query under cosine"));
                }
                rows.zip(&self.norms)
                    .map(|(r, n)| r.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (n * qn))
                    .collect()
            }
        })
    }

    /// Best-first `(position, score)` pairs for the top `k` entries.
    pub fn query_positions(&self, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.len() {
            return Err(validation(format!(
                "k={k} must be in 1..={} (pool size)",
                self.len()
            )));
        }
        let mut scored: Vec<(usize, f64)> = self.scores(q)?.into_iter().enumerate().collect();
        let metric = self.metric;
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |x, y| metric.compare(x, y));
            scored.truncate(k);
        }
        scored.sort_unstable_by(|x, y| metric.compare(x, y));
        Ok(scored)
    }

    pub fn query(&self, q: &[f64], k: usize) -> Result<RetrievalResult> {
        let hits = self
            .query_positions(q, k)?
            .into_iter()
            .map(|(i, score)| Hit {
                id: self.entries.ids()[i].clone(),
                score,
            })
            .collect();
        Ok(RetrievalResult { hits })
    }

    /// Runs many queries; results stay in query order.
    pub fn query_batch(&self, queries: &[Vec<f64>], k: usize) -> Result<Vec<RetrievalResult>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            queries.par_iter().map(|q| self.query(q, k)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            queries.iter().map(|q| self.query(q, k)).collect()
        }
    }
}

/// Projects a modality-B vector and queries the modality-A index with it.
pub fn project_and_query(
    params: &ProjectionParams,
    index: &RetrievalIndex,
    b_vector: &[f64],
    k: usize,
) -> Result<RetrievalResult> {
    let projected = params.project(b_vector)?;
    index.query(&projected, k)
}
