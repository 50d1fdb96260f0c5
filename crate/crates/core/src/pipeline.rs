//! End-to-end evaluation: build the query/pool split from a pair dataset,
//! score a retriever on it and time it.

use std::collections::{HashMap, HashSet};

use crate::bm25::Bm25Index;
use crate::error::{validation, Result};
use crate::eval::{
    benchmark_latency, evaluate_retrieval, Averaging, BenchConfig, EvalReport, RetrievalMetrics,
};
use crate::projection::ProjectionParams;
use crate::retrieval::{build_index, Metric, RetrievalIndex, RetrievalResult};
use crate::store::{EmbeddingSet, PairDataset};
use crate::train::to_f64_normalized;

/// Modality-B queries, each with exactly one modality-A gold entry, and the
/// pool of modality-A candidates (every gold anchor, in first-seen order).
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub pool: EmbeddingSet,
    pub query_ids: Vec<String>,
    pub query_vectors: Vec<Vec<f64>>,
    /// `(query_id, gold_anchor_id)` in query order.
    pub gold: Vec<(String, String)>,
}

pub fn retrieval_task(
    a_set: &EmbeddingSet,
    b_set: &EmbeddingSet,
    data: &PairDataset,
    normalize: bool,
) -> Result<RetrievalTask> {
    data.validate_against(a_set, b_set)?;
    let mut seen_queries = HashSet::new();
    let mut seen_pool = HashSet::new();
    let mut pool_ids = Vec::new();
    let mut gold = Vec::new();
    for ex in data.positives() {
        if !seen_queries.insert(ex.candidate_id.as_str()) {
            return Err(validation(format!(
                "query {:?} has more than one gold anchor",
                ex.candidate_id
            )));
        }
        if seen_pool.insert(ex.anchor_id.as_str()) {
            pool_ids.push(ex.anchor_id.clone());
        }
        gold.push((ex.candidate_id.clone(), ex.anchor_id.clone()));
    }
    if gold.is_empty() {
        return Err(validation("evaluation data has no positive pairs"));
    }
    let mut pool = a_set.subset(&pool_ids)?;
    if normalize {
        let vectors = (0..pool.len())
            .flat_map(|i| to_f64_normalized(pool.row(i), true))
            .map(|v| v as f32)
            .collect();
        pool = EmbeddingSet::new(pool.dim(), pool.ids().to_vec(), vectors)?;
    }
    let query_vectors = gold
        .iter()
        .map(|(q, _)| to_f64_normalized(b_set.get(q).expect("validated"), normalize))
        .collect();
    Ok(RetrievalTask {
        pool,
        query_ids: gold.iter().map(|(q, _)| q.clone()).collect(),
        query_vectors,
        gold,
    })
}

/// A retriever over modality-B query vectors.
#[derive(Debug, Clone, Copy)]
pub enum DenseModel<'a> {
    /// Project each query through the adapter, then search.
    Projected(&'a ProjectionParams),
    /// Search with the unprojected query (the unaligned baseline).
    Raw,
}

impl DenseModel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Projected(_) => "projection",
            Self::Raw => "raw-embedding",
        }
    }

    pub fn retrieve(&self, index: &RetrievalIndex, q: &[f64], k: usize) -> Result<RetrievalResult> {
        match self {
            Self::Projected(p) => index.query(&p.project(q)?, k),
            Self::Raw => index.query(q, k),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub metric: Metric,
    pub averaging: Averaging,
    pub bench: BenchConfig,
}

impl EvalOptions {
    pub fn describe(&self) -> String {
        format!(
            "metric={}; averaging={:?}; k=1; warmup={}; repetitions={}",
            self.metric, self.averaging, self.bench.warmup, self.bench.repetitions
        )
        .to_lowercase()
    }
}

/// Top-1 metrics only, no timing.
pub fn dense_metrics(
    task: &RetrievalTask,
    model: DenseModel<'_>,
    metric: Metric,
    averaging: Averaging,
) -> Result<RetrievalMetrics> {
    let index = build_index(task.pool.clone(), metric)?;
    let by_id: HashMap<&str, &[f64]> = task
        .query_ids
        .iter()
        .map(String::as_str)
        .zip(task.query_vectors.iter().map(Vec::as_slice))
        .collect();
    evaluate_retrieval(
        |q| model.retrieve(&index, by_id[q], 1),
        &task.gold,
        averaging,
    )
}

pub fn evaluate_dense(
    task: &RetrievalTask,
    model: DenseModel<'_>,
    opts: &EvalOptions,
    dataset: &str,
) -> Result<EvalReport> {
    let metrics = dense_metrics(task, model, opts.metric, opts.averaging)?;
    let index = build_index(task.pool.clone(), opts.metric)?;
    let latency = benchmark_latency(
        |q: &Vec<f64>| model.retrieve(&index, q, 1),
        &task.query_vectors,
        opts.bench.warmup,
        opts.bench.repetitions,
    )?;
    EvalReport::new(
        metrics,
        &latency,
        task.gold.len(),
        model.name(),
        dataset,
        opts.describe(),
    )
}

/// Lexical baseline over raw texts: pool documents are the anchors' texts,
/// queries are the candidates' texts. Timing covers tokenize + score.
pub fn evaluate_bm25(
    task: &RetrievalTask,
    texts: &HashMap<String, String>,
    k1: f64,
    b: f64,
    opts: &EvalOptions,
    dataset: &str,
) -> Result<EvalReport> {
    let text_of = |id: &str| {
        texts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| validation(format!("no raw text for id {id:?}")))
    };
    let docs = task
        .pool
        .ids()
        .iter()
        .map(|id| Ok((id.clone(), text_of(id)?)))
        .collect::<Result<Vec<_>>>()?;
    let index = Bm25Index::build_with(docs, k1, b)?;
    let query_texts = task
        .query_ids
        .iter()
        .map(|q| text_of(q))
        .collect::<Result<Vec<_>>>()?;
    let metrics = evaluate_retrieval(
        |q| index.retrieve(text_of(q)?, 1),
        &task.gold,
        opts.averaging,
    )?;
    let latency = benchmark_latency(
        |q: &&str| index.retrieve(q, 1),
        &query_texts,
        opts.bench.warmup,
        opts.bench.repetitions,
    )?;
    EvalReport::new(
        metrics,
        &latency,
        task.gold.len(),
        "bm25",
        dataset,
        format!("{}; bm25_k1={k1}; bm25_b={b}", opts.describe()),
    )
}
