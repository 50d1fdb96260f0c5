//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string. The plain-Rust functions beside each
//! export do the work so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use xmodal_core::bm25::Bm25Index;
use xmodal_core::eval::{harmonic_mean, Averaging};
use xmodal_core::pipeline::{dense_metrics, retrieval_task, DenseModel};
use xmodal_core::{generate_synthetic, train, Metric, TrainConfig};

#[derive(Debug, Serialize)]
pub struct TrainOutcome {
    pub epoch_losses: Vec<f64>,
    pub raw_accuracy: f64,
    pub projected_accuracy: f64,
    pub held_out: usize,
    pub seconds: f64,
}

/// Trains on a synthetic task and scores a held-out fifth of the pairs.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    pairs: usize,
    dim: usize,
    hidden: usize,
    noise: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainOutcome, String> {
    let task = generate_synthetic(pairs, dim, noise, seed).map_err(|e| e.to_string())?;
    let held_out = (pairs / 5).max(1);
    let (train_set, test_set) = task
        .pairs
        .split_holdout(held_out)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        hidden_dim: hidden,
        seed,
        ..TrainConfig::default()
    };
    let (params, report) = train(&task.a, &task.b, &train_set, &cfg).map_err(|e| e.to_string())?;
    let eval = retrieval_task(&task.a, &task.b, &test_set, false).map_err(|e| e.to_string())?;
    let score = |model| {
        dense_metrics(&eval, model, Metric::Euclidean, Averaging::Weighted)
            .map(|m| m.accuracy)
            .map_err(|e| e.to_string())
    };
    Ok(TrainOutcome {
        epoch_losses: report.epoch_losses,
        raw_accuracy: score(DenseModel::Raw)?,
        projected_accuracy: score(DenseModel::Projected(&params))?,
        held_out,
        seconds: report.wall_clock_seconds,
    })
}

#[derive(Debug, Serialize)]
pub struct RankedLine {
    pub line: usize,
    pub text: String,
    pub score: f64,
}

/// Ranks the non-blank lines of `corpus` against `query`.
pub fn rank_lines(corpus: &str, query: &str, k1: f64, b: f64) -> Result<Vec<RankedLine>, String> {
    let docs: Vec<(String, &str)> = corpus
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i.to_string(), l))
        .collect();
    let index = Bm25Index::build_with(docs.iter().cloned(), k1, b).map_err(|e| e.to_string())?;
    let hits = index
        .retrieve(query, docs.len())
        .map_err(|e| e.to_string())?
        .hits;
    let lines: Vec<&str> = corpus.lines().collect();
    Ok(hits
        .into_iter()
        .map(|h| {
            let line: usize = h.id.parse().expect("ids are line numbers");
            RankedLine {
                line: line + 1,
                text: lines[line].to_owned(),
                score: h.score,
            }
        })
        .collect())
}

/// `(throughput, harmonic mean)` at `steps` log-spaced throughputs.
pub fn harmonic_points(
    f1: f64,
    t_min: f64,
    t_max: f64,
    steps: usize,
) -> Result<Vec<(f64, f64)>, String> {
    if !(t_min > 0.0 && t_max > t_min && steps >= 2) {
        return Err("need 0 < t_min < t_max and at least 2 steps".into());
    }
    let (lo, hi) = (t_min.ln(), t_max.ln());
    (0..steps)
        .map(|i| {
            let t = (lo + (hi - lo) * i as f64 / (steps - 1) as f64).exp();
            harmonic_mean(f1, t)
                .map(|h| (t, h))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn train_demo(
    pairs: usize,
    dim: usize,
    hidden: usize,
    noise: f64,
    epochs: usize,
    lr: f64,
    seed: u32,
) -> Result<String, JsError> {
    to_js(run_training(
        pairs,
        dim,
        hidden,
        noise,
        epochs,
        lr,
        u64::from(seed),
    ))
}

#[wasm_bindgen]
pub fn bm25_rank(corpus: &str, query: &str, k1: f64, b: f64) -> Result<String, JsError> {
    to_js(rank_lines(corpus, query, k1, b))
}

#[wasm_bindgen]
pub fn harmonic_curve(f1: f64, t_min: f64, t_max: f64, steps: usize) -> Result<String, JsError> {
    to_js(harmonic_points(f1, t_min, t_max, steps))
}
