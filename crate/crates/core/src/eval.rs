//! Retrieval metrics, latency benchmarking and JSON reports.
//!
//! Top-1 retrieval is scored as multi-class classification: every gold
//! candidate id is a class, each query contributes one (gold, predicted)
//! observation. Precision, recall and F1 are support-weighted averages of
//! the per-class values, so with one gold item per query recall equals
//! accuracy while precision can fall below it.

use std::collections::BTreeMap;
use std::fs;
use std::hint::black_box;
use std::path::Path;

use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::{validation, Result};
use crate::retrieval::RetrievalResult;

pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Per-class values weighted by class support.
    #[default]
    Weighted,
    /// Unweighted mean over every class seen in gold or predictions.
    Macro,
}

impl std::str::FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "macro" => Ok(Self::Macro),
            other => Err(format!(
                "unknown averaging {other:?} (expected weighted or macro)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Default)]
struct ClassCounts {
    true_positive: usize,
    predicted: usize,
    support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from `(gold, predicted)` label pairs.
pub fn classification_metrics<S: AsRef<str>>(
    observations: &[(S, S)],
    averaging: Averaging,
) -> Result<RetrievalMetrics> {
    if observations.is_empty() {
        return Err(validation("no queries to evaluate"));
    }
    let mut classes: BTreeMap<&str, ClassCounts> = BTreeMap::new();
    let mut correct = 0usize;
    for (gold, pred) in observations {
        let (gold, pred) = (gold.as_ref(), pred.as_ref());
        classes.entry(gold).or_default().support += 1;
        classes.entry(pred).or_default().predicted += 1;
        if gold == pred {
            classes.get_mut(gold).unwrap().true_positive += 1;
            correct += 1;
        }
    }
    let n = observations.len() as f64;
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in classes.values() {
        let p = ratio(c.true_positive, c.predicted);
        let r = ratio(c.true_positive, c.support);
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        let w = match averaging {
            Averaging::Weighted => c.support as f64 / n,
            Averaging::Macro => 1.0 / classes.len() as f64,
        };
        precision += w * p;
        recall += w * r;
        f1 += w * f;
    }
    if averaging == Averaging::Weighted {
        // Σ (s_c/n)(tp_c/s_c) collapses to Σ tp_c / n; summing counts keeps it exact.
        recall = correct as f64 / n;
    }
    // Weighted sums of values in [0, 1] can round a hair above 1.
    Ok(RetrievalMetrics {
        accuracy: correct as f64 / n,
        precision: precision.min(1.0),
        recall: recall.min(1.0),
        f1: f1.min(1.0),
    })
}

/// Runs `retriever` (expected to return top-1 results) for every
/// `(query_id, gold_id)` pair and scores the predictions.
pub fn evaluate_retrieval<F>(
    mut retriever: F,
    gold: &[(String, String)],
    averaging: Averaging,
) -> Result<RetrievalMetrics>
where
    F: FnMut(&str) -> Result<RetrievalResult>,
{
    if gold.is_empty() {
        return Err(validation("gold map is empty"));
    }
    let mut observations = Vec::with_capacity(gold.len());
    for (query, want) in gold {
        let result = retriever(query)?;
        let top = result
            .top()
            .ok_or_else(|| validation(format!("retriever returned nothing for {query:?}")))?;
        observations.push((want.clone(), top.id.clone()));
    }
    classification_metrics(&observations, averaging)
}

/// `2·f1·t / (f1 + t)`, defined as 0 when either argument is 0.
pub fn harmonic_mean(f1: f64, throughput: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f1) {
        return Err(validation(format!("f1 {f1} outside [0, 1]")));
    }
    if !(throughput >= 0.0 && throughput.is_finite()) {
        return Err(validation(format!(
            "throughput {throughput} must be finite and >= 0"
        )));
    }
    if f1 == 0.0 || throughput == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * f1 * throughput / (f1 + throughput))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            warmup: DEFAULT_WARMUP,
            repetitions: DEFAULT_REPETITIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub avg_query_seconds: f64,
    pub throughput_qps: f64,
    pub total_seconds: f64,
    pub timed_calls: usize,
    pub environment: String,
}

/// Times sequential single-query calls.
///
/// `warmup` calls (cycling through `queries`) run first and are discarded;
/// then every query runs `repetitions` times under one monotonic clock.
pub fn benchmark_latency<Q, R, F>(
    mut retriever: F,
    queries: &[Q],
    warmup: usize,
    repetitions: usize,
) -> Result<LatencyStats>
where
    F: FnMut(&Q) -> R,
{
    if queries.is_empty() {
        return Err(validation("benchmark needs at least one query"));
    }
    if repetitions == 0 {
        return Err(validation("repetitions must be at least 1"));
    }
    for q in queries.iter().cycle().take(warmup) {
        black_box(retriever(black_box(q)));
    }
    let started = Instant::now();
    for _ in 0..repetitions {
        for q in queries {
            black_box(retriever(black_box(q)));
        }
    }
    // Clamp to one nanosecond so throughput stays finite on coarse clocks.
    let total_seconds = started.elapsed().as_secs_f64().max(1e-9);
    let timed_calls = repetitions * queries.len();
    let avg_query_seconds = total_seconds / timed_calls as f64;
    Ok(LatencyStats {
        avg_query_seconds,
        throughput_qps: 1.0 / avg_query_seconds,
        total_seconds,
        timed_calls,
        environment: environment_descriptor(),
    })
}

/// CPU model and core count of the current machine.
pub fn environment_descriptor() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_owned())
        })
        .unwrap_or_else(|| "unknown".to_owned());
    format!(
        "cpu={cpu}; cores={cores}; os={}; arch={}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub avg_query_seconds: f64,
    pub throughput_qps: f64,
    pub harmonic_mean: f64,
    pub n_queries: usize,
    pub config: String,
    pub environment: String,
    pub dataset: String,
    pub model: String,
}

impl EvalReport {
    pub fn new(
        metrics: RetrievalMetrics,
        latency: &LatencyStats,
        n_queries: usize,
        model: impl Into<String>,
        dataset: impl Into<String>,
        config: impl Into<String>,
    ) -> Result<Self> {
        let report = Self {
            accuracy: metrics.accuracy,
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            avg_query_seconds: latency.avg_query_seconds,
            throughput_qps: latency.throughput_qps,
            harmonic_mean: harmonic_mean(metrics.f1, latency.throughput_qps)?,
            n_queries,
            config: config.into(),
            environment: latency.environment.clone(),
            dataset: dataset.into(),
            model: model.into(),
        };
        report.validate()?;
        Ok(report)
    }

    pub fn metrics(&self) -> RetrievalMetrics {
        RetrievalMetrics {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(validation(format!("{name}={v} outside [0, 1]")));
            }
        }
        if !(self.avg_query_seconds > 0.0 && self.avg_query_seconds.is_finite()) {
            return Err(validation("avg_query_seconds must be positive"));
        }
        if (self.throughput_qps * self.avg_query_seconds - 1.0).abs() > 1e-12 {
            return Err(validation(format!(
                "throughput {} is not the reciprocal of latency {}",
                self.throughput_qps, self.avg_query_seconds
            )));
        }
        let want = harmonic_mean(self.f1, self.throughput_qps)?;
        if (self.harmonic_mean - want).abs() > 1e-12 * want.max(1.0) {
            return Err(validation(format!(
                "harmonic_mean {} disagrees with f1/throughput ({want})",
                self.harmonic_mean
            )));
        }
        Ok(())
    }
}

/// Several reports (the model plus any baselines) in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub reports: Vec<EvalReport>,
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    report.validate()?;
    fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(path)?)?;
    report.validate()?;
    Ok(report)
}

pub fn emit_document(doc: &EvalDocument, path: impl AsRef<Path>) -> Result<()> {
    for r in &doc.reports {
        r.validate()?;
    }
    fs::write(path, serde_json::to_string_pretty(doc)?)?;
    Ok(())
}
