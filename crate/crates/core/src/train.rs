//! Mini-batch training of the projection adapter with the N-pairs loss.
//!
//! Encoders are fixed: the input embedding sets are only read. Each batch
//! pairs modality-A anchors with projected modality-B candidates; gradients
//! reach the adapter through the candidate side only.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::error::{validation, Error, Result};
use crate::loss::{npairs_loss, LossBatch, DEFAULT_MARGIN};
use crate::optim::{Optimizer, OptimizerKind};
use crate::projection::{init_params, ParamGrads, ProjectionParams, DEFAULT_HIDDEN_DIM};
use crate::store::{EmbeddingSet, PairDataset};

/// Mixed into the config seed so batch order and initialization draw from
/// different streams.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub shuffle: bool,
    pub hidden_dim: usize,
    /// L2-normalize both modalities before training. Off by default.
    pub normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            margin: DEFAULT_MARGIN,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            shuffle: true,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            normalize_inputs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(validation("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(validation("batch_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(validation(format!(
                "learning_rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(validation(format!("margin {} is invalid", self.margin)));
        }
        if self.hidden_dim == 0 {
            return Err(validation("hidden_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub checkpoint: Option<String>,
}

pub(crate) fn to_f64_normalized(row: &[f32], normalize: bool) -> Vec<f64> {
    let mut v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
    if normalize {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
    v
}

pub fn train(
    a_set: &EmbeddingSet,
    b_set: &EmbeddingSet,
    data: &PairDataset,
    cfg: &TrainConfig,
) -> Result<(ProjectionParams, TrainReport)> {
    cfg.validate()?;
    if a_set.dim() != b_set.dim() {
        return Err(validation(format!(
            "modality dims differ: A={} B={}",
            a_set.dim(),
            b_set.dim()
        )));
    }
    data.validate_against(a_set, b_set)?;
    if data.positive_count() == 0 {
        return Err(validation("dataset has no positive examples"));
    }
    let dim = a_set.dim();
    let started = Instant::now();

    let rows: Vec<(Vec<f64>, Vec<f64>, u8)> = data
        .examples
        .iter()
        .map(|ex| {
            let a = a_set.get(&ex.anchor_id).expect("validated");
            let b = b_set.get(&ex.candidate_id).expect("validated");
            (
                to_f64_normalized(a, cfg.normalize_inputs),
                to_f64_normalized(b, cfg.normalize_inputs),
                ex.label,
            )
        })
        .collect();

    let mut params = init_params(dim, cfg.hidden_dim, cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut grads = ParamGrads::zeros(dim, cfg.hidden_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..rows.len()).collect();

    let mut anchors = Vec::with_capacity(cfg.batch_size * dim);
    let mut candidates = Vec::with_capacity(cfg.batch_size * dim);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut traces = Vec::with_capacity(cfg.batch_size);

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let positives = chunk.iter().filter(|&&r| rows[r].2 == 1).count();
            if chunk.len() < cfg.batch_size && positives < 2 {
                continue;
            }
            anchors.clear();
            candidates.clear();
            labels.clear();
            traces.clear();
            for &r in chunk {
                let (a, b, label) = &rows[r];
                let trace = params.forward(b)?;
                anchors.extend_from_slice(a);
                candidates.extend_from_slice(&trace.output);
                labels.push(*label);
                traces.push(trace);
            }
            let loss = npairs_loss(&LossBatch {
                anchors: &anchors,
                candidates: &candidates,
                labels: &labels,
                dim,
                margin: cfg.margin,
            })
            .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            if !loss.value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {} in epoch {epoch}",
                    loss.value
                )));
            }
            grads.fill_zero();
            for (trace, g) in traces.iter().zip(loss.grad_candidates.chunks_exact(dim)) {
                params.backward_accumulate(trace, g, &mut grads)?;
            }
            optimizer.step(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(Error::Training(format!(
                    "parameters diverged in epoch {epoch}"
                )));
            }
            loss_sum += loss.value;
            batches += 1;
        }
        if batches == 0 {
            return Err(validation(
                "no batch has at least two positives; lower batch_size or add data",
            ));
        }
        epoch_losses.push(loss_sum / batches as f64);
    }

    Ok((
        params,
        TrainReport {
            epoch_losses,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            checkpoint: None,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::PairExample;
    use crate::synth::generate_synthetic;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden_dim: 16,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_reference_setup() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.margin, 1.0);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let task = generate_synthetic(20, 4, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let (params, report) = train(&task.a, &task.b, &task.pairs, &cfg).unwrap();
        assert_eq!(params, init_params(4, 16, cfg.seed).unwrap());
        assert_eq!(report.epoch_losses.len(), 5);
        // Same params every epoch; only the batch composition changes, so
        // the epoch mean can move. Without shuffling it cannot.
        let fixed = TrainConfig {
            shuffle: false,
            ..cfg
        };
        let (_, report) = train(&task.a, &task.b, &task.pairs, &fixed).unwrap();
        assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn deterministic_per_seed() {
        let task = generate_synthetic(30, 6, 0.05, 2).unwrap();
        let (p1, r1) = train(&task.a, &task.b, &task.pairs, &small_cfg()).unwrap();
        let (p2, r2) = train(&task.a, &task.b, &task.pairs, &small_cfg()).unwrap();
        assert_eq!(p1.to_bytes(), p2.to_bytes());
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
    }

    #[test]
    fn inputs_untouched() {
        let task = generate_synthetic(30, 6, 0.05, 2).unwrap();
        let (a0, b0) = (task.a.to_bytes(), task.b.to_bytes());
        train(&task.a, &task.b, &task.pairs, &small_cfg()).unwrap();
        assert_eq!(task.a.to_bytes(), a0);
        assert_eq!(task.b.to_bytes(), b0);
    }

    #[test]
    fn error_paths() {
        let task = generate_synthetic(10, 3, 0.0, 0).unwrap();
        let negatives = PairDataset::new(
            task.pairs
                .examples
                .iter()
                .filter(|e| !e.is_positive())
                .cloned()
                .collect(),
        )
        .unwrap();
        assert!(matches!(
            train(&task.a, &task.b, &negatives, &small_cfg()),
            Err(Error::Validation(_))
        ));

        let unknown = PairDataset::new(vec![PairExample::new("nope", "b00000", 1)]).unwrap();
        assert!(train(&task.a, &task.b, &unknown, &small_cfg()).is_err());

        let bad = TrainConfig {
            batch_size: 1,
            ..small_cfg()
        };
        assert!(train(&task.a, &task.b, &task.pairs, &bad).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let task = generate_synthetic(20, 4, 0.1, 1).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e300,
            ..small_cfg()
        };
        assert!(matches!(
            train(&task.a, &task.b, &task.pairs, &cfg),
            Err(Error::Training(_))
        ));
    }
}
