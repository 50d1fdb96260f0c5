//! Plain SGD and bias-corrected Adam over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::projection::{ParamGrads, ProjectionParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!(
                "unknown optimizer {other:?} (expected sgd or adam)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(validation(format!(
            "sgd: {} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// One Adam update; `step` is the 1-based step index used for bias
/// correction.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step: u64,
    lr: f64,
    hyper: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len()
        || moments.m.len() != params.len()
        || moments.v.len() != params.len()
    {
        return Err(validation(
            "adam: params, grads and moments differ in length",
        ));
    }
    if step == 0 {
        return Err(validation("adam: step index is 1-based"));
    }
    let t = step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Optimizer state for a whole projection network.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        hyper: AdamHyper,
        step: u64,
        moments: Vec<AdamMoments>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ProjectionParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd { lr },
            OptimizerKind::Adam => Self::Adam {
                lr,
                hyper: AdamHyper::default(),
                step: 0,
                moments: params
                    .tensors()
                    .iter()
                    .map(|t| AdamMoments::new(t.len()))
                    .collect(),
            },
        }
    }

    pub fn step(&mut self, params: &mut ProjectionParams, grads: &ParamGrads) -> Result<()> {
        match self {
            Self::Sgd { lr } => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    sgd_step(p, g, *lr)?;
                }
            }
            Self::Adam {
                lr,
                hyper,
                step,
                moments,
            } => {
                *step += 1;
                for ((p, g), m) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(moments.iter_mut())
                {
                    adam_step(p, g, m, *step, *lr, *hyper)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_definition() {
        let mut p = [1.0];
        sgd_step(&mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);

        let mut q = [0.3, -2.0];
        sgd_step(&mut q, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(q, [0.3, -2.0]);
        assert!(sgd_step(&mut q, &[1.0], 0.1).is_err());
    }

    #[test]
    fn adam_first_step_moves_about_lr() {
        let lr = 1e-3;
        for g in [1e-3, -1e-3, 0.01, 1.0, -42.0, 1e6] {
            let mut p = [0.5];
            let mut m = AdamMoments::new(1);
            adam_step(&mut p, &[g], &mut m, 1, lr, AdamHyper::default()).unwrap();
            let delta = (p[0] - 0.5).abs();
            // Slack covers the rounding of 0.5 - Δ.
            assert!(
                delta >= 0.9 * lr && delta <= lr * (1.0 + 1e-12),
                "g={g} delta={delta}"
            );
            assert_eq!((p[0] - 0.5).signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = [0.25, -1.5];
        let mut m = AdamMoments::new(2);
        for t in 1..5 {
            adam_step(&mut p, &[3.0, -0.1], &mut m, t, 0.0, AdamHyper::default()).unwrap();
        }
        assert_eq!(p, [0.25, -1.5]);
    }

    #[test]
    fn adam_rejects_step_zero() {
        let mut m = AdamMoments::new(1);
        assert!(adam_step(&mut [0.0], &[1.0], &mut m, 0, 0.1, AdamHyper::default()).is_err());
    }

    #[test]
    fn parse_kind() {
        assert_eq!(
            "adam".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert_eq!("sgd".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
