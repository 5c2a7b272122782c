//! SGD, Adam and RMSProp parameter updates over flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMSPROP_RHO: f64 = 0.9;
const RMSPROP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    RmsProp,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd => f.write_str("sgd"),
            OptimizerKind::Adam => f.write_str("adam"),
            OptimizerKind::RmsProp => f.write_str("rmsprop"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// Moment buffers for one flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct OptState {
    kind: OptimizerKind,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptState {
    pub(crate) fn new(kind: OptimizerKind, len: usize) -> Self {
        let buf = match kind {
            OptimizerKind::Sgd => 0,
            _ => len,
        };
        Self {
            kind,
            step: 0,
            m: vec![0.0; if kind == OptimizerKind::Adam { buf } else { 0 }],
            v: vec![0.0; buf],
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::RmsProp => {
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.v) {
                    *v = RMSPROP_RHO * *v + (1.0 - RMSPROP_RHO) * g * g;
                    *p -= lr * g / (v.sqrt() + RMSPROP_EPS);
                }
            }
        }
    }
}

/// Scales the gradient to `max_norm` when its global L2 norm exceeds it.
/// Returns whether clipping fired.
pub(crate) fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> bool {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            *g *= scale;
        }
        true
    } else {
        false
    }
}
