//! Minimal dense/LSTM network engine: seeded Glorot initialization,
//! batched forward passes, exact backprop (BPTT over the full lookback for
//! recurrent layers), MSE loss, SGD/Adam/RMSProp optimizers and a
//! finite-difference gradient checker. Everything runs in `f64`.

mod network;
mod optimizer;
mod train;

pub use network::{Gradients, Network};
pub use optimizer::OptimizerKind;
pub use train::{gradient_check, train, LossHistory, TrainConfig, GRAD_CLIP_NORM};

pub(crate) use network::{
    assign_layers_from_flat, flatten_layers, init_dense, layer_param_count, LayerParams,
};
pub(crate) use optimizer::{clip_global_norm, OptState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} columns, network expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("prediction/target lengths differ ({pred} vs {actual})")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output, which is all the
    /// backward pass caches.
    pub(crate) fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub units: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense,
            units,
            activation,
        }
    }

    pub fn lstm(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Lstm,
            units,
            activation,
        }
    }
}

/// Layer stack plus input width. An MLP consumes each row as a flat feature
/// vector; a network starting with LSTM layers consumes the same row as
/// `input_size` timesteps of one feature, oldest first (rows store newest
/// first, so the sequence is the reversed row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_size: usize, layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let spec = Self { input_size, layers };
        spec.validate()?;
        Ok(spec)
    }

    /// dense(128, tanh) -> dense(64, tanh) -> dense(16, relu) -> dense(1, linear)
    pub fn canonical_mlp(input_size: usize) -> Self {
        Self {
            input_size,
            layers: vec![
                LayerSpec::dense(128, Activation::Tanh),
                LayerSpec::dense(64, Activation::Tanh),
                LayerSpec::dense(16, Activation::Relu),
                LayerSpec::dense(1, Activation::Linear),
            ],
        }
    }

    /// lstm(128, tanh) -> lstm(64, tanh) -> dense(16, relu) -> dense(1, linear)
    pub fn canonical_lstm(input_size: usize) -> Self {
        Self {
            input_size,
            layers: vec![
                LayerSpec::lstm(128, Activation::Tanh),
                LayerSpec::lstm(64, Activation::Tanh),
                LayerSpec::dense(16, Activation::Relu),
                LayerSpec::dense(1, Activation::Linear),
            ],
        }
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers
            .first()
            .is_some_and(|l| l.kind == LayerKind::Lstm)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_size == 0 {
            return Err(NnError::InvalidSpec("input size must be positive".into()));
        }
        let last = self
            .layers
            .last()
            .ok_or_else(|| NnError::InvalidSpec("at least one layer required".into()))?;
        if last.kind != LayerKind::Dense || last.units != 1 || last.activation != Activation::Linear
        {
            return Err(NnError::InvalidSpec(
                "output layer must be dense(1, linear)".into(),
            ));
        }
        if self.layers.iter().any(|l| l.units == 0) {
            return Err(NnError::InvalidSpec("layer units must be positive".into()));
        }
        let mut seen_dense = false;
        for layer in &self.layers {
            match layer.kind {
                LayerKind::Dense => seen_dense = true,
                LayerKind::Lstm if seen_dense => {
                    return Err(NnError::InvalidSpec(
                        "LSTM layers must precede all dense layers".into(),
                    ));
                }
                LayerKind::Lstm => {}
            }
        }
        Ok(())
    }
}

/// Mean of squared differences.
pub fn mse_loss(pred: &[f64], actual: &[f64]) -> Result<f64, NnError> {
    if pred.len() != actual.len() {
        return Err(NnError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::EmptyInput);
    }
    let acc: f64 = pred
        .iter()
        .zip(actual)
        .map(|(&p, &a)| (p - a) * (p - a))
        .sum();
    Ok(acc / pred.len() as f64)
}
