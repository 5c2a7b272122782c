//! Mini-batch training loop and the finite-difference gradient checker.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optimizer::{clip_global_norm, OptState, OptimizerKind};
use super::NnError;
use crate::data::WindowedDataset;
use crate::matrix::Matrix;

/// Gradients above this global L2 norm are rescaled; a safety net against
/// LSTM divergence, recorded in the loss history when it fires.
pub const GRAD_CLIP_NORM: f64 = 100.0;

/// Epochs (E), learning rate (α), mini-batch size (B) and optimizer (O),
/// plus the seed that fixes initialization and batch shuffling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate {} not in (0, 1)",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Per-epoch mean training loss plus how often gradient clipping fired.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epoch_losses: Vec<f64>,
    pub clipped_batches: usize,
}

impl LossHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Runs `cfg.epochs` of mini-batch gradient descent with seeded-shuffled
/// batch order. The input network is untouched; the trained copy and its
/// loss history are returned. Deterministic for a fixed (data, cfg, seed).
pub fn train(
    net: &Network,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(Network, LossHistory), NnError> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(NnError::EmptyInput);
    }

    let mut net = net.clone();
    let mut state = OptState::new(cfg.optimizer, net.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = LossHistory::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch = data.inputs.gather_rows(batch_idx);
            let targets: Vec<f64> = batch_idx.iter().map(|&i| data.targets[i]).collect();
            let (loss, grads) = net.backward(&batch, &targets)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, loss });
            }
            let mut flat_g = grads.to_flat();
            if clip_global_norm(&mut flat_g, GRAD_CLIP_NORM) {
                history.clipped_batches += 1;
            }
            let mut flat_p = net.params_flat();
            state.step(&mut flat_p, &flat_g, cfg.learning_rate);
            net.set_params_flat(&flat_p);
            loss_sum += loss * batch_idx.len() as f64;
        }
        let epoch_loss = loss_sum / n as f64;
        if !epoch_loss.is_finite() {
            return Err(NnError::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        history.epoch_losses.push(epoch_loss);
    }
    Ok((net, history))
}

/// Compares analytic gradients against central finite differences and
/// returns the worst relative error. The denominator saturates at 1 so that
/// near-zero gradients are judged on absolute error, where the difference
/// quotient itself is only accurate to ~1e-11.
pub fn gradient_check(
    net: &Network,
    batch: &Matrix,
    targets: &[f64],
    eps: f64,
) -> Result<f64, NnError> {
    let (_, grads) = net.backward(batch, targets)?;
    let analytic = grads.to_flat();
    let mut probe = net.clone();
    let mut params = net.params_flat();
    let mut worst: f64 = 0.0;

    for k in 0..params.len() {
        let original = params[k];
        params[k] = original + eps;
        probe.set_params_flat(&params);
        let up = super::mse_loss(&probe.forward(batch)?, targets)?;
        params[k] = original - eps;
        probe.set_params_flat(&params);
        let down = super::mse_loss(&probe.forward(batch)?, targets)?;
        params[k] = original;

        let fd = (up - down) / (2.0 * eps);
        let an = analytic[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}
