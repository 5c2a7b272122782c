//! Model-pool construction: per-source pre-training, target fine-tuning,
//! the multi-task baseline with a shared trunk and per-task output heads,
//! and single-best selection on the validation split.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WindowedDataset;
use crate::nn::{
    self, mse_loss, train, LayerKind, LayerSpec, LossHistory, Network, NetworkSpec, NnError,
    TrainConfig, GRAD_CLIP_NORM,
};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("source `{id}`: {source}")]
    SourceFailed {
        id: String,
        #[source]
        source: NnError,
    },
    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),
    #[error("source id `{0}` equals the target id")]
    SourceIsTarget(String),
    #[error("model pool needs at least one source")]
    NoSources,
    #[error("pool persistence: {0}")]
    Persist(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A source series ready for pre-training: its id and its full-length
/// windowed dataset.
#[derive(Debug, Clone, Copy)]
pub struct SourceDataset<'a> {
    pub id: &'a str,
    pub windows: &'a WindowedDataset,
}

/// One fine-tuned model tagged with the source it was pre-trained on.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub model: Network,
    pub source_id: String,
    pub pretrain_history: LossHistory,
    pub finetune_history: LossHistory,
}

/// Fine-tuned models in configuration order.
#[derive(Debug, Clone)]
pub struct ModelPool {
    entries: Vec<PoolEntry>,
    target_id: String,
    pre_cfg: TrainConfig,
    fine_cfg: TrainConfig,
}

/// Pre-trains a fresh network on one source series.
pub fn pretrain(
    spec: &NetworkSpec,
    source: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(Network, LossHistory), TransferError> {
    let net = Network::init(spec, cfg.seed)?;
    Ok(train(&net, source, cfg)?)
}

/// Continues training a pre-trained model on the target training split with
/// all layers trainable. The input model is left untouched.
pub fn finetune(
    model: &Network,
    target_train: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(Network, LossHistory), TransferError> {
    Ok(train(model, target_train, cfg)?)
}

/// Builds one pool entry per source, in order. Entry `i` derives its seeds
/// as `seed + i` for both phases; entries are trained on separate threads
/// and assembled in configuration order regardless of completion order.
pub fn build_pool(
    spec: &NetworkSpec,
    sources: &[SourceDataset<'_>],
    target_id: &str,
    target_train: &WindowedDataset,
    pre_cfg: &TrainConfig,
    fine_cfg: &TrainConfig,
) -> Result<ModelPool, TransferError> {
    if sources.is_empty() {
        return Err(TransferError::NoSources);
    }
    for (i, src) in sources.iter().enumerate() {
        if src.id == target_id {
            return Err(TransferError::SourceIsTarget(src.id.to_string()));
        }
        if sources[..i].iter().any(|other| other.id == src.id) {
            return Err(TransferError::DuplicateSource(src.id.to_string()));
        }
    }

    let results: Vec<Result<PoolEntry, TransferError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .enumerate()
            .map(|(i, src)| {
                scope.spawn(move || {
                    let pre = TrainConfig {
                        seed: pre_cfg.seed.wrapping_add(i as u64),
                        ..*pre_cfg
                    };
                    let fine = TrainConfig {
                        seed: fine_cfg.seed.wrapping_add(i as u64),
                        ..*fine_cfg
                    };
                    let named = |source: TransferError| match source {
                        TransferError::Nn(e) => TransferError::SourceFailed {
                            id: src.id.to_string(),
                            source: e,
                        },
                        other => other,
                    };
                    let (pretrained, pretrain_history) =
                        pretrain(spec, src.windows, &pre).map_err(named)?;
                    let (model, finetune_history) =
                        finetune(&pretrained, target_train, &fine).map_err(named)?;
                    Ok(PoolEntry {
                        model,
                        source_id: src.id.to_string(),
                        pretrain_history,
                        finetune_history,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pool worker panicked"))
            .collect()
    });

    let mut entries = Vec::with_capacity(results.len());
    for result in results {
        entries.push(result?);
    }
    Ok(ModelPool {
        entries,
        target_id: target_id.to_string(),
        pre_cfg: *pre_cfg,
        fine_cfg: *fine_cfg,
    })
}

impl ModelPool {
    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.source_id.as_str()).collect()
    }

    /// FNV-1a over the target id, source ids and every parameter bit.
    /// Stable across runs and platforms.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.target_id.as_bytes());
        for entry in &self.entries {
            eat(entry.source_id.as_bytes());
            for v in entry.model.params_flat() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        hash
    }

    /// Writes one JSON model file per entry plus `manifest.json` carrying
    /// the ids, configs and loss histories.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), TransferError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest_entries = Vec::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            let file = format!("model_{i:03}.json");
            entry.model.save(dir.join(&file))?;
            manifest_entries.push(ManifestEntry {
                source_id: entry.source_id.clone(),
                file,
                pretrain_history: entry.pretrain_history.clone(),
                finetune_history: entry.finetune_history.clone(),
            });
        }
        let manifest = PoolManifest {
            version: 1,
            target_id: self.target_id.clone(),
            pre_cfg: self.pre_cfg,
            fine_cfg: self.fine_cfg,
            entries: manifest_entries,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| TransferError::Persist(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TransferError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: PoolManifest =
            serde_json::from_str(&text).map_err(|e| TransferError::Persist(e.to_string()))?;
        if manifest.version != 1 {
            return Err(TransferError::Persist(format!(
                "unsupported pool manifest version {}",
                manifest.version
            )));
        }
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            entries.push(PoolEntry {
                model: Network::load(dir.join(&m.file))?,
                source_id: m.source_id,
                pretrain_history: m.pretrain_history,
                finetune_history: m.finetune_history,
            });
        }
        Ok(Self {
            entries,
            target_id: manifest.target_id,
            pre_cfg: manifest.pre_cfg,
            fine_cfg: manifest.fine_cfg,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PoolManifest {
    version: u32,
    target_id: String,
    pre_cfg: TrainConfig,
    fine_cfg: TrainConfig,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    source_id: String,
    file: String,
    pretrain_history: LossHistory,
    finetune_history: LossHistory,
}

/// Pool entry with the lowest validation MSE; ties go to the lowest index.
pub fn single_best<'a>(
    pool: &'a ModelPool,
    validation: &WindowedDataset,
) -> Result<(usize, &'a PoolEntry), TransferError> {
    if pool.is_empty() {
        return Err(TransferError::NoSources);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, entry) in pool.entries.iter().enumerate() {
        let pred = entry.model.forward(&validation.inputs)?;
        let mse = mse_loss(&pred, &validation.targets)?;
        if best.is_none() || mse < best.unwrap().1 {
            best = Some((i, mse));
        }
    }
    let (idx, _) = best.expect("nonempty pool");
    Ok((idx, &pool.entries[idx]))
}

/// Joint-phase loss trace plus the final target fine-tune history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlHistory {
    pub joint_epoch_losses: Vec<f64>,
    pub finetune: LossHistory,
    pub clipped_batches: usize,
}

/// Trains the multi-task baseline: one trunk shared by every task (all
/// layers except the output layer), one dense(1, linear) head per task.
/// Each joint epoch interleaves seeded-shuffled batches from every task
/// round-robin, updating the trunk plus that task's head; the trunk and the
/// target head are then fine-tuned on the target training split. Tasks are
/// ordered sources first, target last.
pub fn train_mtl(
    spec: &NetworkSpec,
    sources: &[SourceDataset<'_>],
    target_train: &WindowedDataset,
    joint_cfg: &TrainConfig,
    fine_cfg: &TrainConfig,
) -> Result<(Network, MtlHistory), TransferError> {
    spec.validate()?;
    joint_cfg.validate()?;

    let full = Network::init(spec, joint_cfg.seed)?;
    let mut layers = full.layers().to_vec();
    let target_head = layers.pop().expect("validated specs have layers");
    let mut trunk = layers;
    let trunk_len: usize = trunk.iter().map(nn::layer_param_count).sum();

    let trunk_out = spec
        .layers
        .len()
        .checked_sub(2)
        .map(|i| spec.layers[i].units)
        .unwrap_or(spec.input_size);

    // Task order: sources, then the target. Source heads draw from seeds
    // decorrelated from the trunk init.
    let n_tasks = sources.len() + 1;
    let mut heads: Vec<nn::LayerParams> = (0..sources.len())
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                joint_cfg
                    .seed
                    .wrapping_add((j as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            );
            nn::LayerParams::Dense(nn::init_dense(&mut rng, trunk_out, 1))
        })
        .collect();
    heads.push(target_head);

    let task_spec = NetworkSpec {
        input_size: spec.input_size,
        layers: {
            let mut ls: Vec<LayerSpec> = spec.layers[..spec.layers.len() - 1].to_vec();
            ls.push(LayerSpec {
                kind: LayerKind::Dense,
                units: 1,
                activation: crate::nn::Activation::Linear,
            });
            ls
        },
    };

    let datasets: Vec<&WindowedDataset> = sources
        .iter()
        .map(|s| s.windows)
        .chain(std::iter::once(target_train))
        .collect();
    if datasets.iter().any(|d| d.is_empty()) {
        return Err(TransferError::Nn(NnError::EmptyInput));
    }

    let mut rngs: Vec<ChaCha8Rng> = (0..n_tasks)
        .map(|j| ChaCha8Rng::seed_from_u64(joint_cfg.seed.wrapping_add(j as u64)))
        .collect();
    let mut trunk_state = nn::OptState::new(joint_cfg.optimizer, trunk_len);
    let mut head_states: Vec<nn::OptState> = heads
        .iter()
        .map(|h| nn::OptState::new(joint_cfg.optimizer, nn::layer_param_count(h)))
        .collect();

    let mut history = MtlHistory {
        joint_epoch_losses: Vec::new(),
        finetune: LossHistory::default(),
        clipped_batches: 0,
    };

    for epoch in 0..joint_cfg.epochs {
        let orders: Vec<Vec<usize>> = datasets
            .iter()
            .zip(&mut rngs)
            .map(|(data, rng)| {
                use rand::seq::SliceRandom;
                let mut idx: Vec<usize> = (0..data.len()).collect();
                idx.shuffle(rng);
                idx
            })
            .collect();
        let n_batches: Vec<usize> = orders
            .iter()
            .map(|o| o.len().div_ceil(joint_cfg.batch_size))
            .collect();
        let rounds = n_batches.iter().copied().max().unwrap_or(0);

        let mut loss_sum = 0.0;
        let mut samples = 0usize;
        for round in 0..rounds {
            for task in 0..n_tasks {
                if round >= n_batches[task] {
                    continue;
                }
                let order = &orders[task];
                let start = round * joint_cfg.batch_size;
                let end = (start + joint_cfg.batch_size).min(order.len());
                let batch_idx = &order[start..end];
                let data = datasets[task];
                let batch = data.inputs.gather_rows(batch_idx);
                let targets: Vec<f64> = batch_idx.iter().map(|&i| data.targets[i]).collect();

                let mut view_layers = trunk.clone();
                view_layers.push(heads[task].clone());
                let view = Network::from_parts(task_spec.clone(), view_layers);
                let (loss, grads) = view.backward(&batch, &targets)?;
                if !loss.is_finite() {
                    return Err(TransferError::Nn(NnError::Diverged { epoch, loss }));
                }
                let mut flat_g = grads.to_flat();
                if nn::clip_global_norm(&mut flat_g, GRAD_CLIP_NORM) {
                    history.clipped_batches += 1;
                }
                let mut flat_trunk = nn::flatten_layers(&trunk);
                trunk_state.step(&mut flat_trunk, &flat_g[..trunk_len], joint_cfg.learning_rate);
                nn::assign_layers_from_flat(&mut trunk, &flat_trunk);

                let head_slice = std::slice::from_mut(&mut heads[task]);
                let mut flat_head = nn::flatten_layers(head_slice);
                head_states[task].step(&mut flat_head, &flat_g[trunk_len..], joint_cfg.learning_rate);
                nn::assign_layers_from_flat(head_slice, &flat_head);

                loss_sum += loss * batch_idx.len() as f64;
                samples += batch_idx.len();
            }
        }
        if samples > 0 {
            history.joint_epoch_losses.push(loss_sum / samples as f64);
        }
    }

    let mut final_layers = trunk;
    final_layers.push(heads.pop().expect("target head"));
    let joint_net = Network::from_parts(spec.clone(), final_layers);
    let (tuned, fine_history) = train(&joint_net, target_train, fine_cfg)?;
    history.finetune = fine_history;
    Ok((tuned, history))
}
