//! Experiment runner: ingests the configured series, builds the model pool
//! once per network kind, executes the requested method categories and
//! emits the result table plus a JSON artifact.
//!
//! Selection steps (single-best, FES, TPEES) consume the validation split
//! only; the test split is touched exactly once per trained artifact, to
//! produce its report row.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    ExperimentConfig, Method, ModelKind, NetworkChoice, SeriesSpec, TpeSettings, TrainSettings,
};
pub use report::{
    render_artifact_json, render_distance_table, render_table, DistanceArtifact, DistanceRow,
    ExperimentArtifact, NetworkArtifacts, PoolFingerprint, ReportRow, SimilaritySection,
};

use crate::data::{
    self, ingest_csv, require_ingestible, target_split, training_segment_len, DataSplit,
    PriceSeries, WindowedDataset, DEFAULT_SPLIT,
};
use crate::ensemble::{
    average_ensemble, fes, tpees, waetl, PoolPredictions, DEFAULT_FES_MAX_ITERS,
};
use crate::metrics::{evaluate, EvalReport};
use crate::nn::{train, Network};
use crate::similarity::{
    coral_distance, dtw_distance, pcc, similarity_to_weights, wasserstein_1d, SimilarityKind,
};
use crate::transfer::{build_pool, single_best, train_mtl, ModelPool, SourceDataset};
use report::{
    trial_records, CATEGORY_MSL, CATEGORY_MSM, CATEGORY_SB, CATEGORY_WTL, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    fn stage(stage: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage: stage.into(),
            message: err.to_string(),
        }
    }

    fn stage_name(&self) -> String {
        match self {
            Self::Stage { stage, .. } => stage.clone(),
            other => other.to_string(),
        }
    }
}

/// A source ready for training and similarity computation.
struct PreparedSource {
    symbol: String,
    windows: WindowedDataset,
    scaled_series: Vec<f64>,
}

struct Prepared {
    target_symbol: String,
    split: DataSplit,
    /// Scaled raw values of the target training range; the scalar-series
    /// representation fed to WD/DTW/PCC.
    scaled_train_segment: Vec<f64>,
    sources: Vec<PreparedSource>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    let target = load_series(&cfg.target, cfg)?;
    let split = target_split(&target, cfg.lookback, cfg.horizon, DEFAULT_SPLIT)
        .map_err(|e| ExperimentError::stage("prepare-target", e))?;
    let seg = training_segment_len(cfg.lookback, cfg.horizon, split.train.len());
    let scaling = split.train.scaling;
    let scaled_train_segment: Vec<f64> = target.values()[..seg]
        .iter()
        .map(|&v| scaling.scale(v))
        .collect();

    let mut sources = Vec::with_capacity(cfg.sources.len());
    for spec in &cfg.sources {
        let series = load_series(spec, cfg)?;
        let windows = data::source_windows(&series, cfg.lookback, cfg.horizon)
            .map_err(|e| ExperimentError::stage(format!("prepare-source:{}", spec.symbol), e))?;
        let source_scaling = windows.scaling;
        let scaled_series = series
            .values()
            .iter()
            .map(|&v| source_scaling.scale(v))
            .collect();
        sources.push(PreparedSource {
            symbol: spec.symbol.clone(),
            windows,
            scaled_series,
        });
    }
    Ok(Prepared {
        target_symbol: cfg.target.symbol.clone(),
        split,
        scaled_train_segment,
        sources,
    })
}

fn load_series(spec: &SeriesSpec, cfg: &ExperimentConfig) -> Result<PriceSeries, ExperimentError> {
    let stage = format!("ingest:{}", spec.symbol);
    let series = ingest_csv(&spec.csv, &cfg.column)
        .map_err(|e| ExperimentError::stage(&stage, e))?
        .with_symbol(&spec.symbol);
    require_ingestible(&series, &spec.csv.display().to_string(), cfg.lookback)
        .map_err(|e| ExperimentError::stage(&stage, e))?;
    Ok(series)
}

/// Measures every source against the target under one similarity kind,
/// using the scaled training-segment representations.
fn similarity_values(kind: SimilarityKind, prep: &Prepared) -> Result<Vec<f64>, String> {
    prep.sources
        .iter()
        .map(|s| {
            let measured = match kind {
                SimilarityKind::Coral => {
                    coral_distance(&s.windows.inputs, &prep.split.train.inputs)
                }
                SimilarityKind::Wasserstein => {
                    wasserstein_1d(&s.scaled_series, &prep.scaled_train_segment)
                }
                SimilarityKind::Dtw => dtw_distance(&s.scaled_series, &prep.scaled_train_segment),
                SimilarityKind::Pcc => pcc(&s.scaled_series, &prep.scaled_train_segment),
            };
            measured.map_err(|e| format!("source `{}`: {e}", s.symbol))
        })
        .collect()
}

#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub artifact: ExperimentArtifact,
    pub artifact_path: PathBuf,
    pub table_path: PathBuf,
}

/// Executes the configured experiment. The JSON artifact is always written
/// (with a failure marker and the rows completed so far when a stage
/// fails); the text table is written on success.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut rows = Vec::new();
    let mut networks = Vec::new();
    let result = run_all(cfg, &mut rows, &mut networks);

    let artifact = ExperimentArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "experiment".into(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        status: if result.is_ok() { "complete" } else { "failed" }.into(),
        failed_stage: result.as_ref().err().map(ExperimentError::stage_name),
        config: cfg.clone(),
        rows: rows.clone(),
        networks,
    };
    let artifact_path = out_dir.join("experiment.json");
    write_json(&artifact_path, &artifact)?;

    result?;
    let table_path = out_dir.join("experiment.txt");
    std::fs::write(&table_path, render_table(&rows))?;
    Ok(RunOutput {
        rows,
        artifact,
        artifact_path,
        table_path,
    })
}

#[derive(Default)]
struct KindBlock {
    wtl: Option<ReportRow>,
    sb: Option<ReportRow>,
    multi_source: Vec<ReportRow>,
}

fn run_all(
    cfg: &ExperimentConfig,
    rows: &mut Vec<ReportRow>,
    networks: &mut Vec<NetworkArtifacts>,
) -> Result<(), ExperimentError> {
    let prep = prepare(cfg)?;
    let mut blocks = Vec::new();
    for kind in cfg.network.kinds() {
        blocks.push(run_kind(cfg, &prep, kind, rows, networks)?);
    }

    // Success: rebuild the rows in the paper's category-major order.
    let mut ordered = Vec::with_capacity(rows.len());
    ordered.extend(blocks.iter().filter_map(|b| b.wtl.clone()));
    ordered.extend(blocks.iter().filter_map(|b| b.sb.clone()));
    for block in &blocks {
        ordered.extend(block.multi_source.iter().cloned());
    }
    *rows = ordered;
    Ok(())
}

fn run_kind(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    kind: ModelKind,
    rows: &mut Vec<ReportRow>,
    networks: &mut Vec<NetworkArtifacts>,
) -> Result<KindBlock, ExperimentError> {
    let spec = kind.spec(cfg.lookback);
    let pre_cfg = cfg.pretrain.to_config(cfg.seed);
    let fine_cfg = cfg.finetune.to_config(cfg.seed);
    let ms_category = match kind {
        ModelKind::Mlp => CATEGORY_MSM,
        ModelKind::Lstm => CATEGORY_MSL,
    };
    networks.push(NetworkArtifacts {
        network: kind.to_string(),
        ..NetworkArtifacts::default()
    });
    let mut block = KindBlock::default();

    let test = &prep.split.test;
    let eval_test = |pred: &[f64], stage: &str| -> Result<EvalReport, ExperimentError> {
        evaluate(pred, &test.targets, &test.scaling)
            .map_err(|e| ExperimentError::stage(format!("evaluate:{stage}:{kind}"), e))
    };

    let wants_pool = [Method::Sb, Method::Ae, Method::Waetl, Method::Fes, Method::Tpees]
        .iter()
        .any(|m| cfg.has_method(*m));
    let source_refs: Vec<SourceDataset> = prep
        .sources
        .iter()
        .map(|s| SourceDataset {
            id: &s.symbol,
            windows: &s.windows,
        })
        .collect();

    let pool: Option<ModelPool> = if wants_pool && !source_refs.is_empty() {
        let pool = build_pool(
            &spec,
            &source_refs,
            &prep.target_symbol,
            &prep.split.train,
            &pre_cfg,
            &fine_cfg,
        )
        .map_err(|e| ExperimentError::stage(format!("build-pool:{kind}"), e))?;
        networks.last_mut().expect("pushed above").pool_fingerprint =
            Some(format!("{:016x}", pool.fingerprint()));
        Some(pool)
    } else {
        None
    };

    if cfg.has_method(Method::Wtl) {
        let stage = format!("wtl:{kind}");
        let net = Network::init(&spec, cfg.seed).map_err(|e| ExperimentError::stage(&stage, e))?;
        let (trained, _) = train(&net, &prep.split.train, &pre_cfg)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let pred = trained
            .forward(&test.inputs)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let row = ReportRow::new(CATEGORY_WTL, kind.to_string(), eval_test(&pred, "wtl")?);
        rows.push(row.clone());
        block.wtl = Some(row);
    }

    if cfg.has_method(Method::Sb) {
        let stage = format!("sb:{kind}");
        let pool = pool.as_ref().expect("validated: sb requires sources");
        let (_, entry) = single_best(pool, &prep.split.validation)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        networks.last_mut().expect("pushed above").sb_source = Some(entry.source_id.clone());
        let pred = entry
            .model
            .forward(&test.inputs)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let row = ReportRow::new(CATEGORY_SB, kind.to_string(), eval_test(&pred, "sb")?);
        rows.push(row.clone());
        block.sb = Some(row);
    }

    if cfg.has_method(Method::Mtl) {
        let stage = format!("mtl:{kind}");
        let (net, _) = train_mtl(&spec, &source_refs, &prep.split.train, &pre_cfg, &fine_cfg)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let pred = net
            .forward(&test.inputs)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let row = ReportRow::new(ms_category, "MTL".into(), eval_test(&pred, "mtl")?);
        rows.push(row.clone());
        block.multi_source.push(row);
    }

    let wants_combined = [Method::Ae, Method::Waetl, Method::Fes, Method::Tpees]
        .iter()
        .any(|m| cfg.has_method(*m));
    if wants_combined {
        let stage = format!("pool-predictions:{kind}");
        let pool = pool.as_ref().expect("validated: ensembles require sources");
        let p_val = PoolPredictions::from_pool(pool, &prep.split.validation.inputs)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let p_test = PoolPredictions::from_pool(pool, &test.inputs)
            .map_err(|e| ExperimentError::stage(&stage, e))?;
        let val_targets = &prep.split.validation.targets;

        if cfg.has_method(Method::Ae) {
            let pred = average_ensemble(&p_test);
            let row = ReportRow::new(ms_category, "AE".into(), eval_test(&pred, "ae")?);
            rows.push(row.clone());
            block.multi_source.push(row);
        }

        if cfg.has_method(Method::Waetl) {
            let stage = format!("similarity:{}:{kind}", cfg.similarity);
            let values = similarity_values(cfg.similarity, prep)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            let weights = similarity_to_weights(&values, cfg.similarity)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            networks.last_mut().expect("pushed above").similarity = Some(SimilaritySection {
                kind: cfg.similarity.to_string(),
                values: values.clone(),
                weights: weights.as_slice().to_vec(),
            });
            let pred =
                waetl(&p_test, &weights).map_err(|e| ExperimentError::stage(&stage, e))?;
            let row = ReportRow::new(ms_category, "WAETL".into(), eval_test(&pred, "waetl")?);
            rows.push(row.clone());
            block.multi_source.push(row);
        }

        if cfg.has_method(Method::Fes) {
            let stage = format!("fes:{kind}");
            let selection = fes(&p_val, val_targets, DEFAULT_FES_MAX_ITERS)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            networks.last_mut().expect("pushed above").fes_multiset =
                Some(selection.indices().to_vec());
            let pred = selection
                .combine(&p_test)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            let row = ReportRow::new(ms_category, "FES".into(), eval_test(&pred, "fes")?);
            rows.push(row.clone());
            block.multi_source.push(row);
        }

        if cfg.has_method(Method::Tpees) {
            let stage = format!("tpees:{kind}");
            let outcome = tpees(&p_val, val_targets, &cfg.tpe.to_config(cfg.seed))
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            let artifacts = networks.last_mut().expect("pushed above");
            artifacts.tpees_lambda = Some(outcome.lambda.as_slice().to_vec());
            artifacts.tpees_validation_mse = Some(outcome.validation_mse);
            artifacts.tpees_trials = Some(trial_records(&outcome.history));
            let pred = outcome
                .lambda
                .combine(&p_test)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            let row = ReportRow::new(ms_category, "TPEES".into(), eval_test(&pred, "tpees")?);
            rows.push(row.clone());
            block.multi_source.push(row);
        }
    }

    Ok(block)
}

#[derive(Debug)]
pub struct DistanceOutput {
    pub rows: Vec<DistanceRow>,
    pub artifact: DistanceArtifact,
    pub artifact_path: PathBuf,
    pub table_path: PathBuf,
}

/// Evaluates WAETL under all four distance functions on a shared pool (one
/// pool per network kind, built once and reused).
pub fn compare_distances(
    cfg: &ExperimentConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DistanceOutput, ExperimentError> {
    cfg.validate()?;
    if cfg.sources.is_empty() {
        return Err(ExperimentError::Config(
            "distance comparison requires at least one source".into(),
        ));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;

    let mut rows = Vec::new();
    let mut pools = Vec::new();
    let result = run_distances(cfg, &mut rows, &mut pools);

    let artifact = DistanceArtifact {
        schema_version: SCHEMA_VERSION,
        kind: "distance-comparison".into(),
        generated_at: chrono::Utc::now().to_rfc3339(),
        status: if result.is_ok() { "complete" } else { "failed" }.into(),
        failed_stage: result.as_ref().err().map(ExperimentError::stage_name),
        config: cfg.clone(),
        pools: pools.clone(),
        rows: rows.clone(),
    };
    let artifact_path = out_dir.join("distances.json");
    write_json(&artifact_path, &artifact)?;

    result?;
    let table_path = out_dir.join("distances.txt");
    std::fs::write(&table_path, render_distance_table(&rows))?;
    Ok(DistanceOutput {
        rows,
        artifact,
        artifact_path,
        table_path,
    })
}

fn run_distances(
    cfg: &ExperimentConfig,
    rows: &mut Vec<DistanceRow>,
    pools: &mut Vec<PoolFingerprint>,
) -> Result<(), ExperimentError> {
    let prep = prepare(cfg)?;
    let pre_cfg = cfg.pretrain.to_config(cfg.seed);
    let fine_cfg = cfg.finetune.to_config(cfg.seed);

    for kind in cfg.network.kinds() {
        let spec = kind.spec(cfg.lookback);
        let source_refs: Vec<SourceDataset> = prep
            .sources
            .iter()
            .map(|s| SourceDataset {
                id: &s.symbol,
                windows: &s.windows,
            })
            .collect();
        let pool = build_pool(
            &spec,
            &source_refs,
            &prep.target_symbol,
            &prep.split.train,
            &pre_cfg,
            &fine_cfg,
        )
        .map_err(|e| ExperimentError::stage(format!("build-pool:{kind}"), e))?;
        pools.push(PoolFingerprint {
            network: kind.to_string(),
            fingerprint: format!("{:016x}", pool.fingerprint()),
        });
        let p_test = PoolPredictions::from_pool(&pool, &prep.split.test.inputs)
            .map_err(|e| ExperimentError::stage(format!("pool-predictions:{kind}"), e))?;

        for sim in SimilarityKind::ALL {
            let stage = format!("similarity:{sim}:{kind}");
            let values =
                similarity_values(sim, &prep).map_err(|e| ExperimentError::stage(&stage, e))?;
            let weights = similarity_to_weights(&values, sim)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            let pred = waetl(&p_test, &weights).map_err(|e| ExperimentError::stage(&stage, e))?;
            let report = evaluate(&pred, &prep.split.test.targets, &prep.split.test.scaling)
                .map_err(|e| ExperimentError::stage(&stage, e))?;
            rows.push(DistanceRow {
                network: kind.to_string(),
                distance: sim.to_string(),
                mape: report.mape,
                rmse: report.rmse,
                r2: report.r2,
            });
        }
    }
    Ok(())
}

/// Summary of one validated CSV, for the `ingest` command.
#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub symbol: String,
    pub path: String,
    pub rows: usize,
    pub first: String,
    pub last: String,
}

/// Parses and validates every configured CSV without training anything.
pub fn validate_csvs(cfg: &ExperimentConfig) -> Result<Vec<IngestSummary>, ExperimentError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for spec in std::iter::once(&cfg.target).chain(&cfg.sources) {
        let series = load_series(spec, cfg)?;
        out.push(IngestSummary {
            symbol: spec.symbol.clone(),
            path: spec.csv.display().to_string(),
            rows: series.len(),
            first: series.dates().first().map(|d| d.to_string()).unwrap_or_default(),
            last: series.dates().last().map(|d| d.to_string()).unwrap_or_default(),
        });
    }
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| ExperimentError::Artifact(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
