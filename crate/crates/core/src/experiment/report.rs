//! Report rows, JSON artifacts and plain-text table rendering.
//!
//! Artifacts are deterministic for a fixed config and seed except for the
//! `generated_at` timestamp, which consumers must ignore when comparing.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::ExperimentError;
use crate::metrics::EvalReport;
use crate::tpe::TrialHistory;

pub const SCHEMA_VERSION: u32 = 1;

pub const CATEGORY_WTL: &str = "Without Transfer Learning (WTL)";
pub const CATEGORY_SB: &str = "Single Best (SB)";
pub const CATEGORY_MSM: &str = "Multi-source MLP (MSM)";
pub const CATEGORY_MSL: &str = "Multi-source LSTM (MSL)";

/// One line of the result table: category, model and the three indicators
/// measured on the target test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub category: String,
    pub model: String,
    pub mape: f64,
    pub rmse: f64,
    pub r2: f64,
}

impl ReportRow {
    pub fn new(category: &str, model: String, report: EvalReport) -> Self {
        Self {
            category: category.to_string(),
            model,
            mape: report.mape,
            rmse: report.rmse,
            r2: report.r2,
        }
    }
}

/// Similarity values and the weights derived from them, per source in pool
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySection {
    pub kind: String,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

/// One TPE trial in the log; `loss` is `null` for the `+∞` sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub lambda: Vec<f64>,
    pub loss: Option<f64>,
}

pub fn trial_records(history: &TrialHistory) -> Vec<TrialRecord> {
    history
        .trials
        .iter()
        .enumerate()
        .map(|(index, t)| TrialRecord {
            index,
            lambda: t.lambda.clone(),
            loss: t.loss.is_finite().then_some(t.loss),
        })
        .collect()
}

/// Selection artifacts produced while evaluating one network kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkArtifacts {
    pub network: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sb_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<SimilaritySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fes_multiset: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpees_lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpees_validation_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpees_trials: Option<Vec<TrialRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub generated_at: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub networks: Vec<NetworkArtifacts>,
}

/// One WAETL evaluation under a specific distance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub network: String,
    pub distance: String,
    pub mape: f64,
    pub rmse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFingerprint {
    pub network: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub generated_at: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    pub config: ExperimentConfig,
    pub pools: Vec<PoolFingerprint>,
    pub rows: Vec<DistanceRow>,
}

fn table_header(out: &mut String, col0: &str, col1: &str) {
    out.push_str(&format!(
        "{col0:<34} {col1:<14} {:>10} {:>10} {:>10}\n",
        "MAPE", "RMSE", "R2"
    ));
    out.push_str(&"-".repeat(82));
    out.push('\n');
}

/// Paper-style table: Category, Model, MAPE, RMSE, R², four decimals.
/// Repeated category labels are blanked for readability.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    table_header(&mut out, "Category", "Model");
    let mut last_category = "";
    for row in rows {
        let category = if row.category == last_category {
            ""
        } else {
            last_category = &row.category;
            &row.category
        };
        out.push_str(&format!(
            "{category:<34} {:<14} {:>10.4} {:>10.4} {:>10.4}\n",
            row.model, row.mape, row.rmse, row.r2
        ));
    }
    out
}

/// Distance-comparison table: one row per (network, distance) pair.
pub fn render_distance_table(rows: &[DistanceRow]) -> String {
    let mut out = String::new();
    table_header(&mut out, "Network", "Distance");
    let mut last_network = "";
    for row in rows {
        let network = if row.network == last_network {
            ""
        } else {
            last_network = &row.network;
            &row.network
        };
        out.push_str(&format!(
            "{network:<34} {:<14} {:>10.4} {:>10.4} {:>10.4}\n",
            row.distance, row.mape, row.rmse, row.r2
        ));
    }
    out
}

/// Re-renders a JSON artifact (either kind) to its plain-text table.
pub fn render_artifact_json(text: &str) -> Result<String, ExperimentError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ExperimentError::Artifact(e.to_string()))?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("experiment") => {
            let artifact: ExperimentArtifact = serde_json::from_value(value)
                .map_err(|e| ExperimentError::Artifact(e.to_string()))?;
            Ok(render_table(&artifact.rows))
        }
        Some("distance-comparison") => {
            let artifact: DistanceArtifact = serde_json::from_value(value)
                .map_err(|e| ExperimentError::Artifact(e.to_string()))?;
            Ok(render_distance_table(&artifact.rows))
        }
        other => Err(ExperimentError::Artifact(format!(
            "unknown artifact kind {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_blanks_repeated_categories() {
        let rows = vec![
            ReportRow {
                category: CATEGORY_WTL.into(),
                model: "MLP".into(),
                mape: 1.0326,
                rmse: 0.0783,
                r2: 0.9282,
            },
            ReportRow {
                category: CATEGORY_WTL.into(),
                model: "LSTM".into(),
                mape: 0.9499,
                rmse: 0.0738,
                r2: 0.9362,
            },
        ];
        let table = render_table(&rows);
        assert_eq!(table.matches(CATEGORY_WTL).count(), 1);
        assert!(table.contains("1.0326"));
        assert!(table.contains("0.9362"));
    }

    #[test]
    fn trial_records_map_infinite_to_null() {
        let mut history = TrialHistory::new(0.25).unwrap();
        history.trials.push(crate::tpe::Trial {
            lambda: vec![0.5],
            loss: 0.25,
        });
        history.trials.push(crate::tpe::Trial {
            lambda: vec![0.0],
            loss: f64::INFINITY,
        });
        let records = trial_records(&history);
        assert_eq!(records[0].loss, Some(0.25));
        assert_eq!(records[1].loss, None);
        let json = serde_json::to_string(&records).unwrap();
        assert!(json.contains("null"));
    }
}
