//! Experiment configuration, loaded from a TOML document.
//!
//! A complete example:
//!
//! ```toml
//! seed = 42
//! network = "both"          # mlp | lstm | both
//! methods = ["wtl", "sb", "mtl", "ae", "waetl", "fes", "tpees"]
//! similarity = "coral"      # coral | wasserstein | dtw | pcc (WAETL weights)
//! column = "Close"          # or "Adj Close"
//! lookback = 22
//! horizon = 1
//!
//! [target]
//! symbol = "ICBC"
//! csv = "data/icbc.csv"
//!
//! [[sources]]
//! symbol = "HSBC"
//! csv = "data/hsbc.csv"
//!
//! [[sources]]
//! symbol = "BOC"
//! csv = "data/boc.csv"
//!
//! [pretrain]
//! epochs = 200
//! learning_rate = 0.001
//! batch_size = 64
//! optimizer = "adam"
//!
//! [finetune]
//! epochs = 100
//! learning_rate = 0.001
//! batch_size = 64
//! optimizer = "adam"
//!
//! [tpe]
//! trials = 200
//! startup = 20
//! gamma = 0.05
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::{NetworkSpec, OptimizerKind, TrainConfig};
use crate::similarity::SimilarityKind;
use crate::tpe::TpeConfig;

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub symbol: String,
    pub csv: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lstm,
}

impl ModelKind {
    pub fn spec(&self, lookback: usize) -> NetworkSpec {
        match self {
            ModelKind::Mlp => NetworkSpec::canonical_mlp(lookback),
            ModelKind::Lstm => NetworkSpec::canonical_lstm(lookback),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Mlp => f.write_str("MLP"),
            ModelKind::Lstm => f.write_str("LSTM"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkChoice {
    Mlp,
    Lstm,
    #[default]
    Both,
}

impl NetworkChoice {
    pub fn kinds(&self) -> Vec<ModelKind> {
        match self {
            NetworkChoice::Mlp => vec![ModelKind::Mlp],
            NetworkChoice::Lstm => vec![ModelKind::Lstm],
            NetworkChoice::Both => vec![ModelKind::Mlp, ModelKind::Lstm],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Wtl,
    Sb,
    Mtl,
    Ae,
    Waetl,
    Fes,
    Tpees,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Wtl,
        Method::Sb,
        Method::Mtl,
        Method::Ae,
        Method::Waetl,
        Method::Fes,
        Method::Tpees,
    ];

    /// True for methods that need a model pool (and therefore sources).
    pub fn needs_pool(&self) -> bool {
        !matches!(self, Method::Wtl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Method::Wtl => "WTL",
            Method::Sb => "SB",
            Method::Mtl => "MTL",
            Method::Ae => "AE",
            Method::Waetl => "WAETL",
            Method::Fes => "FES",
            Method::Tpees => "TPEES",
        };
        f.write_str(name)
    }
}

/// Epochs, learning rate, batch size and optimizer for one training phase;
/// the run seed is injected when the phase executes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl TrainSettings {
    pub fn pretrain_default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
        }
    }

    pub fn to_config(self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpeSettings {
    pub trials: usize,
    pub startup: usize,
    pub gamma: f64,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self {
            trials: 200,
            startup: 20,
            gamma: 0.05,
        }
    }
}

impl TpeSettings {
    pub fn to_config(self, seed: u64) -> TpeConfig {
        TpeConfig {
            n_trials: self.trials,
            n_startup: self.startup,
            gamma: self.gamma,
            seed,
            ..TpeConfig::default()
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_column() -> String {
    "Close".to_string()
}

fn default_lookback() -> usize {
    crate::data::DEFAULT_LOOKBACK
}

fn default_horizon() -> usize {
    crate::data::DEFAULT_HORIZON
}

fn default_similarity() -> SimilarityKind {
    SimilarityKind::Coral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: SeriesSpec,
    #[serde(default)]
    pub sources: Vec<SeriesSpec>,
    #[serde(default)]
    pub network: NetworkChoice,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_similarity")]
    pub similarity: SimilarityKind,
    #[serde(default = "default_column")]
    pub column: String,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "TrainSettings::pretrain_default")]
    pub pretrain: TrainSettings,
    #[serde(default = "TrainSettings::finetune_default")]
    pub finetune: TrainSettings,
    #[serde(default)]
    pub tpe: TpeSettings,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            ExperimentError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // CSV paths are interpreted relative to the config file.
        if let Some(base) = path.parent() {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            };
            resolve(&mut cfg.target.csv);
            for src in &mut cfg.sources {
                resolve(&mut src.csv);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.methods.is_empty() {
            return Err(ExperimentError::Config("methods must be nonempty".into()));
        }
        if self.lookback == 0 || self.horizon == 0 {
            return Err(ExperimentError::Config(
                "lookback and horizon must be positive".into(),
            ));
        }
        for (i, src) in self.sources.iter().enumerate() {
            if src.symbol == self.target.symbol {
                return Err(ExperimentError::Config(format!(
                    "source `{}` equals the target symbol",
                    src.symbol
                )));
            }
            if self.sources[..i].iter().any(|s| s.symbol == src.symbol) {
                return Err(ExperimentError::Config(format!(
                    "duplicate source symbol `{}`",
                    src.symbol
                )));
            }
        }
        if self.sources.is_empty() && self.methods.iter().any(Method::needs_pool) {
            return Err(ExperimentError::Config(
                "pool-based methods require at least one source".into(),
            ));
        }
        if !(self.tpe.gamma > 0.0 && self.tpe.gamma < 1.0) {
            return Err(ExperimentError::Config(format!(
                "tpe.gamma {} not in (0, 1)",
                self.tpe.gamma
            )));
        }
        Ok(())
    }

    pub fn has_method(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [target]
        symbol = "ICBC"
        csv = "icbc.csv"

        [[sources]]
        symbol = "HSBC"
        csv = "hsbc.csv"
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.lookback, 22);
        assert_eq!(cfg.horizon, 1);
        assert_eq!(cfg.column, "Close");
        assert_eq!(cfg.network, NetworkChoice::Both);
        assert_eq!(cfg.methods.len(), 7);
        assert_eq!(cfg.pretrain.epochs, 200);
        assert_eq!(cfg.finetune.epochs, 100);
        assert_eq!(cfg.tpe.trials, 200);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
            seed = 7
            network = "mlp"
            methods = ["ae", "tpees"]
            similarity = "wasserstein"
            lookback = 10
            horizon = 1

            [target]
            symbol = "T"
            csv = "t.csv"

            [[sources]]
            symbol = "A"
            csv = "a.csv"

            [pretrain]
            epochs = 5
            learning_rate = 0.01
            batch_size = 8
            optimizer = "sgd"

            [finetune]
            epochs = 3
            learning_rate = 0.005
            batch_size = 8
            optimizer = "rmsprop"

            [tpe]
            trials = 50
            startup = 10
            gamma = 0.3
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.network.kinds(), vec![ModelKind::Mlp]);
        assert_eq!(cfg.methods, vec![Method::Ae, Method::Tpees]);
        assert_eq!(cfg.pretrain.optimizer, OptimizerKind::Sgd);
        assert_eq!(cfg.finetune.optimizer, OptimizerKind::RmsProp);
        assert_eq!(cfg.tpe.trials, 50);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let dup = MINIMAL.replace("HSBC", "ICBC");
        assert!(ExperimentConfig::from_toml_str(&dup).is_err());

        let no_methods = format!("methods = []\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml_str(&no_methods).is_err());

        let no_sources = r#"
            methods = ["sb"]
            [target]
            symbol = "T"
            csv = "t.csv"
        "#;
        assert!(ExperimentConfig::from_toml_str(no_sources).is_err());

        let wtl_only = r#"
            methods = ["wtl"]
            [target]
            symbol = "T"
            csv = "t.csv"
        "#;
        assert!(ExperimentConfig::from_toml_str(wtl_only).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("typo_key = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }
}
