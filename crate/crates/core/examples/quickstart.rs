//! Minimal library walkthrough: one source, one target, TPE-selected
//! ensemble, test metrics. Expects Yahoo-format CSVs under data/.

use fincast_core::data::{ingest_csv, source_windows, target_split, DEFAULT_SPLIT};
use fincast_core::ensemble::{tpees, PoolPredictions};
use fincast_core::metrics::evaluate;
use fincast_core::nn::{NetworkSpec, TrainConfig};
use fincast_core::tpe::TpeConfig;
use fincast_core::transfer::{build_pool, SourceDataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = ingest_csv("data/icbc.csv", "Close")?;
    let split = target_split(&target, 22, 1, DEFAULT_SPLIT)?;
    let source = ingest_csv("data/hsbc.csv", "Close")?;
    let windows = source_windows(&source, 22, 1)?;

    let spec = NetworkSpec::canonical_mlp(22);
    let cfg = TrainConfig::default();
    let pool = build_pool(
        &spec,
        &[SourceDataset {
            id: "HSBC",
            windows: &windows,
        }],
        "ICBC",
        &split.train,
        &cfg,
        &cfg,
    )?;

    let p_val = PoolPredictions::from_pool(&pool, &split.validation.inputs)?;
    let p_test = PoolPredictions::from_pool(&pool, &split.test.inputs)?;
    let outcome = tpees(&p_val, &split.validation.targets, &TpeConfig::default())?;
    let pred = outcome.lambda.combine(&p_test)?;
    let report = evaluate(&pred, &split.test.targets, &split.test.scaling)?;
    println!(
        "MAPE {:.4}  RMSE {:.4}  R² {:.4}",
        report.mape, report.rmse, report.r2
    );
    Ok(())
}
