//! The four pool combiners: plain averaging, similarity-weighted averaging,
//! greedy forward selection with replacement, and TPE-optimized selection
//! via per-model coefficients λ on the grid {0, 0.25, 0.5, 0.75, 1}, where
//! λ = 0 excludes a model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::nn::mse_loss;
use crate::similarity::WeightVector;
use crate::tpe::{self, SearchSpace, TpeConfig, TrialHistory};
use crate::transfer::{ModelPool, TransferError};

/// Coefficient levels searched by TPE selection.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub const DEFAULT_FES_MAX_ITERS: usize = 50;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("pool predictions need at least one model")]
    EmptyPool,
    #[error("prediction rows have inconsistent lengths")]
    RaggedRows,
    #[error("pool predictions must be finite")]
    NonFinite,
    #[error("weight vector has {weights} entries for {models} models")]
    WeightLengthMismatch { weights: usize, models: usize },
    #[error("lambda vector has {lambdas} entries for {models} models")]
    LambdaLengthMismatch { lambdas: usize, models: usize },
    #[error("all-zero lambda selects no model")]
    AllZeroLambda,
    #[error("targets length {targets} does not match prediction columns {samples}")]
    TargetMismatch { targets: usize, samples: usize },
    #[error("TPE selection found no valid lambda")]
    DegenerateSelection,
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Tpe(#[from] tpe::TpeError),
}

/// Scaled predictions of every pool model on one fixed evaluation input
/// set; row `i` belongs to pool entry `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolPredictions {
    preds: Matrix,
}

impl PoolPredictions {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EnsembleError> {
        if rows.is_empty() {
            return Err(EnsembleError::EmptyPool);
        }
        let len = rows[0].len();
        if rows.iter().any(|r| r.len() != len) {
            return Err(EnsembleError::RaggedRows);
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EnsembleError::NonFinite);
        }
        Ok(Self {
            preds: Matrix::from_rows(rows),
        })
    }

    /// Runs every pool model over `inputs`.
    pub fn from_pool(pool: &ModelPool, inputs: &Matrix) -> Result<Self, EnsembleError> {
        let rows: Result<Vec<Vec<f64>>, TransferError> = pool
            .entries()
            .iter()
            .map(|e| e.model.forward(inputs).map_err(TransferError::from))
            .collect();
        Self::from_rows(&rows?)
    }

    pub fn n_models(&self) -> usize {
        self.preds.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.preds.cols()
    }

    pub fn row(&self, model: usize) -> &[f64] {
        self.preds.row(model)
    }
}

/// Column-wise mean of all pool outputs.
pub fn average_ensemble(p: &PoolPredictions) -> Vec<f64> {
    let n = p.n_models() as f64;
    let mut out = vec![0.0; p.n_samples()];
    for r in 0..p.n_models() {
        for (acc, &v) in out.iter_mut().zip(p.row(r)) {
            *acc += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Weighted column-wise sum `Σ w_i · out_i`; with uniform weights this is
/// exactly the plain average.
pub fn waetl(p: &PoolPredictions, weights: &WeightVector) -> Result<Vec<f64>, EnsembleError> {
    if weights.len() != p.n_models() {
        return Err(EnsembleError::WeightLengthMismatch {
            weights: weights.len(),
            models: p.n_models(),
        });
    }
    let mut out = vec![0.0; p.n_samples()];
    for (r, &w) in weights.as_slice().iter().enumerate() {
        for (acc, &v) in out.iter_mut().zip(p.row(r)) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// Multiset of pool indices chosen by forward selection; repetition allowed,
/// prediction is the mean over the multiset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMultiset {
    indices: Vec<usize>,
}

impl SelectionMultiset {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Mean prediction over the multiset (with repetition).
    pub fn combine(&self, p: &PoolPredictions) -> Result<Vec<f64>, EnsembleError> {
        if self.indices.iter().any(|&i| i >= p.n_models()) {
            return Err(EnsembleError::LambdaLengthMismatch {
                lambdas: self.indices.len(),
                models: p.n_models(),
            });
        }
        let mut out = vec![0.0; p.n_samples()];
        for &i in &self.indices {
            for (acc, &v) in out.iter_mut().zip(p.row(i)) {
                *acc += v;
            }
        }
        let k = self.indices.len() as f64;
        out.iter_mut().for_each(|v| *v /= k);
        Ok(out)
    }
}

/// Greedy forward ensemble selection with replacement: start from the best
/// single model by validation MSE, repeatedly add whichever model most
/// reduces the MSE of the multiset average, and stop when no addition
/// strictly improves or `max_iters` models have been taken.
pub fn fes(
    p_validation: &PoolPredictions,
    targets: &[f64],
    max_iters: usize,
) -> Result<SelectionMultiset, EnsembleError> {
    check_targets(p_validation, targets)?;
    assert!(max_iters >= 1);
    let n = p_validation.n_models();
    let samples = p_validation.n_samples();

    let model_mse = |sums: &[f64], count: f64| -> f64 {
        let mut acc = 0.0;
        for (s, &t) in sums.iter().zip(targets) {
            let diff = s / count - t;
            acc += diff * diff;
        }
        acc / samples as f64
    };

    // Best single model.
    let mut best_idx = 0;
    let mut best_mse = f64::INFINITY;
    for i in 0..n {
        let mse = mse_loss(p_validation.row(i), targets).expect("checked lengths");
        if mse < best_mse {
            best_mse = mse;
            best_idx = i;
        }
    }
    let mut indices = vec![best_idx];
    let mut sums: Vec<f64> = p_validation.row(best_idx).to_vec();
    let mut current_mse = best_mse;

    while indices.len() < max_iters {
        let mut candidate: Option<(usize, f64)> = None;
        for i in 0..n {
            let mut trial_sums = sums.clone();
            for (s, &v) in trial_sums.iter_mut().zip(p_validation.row(i)) {
                *s += v;
            }
            let mse = model_mse(&trial_sums, (indices.len() + 1) as f64);
            if candidate.is_none() || mse < candidate.unwrap().1 {
                candidate = Some((i, mse));
            }
        }
        let (add, mse) = candidate.expect("n >= 1");
        if mse >= current_mse {
            break;
        }
        for (s, &v) in sums.iter_mut().zip(p_validation.row(add)) {
            *s += v;
        }
        indices.push(add);
        current_mse = mse;
    }
    Ok(SelectionMultiset { indices })
}

/// Per-model coefficients on [`LAMBDA_GRID`]; a zero excludes the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaVector(Vec<f64>);

impl LambdaVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self, EnsembleError> {
        if !lambda.iter().all(|v| LAMBDA_GRID.contains(v)) {
            return Err(EnsembleError::DegenerateSelection);
        }
        if lambda.iter().all(|&v| v == 0.0) {
            return Err(EnsembleError::AllZeroLambda);
        }
        Ok(Self(lambda))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Applies the λ-normalized combination to any pool predictions.
    pub fn combine(&self, p: &PoolPredictions) -> Result<Vec<f64>, EnsembleError> {
        combine_lambda(p, &self.0)
    }

    /// Indices of selected (nonzero-λ) models.
    pub fn selected(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `Σ λ_i·out_i / Σ λ_i`, column-wise. Invariant under positive rescaling
/// of λ; any vector with all entries equal reproduces the plain average.
pub fn combine_lambda(p: &PoolPredictions, lambda: &[f64]) -> Result<Vec<f64>, EnsembleError> {
    if lambda.len() != p.n_models() {
        return Err(EnsembleError::LambdaLengthMismatch {
            lambdas: lambda.len(),
            models: p.n_models(),
        });
    }
    let total: f64 = lambda.iter().sum();
    if total == 0.0 {
        return Err(EnsembleError::AllZeroLambda);
    }
    let mut out = vec![0.0; p.n_samples()];
    for (r, &l) in lambda.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        for (acc, &v) in out.iter_mut().zip(p.row(r)) {
            *acc += l * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// The λ chosen by TPE selection along with the search history and the
/// validation MSE it achieved.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TpeesOutcome {
    pub lambda: LambdaVector,
    pub validation_mse: f64,
    pub history: TrialHistory,
}

/// Optimizes the λ grid with TPE against the validation MSE of the
/// λ-normalized combination. All-zero candidates are scored `+∞`, so they
/// are recorded but never selected.
pub fn tpees(
    p_validation: &PoolPredictions,
    targets: &[f64],
    cfg: &TpeConfig,
) -> Result<TpeesOutcome, EnsembleError> {
    check_targets(p_validation, targets)?;
    let space = SearchSpace::uniform_grid(p_validation.n_models(), &LAMBDA_GRID)?;
    let objective = |lambda: &[f64]| match combine_lambda(p_validation, lambda) {
        Ok(pred) => mse_loss(&pred, targets).expect("checked lengths"),
        Err(_) => f64::INFINITY,
    };
    let (best, history) = tpe::optimize(objective, &space, cfg)?;
    if !best.loss.is_finite() {
        return Err(EnsembleError::DegenerateSelection);
    }
    Ok(TpeesOutcome {
        lambda: LambdaVector::new(best.lambda)?,
        validation_mse: best.loss,
        history,
    })
}

fn check_targets(p: &PoolPredictions, targets: &[f64]) -> Result<(), EnsembleError> {
    if targets.len() != p.n_samples() {
        return Err(EnsembleError::TargetMismatch {
            targets: targets.len(),
            samples: p.n_samples(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn preds(rows: &[&[f64]]) -> PoolPredictions {
        PoolPredictions::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn average_examples() {
        let p = preds(&[&[1.0, 1.0], &[3.0, 3.0]]);
        assert_eq!(average_ensemble(&p), vec![2.0, 2.0]);

        let p = preds(&[&[0.5, -0.5]]);
        assert_eq!(average_ensemble(&p), vec![0.5, -0.5]);

        let p = preds(&[&[0.0, 2.0], &[2.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(average_ensemble(&p), vec![1.0, 1.0]);
    }

    #[test]
    fn waetl_examples() {
        let p = preds(&[&[1.0, 2.0], &[3.0, 6.0]]);
        let uniform = WeightVector::uniform(2).unwrap();
        let avg = average_ensemble(&p);
        let weighted = waetl(&p, &uniform).unwrap();
        for (a, b) in avg.iter().zip(&weighted) {
            assert!((a - b).abs() < 1e-12);
        }

        let first_only = WeightVector::from_raw(&[1.0, 0.0]).unwrap();
        assert_eq!(waetl(&p, &first_only).unwrap(), vec![1.0, 2.0]);

        // 0·0.75 + 4·0.25 = 1
        let p = preds(&[&[0.0], &[4.0]]);
        let w = WeightVector::from_raw(&[0.75, 0.25]).unwrap();
        assert_eq!(waetl(&p, &w).unwrap(), vec![1.0]);

        assert!(matches!(
            waetl(&p, &WeightVector::uniform(3).unwrap()),
            Err(EnsembleError::WeightLengthMismatch { .. })
        ));
    }

    #[test]
    fn fes_exact_model_stays_alone() {
        let targets = [1.0, 2.0, 3.0];
        let p = preds(&[&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]]);
        let sel = fes(&p, &targets, 50).unwrap();
        assert_eq!(sel.indices(), &[0]);
    }

    #[test]
    fn fes_averages_out_symmetric_errors() {
        // Models at truth ± e: each alone has MSE e²; {0, 1} averages to the
        // truth with MSE 0, and no other 1- or 2-multiset beats it.
        let targets = [1.0, 2.0, 3.0];
        let plus: Vec<f64> = targets.iter().map(|t| t + 0.5).collect();
        let minus: Vec<f64> = targets.iter().map(|t| t - 0.5).collect();
        let p = preds(&[&plus, &minus]);
        let sel = fes(&p, &targets, 50).unwrap();
        let mut sorted = sel.indices().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1]);
        let combined = sel.combine(&p).unwrap();
        for (c, t) in combined.iter().zip(&targets) {
            assert!((c - t).abs() < 1e-12);
        }
    }

    #[test]
    fn fes_budget_of_one_returns_best_single() {
        let targets = [0.0, 0.0];
        let p = preds(&[&[0.4, 0.4], &[0.1, 0.1], &[0.9, 0.9]]);
        let sel = fes(&p, &targets, 1).unwrap();
        assert_eq!(sel.indices(), &[1]);
    }

    #[test]
    fn fes_validation_mse_never_worse_than_best_single() {
        let targets = [0.2, -0.4, 0.9, 0.0];
        let p = preds(&[
            &[0.3, -0.2, 0.8, 0.1],
            &[0.1, -0.6, 1.1, -0.2],
            &[0.25, -0.35, 0.7, 0.05],
        ]);
        let best_single = (0..3)
            .map(|i| mse_loss(p.row(i), &targets).unwrap())
            .fold(f64::INFINITY, f64::min);
        let sel = fes(&p, &targets, 50).unwrap();
        let mse = mse_loss(&sel.combine(&p).unwrap(), &targets).unwrap();
        assert!(mse <= best_single + 1e-12);
    }

    #[test]
    fn combine_lambda_examples() {
        let p = preds(&[&[0.0], &[2.0]]);
        // (0·0.25 + 2·0.75) / 1 = 1.5
        let out = combine_lambda(&p, &[0.25, 0.75]).unwrap();
        assert!((out[0] - 1.5).abs() < 1e-12);

        // Equal nonzero λ reproduces the average.
        let p = preds(&[&[1.0, 3.0], &[3.0, 5.0]]);
        let avg = average_ensemble(&p);
        for lam in [0.25, 0.5, 1.0] {
            let out = combine_lambda(&p, &[lam, lam]).unwrap();
            for (o, a) in out.iter().zip(&avg) {
                assert!((o - a).abs() < 1e-12);
            }
        }

        // λ = [1, 0] reproduces model 0 verbatim.
        let out = combine_lambda(&p, &[1.0, 0.0]).unwrap();
        assert_eq!(out, p.row(0).to_vec());

        assert!(matches!(
            combine_lambda(&p, &[0.0, 0.0]),
            Err(EnsembleError::AllZeroLambda)
        ));
    }

    #[test]
    fn lambda_vector_validates_grid_and_zero() {
        assert!(LambdaVector::new(vec![0.0, 0.5]).is_ok());
        assert!(matches!(
            LambdaVector::new(vec![0.0, 0.0]),
            Err(EnsembleError::AllZeroLambda)
        ));
        assert!(LambdaVector::new(vec![0.3]).is_err());
        let l = LambdaVector::new(vec![0.0, 0.25, 0.0, 1.0]).unwrap();
        assert_eq!(l.selected(), vec![1, 3]);
    }

    #[test]
    fn tpees_drops_biased_model() {
        // Pool of an exact model and a constant-bias model: enumerating the
        // λ grid shows the optimum is any λ with zero weight on the biased
        // model (validation MSE 0), so TPEES should land there in at least
        // 95% of seeds.
        let targets: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let exact = targets.clone();
        let biased: Vec<f64> = targets.iter().map(|t| t + 0.8).collect();
        let p = preds(&[&exact, &biased]);
        let mut hits = 0;
        for seed in 0..50 {
            let cfg = TpeConfig {
                n_trials: 100,
                seed,
                ..TpeConfig::default()
            };
            let outcome = tpees(&p, &targets, &cfg).unwrap();
            assert_eq!(outcome.history.trials.len(), 100);
            if outcome.lambda.as_slice()[1] == 0.0
                && outcome.lambda.as_slice()[0] > 0.0
                && outcome.validation_mse < 1e-12
            {
                hits += 1;
            }
        }
        assert!(hits >= 48, "biased model excluded in only {hits}/50 seeds");
    }

    #[test]
    fn tpees_is_deterministic() {
        let targets = [0.1, -0.2, 0.5, 0.3];
        let p = preds(&[
            &[0.2, -0.1, 0.4, 0.2],
            &[0.0, -0.3, 0.6, 0.4],
            &[0.5, 0.5, 0.5, 0.5],
        ]);
        let cfg = TpeConfig {
            n_trials: 60,
            seed: 7,
            ..TpeConfig::default()
        };
        let a = tpees(&p, &targets, &cfg).unwrap();
        let b = tpees(&p, &targets, &cfg).unwrap();
        assert_eq!(a.lambda, b.lambda);
        assert_eq!(a.validation_mse, b.validation_mse);
    }

    proptest! {
        /// λ-normalized combination: positive rescaling of λ changes nothing.
        #[test]
        fn prop_combine_scale_invariant(
            lambda_idx in proptest::collection::vec(0_usize..5, 2..5),
            scale in 0.01_f64..100.0,
            cols in 1_usize..6,
        ) {
            let lambda: Vec<f64> = lambda_idx.iter().map(|&i| LAMBDA_GRID[i]).collect();
            prop_assume!(lambda.iter().any(|&v| v != 0.0));
            let rows: Vec<Vec<f64>> = (0..lambda.len())
                .map(|r| (0..cols).map(|c| ((r * 7 + c * 3) as f64).sin()).collect())
                .collect();
            let p = PoolPredictions::from_rows(&rows).unwrap();
            let base = combine_lambda(&p, &lambda).unwrap();
            let scaled: Vec<f64> = lambda.iter().map(|&v| v * scale).collect();
            let rescaled = combine_lambda(&p, &scaled).unwrap();
            for (a, b) in base.iter().zip(&rescaled) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        /// Uniform-weight WAETL coincides with the plain average.
        #[test]
        fn prop_waetl_uniform_equals_average(
            rows in proptest::collection::vec(
                proptest::collection::vec(-10.0_f64..10.0, 4),
                1..6,
            ),
        ) {
            let p = PoolPredictions::from_rows(&rows).unwrap();
            let uniform = WeightVector::uniform(rows.len()).unwrap();
            let avg = average_ensemble(&p);
            let weighted = waetl(&p, &uniform).unwrap();
            for (a, b) in avg.iter().zip(&weighted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        /// Every combiner stays inside the per-column envelope of the pool.
        #[test]
        fn prop_combiners_stay_in_envelope(
            rows in proptest::collection::vec(
                proptest::collection::vec(-5.0_f64..5.0, 3),
                2..5,
            ),
            lambda_idx in proptest::collection::vec(0_usize..5, 2..5),
        ) {
            let p = PoolPredictions::from_rows(&rows).unwrap();
            let n = p.n_models();
            let lambda: Vec<f64> = (0..n).map(|i| LAMBDA_GRID[lambda_idx[i % lambda_idx.len()]]).collect();
            let envelope = |col: usize| {
                let vals: Vec<f64> = (0..n).map(|r| p.row(r)[col]).collect();
                (
                    vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            let mut outputs = vec![average_ensemble(&p)];
            if lambda.iter().any(|&v| v != 0.0) {
                outputs.push(combine_lambda(&p, &lambda).unwrap());
            }
            let targets = vec![0.0; p.n_samples()];
            outputs.push(fes(&p, &targets, 10).unwrap().combine(&p).unwrap());
            for out in &outputs {
                for (col, &v) in out.iter().enumerate() {
                    let (lo, hi) = envelope(col);
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }
    }
}
