//! Source/target series similarity measures and their mapping to ensemble
//! weights.
//!
//! CORAL, Wasserstein and DTW are dissimilarities (0 means identical); PCC
//! is a similarity in `[-1, 1]`. Distances are intended to be computed on
//! min-max-scaled training-segment values: the scalar series feed WD, DTW
//! and PCC, while CORAL compares the covariance structure of the windowed
//! feature matrices. The weight map `w_i = f(D(s_i, t))` uses normalized
//! inverse distance for dissimilarities and an affine shift for PCC, so
//! more similar sources always weigh more and the weights sum to one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Guards the inverse-distance map against division by zero.
pub const WEIGHT_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("similarity input must be nonempty")]
    EmptyInput,
    #[error("PCC needs at least 2 aligned points, got {0}")]
    TooShort(usize),
    #[error("PCC undefined: {0} input is constant")]
    ConstantInput(&'static str),
    #[error("CORAL needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("CORAL feature dimensions differ ({0} vs {1})")]
    ColumnMismatch(usize, usize),
    #[error("dissimilarity values must be nonnegative, got {0}")]
    NegativeDissimilarity(f64),
    #[error("all raw weights are zero; cannot normalize")]
    DegenerateWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Coral,
    Wasserstein,
    Dtw,
    Pcc,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 4] = [
        SimilarityKind::Coral,
        SimilarityKind::Wasserstein,
        SimilarityKind::Dtw,
        SimilarityKind::Pcc,
    ];

    /// True for measures where 0 means identical; PCC is the only
    /// similarity-oriented measure.
    pub fn is_dissimilarity(&self) -> bool {
        !matches!(self, SimilarityKind::Pcc)
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SimilarityKind::Coral => "coral",
            SimilarityKind::Wasserstein => "wasserstein",
            SimilarityKind::Dtw => "dtw",
            SimilarityKind::Pcc => "pcc",
        };
        f.write_str(name)
    }
}

impl FromStr for SimilarityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coral" => Ok(SimilarityKind::Coral),
            "wasserstein" | "wd" => Ok(SimilarityKind::Wasserstein),
            "dtw" => Ok(SimilarityKind::Dtw),
            "pcc" => Ok(SimilarityKind::Pcc),
            other => Err(format!("unknown similarity kind `{other}`")),
        }
    }
}

/// Classic dynamic-programming DTW over the `|a_i - b_j|` cost matrix with
/// match/insert/delete steps.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    let mut prev = vec![f64::INFINITY; b.len() + 1];
    let mut cur = vec![f64::INFINITY; b.len() + 1];
    prev[0] = 0.0;
    for &av in a {
        cur[0] = f64::INFINITY;
        for (j, &bv) in b.iter().enumerate() {
            let cost = (av - bv).abs();
            cur[j + 1] = cost + prev[j].min(prev[j + 1]).min(cur[j]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[b.len()])
}

/// 1-Wasserstein distance between the empirical distributions of two
/// samples: both are sorted and `|F_a⁻¹ - F_b⁻¹|` is integrated over the
/// quantile axis. Equal-size samples reduce to the mean sorted pairwise
/// distance. Breakpoints are compared as exact integer fractions.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let n = sa.len() as u64;
    let m = sb.len() as u64;
    let (mut i, mut j) = (0usize, 0usize);
    let mut q_prev = 0.0;
    let mut acc = 0.0;
    while i < sa.len() && j < sb.len() {
        let next_a = (i as u64 + 1) * m;
        let next_b = (j as u64 + 1) * n;
        let q_next = if next_a <= next_b {
            (i + 1) as f64 / n as f64
        } else {
            (j + 1) as f64 / m as f64
        };
        acc += (q_next - q_prev) * (sa[i] - sb[j]).abs();
        if next_a <= next_b {
            i += 1;
        }
        if next_b <= next_a {
            j += 1;
        }
        q_prev = q_next;
    }
    Ok(acc)
}

/// Sample Pearson correlation. Unequal-length inputs are truncated to the
/// last `min(len_a, len_b)` points so the most recent regimes align.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    let k = a.len().min(b.len());
    if k < 2 {
        return Err(SimilarityError::TooShort(k));
    }
    let a = &a[a.len() - k..];
    let b = &b[b.len() - k..];
    let mean_a = a.iter().sum::<f64>() / k as f64;
    let mean_b = b.iter().sum::<f64>() / k as f64;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 {
        return Err(SimilarityError::ConstantInput("first"));
    }
    if var_b == 0.0 {
        return Err(SimilarityError::ConstantInput("second"));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

fn covariance(m: &Matrix) -> Matrix {
    let n = m.rows();
    let d = m.cols();
    let mut means = vec![0.0; d];
    for row in m.iter_rows() {
        for (acc, &v) in means.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut means {
        *v /= n as f64;
    }
    let mut centered = Matrix::zeros(n, d);
    for r in 0..n {
        let src = m.row(r);
        for ((out, &v), &mean) in centered.row_mut(r).iter_mut().zip(src).zip(&means) {
            *out = v - mean;
        }
    }
    let mut cov = centered.transpose_matmul(&centered);
    let denom = (n - 1) as f64;
    for v in cov.as_mut_slice() {
        *v /= denom;
    }
    cov
}

/// CORAL distance: `‖C_s - C_t‖²_F / (4 d²)` over the sample covariances of
/// the windowed feature matrices. Row order does not matter.
pub fn coral_distance(src_windows: &Matrix, tgt_windows: &Matrix) -> Result<f64, SimilarityError> {
    if src_windows.cols() != tgt_windows.cols() {
        return Err(SimilarityError::ColumnMismatch(
            src_windows.cols(),
            tgt_windows.cols(),
        ));
    }
    let min_rows = src_windows.rows().min(tgt_windows.rows());
    if min_rows < 2 {
        return Err(SimilarityError::TooFewRows(min_rows));
    }
    let d = src_windows.cols() as f64;
    let cs = covariance(src_windows);
    let ct = covariance(tgt_windows);
    let frob_sq: f64 = cs
        .as_slice()
        .iter()
        .zip(ct.as_slice())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(frob_sq / (4.0 * d * d))
}

/// Nonnegative weights over the pool, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalizes raw nonnegative weights onto the simplex.
    pub fn from_raw(raw: &[f64]) -> Result<Self, SimilarityError> {
        if raw.is_empty() {
            return Err(SimilarityError::EmptyInput);
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(SimilarityError::DegenerateWeights);
        }
        Ok(Self(raw.iter().map(|&w| w / sum).collect()))
    }

    /// Equal weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self, SimilarityError> {
        Self::from_raw(&vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps measured values to pool weights: dissimilarities via normalized
/// inverse distance `1 / (d + ε)`, PCC via `(r + 1) / 2` before
/// normalization. Anti-correlated sources keep a small positive weight
/// unless every PCC is exactly -1.
pub fn similarity_to_weights(
    values: &[f64],
    kind: SimilarityKind,
) -> Result<WeightVector, SimilarityError> {
    if values.is_empty() {
        return Err(SimilarityError::EmptyInput);
    }
    let raw: Vec<f64> = if kind.is_dissimilarity() {
        for &v in values {
            if v < 0.0 {
                return Err(SimilarityError::NegativeDissimilarity(v));
            }
        }
        values.iter().map(|&v| 1.0 / (v + WEIGHT_EPSILON)).collect()
    } else {
        // Clamp tiny floating-point overshoot outside [-1, 1].
        values.iter().map(|&v| ((v + 1.0) / 2.0).max(0.0)).collect()
    };
    WeightVector::from_raw(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force DTW: enumerate every monotone warping path.
    fn dtw_brute(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let cost = (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                return cost;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            cost + best
        }
        go(a, b, 0, 0)
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // All four path enumerations over the 2x2 grid cost 2.
        assert_eq!(dtw_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(dtw_brute(&[0.0, 0.0], &[1.0, 1.0]), 2.0);
        assert_eq!(dtw_distance(&[0.0], &[5.0]).unwrap(), 5.0);
        assert!(dtw_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn dtw_matches_brute_force_on_warped_pair() {
        let a = [0.0, 1.0, 2.0, 1.0, 0.5];
        let b = [0.0, 0.0, 1.0, 2.0, 0.5, 0.4];
        let dp = dtw_distance(&a, &b).unwrap();
        assert!((dp - dtw_brute(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        // Sorted-mean form: (|0-1| + |0-1| + |4-1|) / 3 = 5/3, which the
        // transport LP oracle in the acceptance suite confirms.
        assert!((wasserstein_1d(&[0.0, 0.0, 4.0], &[1.0, 1.0, 1.0]).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_unequal_sizes() {
        // Mass 1 at 0 vs half at 0, half at 10: move half the mass 10 units.
        assert!((wasserstein_1d(&[0.0], &[0.0, 10.0]).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn pcc_examples() {
        let a = [1.0, 2.0, 4.0, 3.0];
        let affine: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pcc(&a, &affine).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pcc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(SimilarityError::ConstantInput("first"))
        ));
    }

    #[test]
    fn pcc_truncates_to_aligned_tail() {
        // Only the last three points of `a` are used; they correlate
        // perfectly with `b` even though the head of `a` is noise.
        let a = [9.0, -4.0, 1.0, 2.0, 3.0];
        let b = [2.0, 4.0, 6.0];
        assert!((pcc(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coral_zero_cases() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 3.0]]);
        assert_eq!(coral_distance(&m, &m).unwrap(), 0.0);
        let permuted = m.gather_rows(&[2, 0, 1]);
        assert_eq!(coral_distance(&m, &permuted).unwrap(), 0.0);
    }

    #[test]
    fn coral_hand_computed_case() {
        // src columns [0,1,2] and [0,2,4]: C_s = [[1,2],[2,4]].
        // tgt columns [0,1,2] and [0,0,0]: C_t = [[1,0],[0,0]].
        // ‖C_s - C_t‖²_F = 4 + 4 + 16 = 24; 24 / (4·2²) = 1.5.
        let src = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![2.0, 4.0]]);
        let tgt = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert!((coral_distance(&src, &tgt).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn coral_shape_errors() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(3, 3);
        assert!(matches!(
            coral_distance(&a, &b),
            Err(SimilarityError::ColumnMismatch(2, 3))
        ));
        let short = Matrix::zeros(1, 2);
        assert!(matches!(
            coral_distance(&short, &a),
            Err(SimilarityError::TooFewRows(1))
        ));
    }

    #[test]
    fn weights_examples() {
        let w = similarity_to_weights(&[1.0, 1.0, 1.0], SimilarityKind::Dtw).unwrap();
        for &v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
        // Inverse-distance normalization: 1/1 : 1/3 -> 0.75 : 0.25.
        let w = similarity_to_weights(&[1.0, 3.0], SimilarityKind::Wasserstein).unwrap();
        assert!((w.as_slice()[0] - 0.75).abs() < 1e-6);
        assert!((w.as_slice()[1] - 0.25).abs() < 1e-6);
        // PCC shift: (1+1)/2 : (0+1)/2 -> 2/3 : 1/3.
        let w = similarity_to_weights(&[1.0, 0.0], SimilarityKind::Pcc).unwrap();
        assert!((w.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_degenerate_cases() {
        assert!(matches!(
            similarity_to_weights(&[-1.0, -1.0], SimilarityKind::Pcc),
            Err(SimilarityError::DegenerateWeights)
        ));
        assert!(matches!(
            similarity_to_weights(&[-0.5], SimilarityKind::Dtw),
            Err(SimilarityError::NegativeDissimilarity(_))
        ));
    }

    #[test]
    fn self_similarity_identities() {
        let a = [0.5, 1.5, 0.25, 2.0, 1.0];
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        assert!((pcc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn prop_dtw_symmetric_and_bounded(
            a in proptest::collection::vec(-10.0_f64..10.0, 1..8),
            b in proptest::collection::vec(-10.0_f64..10.0, 1..8),
        ) {
            let ab = dtw_distance(&a, &b).unwrap();
            let ba = dtw_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            if a.len() == b.len() {
                // Warping never does worse than lockstep alignment.
                let lockstep: f64 = a.iter().zip(&b).map(|(&x, &y)| (x - y).abs()).sum();
                prop_assert!(ab <= lockstep + 1e-12);
            }
        }

        #[test]
        fn prop_dtw_matches_brute_force(
            a in proptest::collection::vec(-5.0_f64..5.0, 1..6),
            b in proptest::collection::vec(-5.0_f64..5.0, 1..6),
        ) {
            let dp = dtw_distance(&a, &b).unwrap();
            prop_assert!((dp - dtw_brute(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn prop_wasserstein_symmetric(
            a in proptest::collection::vec(-10.0_f64..10.0, 1..8),
            b in proptest::collection::vec(-10.0_f64..10.0, 1..8),
        ) {
            let ab = wasserstein_1d(&a, &b).unwrap();
            let ba = wasserstein_1d(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn prop_weights_simplex_and_equivariant(
            values in proptest::collection::vec(0.0_f64..100.0, 1..8),
            swap in any::<(usize, usize)>(),
        ) {
            let w = similarity_to_weights(&values, SimilarityKind::Dtw).unwrap();
            let sum: f64 = w.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));

            // Permuting inputs permutes outputs.
            let (i, j) = (swap.0 % values.len(), swap.1 % values.len());
            let mut permuted = values.clone();
            permuted.swap(i, j);
            let wp = similarity_to_weights(&permuted, SimilarityKind::Dtw).unwrap();
            let mut expected = w.as_slice().to_vec();
            expected.swap(i, j);
            for (&got, &want) in wp.as_slice().iter().zip(&expected) {
                prop_assert!((got - want).abs() < 1e-12);
            }
        }
    }
}
