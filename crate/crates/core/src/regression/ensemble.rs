use super::{FittedModel, ForestParams, Matrix, Regressor, RegressorSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Stacking configuration: candidate learners and the number of
/// cross-validation folds used to learn their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    pub members: Vec<RegressorSpec>,
    pub folds: usize,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self { members: vec![RegressorSpec::Ols, RegressorSpec::Forest(ForestParams::default())], folds: 5 }
    }
}

/// Convex combination of fitted learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<FittedModel>,
    /// On the simplex, one per member.
    pub weights: Vec<f64>,
}

impl EnsembleModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.members.iter().zip(&self.weights).map(|(m, w)| w * m.predict(row)).sum()
    }
}

/// Stacked ensemble in the spirit of the super learner.
///
/// Out-of-fold predictions are collected for every member, simplex weights
/// minimizing the out-of-fold squared error are chosen (see
/// [`simplex_weights`]) and each member is refit on all data. A member that
/// cannot be fit on some fold, e.g. a forest facing fewer rows than twice its
/// leaf size, gets weight zero and is dropped. With fewer rows than folds,
/// leave-one-out folds are used.
pub fn fit_ensemble(
    features: &Matrix,
    targets: &[f64],
    members: &[&dyn Regressor],
    folds: usize,
    seed: u64,
) -> Result<EnsembleModel> {
    let n = features.n_rows();
    if members.is_empty() {
        return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
    }
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if members.len() == 1 {
        let fitted = members[0].fit(features, targets, derive_seed(seed, 0))?;
        return Ok(EnsembleModel { members: vec![fitted], weights: vec![1.0] });
    }
    if folds < 2 {
        return Err(Error::InvalidConfig("ensemble needs at least two folds".into()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let k = folds.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }

    let mut usable = Vec::new();
    let mut oof_columns = Vec::new();
    let mut last_err = None;
    'member: for (m, member) in members.iter().enumerate() {
        let mut oof = vec![0.0; n];
        for f in 0..k {
            let (train, held): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] != f);
            let x_train = features.select_rows(&train);
            let y_train: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let fold_seed = derive_seed(derive_seed(seed, m as u64 + 1), f as u64);
            match member.fit(&x_train, &y_train, fold_seed) {
                Ok(model) => {
                    for &i in &held {
                        oof[i] = model.predict(features.row(i));
                    }
                }
                Err(e) => {
                    log::debug!("ensemble member {m} dropped: {e}");
                    last_err = Some(e);
                    continue 'member;
                }
            }
        }
        match member.fit(features, targets, derive_seed(seed, m as u64 + 1)) {
            Ok(model) => {
                usable.push(model);
                oof_columns.push(oof);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if usable.is_empty() {
        return Err(last_err.unwrap_or(Error::EmptyTrainingSet));
    }
    let weights = simplex_weights(&oof_columns, targets);
    Ok(EnsembleModel { members: usable, weights })
}

fn stacked_loss(preds: &[Vec<f64>], weights: &[f64], targets: &[f64]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let p: f64 = preds.iter().zip(weights).map(|(c, w)| w * c[i]).sum();
            (p - y).powi(2)
        })
        .sum()
}

/// Simplex weights minimizing `‖Σ wⱼ predⱼ − y‖²`.
///
/// Two members: exhaustive grid over `w₁ ∈ {0, 0.01, …, 1}`, ties resolved
/// toward the first member. More members: exact solution by enumerating the
/// support of `w`.
pub fn simplex_weights(predictions: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
    match predictions.len() {
        0 => Vec::new(),
        1 => vec![1.0],
        2 => {
            let mut best = (f64::INFINITY, 0.0);
            for step in (0..=100).rev() {
                let w = step as f64 / 100.0;
                let loss = stacked_loss(predictions, &[w, 1.0 - w], targets);
                if loss < best.0 {
                    best = (loss, w);
                }
            }
            vec![best.1, 1.0 - best.1]
        }
        k => {
            // Exact minimizer: solve the equality-constrained problem on every
            // support and keep the best feasible solution.
            let gram = DMatrix::from_fn(k, k, |a, b| dot(&predictions[a], &predictions[b]));
            let cross = DVector::from_fn(k, |a, _| dot(&predictions[a], targets));
            let mut best = (f64::INFINITY, vec![1.0 / k as f64; k]);
            for mask in 1u32..(1 << k) {
                let support: Vec<usize> = (0..k).filter(|a| mask & (1 << a) != 0).collect();
                let Some(w) = constrained_solution(&gram, &cross, &support, k) else {
                    continue;
                };
                let loss = stacked_loss(predictions, &w, targets);
                if best.0.is_infinite() || loss < best.0 - 1e-12 * best.0.max(1.0) {
                    best = (loss, w);
                }
            }
            best.1
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `wᵀGw − 2cᵀw` subject to `Σw = 1` on `support`; `None` if the
/// solution leaves the simplex.
fn constrained_solution(gram: &DMatrix<f64>, cross: &DVector<f64>, support: &[usize], k: usize) -> Option<Vec<f64>> {
    let s = support.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (i, &a) in support.iter().enumerate() {
        for (j, &b) in support.iter().enumerate() {
            kkt[(i, j)] = 2.0 * gram[(a, b)];
        }
        kkt[(i, s)] = 1.0;
        kkt[(s, i)] = 1.0;
        rhs[i] = 2.0 * cross[a];
    }
    rhs[s] = 1.0;
    let solution = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let mut w = vec![0.0; k];
    for (i, &a) in support.iter().enumerate() {
        if solution[i].is_nan() || solution[i] < -1e-9 {
            return None;
        }
        w[a] = solution[i].max(0.0);
    }
    let total: f64 = w.iter().sum();
    (total > 0.0).then(|| w.iter().map(|v| v / total).collect())
}
