//! Base regressors for the potential-outcome and endpoint models.
//!
//! Conformal validity does not depend on which learner is used; a better
//! learner only shortens the intervals.

mod ensemble;
mod forest;
mod ols;

pub use ensemble::{fit_ensemble, simplex_weights, EnsembleModel, EnsembleParams};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use ols::{fit_ols, OlsModel};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    pub fn new(n_cols: usize) -> Self {
        Self { data: Vec::new(), n_rows: 0, n_cols }
    }

    pub fn with_capacity(n_cols: usize, rows: usize) -> Self {
        Self { data: Vec::with_capacity(n_cols * rows), n_rows: 0, n_cols }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::with_capacity(n_cols, rows.len());
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                context: "feature row".into(),
                expected: self.n_cols,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::with_capacity(self.n_cols, indices.len());
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out.n_rows = indices.len();
        out
    }
}

/// A learner mapping covariates to outcomes.
///
/// `fit` must be deterministic given its inputs and `seed`.
pub trait Regressor: Send + Sync {
    fn fit(&self, features: &Matrix, targets: &[f64], seed: u64) -> Result<FittedModel>;
}

/// A fitted regressor. Prediction is deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Constant(f64),
    Ols(OlsModel),
    Forest(ForestModel),
    Ensemble(EnsembleModel),
}

impl FittedModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Constant(c) => *c,
            FittedModel::Ols(m) => m.predict(row),
            FittedModel::Forest(m) => m.predict(row),
            FittedModel::Ensemble(m) => m.predict(row),
        }
    }

    pub fn predict_all(&self, features: &Matrix) -> Vec<f64> {
        features.rows().map(|r| self.predict(r)).collect()
    }
}

/// Serializable description of a learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorSpec {
    /// Ignores the data and predicts the given constant.
    Constant(f64),
    Ols,
    Forest(ForestParams),
    Ensemble(EnsembleParams),
}

impl RegressorSpec {
    /// Least squares stacked with a random forest.
    pub fn default_ensemble() -> Self {
        RegressorSpec::Ensemble(EnsembleParams::default())
    }
}

impl Default for RegressorSpec {
    fn default() -> Self {
        Self::default_ensemble()
    }
}

impl Regressor for RegressorSpec {
    fn fit(&self, features: &Matrix, targets: &[f64], seed: u64) -> Result<FittedModel> {
        if features.n_rows() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "regression targets".into(),
                expected: features.n_rows(),
                found: targets.len(),
            });
        }
        match self {
            RegressorSpec::Constant(c) => {
                if targets.is_empty() {
                    return Err(Error::EmptyTrainingSet);
                }
                Ok(FittedModel::Constant(*c))
            }
            RegressorSpec::Ols => fit_ols(features, targets).map(FittedModel::Ols),
            RegressorSpec::Forest(params) => fit_forest(features, targets, params, seed).map(FittedModel::Forest),
            RegressorSpec::Ensemble(params) => {
                let members: Vec<&dyn Regressor> = params.members.iter().map(|m| m as &dyn Regressor).collect();
                fit_ensemble(features, targets, &members, params.folds, seed).map(FittedModel::Ensemble)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rows_and_selection() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.row(0), &[5.0, 6.0]);
        assert_eq!(s.get(1, 1), 2.0);
        let mut bad = Matrix::new(2);
        assert!(bad.push_row(&[1.0]).is_err());
    }

    #[test]
    fn constant_regressor_ignores_data() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let m = RegressorSpec::Constant(0.0).fit(&x, &[5.0, 7.0], 1).unwrap();
        assert_eq!(m.predict(&[100.0]), 0.0);
    }
}
