use super::Matrix;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Linear model `y ≈ β₀ + Σ βⱼ xⱼ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
}

impl OlsModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + self.slopes().iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }
}

/// Least squares with an unpenalized intercept.
///
/// Slopes are the minimum-norm solution of the centered problem, computed
/// through an SVD pseudo-inverse, so collinear or wide designs still fit.
pub fn fit_ols(features: &Matrix, targets: &[f64]) -> Result<OlsModel> {
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let p = features.n_cols();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let mut x_means = vec![0.0; p];
    for row in features.rows() {
        for (m, v) in x_means.iter_mut().zip(row) {
            *m += v;
        }
    }
    x_means.iter_mut().for_each(|m| *m /= n as f64);
    if p == 0 {
        return Ok(OlsModel { coefficients: vec![y_mean] });
    }

    let centered = DMatrix::from_fn(n, p, |i, j| features.get(i, j) - x_means[j]);
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - y_mean));
    let svd = centered.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let tol = max_sv * (n.max(p) as f64) * f64::EPSILON;
    let slopes = if max_sv == 0.0 {
        DVector::zeros(p)
    } else {
        svd.solve(&y, tol).map_err(|e| Error::InvalidConfig(e.to_string()))?
    };

    let intercept = y_mean - slopes.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let mut coefficients = Vec::with_capacity(p + 1);
    coefficients.push(intercept);
    coefficients.extend(slopes.iter());
    Ok(OlsModel { coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-10
    }

    #[test]
    fn line_through_two_points() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let m = fit_ols(&x, &[1.0, 3.0]).unwrap();
        assert!(close(m.intercept(), 1.0) && close(m.slopes()[0], 2.0));
    }

    #[test]
    fn constant_targets() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![5.0, 3.0], vec![1.0, 1.0]]).unwrap();
        let m = fit_ols(&x, &[4.0; 4]).unwrap();
        assert!(close(m.intercept(), 4.0));
        assert!(m.slopes().iter().all(|b| close(*b, 0.0)));
    }

    #[test]
    fn exact_plane() {
        // y = 2 x1 - x2 on four points in general position.
        let rows = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 3.0]];
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1]).collect();
        let m = fit_ols(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        for (got, want) in m.coefficients.iter().zip([0.0, 2.0, -1.0]) {
            assert!(close(*got, want), "{:?}", m.coefficients);
        }
    }

    #[test]
    fn duplicated_column_splits_weight() {
        // Identical columns: the minimum-norm solution shares the slope.
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let m = fit_ols(&x, &[0.0, 2.0, 4.0]).unwrap();
        assert!(close(m.slopes()[0], 1.0) && close(m.slopes()[1], 1.0));
        assert!(close(m.predict(&[3.0, 3.0]), 6.0));
    }

    #[test]
    fn more_columns_than_rows() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let m = fit_ols(&x, &[1.0, 2.0]).unwrap();
        assert!(close(m.predict(x.row(0)), 1.0));
        assert!(close(m.predict(x.row(1)), 2.0));
    }

    #[test]
    fn empty_training_set() {
        assert_eq!(fit_ols(&Matrix::new(2), &[]), Err(Error::EmptyTrainingSet));
    }
}
