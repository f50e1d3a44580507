//! Ridge regression from features to `(dx, dy, dz, sin dpsi, cos dpsi)`.
//!
//! Inputs and targets are centered so the bias is not penalized; the weights
//! solve `(Xc^T Xc + lambda I) W = Xc^T Yc` by Cholesky factorization.

use nalgebra::{DMatrix, DVector};

use crate::collector::DatasetRecord;
use crate::error::{Error, Result};
use crate::geometry::DeltaPose;

use super::{model_target, PredictionModel};

pub(crate) const OUTPUTS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeModel {
    lambda: f64,
    /// `feature_len x 5`.
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

pub(crate) fn targets(d: &DeltaPose) -> [f64; OUTPUTS] {
    [d.dx(), d.dy(), d.dz(), d.dpsi().sin(), d.dpsi().cos()]
}

impl RidgeModel {
    pub fn fit(features: &[Vec<f64>], labels: &[DeltaPose], lambda: f64) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Fit("empty dataset".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Fit(format!("{} feature rows for {} labels", features.len(), labels.len())));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Fit(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let n = features.len();
        let d = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != d) {
            return Err(Error::FeatureMismatch { expected: d, actual: bad.len() });
        }
        let mut x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
        let mut y = DMatrix::from_fn(n, OUTPUTS, |i, j| targets(&labels[i])[j]);
        let x_mean = x.row_mean();
        let y_mean = y.row_mean();
        for mut row in x.row_iter_mut() {
            row -= &x_mean;
        }
        for mut row in y.row_iter_mut() {
            row -= &y_mean;
        }
        let mut gram = x.tr_mul(&x);
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = x.tr_mul(&y);
        let scale = (0..d).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
        let singular = || Error::Fit("normal equations are singular; use lambda > 0".into());
        let chol = gram.cholesky().ok_or_else(singular)?;
        // Rounding can let a rank-deficient Gram matrix factor with a tiny
        // pivot; treat that as singular too.
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-12 * scale) {
            return Err(singular());
        }
        let weights = chol.solve(&rhs);
        let bias = (y_mean - x_mean * &weights).transpose();
        Ok(RidgeModel { lambda, weights, bias })
    }

    pub(crate) fn from_parts(lambda: f64, weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if weights.ncols() != OUTPUTS || bias.len() != OUTPUTS {
            return Err(Error::Fit("ridge payload has the wrong output width".into()));
        }
        Ok(RidgeModel { lambda, weights, bias })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn feature_len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// Raw five-component output.
    pub fn outputs(&self, f: &[f64]) -> Result<[f64; OUTPUTS]> {
        if f.len() != self.feature_len() {
            return Err(Error::FeatureMismatch { expected: self.feature_len(), actual: f.len() });
        }
        let mut out = [0.0; OUTPUTS];
        for (k, o) in out.iter_mut().enumerate() {
            let col = self.weights.column(k);
            *o = self.bias[k] + f.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(out)
    }

    pub fn predict(&self, f: &[f64]) -> Result<DeltaPose> {
        let o = self.outputs(f)?;
        let psi = if o[3] == 0.0 && o[4] == 0.0 { 0.0 } else { o[3].atan2(o[4]) };
        DeltaPose::new(o[0], o[1], o[2], psi).map_err(|e| Error::Fit(format!("ridge prediction diverged: {e}")))
    }
}

/// Fits ridge regression on dataset records.
pub fn fit_ridge(records: &[DatasetRecord], lambda: f64) -> Result<PredictionModel> {
    let features: Vec<Vec<f64>> = records.iter().map(|r| r.observation.features()).collect();
    let labels: Vec<DeltaPose> = records.iter().map(model_target).collect();
    Ok(PredictionModel::Ridge(RidgeModel::fit(&features, &labels, lambda)?))
}
