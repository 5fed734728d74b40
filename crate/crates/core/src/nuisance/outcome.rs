use nalgebra::{DMatrix, DVector};

use super::Dataset;
use crate::glm::{fit_linear, DesignMatrix, GlmFit};
use crate::{Error, Result};

/// A regression learner for conditional means within one exposure arm.
///
/// The outcome mean `M_e(x)` and the product regression
/// `E(Y Xi_e(I) | x, E = e)` both go through this interface.
pub trait OutcomeLearner: Send + Sync {
    /// Fits `response` on the rows of `covariates` (no intercept column).
    fn fit(&self, covariates: &DMatrix<f64>, response: &[f64]) -> Result<Box<dyn OutcomeFit>>;
    fn name(&self) -> &'static str;
}

pub trait OutcomeFit: Send + Sync {
    fn predict(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>>;

    /// The underlying GLM, when there is one.
    fn glm(&self) -> Option<&GlmFit> {
        None
    }

    /// For learners that are linear smoothers: weights `w` over the training
    /// rows such that the average prediction over `targets` equals
    /// `sum_j w_j r_j` for any training response `r`.
    ///
    /// The A2 influence function needs this to average the product
    /// regression of an arbitrary function of income.
    fn mean_prediction_weights(&self, _targets: &DMatrix<f64>) -> Option<Vec<f64>> {
        None
    }
}

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearLearner;

struct LinearFit {
    fit: GlmFit,
    design: DesignMatrix,
}

impl OutcomeLearner for LinearLearner {
    fn fit(&self, covariates: &DMatrix<f64>, response: &[f64]) -> Result<Box<dyn OutcomeFit>> {
        let design = DesignMatrix::with_intercept(covariates)?;
        let fit = fit_linear(&design, response)?;
        Ok(Box::new(LinearFit { fit, design }))
    }

    fn name(&self) -> &'static str {
        "linear"
    }
}

impl OutcomeFit for LinearFit {
    fn predict(&self, covariates: &DMatrix<f64>) -> Result<Vec<f64>> {
        let x = DesignMatrix::with_intercept(covariates)?;
        Ok(self.fit.predict(&x)?.into_mean().expect("linear prediction").as_slice().to_vec())
    }

    fn glm(&self) -> Option<&GlmFit> {
        Some(&self.fit)
    }

    fn mean_prediction_weights(&self, targets: &DMatrix<f64>) -> Option<Vec<f64>> {
        let xbar = DesignMatrix::with_intercept(targets).ok()?.column_means();
        let x = self.design.matrix();
        let g = x.transpose() * x;
        let v: DVector<f64> = g.cholesky()?.solve(&xbar);
        Some((x * v).as_slice().to_vec())
    }
}

fn arm_rows(data: &Dataset, covariates: &DMatrix<f64>, e: usize) -> Result<Vec<usize>> {
    if covariates.nrows() != data.len() {
        return Err(Error::RowMismatch(covariates.nrows(), data.len()));
    }
    let rows = data.arm(e);
    if rows.is_empty() {
        return Err(Error::InvalidData(format!("exposure level {e} is empty")));
    }
    Ok(rows)
}

/// Fits `M_e(x) = E(Y | X = x, E = e)` on the arm `E = e`.
pub fn fit_outcome_mean(data: &Dataset, covariates: &DMatrix<f64>, e: usize, learner: &dyn OutcomeLearner) -> Result<Box<dyn OutcomeFit>> {
    let rows = arm_rows(data, covariates, e)?;
    let y: Vec<f64> = rows.iter().map(|&i| data.y()[i]).collect();
    learner.fit(&covariates.select_rows(&rows), &y)
}

/// Fits `E(Y Xi_e(I) | X = x, E = e)` on the arm `E = e`, where `xi[i]` is
/// the counterfactual CDF at the income of row `i`.
pub fn fit_product_regression(
    data: &Dataset,
    covariates: &DMatrix<f64>,
    e: usize,
    xi: &[f64],
    learner: &dyn OutcomeLearner,
) -> Result<Box<dyn OutcomeFit>> {
    if xi.len() != data.len() {
        return Err(Error::RowMismatch(xi.len(), data.len()));
    }
    let rows = arm_rows(data, covariates, e)?;
    let r: Vec<f64> = rows.iter().map(|&i| data.y()[i] * xi[i]).collect();
    learner.fit(&covariates.select_rows(&rows), &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64, y_const: Option<f64>) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        let exposure: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| y_const.unwrap_or(2.0 + cov[(i, 0)] - 0.5 * cov[(i, 1)] + rng.gen_range(-0.3..0.3)))
            .collect();
        let income: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        Dataset::new(y, income, exposure, cov, 2).unwrap()
    }

    #[test]
    fn constant_outcome_predicts_constant() {
        let d = data(40, 1, Some(3.5));
        let fit = fit_outcome_mean(&d, d.covariates(), 1, &LinearLearner).unwrap();
        for v in fit.predict(d.covariates()).unwrap() {
            assert!((v - 3.5).abs() < 1e-10);
        }
    }

    #[test]
    fn product_regression_is_linear_in_constant_outcome() {
        let d = data(30, 2, Some(2.0));
        let xi: Vec<f64> = d.income().iter().map(|i| i * i).collect();
        let prod = fit_product_regression(&d, d.covariates(), 0, &xi, &LinearLearner).unwrap();
        let rows = d.arm(0);
        let r: Vec<f64> = rows.iter().map(|&i| xi[i]).collect();
        let base = LinearLearner.fit(&d.covariates().select_rows(&rows), &r).unwrap();
        let a = prod.glm().unwrap().coefficient_vector();
        let b = base.glm().unwrap().coefficient_vector();
        for j in 0..a.len() {
            assert!((a[j] - 2.0 * b[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn smoother_weights_reproduce_mean_prediction() {
        let d = data(50, 3, None);
        let fit = fit_outcome_mean(&d, d.covariates(), 0, &LinearLearner).unwrap();
        let w = fit.mean_prediction_weights(d.covariates()).unwrap();
        let rows = d.arm(0);
        let direct = crate::stats::mean(&fit.predict(d.covariates()).unwrap());
        let via: f64 = rows.iter().zip(&w).map(|(&i, wj)| wj * d.y()[i]).sum();
        assert!((direct - via).abs() < 1e-10);
    }

    #[test]
    fn product_regression_checks_length() {
        let d = data(20, 4, None);
        assert!(fit_product_regression(&d, d.covariates(), 0, &[0.5; 3], &LinearLearner).is_err());
    }
}
