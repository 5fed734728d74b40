use nalgebra::DMatrix;

use super::Dataset;
use crate::glm::{fit_multinomial, DesignMatrix, GlmFit, IrlsOptions};
use crate::{Error, Result};

/// Multinomial propensity model and the trimming decision it implies.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub fit: GlmFit,
    /// `pi_e(x_i)` for every input row (n x K), from the untrimmed fit.
    pub probabilities: DMatrix<f64>,
    /// Rows whose smallest propensity is at least the threshold, ascending.
    pub kept: Vec<usize>,
    pub threshold: f64,
}

/// Rows `i` with `min_e probabilities[i, e] >= threshold`.
pub fn trim_rows(probabilities: &DMatrix<f64>, threshold: f64) -> Vec<usize> {
    (0..probabilities.nrows())
        .filter(|&i| probabilities.row(i).iter().all(|&p| p >= threshold))
        .collect()
}

/// Fits `pi_e(x)` on all rows and flags rows with too small a fitted
/// propensity for any level. The rule is applied once, on the untrimmed fit.
pub fn fit_propensity(data: &Dataset, covariates: &DMatrix<f64>, threshold: f64, opts: &IrlsOptions) -> Result<PropensityFit> {
    if !(0.0..0.5).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("trim threshold {threshold} outside [0, 0.5)")));
    }
    let x = DesignMatrix::with_intercept(covariates)?;
    let fit = fit_multinomial(&x, data.exposure(), data.levels(), opts)?;
    let probabilities = fit.predict(&x)?.into_probabilities().expect("multinomial prediction");
    let kept = trim_rows(&probabilities, threshold);
    if kept.len() < data.len() {
        log::info!("propensity trimming dropped {} of {} rows (threshold {threshold})", data.len() - kept.len(), data.len());
    }
    Ok(PropensityFit { fit, probabilities, kept, threshold })
}
