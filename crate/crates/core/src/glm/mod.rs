//! Generalized linear models used by every nuisance fit.
//!
//! Three families are supported: Gaussian with identity link (ordinary least
//! squares), binary responses with a logit or probit link fitted by
//! iteratively reweighted least squares, and baseline-category multinomial
//! logistic regression fitted by Newton iterations.
//!
//! Binary fits accept any [`BinaryRows`] source, so the pair grids used by the
//! rank models can be streamed through IRLS without materialising the design.

mod binary;
mod linear;
mod multinomial;

pub use binary::{fit_binary_glm, fit_binary_rows, BinaryRows};
pub use linear::fit_linear;
pub use multinomial::fit_multinomial;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::stats::{logistic, norm_cdf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("design matrix is rank deficient: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },
    #[error("separation detected: coefficient max-norm {max_abs:.3} exceeds {bound}")]
    Separation { max_abs: f64, bound: f64 },
    #[error("class {class} has no observations")]
    EmptyClass { class: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Inverse-link choice for binary responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl Link {
    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => logistic(eta),
            Link::Probit => norm_cdf(eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Linear,
    Binomial(Link),
    Multinomial { classes: usize },
}

/// Convergence and safety settings shared by the iterative fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    /// Relative deviance change below which iterations may stop.
    pub deviance_tol: f64,
    /// Bound on the max-norm of the score divided by the number of rows.
    pub score_tol: f64,
    pub max_iter: usize,
    /// Coefficient max-norm that is treated as separation.
    pub separation_bound: f64,
    pub exec: Exec,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            deviance_tol: 1e-8,
            score_tol: 1e-6,
            max_iter: 100,
            separation_bound: 30.0,
            exec: Exec::default(),
        }
    }
}

/// Dense design matrix with the intercept column already included.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
}

impl DesignMatrix {
    /// Wraps a matrix, checking that entries are finite and `n >= p`.
    ///
    /// Column rank is not checked here; fitters detect rank deficiency.
    pub fn new(values: DMatrix<f64>) -> Result<Self, GlmError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::InvalidInput("design matrix has non-finite entries".into()));
        }
        if values.nrows() < values.ncols() {
            return Err(GlmError::InvalidInput(format!(
                "design has {} rows but {} columns",
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(Self { values })
    }

    /// Prepends an intercept column to raw covariates.
    pub fn with_intercept(covariates: &DMatrix<f64>) -> Result<Self, GlmError> {
        let n = covariates.nrows();
        let q = covariates.ncols();
        let values = DMatrix::from_fn(n, q + 1, |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] });
        Self::new(values)
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Self {
        Self { values: DMatrix::from_element(n, 1, 1.0) }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn row_into(&self, row: usize, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.values[(row, j)];
        }
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { values: self.values.select_rows(rows) }
    }

    /// Column means, used for averaging linear predictions over a sample.
    pub fn column_means(&self) -> DVector<f64> {
        let n = self.nrows() as f64;
        DVector::from_iterator(
            self.ncols(),
            (0..self.ncols()).map(|j| crate::stats::pairwise_sum(self.values.column(j).as_slice()) / n),
        )
    }
}

/// Output of [`GlmFit::predict`].
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Mean response per row (linear and binary families).
    Mean(DVector<f64>),
    /// Class probabilities, one row per observation (multinomial).
    Probabilities(DMatrix<f64>),
}

impl Prediction {
    pub fn into_mean(self) -> Option<DVector<f64>> {
        match self {
            Prediction::Mean(v) => Some(v),
            Prediction::Probabilities(_) => None,
        }
    }

    pub fn into_probabilities(self) -> Option<DMatrix<f64>> {
        match self {
            Prediction::Probabilities(m) => Some(m),
            Prediction::Mean(_) => None,
        }
    }
}

/// A fitted model. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    /// One row for linear and binary fits, `K - 1` rows for multinomial fits
    /// (class 0 is the baseline).
    pub coefficients: DMatrix<f64>,
    /// Set when a binary response was constant; predictions are then exactly
    /// this value regardless of the covariates.
    pub constant: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
}

impl GlmFit {
    pub fn ncols(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Coefficient vector of a single-equation model.
    pub fn coefficient_vector(&self) -> DVector<f64> {
        self.coefficients.row(0).transpose()
    }

    #[inline]
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.ncols());
        row.iter().enumerate().map(|(j, x)| self.coefficients[(0, j)] * x).sum()
    }

    /// Mean response at one design row for linear and binary fits.
    #[inline]
    pub fn mean_at(&self, row: &[f64]) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let eta = self.linear_predictor(row);
        match self.family {
            Family::Linear => eta,
            Family::Binomial(link) => link.inverse(eta),
            Family::Multinomial { .. } => panic!("mean_at called on a multinomial fit"),
        }
    }

    /// Applies the inverse link to every row of `x`.
    pub fn predict(&self, x: &DesignMatrix) -> Result<Prediction, GlmError> {
        if x.ncols() != self.ncols() {
            return Err(GlmError::DimensionMismatch { expected: self.ncols(), found: x.ncols() });
        }
        match self.family {
            Family::Multinomial { classes } => {
                Ok(Prediction::Probabilities(multinomial::probabilities(&self.coefficients, classes, x)))
            }
            _ => {
                let mut row = vec![0.0; x.ncols()];
                let out = DVector::from_iterator(
                    x.nrows(),
                    (0..x.nrows()).map(|i| {
                        x.row_into(i, &mut row);
                        self.mean_at(&row)
                    }),
                );
                Ok(Prediction::Mean(out))
            }
        }
    }
}

/// Checks full column rank of a Gram matrix `X'X`.
///
/// The Gram matrix is scaled to unit diagonal and factorised column by
/// column; the first column whose remaining pivot falls below `1e-10` (one
/// minus the squared multiple correlation with the earlier columns) is
/// reported.
pub(crate) fn check_full_rank(gram: &DMatrix<f64>) -> Result<(), GlmError> {
    let p = gram.nrows();
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let d = gram[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(GlmError::RankDeficient { column: j });
        }
        scale[j] = 1.0 / d.sqrt();
    }
    let mut l = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut d = gram[(j, j)] * scale[j] * scale[j];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-10 {
            return Err(GlmError::RankDeficient { column: j });
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..p {
            let mut s = gram[(i, j)] * scale[i] * scale[j];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(())
}

pub(crate) fn gram(x: &DesignMatrix) -> DMatrix<f64> {
    x.matrix().transpose() * x.matrix()
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_check_names_dependent_column() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0, 1.0, 3.0, 6.0, 1.0, 4.0, 8.0]);
        let d = DesignMatrix::new(x).unwrap();
        assert_eq!(check_full_rank(&gram(&d)), Err(GlmError::RankDeficient { column: 2 }));
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let d = DesignMatrix::new(x).unwrap();
        assert_eq!(check_full_rank(&gram(&d)), Err(GlmError::RankDeficient { column: 1 }));
    }

    #[test]
    fn design_rejects_non_finite_and_wide() {
        assert!(DesignMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).is_err());
        assert!(DesignMatrix::new(DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN])).is_err());
    }

    #[test]
    fn predict_checks_dimensions() {
        let fit = GlmFit {
            family: Family::Linear,
            coefficients: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            constant: None,
            converged: true,
            iterations: 0,
            deviance: 0.0,
        };
        let x = DesignMatrix::intercept_only(3);
        assert_eq!(fit.predict(&x), Err(GlmError::DimensionMismatch { expected: 2, found: 1 }));
    }

    #[test]
    fn predict_examples() {
        // linear: a row that is zero except for the intercept returns the intercept
        let lin = GlmFit {
            family: Family::Linear,
            coefficients: DMatrix::from_row_slice(1, 3, &[2.5, -1.0, 4.0]),
            constant: None,
            converged: true,
            iterations: 0,
            deviance: 0.0,
        };
        let x = DesignMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0])).unwrap();
        let m = lin.predict(&x).unwrap().into_mean().unwrap();
        assert_eq!(m[0], 2.5);

        let logit = GlmFit { family: Family::Binomial(Link::Logit), ..lin.clone() };
        let zero = DesignMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 2.5, 0.0, 1.0, 0.0, -0.625, 1.0, 0.5, -0.5])).unwrap();
        let p = logit.predict(&zero).unwrap().into_mean().unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let multi = GlmFit {
            family: Family::Multinomial { classes: 3 },
            coefficients: DMatrix::zeros(2, 3),
            ..lin
        };
        let probs = multi.predict(&x).unwrap().into_probabilities().unwrap();
        for v in probs.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
