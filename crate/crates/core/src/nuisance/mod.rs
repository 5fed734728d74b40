//! Nuisance functions: propensities, outcome means, pairwise rank models, the
//! counterfactual income CDF and the conditional rank expectations derived
//! from them.
//!
//! Everything here is fitted once per dataset by [`fit_nuisance`] and is
//! immutable afterwards. Pair grids (`n_e x n_e` for training and `n x n` for
//! prediction) are never materialised; rows are generated on demand and
//! evaluated in blocks of [`NuisanceOptions::block_rows`].

mod outcome;
mod propensity;
mod rank;

pub use outcome::{fit_outcome_mean, fit_product_regression, LinearLearner, OutcomeFit, OutcomeLearner};
pub use propensity::{fit_propensity, trim_rows, PropensityFit};
pub use rank::{
    cdf_reference_sums, cond_rank_expectation, counterfactual_cdf, fit_cdf_model, fit_pairwise_rank_model,
    weighted_cdf_means, weighted_pair_means, CdfModel, RankPairModel, RankSurfaces,
};

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::glm::{IrlsOptions, Link};
use crate::{Error, Result};

/// Observed data `(Y, I, E, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    income: Vec<f64>,
    exposure: Vec<usize>,
    /// Raw covariates, one row per observation, without an intercept column.
    covariates: DMatrix<f64>,
    levels: usize,
}

impl Dataset {
    /// Validates lengths, finiteness and that every exposure level in
    /// `0..levels` is observed.
    pub fn new(y: Vec<f64>, income: Vec<f64>, exposure: Vec<usize>, covariates: DMatrix<f64>, levels: usize) -> Result<Self> {
        let n = y.len();
        if income.len() != n || exposure.len() != n || covariates.nrows() != n {
            return Err(Error::InvalidData(format!(
                "column lengths differ: y {n}, income {}, exposure {}, covariates {}",
                income.len(),
                exposure.len(),
                covariates.nrows()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if y.iter().chain(&income).chain(covariates.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in outcome, income or covariates".into()));
        }
        if levels == 0 {
            return Err(Error::InvalidData("at least one exposure level is required".into()));
        }
        let mut counts = vec![0usize; levels];
        for &e in &exposure {
            if e >= levels {
                return Err(Error::InvalidData(format!("exposure {e} outside 0..{levels}")));
            }
            counts[e] += 1;
        }
        if let Some(e) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidData(format!("exposure level {e} has no observations")));
        }
        Ok(Self { y, income, exposure, covariates, levels })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn income(&self) -> &[f64] {
        &self.income
    }

    pub fn exposure(&self) -> &[usize] {
        &self.exposure
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Row indices with exposure `level`, ascending.
    pub fn arm(&self, level: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.exposure[i] == level).collect()
    }

    /// Keeps the listed rows. Fails if a level becomes empty.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.income[i]).collect(),
            rows.iter().map(|&i| self.exposure[i]).collect(),
            self.covariates.select_rows(rows),
            self.levels,
        )
    }
}

/// Covariates handed to each nuisance model. They default to the dataset's
/// covariates; misspecification studies swap in transformed versions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCovariates {
    pub propensity: DMatrix<f64>,
    pub outcome: DMatrix<f64>,
    pub rank: DMatrix<f64>,
}

impl ModelCovariates {
    pub fn shared(data: &Dataset) -> Self {
        Self {
            propensity: data.covariates().clone(),
            outcome: data.covariates().clone(),
            rank: data.covariates().clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            propensity: self.propensity.select_rows(rows),
            outcome: self.outcome.select_rows(rows),
            rank: self.rank.select_rows(rows),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        for (name, m) in [("propensity", &self.propensity), ("outcome", &self.outcome), ("rank", &self.rank)] {
            if m.nrows() != n {
                return Err(Error::RowMismatch(m.nrows(), n));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite {name} covariate")));
            }
        }
        Ok(())
    }
}

/// How the counterfactual income CDF `Xi_e(i)` is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CdfStrategy {
    /// One probit distribution regression on the arm's pair grid:
    /// `1(i_k <= i_j)` on `(1, i_j, x_k)`.
    #[default]
    PairwiseDerived,
    /// One binary regression of `1(I <= q)` on `X` per grid income `q`
    /// (`grid` arm quantiles), linearly interpolated in between.
    PerIncome { grid: usize, link: Link },
}

impl CdfStrategy {
    pub fn per_income_default() -> Self {
        CdfStrategy::PerIncome { grid: 200, link: Link::Logit }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    /// Rows whose smallest fitted propensity is below this are dropped.
    pub trim_threshold: f64,
    pub cdf_strategy: CdfStrategy,
    pub irls: IrlsOptions,
    /// Rows per block when evaluating `n x n` surfaces.
    pub block_rows: usize,
    /// Also fit the product regression needed by the A2 influence function.
    pub product_regression: bool,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            trim_threshold: 0.01,
            cdf_strategy: CdfStrategy::default(),
            irls: IrlsOptions::default(),
            block_rows: 1024,
            product_regression: false,
        }
    }
}

impl NuisanceOptions {
    pub fn exec(&self) -> Exec {
        self.irls.exec
    }
}

/// Nuisance fits for one exposure level, evaluated on the kept rows.
pub struct LevelFits {
    pub level: usize,
    /// `pi_e(x_k)` for every kept row.
    pub propensity: Vec<f64>,
    pub outcome: Box<dyn OutcomeFit>,
    /// `M_e(x_k)` for every kept row.
    pub outcome_mean: Vec<f64>,
    pub rank_pair: RankPairModel,
    pub cdf: CdfModel,
    pub surfaces: RankSurfaces,
    /// `E(Y Xi_e(I) | x_k, E = e)` for every kept row, when requested.
    pub product: Option<ProductFit>,
}

impl std::fmt::Debug for LevelFits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LevelFits").field("level", &self.level).field("surfaces", &self.surfaces).finish_non_exhaustive()
    }
}

pub struct ProductFit {
    pub fit: Box<dyn OutcomeFit>,
    pub predictions: Vec<f64>,
}

/// All nuisance fits for a dataset. `data` and `covariates` hold the kept
/// rows only; `kept` maps them back to the input rows.
pub struct NuisanceFits {
    pub data: Dataset,
    pub covariates: ModelCovariates,
    pub propensity: PropensityFit,
    pub kept: Vec<usize>,
    pub levels: Vec<LevelFits>,
    pub options: NuisanceOptions,
}

impl NuisanceFits {
    pub fn level(&self, e: usize) -> &LevelFits {
        &self.levels[e]
    }

    pub fn dropped(&self) -> usize {
        self.propensity.probabilities.nrows() - self.kept.len()
    }
}

/// Fits every nuisance function for every exposure level.
///
/// The propensity model is fitted on all rows; rows failing the trimming
/// rule are dropped and every other model is fitted on the kept rows.
pub fn fit_nuisance(
    data: &Dataset,
    covariates: &ModelCovariates,
    learner: Arc<dyn OutcomeLearner>,
    options: &NuisanceOptions,
) -> Result<NuisanceFits> {
    covariates.check(data.len())?;
    let propensity = fit_propensity(data, &covariates.propensity, options.trim_threshold, &options.irls)?;
    let kept = propensity.kept.clone();
    if kept.is_empty() {
        return Err(Error::InvalidData("trimming removed every observation".into()));
    }
    let kdata = data.select_rows(&kept)?;
    let kcov = covariates.select_rows(&kept);

    let mut levels = Vec::with_capacity(data.levels());
    for e in 0..data.levels() {
        let pi: Vec<f64> = kept.iter().map(|&i| propensity.probabilities[(i, e)]).collect();
        let outcome = fit_outcome_mean(&kdata, &kcov.outcome, e, learner.as_ref())?;
        let outcome_mean = outcome.predict(&kcov.outcome)?;
        let rank_pair = fit_pairwise_rank_model(&kdata, &kcov.rank, e, &options.irls)?;
        let cdf = fit_cdf_model(&kdata, &kcov.rank, e, options.cdf_strategy, &options.irls)?;
        let surfaces = RankSurfaces::evaluate(e, &kdata, &rank_pair, &cdf, options.block_rows, options.exec());
        let product = if options.product_regression {
            let fit = fit_product_regression(&kdata, &kcov.outcome, e, &surfaces.xi, learner.as_ref())?;
            let predictions = fit.predict(&kcov.outcome)?;
            Some(ProductFit { fit, predictions })
        } else {
            None
        };
        levels.push(LevelFits { level: e, propensity: pi, outcome, outcome_mean, rank_pair, cdf, surfaces, product });
    }
    Ok(NuisanceFits { data: kdata, covariates: kcov, propensity, kept, levels, options: *options })
}
