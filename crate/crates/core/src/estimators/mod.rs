//! Point estimates, influence functions and standard errors.
//!
//! All estimators except the naive index work on a [`NuisanceFits`] and
//! share one fitted influence function per level ([`EifVector`]). Standard
//! errors are `sd(phi) / sqrt(n)` with the `n - 1` sample variance; contrasts
//! use the per-observation difference of the two influence functions.

mod eif;
mod naive;

pub use eif::{eif, EifVector};
pub use naive::{concentration_index, naive_bootstrap_se, naive_contrast, naive_index, NaiveOptions};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::nuisance::NuisanceFits;
use crate::stats::{normal_critical_value, sample_sd};
use crate::{Error, Result};

/// Which identifying functional of the rank term is used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// `A1 = E[M_e(X) E(Xi_e(I) | X, E = e)]`.
    #[default]
    A1,
    /// `A2 = E[E(Y Xi_e(I) | X, E = e)]`, through the product regression.
    A2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Naive,
    PlugIn,
    OneStep,
    EstEq,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Naive, Estimator::PlugIn, Estimator::OneStep, Estimator::EstEq];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Naive => "naive",
            Estimator::PlugIn => "plug-in",
            Estimator::OneStep => "one-step",
            Estimator::EstEq => "est-eq",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.label() == s.trim())
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `G(e)` or `theta(e) = G(e) - G(baseline)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimand {
    Index { level: usize },
    Theta { level: usize, baseline: usize },
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Estimand::Index { level } => write!(f, "G({level})"),
            Estimand::Theta { level, .. } => write!(f, "theta({level})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexEstimate {
    pub estimand: Estimand,
    pub estimator: Estimator,
    /// Absent for the naive index.
    pub variant: Option<Variant>,
    pub value: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub conf_level: f64,
    /// The plug-in reports the influence-function se, which is conservative.
    pub conservative_se: bool,
    /// Per-observation influence function behind `se`, kept for contrasts.
    #[serde(skip)]
    pub influence: Option<Arc<[f64]>>,
}

impl IndexEstimate {
    fn with_influence(
        estimand: Estimand,
        estimator: Estimator,
        variant: Option<Variant>,
        value: f64,
        influence: Arc<[f64]>,
        conf_level: f64,
    ) -> Self {
        let se = influence_se(&influence);
        let z = normal_critical_value(conf_level);
        Self {
            estimand,
            estimator,
            variant,
            value,
            se: Some(se),
            ci: Some((value - z * se, value + z * se)),
            conf_level,
            conservative_se: estimator == Estimator::PlugIn,
            influence: Some(influence),
        }
    }

    /// Whether the confidence interval contains `truth`.
    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

/// `sd(phi) / sqrt(n)` with the `n - 1` variance; zero for a single row.
pub fn influence_se(phi: &[f64]) -> f64 {
    if phi.len() < 2 {
        return 0.0;
    }
    sample_sd(phi) / (phi.len() as f64).sqrt()
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Builds the estimate of `estimator` from a fitted influence function.
pub fn from_eif(eif: &EifVector, estimator: Estimator, conf_level: f64) -> Result<IndexEstimate> {
    check_level(conf_level)?;
    let value = match estimator {
        Estimator::PlugIn => eif.plug_in(),
        Estimator::OneStep => eif.one_step(),
        Estimator::EstEq => eif.est_eq()?,
        Estimator::Naive => return Err(Error::InvalidConfig("the naive index has no influence-function form".into())),
    };
    Ok(IndexEstimate::with_influence(
        Estimand::Index { level: eif.level },
        estimator,
        Some(eif.variant),
        value,
        eif.values.clone(),
        conf_level,
    ))
}

/// `Psi_j` with the plug-in nuisance fits; se from the influence function.
pub fn plug_in(fits: &NuisanceFits, e: usize, variant: Variant, conf_level: f64) -> Result<IndexEstimate> {
    from_eif(&eif(fits, e, variant)?, Estimator::PlugIn, conf_level)
}

/// Plug-in plus the mean of the fitted influence function.
pub fn one_step(fits: &NuisanceFits, e: usize, variant: Variant, conf_level: f64) -> Result<IndexEstimate> {
    from_eif(&eif(fits, e, variant)?, Estimator::OneStep, conf_level)
}

/// Root of the averaged influence function, solved as a ratio.
pub fn est_eq(fits: &NuisanceFits, e: usize, variant: Variant, conf_level: f64) -> Result<IndexEstimate> {
    from_eif(&eif(fits, e, variant)?, Estimator::EstEq, conf_level)
}

/// `theta(e) = G(e) - G(0)` with the se of the influence-function difference.
pub fn contrast(est: &IndexEstimate, base: &IndexEstimate) -> Result<IndexEstimate> {
    let (Estimand::Index { level }, Estimand::Index { level: baseline }) = (est.estimand, base.estimand) else {
        return Err(Error::InvalidConfig("contrasts are formed from two level indexes".into()));
    };
    let (Some(a), Some(b)) = (&est.influence, &base.influence) else {
        return Err(Error::InvalidConfig("both estimates need their influence functions".into()));
    };
    if a.len() != b.len() {
        return Err(Error::RowMismatch(a.len(), b.len()));
    }
    let diff: Arc<[f64]> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mut out = IndexEstimate::with_influence(
        Estimand::Theta { level, baseline },
        est.estimator,
        est.variant,
        est.value - base.value,
        diff,
        est.conf_level,
    );
    out.conservative_se = est.conservative_se || base.conservative_se;
    Ok(out)
}

/// Every requested estimator for every level, plus contrasts against
/// `baseline`. Influence functions are fitted once per level.
pub fn estimate_all(
    fits: &NuisanceFits,
    estimators: &[Estimator],
    variant: Variant,
    baseline: usize,
    conf_level: f64,
    naive: &NaiveOptions,
) -> Result<Vec<IndexEstimate>> {
    check_level(conf_level)?;
    let k = fits.data.levels();
    if baseline >= k {
        return Err(Error::InvalidConfig(format!("baseline {baseline} outside 0..{k}")));
    }
    let needs_eif = estimators.iter().any(|&e| e != Estimator::Naive);
    let eifs: Vec<EifVector> = if needs_eif { (0..k).map(|e| eif(fits, e, variant)).collect::<Result<_>>()? } else { Vec::new() };
    let mut out = Vec::new();
    for &estimator in estimators {
        let per_level: Vec<IndexEstimate> = if estimator == Estimator::Naive {
            (0..k).map(|e| naive_index(&fits.data, Some(e), conf_level, naive)).collect::<Result<_>>()?
        } else {
            eifs.iter().map(|v| from_eif(v, estimator, conf_level)).collect::<Result<_>>()?
        };
        let contrasts = (0..k)
            .filter(|&e| e != baseline)
            .map(|e| {
                if estimator == Estimator::Naive {
                    naive_contrast(&fits.data, e, baseline, conf_level, naive)
                } else {
                    contrast(&per_level[e], &per_level[baseline])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(per_level);
        out.extend(contrasts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(level: usize, value: f64, phi: Vec<f64>) -> IndexEstimate {
        IndexEstimate::with_influence(Estimand::Index { level }, Estimator::OneStep, Some(Variant::A1), value, phi.into(), 0.95)
    }

    #[test]
    fn self_contrast_is_zero() {
        let a = est(0, 0.2, vec![0.1, -0.3, 0.2, 0.0]);
        let t = contrast(&a, &a).unwrap();
        assert_eq!(t.value, 0.0);
        assert_eq!(t.se, Some(0.0));
    }

    #[test]
    fn contrast_se_obeys_triangle_inequality() {
        let a = est(1, 0.3, vec![0.5, -0.2, 0.1, -0.4, 0.0]);
        let b = est(0, 0.1, vec![0.2, 0.3, -0.1, -0.2, -0.2]);
        let t = contrast(&a, &b).unwrap();
        assert!(t.se.unwrap() <= a.se.unwrap() + b.se.unwrap());
        assert_eq!(t.estimand, Estimand::Theta { level: 1, baseline: 0 });
    }

    #[test]
    fn contrast_checks_rows() {
        let a = est(1, 0.3, vec![0.5, -0.2]);
        let b = est(0, 0.1, vec![0.2, 0.3, 0.1]);
        assert!(matches!(contrast(&a, &b), Err(Error::RowMismatch(2, 3))));
    }

    #[test]
    fn se_squared_times_n_is_sample_variance() {
        let phi = [0.3, -1.2, 0.7, 0.05, 0.15];
        let se = influence_se(&phi);
        let v = crate::stats::sample_variance(&phi);
        assert!((se * se * phi.len() as f64 - v).abs() < 1e-15);
    }

    #[test]
    fn ci_contains_value() {
        let a = est(0, 0.25, vec![1.0, -1.0, 0.5]);
        let (lo, hi) = a.ci.unwrap();
        assert!(lo <= 0.25 && 0.25 <= hi);
        assert!(a.covers(0.25).unwrap());
    }

    #[test]
    fn estimator_labels_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(Estimator::parse(e.label()), Some(e));
        }
        assert_eq!(Estimator::parse("bogus"), None);
    }
}
