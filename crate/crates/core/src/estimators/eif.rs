use std::sync::Arc;

use super::Variant;
use crate::nuisance::{cdf_reference_sums, weighted_cdf_means, weighted_pair_means, NuisanceFits};
use crate::stats::{argsort, mean};
use crate::{Error, Result};

/// Fitted efficient influence function of `G(e)` on the kept rows.
///
/// `phi_a` and `phi_b` are the centred influence functions of the numerator
/// `A` and of `B = E Y(e)`; `values` combines them by the delta method.
#[derive(Debug, Clone)]
pub struct EifVector {
    pub level: usize,
    pub variant: Variant,
    pub values: Arc<[f64]>,
    pub phi_a: Vec<f64>,
    pub phi_b: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl EifVector {
    /// Assembles `phi = 2 phi_A / B - 2 phi_B A / B^2`.
    pub fn new(level: usize, variant: Variant, phi_a: Vec<f64>, phi_b: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::DegenerateOutcome(b));
        }
        if phi_a.len() != phi_b.len() {
            return Err(Error::RowMismatch(phi_a.len(), phi_b.len()));
        }
        let values: Arc<[f64]> = phi_a.iter().zip(&phi_b).map(|(pa, pb)| 2.0 * pa / b - 2.0 * pb * a / (b * b)).collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericDegeneracy(format!("influence function is not finite at row {i}")));
        }
        Ok(Self { level, variant, values, phi_a, phi_b, a, b })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn plug_in(&self) -> f64 {
        2.0 * self.a / self.b - 1.0
    }

    pub fn one_step(&self) -> f64 {
        self.plug_in() + mean(&self.values)
    }

    /// Solves the averaged estimating equation through the ratio
    /// `(mean phi_A + 2A) / (mean phi_B + 2B)`.
    pub fn est_eq(&self) -> Result<f64> {
        let num = mean(&self.phi_a) + 2.0 * self.a;
        let den = mean(&self.phi_b) + 2.0 * self.b;
        if !(den.abs() > 1e-12 * self.b.abs()) || !den.is_finite() {
            return Err(Error::NumericDegeneracy(format!("estimating-equation denominator is {den}")));
        }
        Ok(2.0 * num / den - 1.0)
    }
}

/// Evaluates the efficient influence function of `G(e)` at every kept row,
/// with every nuisance function replaced by its fit.
///
/// The averaged nested terms are computed from the pair surfaces in
/// `O(n^2)`; the A2 nested term uses the linear-smoother weights of the
/// product regression, which makes it exact for any function of income.
pub fn eif(fits: &NuisanceFits, e: usize, variant: Variant) -> Result<EifVector> {
    let data = &fits.data;
    let n = data.len();
    if e >= data.levels() {
        return Err(Error::InvalidConfig(format!("level {e} outside 0..{}", data.levels())));
    }
    let lf = fits.level(e);
    let (y, income) = (data.y(), data.income());
    let m = &lf.outcome_mean;
    let xi = &lf.surfaces.xi;
    let exec = fits.options.exec();
    let block = fits.options.block_rows;

    // 1(e_o = e) / pi_e(x_o)
    let mut h = vec![0.0; n];
    for o in 0..n {
        if data.exposure()[o] == e {
            let p = lf.propensity[o];
            if !(p > 0.0) {
                return Err(Error::NumericDegeneracy(format!("propensity {p} for level {e} on kept row {o}")));
            }
            h[o] = 1.0 / p;
        }
    }

    let b = mean(m);
    if !(b > 0.0) {
        return Err(Error::DegenerateOutcome(b));
    }
    let phi_b: Vec<f64> = (0..n).map(|o| h[o] * (y[o] - m[o]) + m[o] - b).collect();

    let (a, phi_a) = match variant {
        Variant::A1 => {
            let c = &lf.surfaces.cond_xi;
            let mc: Vec<f64> = m.iter().zip(c).map(|(a, b)| a * b).collect();
            let a = mean(&mc);
            let nm = weighted_cdf_means(&lf.cdf, income, m, block, exec);
            let pm = weighted_pair_means(&lf.rank_pair, m, block, exec);
            let phi = (0..n)
                .map(|o| {
                    let own = h[o] * (y[o] * xi[o] - mc[o]) + mc[o] - a;
                    let nested = h[o] * (b - nm[o] - pm[o]) + pm[o] - a;
                    own + nested
                })
                .collect();
            (a, phi)
        }
        Variant::A2 => {
            let product = lf
                .product
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("the A2 variant needs the product regression".into()))?;
            let r = &product.predictions;
            let a = mean(r);
            let w = product.fit.mean_prediction_weights(&fits.covariates.outcome).ok_or_else(|| {
                Error::InvalidConfig("the A2 variant needs an outcome learner that is a linear smoother".into())
            })?;
            let arm = data.arm(e);
            let arm_income: Vec<f64> = arm.iter().map(|&j| income[j]).collect();
            let wy: Vec<f64> = arm.iter().zip(&w).map(|(&j, wj)| wj * y[j]).collect();
            // S1_o = sum_j w_j y_j 1(i_o <= i_j) through suffix sums over the income order
            let order = argsort(&arm_income);
            let sorted: Vec<f64> = order.iter().map(|&t| arm_income[t]).collect();
            let mut suffix = vec![0.0; order.len() + 1];
            for t in (0..order.len()).rev() {
                suffix[t] = suffix[t + 1] + wy[order[t]];
            }
            let s2 = cdf_reference_sums(&lf.cdf, &arm_income, &wy, block, exec);
            let phi = (0..n)
                .map(|o| {
                    let s1 = suffix[sorted.partition_point(|&v| v < income[o])];
                    let own = h[o] * (y[o] * xi[o] - r[o]) + r[o] - a;
                    let nested = h[o] * (s1 - s2[o]) + s2[o] - a;
                    own + nested
                })
                .collect();
            (a, phi)
        }
    };
    EifVector::new(e, variant, phi_a, phi_b, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(phi_a: Vec<f64>, phi_b: Vec<f64>) -> EifVector {
        EifVector::new(0, Variant::A1, phi_a, phi_b, 0.6, 1.5).unwrap()
    }

    #[test]
    fn one_step_adds_mean_influence() {
        let v = toy(vec![0.2, -0.1, 0.05], vec![0.3, 0.1, -0.2]);
        assert!((v.one_step() - v.plug_in() - mean(&v.values)).abs() < 1e-15);
    }

    #[test]
    fn est_eq_equals_plug_in_for_centred_components() {
        let v = toy(vec![0.2, -0.1, -0.1], vec![0.3, 0.1, -0.4]);
        assert!((v.est_eq().unwrap() - v.plug_in()).abs() < 1e-15);
        assert!((v.one_step() - v.plug_in()).abs() < 1e-15);
    }

    #[test]
    fn est_eq_rejects_vanishing_denominator() {
        let v = toy(vec![0.0, 0.0], vec![-3.0, -3.0]);
        assert!(matches!(v.est_eq(), Err(Error::NumericDegeneracy(_))));
    }

    #[test]
    fn non_positive_b_is_degenerate() {
        assert!(matches!(EifVector::new(0, Variant::A1, vec![0.0], vec![0.0], 0.1, 0.0), Err(Error::DegenerateOutcome(_))));
    }
}
