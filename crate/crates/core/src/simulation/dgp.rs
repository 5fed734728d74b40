use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nuisance::{Dataset, ModelCovariates};
use crate::{Error, Result};

/// How the noise scale "2" of the outcome equations is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// Standard deviation 2 (R's `rnorm(n, 0, 2)`).
    #[default]
    Sd,
    /// Variance 2.
    Variance,
}

impl NoiseConvention {
    pub fn sd(self) -> f64 {
        match self {
            NoiseConvention::Sd => 2.0,
            NoiseConvention::Variance => std::f64::consts::SQRT_2,
        }
    }
}

/// Orientation of the level-1 income equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncomeForm {
    /// `I(1) = -X1 + 1.5 X2 + e`. Reproduces the published truth constants.
    #[default]
    Reflected,
    /// `I(1) = X1 - 1.5 X2 + e`, the equation as typeset.
    AsPrinted,
}

/// Which nuisance models receive the transformed covariates `log X^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Correct,
    WrongPi,
    WrongY,
    WrongAll,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Correct, Scenario::WrongPi, Scenario::WrongY, Scenario::WrongAll];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Correct => "correct",
            Scenario::WrongPi => "wrong_pi",
            Scenario::WrongY => "wrong_y",
            Scenario::WrongAll => "wrong_all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == s.trim())
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::Correct => "Correct models",
            Scenario::WrongPi => "Incorrect model for pi",
            Scenario::WrongY => "Incorrect model for Y",
            Scenario::WrongAll => "Incorrect model for all",
        }
    }

    fn transforms_pi(self) -> bool {
        matches!(self, Scenario::WrongPi | Scenario::WrongAll)
    }

    fn transforms_y(self) -> bool {
        matches!(self, Scenario::WrongY | Scenario::WrongAll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    pub noise: NoiseConvention,
    pub income_form: IncomeForm,
    pub scenario: Scenario,
}

impl DgpConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, noise: NoiseConvention::default(), income_form: IncomeForm::default(), scenario: Scenario::Correct }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidConfig(format!("simulated sample size {} is below 50", self.n)));
        }
        Ok(())
    }
}

/// Potential outcomes, covariates and assigned exposure for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `income[e][i]` is `I_i(e)`.
    pub income: [Vec<f64>; 3],
    /// `y[e][i]` is `Y_i(e)`.
    pub y: [Vec<f64>; 3],
    pub exposure: Vec<usize>,
}

/// The two linear predictors of the treatment softmax.
pub fn treatment_scores(x1: f64, x2: f64) -> (f64, f64) {
    let s2 = std::f64::consts::SQRT_2;
    let l1 = (5.0 * (x1 + x2) - 55.0) / (10.0 * s2);
    let l2 = (3.0 * s2 * x1 - 43.0 * s2 + 4.0 * s2 * x2) / (10.0 * s2);
    (l1, l2)
}

/// True propensities `(pi_0, pi_1, pi_2)` at `(x1, x2)`.
pub fn true_propensity(x1: f64, x2: f64) -> [f64; 3] {
    let (l1, l2) = treatment_scores(x1, x2);
    let m = l1.max(l2).max(0.0);
    let (a, b, c) = ((-m).exp(), (l1 - m).exp(), (l2 - m).exp());
    let s = a + b + c;
    [a / s, b / s, c / s]
}

/// Draws `n` units. Per unit the stream is consumed in a fixed order:
/// `X1, X2`, six noise terms, then one uniform for the exposure.
pub fn draw_potential(n: usize, seed: u64, noise: NoiseConvention, form: IncomeForm) -> PotentialOutcomes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = noise.sd();
    let mut out = PotentialOutcomes {
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        income: [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)],
        y: [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)],
        exposure: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let z = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let x1 = 1.0 + z(&mut rng);
        let x2 = 10.0 + z(&mut rng);
        let mut eps = [0.0; 6];
        for v in &mut eps {
            *v = sd * z(&mut rng);
        }
        let i1 = match form {
            IncomeForm::Reflected => -x1 + 1.5 * x2,
            IncomeForm::AsPrinted => x1 - 1.5 * x2,
        };
        out.income[0].push(x1 - 0.1 * x2 + eps[0]);
        out.income[1].push(i1 + eps[1]);
        out.income[2].push(20.0 * x1 - x2 + 10.0 + eps[2]);
        let base = 10.0 * x1 + x2;
        out.y[0].push(base + eps[3]);
        out.y[1].push(base + 8.0 + eps[4]);
        out.y[2].push(base + 18.0 + eps[5]);
        let p = true_propensity(x1, x2);
        let u: f64 = rng.gen();
        out.exposure.push(if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        });
        out.x1.push(x1);
        out.x2.push(x2);
    }
    out
}

/// A simulated dataset with the covariates each nuisance model receives.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub covariates: ModelCovariates,
}

/// `log X^2`, elementwise.
pub fn transform_covariates(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| (v * v).ln())
}

/// Covariates for the nuisance models under `scenario`. The rank models
/// always use the covariates the data were generated from.
pub fn scenario_covariates(x: &DMatrix<f64>, scenario: Scenario) -> ModelCovariates {
    let tilde = transform_covariates(x);
    ModelCovariates {
        propensity: if scenario.transforms_pi() { tilde.clone() } else { x.clone() },
        outcome: if scenario.transforms_y() { tilde } else { x.clone() },
        rank: x.clone(),
    }
}

/// Observed data `(Y, I, E, X)` from the potential outcomes by consistency.
pub fn observe(po: &PotentialOutcomes) -> Result<Dataset> {
    let n = po.exposure.len();
    let y = (0..n).map(|i| po.y[po.exposure[i]][i]).collect();
    let income = (0..n).map(|i| po.income[po.exposure[i]][i]).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { po.x1[i] } else { po.x2[i] });
    Dataset::new(y, income, po.exposure.clone(), x, 3)
}

pub fn generate(config: &DgpConfig) -> Result<Simulated> {
    config.validate()?;
    let po = draw_potential(config.n, config.seed, config.noise, config.income_form);
    let data = observe(&po)?;
    let covariates = scenario_covariates(data.covariates(), config.scenario);
    Ok(Simulated { data, covariates })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_is_bit_identical() {
        let c = DgpConfig::new(300, 17);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        assert_eq!(a.data, b.data);
        let other = generate(&DgpConfig::new(300, 18)).unwrap();
        assert_ne!(a.data, other.data);
    }

    #[test]
    fn propensities_form_a_distribution() {
        for (x1, x2) in [(1.0, 10.0), (-2.0, 7.0), (4.0, 13.0)] {
            let p = true_propensity(x1, x2);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(p.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn scenarios_transform_only_their_models() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, -2.0, 9.0]);
        let c = scenario_covariates(&x, Scenario::WrongPi);
        assert_eq!(c.outcome, x);
        assert_eq!(c.rank, x);
        assert!((c.propensity[(1, 0)] - 4f64.ln()).abs() < 1e-15);
        let y = scenario_covariates(&x, Scenario::WrongY);
        assert_eq!(y.propensity, x);
        assert_ne!(y.outcome, x);
        let all = scenario_covariates(&x, Scenario::WrongAll);
        assert_eq!(all.rank, x);
        assert_eq!(all.propensity, all.outcome);
    }

    #[test]
    fn small_samples_are_rejected() {
        assert!(generate(&DgpConfig::new(49, 0)).is_err());
    }
}
