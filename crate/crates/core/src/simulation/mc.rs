use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{generate, replicate_seed, DgpConfig, IncomeForm, NoiseConvention, Scenario, Truth};
use crate::estimators::{estimate_all, Estimand, Estimator, NaiveOptions, Variant};
use crate::exec::Exec;
use crate::nuisance::{fit_nuisance, LinearLearner, NuisanceOptions};
use crate::stats::{mean, sample_sd};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub replicates: usize,
    pub scenarios: Vec<Scenario>,
    pub estimators: Vec<Estimator>,
    pub master_seed: u64,
    pub variant: Variant,
    pub noise: NoiseConvention,
    pub income_form: IncomeForm,
    pub nuisance: NuisanceOptions,
    pub conf_level: f64,
    /// Scheduling of replicates. Nuisance fits inside a replicate run
    /// sequentially when replicates are spread over threads.
    pub exec: Exec,
    /// Largest tolerated fraction of failed replicates per scenario.
    pub failure_limit: f64,
}

impl McConfig {
    pub fn new(n: usize, replicates: usize, master_seed: u64) -> Self {
        Self {
            n,
            replicates,
            scenarios: vec![Scenario::Correct],
            estimators: vec![Estimator::PlugIn, Estimator::OneStep, Estimator::EstEq],
            master_seed,
            variant: Variant::A1,
            noise: NoiseConvention::default(),
            income_form: IncomeForm::default(),
            nuisance: NuisanceOptions::default(),
            conf_level: 0.95,
            exec: Exec::default(),
            failure_limit: 0.01,
        }
    }

    /// The reported estimands: `G(0)`, `theta(1)` and `theta(2)`.
    pub fn estimands() -> [Estimand; 3] {
        [
            Estimand::Index { level: 0 },
            Estimand::Theta { level: 1, baseline: 0 },
            Estimand::Theta { level: 2, baseline: 0 },
        ]
    }
}

/// One estimate from one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub scenario: Scenario,
    pub estimand: Estimand,
    pub estimator: Estimator,
    pub value: f64,
    pub se: Option<f64>,
    pub covered: Option<bool>,
}

/// Aggregate for one scenario, estimand and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub scenario: Scenario,
    pub estimand: Estimand,
    pub estimator: Estimator,
    pub n: usize,
    /// Replicates that contributed (failures excluded).
    pub replicates: usize,
    /// Mean estimate minus the truth.
    pub bias: f64,
    /// Sample sd of the estimates; absent with fewer than two replicates.
    pub mc_sd: Option<f64>,
    /// Mean of the estimated standard errors.
    pub est_sd: Option<f64>,
    pub coverage: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub truth: Truth,
    pub rows: Vec<McRow>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

fn truth_of(truth: &Truth, estimand: Estimand) -> f64 {
    match estimand {
        Estimand::Index { level } => truth.g[level],
        Estimand::Theta { level, baseline } => truth.g[level] - truth.g[baseline],
    }
}

type Outcome = Vec<(Scenario, std::result::Result<Vec<ReplicateRecord>, String>)>;

fn run_replicate(config: &McConfig, truth: &Truth, nuisance: &NuisanceOptions, r: usize) -> Outcome {
    let dgp = DgpConfig {
        n: config.n,
        seed: replicate_seed(config.master_seed, r as u64),
        noise: config.noise,
        income_form: config.income_form,
        scenario: Scenario::Correct,
    };
    let base = generate(&dgp);
    config
        .scenarios
        .iter()
        .map(|&scenario| {
            let attempt = || -> Result<Vec<ReplicateRecord>> {
                let sim = base.as_ref().map_err(|e| Error::InvalidConfig(e.to_string()))?;
                let cov = super::scenario_covariates(sim.data.covariates(), scenario);
                let fits = fit_nuisance(&sim.data, &cov, Arc::new(LinearLearner), nuisance)?;
                let estimates =
                    estimate_all(&fits, &config.estimators, config.variant, 0, config.conf_level, &NaiveOptions::default())?;
                let wanted = McConfig::estimands();
                Ok(estimates
                    .iter()
                    .filter(|est| wanted.contains(&est.estimand))
                    .map(|est| ReplicateRecord {
                        replicate: r,
                        scenario,
                        estimand: est.estimand,
                        estimator: est.estimator,
                        value: est.value,
                        se: est.se,
                        covered: est.covers(truth_of(truth, est.estimand)),
                    })
                    .collect())
            };
            (scenario, attempt().map_err(|e| e.to_string()))
        })
        .collect()
}

/// Runs the Monte Carlo study. Each replicate draws one dataset that every
/// scenario and estimator reuses; failures are logged and excluded, and the
/// run fails if more than `failure_limit` of a scenario's replicates fail.
pub fn run_mc(config: &McConfig, truth: &Truth) -> Result<McReport> {
    if config.replicates == 0 {
        return Err(Error::InvalidConfig("at least one replicate is required".into()));
    }
    if config.scenarios.is_empty() || config.estimators.is_empty() {
        return Err(Error::InvalidConfig("no scenarios or no estimators requested".into()));
    }
    let mut nuisance = config.nuisance;
    if config.exec.is_parallel() && config.replicates > 1 {
        nuisance.irls.exec = Exec::Sequential;
    }
    let outcomes = config.exec.map(config.replicates, |r| run_replicate(config, truth, &nuisance, r));

    let mut records = Vec::new();
    let mut failures = vec![0usize; config.scenarios.len()];
    for (r, outcome) in outcomes.into_iter().enumerate() {
        for (s, (scenario, result)) in outcome.into_iter().enumerate() {
            match result {
                Ok(recs) => records.extend(recs),
                Err(msg) => {
                    failures[s] += 1;
                    log::warn!("replicate {r}, scenario {}: {msg}", scenario.label());
                }
            }
        }
    }
    for (s, &failed) in failures.iter().enumerate() {
        if failed as f64 > config.failure_limit * config.replicates as f64 {
            return Err(Error::TooManyFailures { failed, total: config.replicates });
        }
        if failed > 0 {
            log::info!("scenario {}: {failed} of {} replicates excluded", config.scenarios[s].label(), config.replicates);
        }
    }

    let mut rows = Vec::new();
    for (s, &scenario) in config.scenarios.iter().enumerate() {
        for estimand in McConfig::estimands() {
            for &estimator in &config.estimators {
                let cell: Vec<&ReplicateRecord> = records
                    .iter()
                    .filter(|rec| rec.scenario == scenario && rec.estimand == estimand && rec.estimator == estimator)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let values: Vec<f64> = cell.iter().map(|rec| rec.value).collect();
                let ses: Vec<f64> = cell.iter().filter_map(|rec| rec.se).collect();
                let covered: Vec<bool> = cell.iter().filter_map(|rec| rec.covered).collect();
                rows.push(McRow {
                    scenario,
                    estimand,
                    estimator,
                    n: config.n,
                    replicates: cell.len(),
                    bias: mean(&values) - truth_of(truth, estimand),
                    mc_sd: (values.len() > 1).then(|| sample_sd(&values)),
                    est_sd: (!ses.is_empty()).then(|| mean(&ses)),
                    coverage: (!covered.is_empty())
                        .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
                    failures: failures[s],
                });
            }
        }
    }
    Ok(McReport { config: config.clone(), truth: *truth, rows, records })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn estimand_label(e: Estimand) -> String {
    match e {
        Estimand::Index { level } => format!("G({level})"),
        Estimand::Theta { level, .. } => format!("theta({level})"),
    }
}

impl McReport {
    /// One row per scenario, estimand and estimator.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "estimand", "estimator", "n", "replicates", "bias", "mc_sd", "est_sd", "coverage", "failures"])?;
        for row in &self.rows {
            w.write_record([
                row.scenario.label().to_string(),
                estimand_label(row.estimand),
                row.estimator.label().to_string(),
                row.n.to_string(),
                row.replicates.to_string(),
                format!("{}", row.bias),
                opt(row.mc_sd),
                opt(row.est_sd),
                opt(row.coverage),
                row.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, scenario: Scenario, estimand: Estimand, estimator: Estimator) -> Option<&McRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.estimand == estimand && r.estimator == estimator)
    }

    /// Plain-text table: one block per scenario, estimators as rows and
    /// bias, MC sd, est sd and coverage per estimand as columns.
    pub fn to_text(&self) -> String {
        let estimands = McConfig::estimands();
        let mut s = String::new();
        let _ = writeln!(
            s,
            "n = {}, replicates = {}, truth: G(0) = {:.5}, theta(1) = {:.5}, theta(2) = {:.5}",
            self.config.n,
            self.config.replicates,
            self.truth.g0(),
            self.truth.theta(1),
            self.truth.theta(2)
        );
        let mut header = format!("{:<10}", "Estimator");
        for e in estimands {
            header += &format!(" | {:^39}", estimand_label(e));
        }
        let mut sub = format!("{:<10}", "");
        for _ in estimands {
            sub += &format!(" | {:>9} {:>9} {:>9} {:>9}", "bias", "MC sd", "est sd", "cover");
        }
        let rule = "-".repeat(header.len());
        let _ = writeln!(s, "{header}\n{sub}\n{rule}");
        let f = |v: Option<f64>| v.map(|x| format!("{x:9.4}")).unwrap_or_else(|| format!("{:>9}", "-"));
        for &scenario in &self.config.scenarios {
            let _ = writeln!(s, "{}", scenario.title());
            for &estimator in &self.config.estimators {
                let mut line = format!("{:<10}", estimator.label());
                for e in estimands {
                    match self.row(scenario, e, estimator) {
                        Some(r) => line += &format!(" | {:9.4} {} {} {}", r.bias, f(r.mc_sd), f(r.est_sd), f(r.coverage)),
                        None => line += &format!(" | {:>39}", "-"),
                    }
                }
                let _ = writeln!(s, "{line}");
            }
            let _ = writeln!(s, "{rule}");
        }
        s
    }
}
