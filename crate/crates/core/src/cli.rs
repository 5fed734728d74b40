//! The `ccindex` command line: `estimate`, `simulate` and `truth`.
//!
//! Every command writes its reports to `--out-dir` and exits with 0 only when
//! all of them were written. Failures print a JSON object
//! `{"error": {"kind", "message"}}` on stderr and exit with 1.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::estimators::{estimate_all, Estimator, IndexEstimate, NaiveOptions, Variant};
use crate::exec::{init_threads, Exec};
use crate::glm::Link;
use crate::io::{load_csv, ColumnSpec, IncomeTransform};
use crate::nuisance::{fit_nuisance, CdfStrategy, LinearLearner, ModelCovariates, NuisanceOptions};
use crate::simulation::{
    approximate_truth, calibrate, run_mc, splitmix64, Calibration, IncomeForm, McConfig, NoiseConvention, Scenario, Truth,
    REFERENCE_G0, REFERENCE_THETA1, REFERENCE_THETA2,
};
use crate::{Error, Result};

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "ccindex", version, about = "Counterfactual concentration indexes")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "CCINDEX_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Confidence level of the intervals.
    #[arg(long, global = true, default_value_t = 0.95)]
    pub level: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate indexes and contrasts from a CSV file.
    Estimate(EstimateArgs),
    /// Monte Carlo study on the synthetic three-level design.
    Simulate(SimulateArgs),
    /// Approximate the true indexes of the synthetic design.
    Truth(TruthArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Comma list of naive, plug-in, one-step, est-eq.
    #[arg(long, value_delimiter = ',', value_parser = parse_estimator, default_value = "naive,plug-in,one-step,est-eq")]
    pub estimators: Vec<Estimator>,
    #[arg(long, value_parser = parse_variant, default_value = "A1")]
    pub variant: Variant,
    /// `pairwise` or `per-income[:GRID[:logit|probit]]`.
    #[arg(long, value_parser = parse_cdf_strategy, default_value = "pairwise")]
    pub cdf_strategy: CdfStrategy,
    /// Drop rows whose smallest fitted propensity is below this.
    #[arg(long, default_value_t = 0.01)]
    pub trim: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub income: String,
    #[arg(long)]
    pub exposure: String,
    /// Comma list of covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// `none` or `power:P[,OFFSET]`.
    #[arg(long, default_value = "power:0.2,1")]
    pub income_transform: IncomeTransform,
    /// Exposure label used as level 0; defaults to the smallest label.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Bootstrap replicates for the naive se; 0 uses its influence function.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ConventionArgs {
    /// How the noise scale of the outcome equations is read: sd or variance.
    #[arg(long, value_parser = parse_noise, default_value = "sd")]
    pub noise: NoiseConvention,
    /// reflected or as-printed.
    #[arg(long, value_parser = parse_income_form, default_value = "reflected")]
    pub income_form: IncomeForm,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Comma list of correct, wrong_pi, wrong_y, wrong_all.
    #[arg(long, value_delimiter = ',', value_parser = parse_scenario, default_value = "correct")]
    pub scenarios: Vec<Scenario>,
    /// Draws used to approximate the truth.
    #[arg(long, default_value_t = 1_000_000)]
    pub truth_n: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub conventions: ConventionArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TruthArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub n_big: usize,
    /// Also evaluate every convention pair and report the closest one.
    #[arg(long)]
    pub calibrate: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub conventions: ConventionArgs,
}

fn parse_estimator(s: &str) -> std::result::Result<Estimator, String> {
    Estimator::parse(s).ok_or_else(|| format!("unknown estimator '{s}'"))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    match s.trim().to_ascii_uppercase().as_str() {
        "A1" => Ok(Variant::A1),
        "A2" => Ok(Variant::A2),
        _ => Err(format!("unknown variant '{s}'")),
    }
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    Scenario::parse(s).ok_or_else(|| format!("unknown scenario '{s}'"))
}

fn parse_noise(s: &str) -> std::result::Result<NoiseConvention, String> {
    match s.trim() {
        "sd" => Ok(NoiseConvention::Sd),
        "variance" => Ok(NoiseConvention::Variance),
        _ => Err(format!("unknown noise convention '{s}'")),
    }
}

fn parse_income_form(s: &str) -> std::result::Result<IncomeForm, String> {
    match s.trim() {
        "reflected" => Ok(IncomeForm::Reflected),
        "as-printed" => Ok(IncomeForm::AsPrinted),
        _ => Err(format!("unknown income form '{s}'")),
    }
}

fn parse_cdf_strategy(s: &str) -> std::result::Result<CdfStrategy, String> {
    let mut parts = s.trim().split(':');
    match parts.next() {
        Some("pairwise") if parts.next().is_none() => Ok(CdfStrategy::PairwiseDerived),
        Some("per-income") => {
            let CdfStrategy::PerIncome { mut grid, mut link } = CdfStrategy::per_income_default() else { unreachable!() };
            if let Some(g) = parts.next() {
                grid = g.parse().ok().filter(|&g| g > 0).ok_or_else(|| format!("bad grid size in '{s}'"))?;
            }
            if let Some(l) = parts.next() {
                link = match l {
                    "logit" => Link::Logit,
                    "probit" => Link::Probit,
                    _ => return Err(format!("unknown link in '{s}'")),
                };
            }
            if parts.next().is_some() {
                return Err(format!("too many fields in '{s}'"));
            }
            Ok(CdfStrategy::PerIncome { grid, link })
        }
        _ => Err(format!("unknown cdf strategy '{s}'")),
    }
}

/// The conventions used by the synthetic design and how they were chosen.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationNote {
    pub noise: NoiseConvention,
    pub income_form: IncomeForm,
    pub rule: &'static str,
    pub reference: Reference,
    /// Present when the command evaluated every convention pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Calibration>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reference {
    pub g0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

const REFERENCE: Reference = Reference { g0: REFERENCE_G0, theta1: REFERENCE_THETA1, theta2: REFERENCE_THETA2 };
const CALIBRATION_RULE: &str = "convention pair whose truth at n_big = 1e6 is closest to the reference values";

fn calibration_note(noise: NoiseConvention, income_form: IncomeForm, candidates: Option<Calibration>) -> CalibrationNote {
    CalibrationNote { noise, income_form, rule: CALIBRATION_RULE, reference: REFERENCE, candidates }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, B: Serialize> {
    schema_version: u32,
    command: &'a str,
    library_version: &'a str,
    seed: u64,
    conf_level: f64,
    config: &'a C,
    calibration: CalibrationNote,
    #[serde(flatten)]
    body: B,
}

fn envelope<'a, C: Serialize, B: Serialize>(cli: &Cli, command: &'a str, config: &'a C, calibration: CalibrationNote, body: B) -> Envelope<'a, C, B> {
    Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        library_version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        conf_level: cli.level,
        config,
        calibration,
        body,
    }
}

#[derive(Serialize)]
struct SampleCounts {
    rows_complete: usize,
    dropped_missing: usize,
    dropped_trimming: usize,
    kept: usize,
}

#[derive(Serialize)]
struct EstimateBody<'a> {
    sample: SampleCounts,
    levels: &'a [String],
    estimates: &'a [IndexEstimate],
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn nuisance_options(fit: &FitArgs, exec: Exec) -> NuisanceOptions {
    let mut o = NuisanceOptions { trim_threshold: fit.trim, cdf_strategy: fit.cdf_strategy, ..NuisanceOptions::default() };
    o.irls.exec = exec;
    o.product_regression = fit.variant == Variant::A2;
    o
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn estimate(cli: &Cli, args: &EstimateArgs) -> Result<Vec<PathBuf>> {
    let columns = ColumnSpec {
        outcome: args.outcome.clone(),
        income: args.income.clone(),
        exposure: args.exposure.clone(),
        covariates: args.covariates.clone(),
    };
    let table = load_csv(&args.input, &columns)?;
    let prepared = table.prepare(args.income_transform, args.baseline.as_deref())?;
    let data = &prepared.data;
    let options = nuisance_options(&args.fit, Exec::Parallel);
    let fits = fit_nuisance(data, &ModelCovariates::shared(data), Arc::new(LinearLearner), &options)?;
    log::info!("trimming dropped {} of {} rows", fits.dropped(), data.len());
    let naive = NaiveOptions { bootstrap_reps: args.bootstrap, seed: cli.seed };
    let estimates = estimate_all(&fits, &args.fit.estimators, args.fit.variant, 0, cli.level, &naive)?;

    fs::create_dir_all(&cli.out_dir)?;
    let json_path = cli.out_dir.join("estimates.json");
    let body = EstimateBody {
        sample: SampleCounts {
            rows_complete: table.len(),
            dropped_missing: table.dropped,
            dropped_trimming: fits.dropped(),
            kept: fits.kept.len(),
        },
        levels: &prepared.levels,
        estimates: &estimates,
    };
    let note = calibration_note(NoiseConvention::default(), IncomeForm::default(), None);
    write_json(&json_path, &envelope(cli, "estimate", args, note, body))?;

    let csv_path = cli.out_dir.join("estimates.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["estimand", "level", "label", "estimator", "variant", "value", "se", "ci_low", "ci_high", "conf_level"])?;
    for est in &estimates {
        let level = match est.estimand {
            crate::estimators::Estimand::Index { level } | crate::estimators::Estimand::Theta { level, .. } => level,
        };
        w.write_record([
            est.estimand.to_string(),
            level.to_string(),
            prepared.levels[level].clone(),
            est.estimator.label().to_string(),
            est.variant.map(|v| format!("{v:?}")).unwrap_or_default(),
            est.value.to_string(),
            opt(est.se),
            opt(est.ci.map(|c| c.0)),
            opt(est.ci.map(|c| c.1)),
            est.conf_level.to_string(),
        ])?;
    }
    w.flush()?;
    for est in &estimates {
        println!("{:<10} {:<9} {:>10.5}  se {}", est.estimand.to_string(), est.estimator.label(), est.value, opt(est.se));
    }
    Ok(vec![json_path, csv_path])
}

#[derive(Serialize)]
struct SimulateBody<'a> {
    truth: &'a Truth,
    rows: &'a [crate::simulation::McRow],
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let conv = &args.conventions;
    let truth = approximate_truth(args.truth_n, splitmix64(cli.seed), conv.noise, conv.income_form)?;
    let mut config = McConfig::new(args.n, args.replicates, cli.seed);
    config.scenarios = args.scenarios.clone();
    config.estimators = args.fit.estimators.clone();
    config.variant = args.fit.variant;
    config.noise = conv.noise;
    config.income_form = conv.income_form;
    config.nuisance = nuisance_options(&args.fit, Exec::Parallel);
    config.conf_level = cli.level;
    config.exec = Exec::Parallel;
    let report = run_mc(&config, &truth)?;

    fs::create_dir_all(&cli.out_dir)?;
    let csv_path = cli.out_dir.join("mc.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    let text_path = cli.out_dir.join("mc.txt");
    let text = report.to_text();
    fs::write(&text_path, &text)?;
    let json_path = cli.out_dir.join("mc.json");
    let note = calibration_note(conv.noise, conv.income_form, None);
    write_json(&json_path, &envelope(cli, "simulate", args, note, SimulateBody { truth: &truth, rows: &report.rows }))?;
    print!("{text}");
    Ok(vec![csv_path, text_path, json_path])
}

#[derive(Serialize)]
struct TruthBody {
    truth: Truth,
    theta1: f64,
    theta2: f64,
    distance_to_reference: f64,
}

fn truth(cli: &Cli, args: &TruthArgs) -> Result<Vec<PathBuf>> {
    let conv = &args.conventions;
    let t = approximate_truth(args.n_big, cli.seed, conv.noise, conv.income_form)?;
    let candidates = if args.calibrate { Some(calibrate(args.n_big, cli.seed)?) } else { None };
    fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("truth.json");
    let body = TruthBody { truth: t, theta1: t.theta(1), theta2: t.theta(2), distance_to_reference: t.distance_to_reference() };
    let note = calibration_note(conv.noise, conv.income_form, candidates);
    write_json(&path, &envelope(cli, "truth", args, note, body))?;
    println!("G(0) = {:.6}  theta(1) = {:.6}  theta(2) = {:.6}", t.g0(), t.theta(1), t.theta(2));
    Ok(vec![path])
}

/// Runs a parsed command and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    if !(cli.level > 0.0 && cli.level < 1.0) {
        return Err(Error::InvalidConfig(format!("--level {} outside (0, 1)", cli.level)));
    }
    init_threads(cli.threads);
    match &cli.command {
        Command::Estimate(a) => estimate(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Truth(a) => truth(cli, a),
    }
}

/// Structured error printed on stderr.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({ "error": { "kind": err.kind(), "message": err.to_string() } }).to_string()
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            0
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_strategy_parsing() {
        assert_eq!(parse_cdf_strategy("pairwise").unwrap(), CdfStrategy::PairwiseDerived);
        assert_eq!(parse_cdf_strategy("per-income").unwrap(), CdfStrategy::per_income_default());
        assert_eq!(
            parse_cdf_strategy("per-income:50:probit").unwrap(),
            CdfStrategy::PerIncome { grid: 50, link: Link::Probit }
        );
        assert!(parse_cdf_strategy("per-income:0").is_err());
        assert!(parse_cdf_strategy("kernel").is_err());
    }

    #[test]
    fn defaults_parse() {
        let cli = Cli::try_parse_from(["ccindex", "truth"]).unwrap();
        assert_eq!(cli.seed, 1);
        let Command::Truth(t) = cli.command else { panic!("wrong command") };
        assert_eq!(t.n_big, 1_000_000);
        assert_eq!(t.conventions.noise, NoiseConvention::Sd);
        let cli = Cli::try_parse_from([
            "ccindex", "estimate", "--input", "f.csv", "--outcome", "y", "--income", "i", "--exposure", "e",
            "--covariates", "a,b", "--estimators", "one-step,est-eq", "--variant", "a2", "--seed", "4",
        ])
        .unwrap();
        let Command::Estimate(e) = cli.command else { panic!("wrong command") };
        assert_eq!(e.covariates, vec!["a", "b"]);
        assert_eq!(e.fit.estimators, vec![Estimator::OneStep, Estimator::EstEq]);
        assert_eq!(e.fit.variant, Variant::A2);
        assert_eq!(e.income_transform, IncomeTransform::default());
        assert_eq!(cli.seed, 4);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert!(Cli::try_parse_from(["ccindex", "simulate", "--scenarios", "wrong_x"]).is_err());
        assert!(Cli::try_parse_from(["ccindex", "truth", "--noise", "var"]).is_err());
    }

    #[test]
    fn error_output_is_json() {
        let v: serde_json::Value = serde_json::from_str(&error_json(&Error::InvalidConfig("x".into()))).unwrap();
        assert_eq!(v["error"]["kind"], "invalid-config");
    }
}
