use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{contrast, Estimand, Estimator, IndexEstimate};
use crate::nuisance::Dataset;
use crate::stats::{argsort, mean, normal_critical_value, sample_sd};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaiveOptions {
    /// Bootstrap replicates for the se; 0 uses the influence function.
    pub bootstrap_reps: usize,
    pub seed: u64,
}

/// Concentration index `2 cov(y, F(i)) / mean(y)` with `F` the sample
/// proportion at or below each income and `1/n` moments, plus the
/// influence function of `2 E[Y F(I)] / E[Y] - 1` at each row.
fn index_and_influence(y: &[f64], income: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let b = mean(y);
    if !(b > 0.0) {
        return Err(Error::DegenerateOutcome(b));
    }
    let order = argsort(income);
    let sorted: Vec<f64> = order.iter().map(|&i| income[i]).collect();
    let nf = n as f64;
    let f: Vec<f64> = income.iter().map(|&v| sorted.partition_point(|&s| s <= v) as f64 / nf).collect();
    // tail[t] = sum of y over sorted positions >= t
    let mut tail = vec![0.0; n + 1];
    for t in (0..n).rev() {
        tail[t] = tail[t + 1] + y[order[t]];
    }
    let yf: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a * b).collect();
    let a = mean(&yf);
    let value = 2.0 * (a - b * mean(&f)) / b;
    let phi = (0..n)
        .map(|o| {
            let above = tail[sorted.partition_point(|&s| s < income[o])] / nf;
            let phi_a = yf[o] + above - 2.0 * a;
            let phi_b = y[o] - b;
            2.0 * phi_a / b - 2.0 * phi_b * a / (b * b)
        })
        .collect();
    Ok((value, phi))
}

/// The sample concentration index `2 cov(y, F(i)) / mean(y)`.
pub fn concentration_index(y: &[f64], income: &[f64]) -> Result<f64> {
    if y.len() != income.len() {
        return Err(Error::RowMismatch(y.len(), income.len()));
    }
    Ok(index_and_influence(y, income)?.0)
}

fn subset(data: &Dataset, level: Option<usize>) -> Result<Vec<usize>> {
    match level {
        None => Ok((0..data.len()).collect()),
        Some(e) if e < data.levels() => Ok(data.arm(e)),
        Some(e) => Err(Error::InvalidConfig(format!("level {e} outside 0..{}", data.levels()))),
    }
}

/// Bootstrap se of the naive index over the rows of `level` (or all rows).
pub fn naive_bootstrap_se(data: &Dataset, level: Option<usize>, reps: usize, seed: u64) -> Result<f64> {
    let rows = subset(data, level)?;
    let m = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(reps);
    let (mut y, mut inc) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..reps {
        for t in 0..m {
            let i = rows[rng.gen_range(0..m)];
            y[t] = data.y()[i];
            inc[t] = data.income()[i];
        }
        if let Ok((g, _)) = index_and_influence(&y, &inc) {
            draws.push(g);
        }
    }
    if draws.len() < 2 {
        return Err(Error::NumericDegeneracy("too few usable bootstrap replicates".into()));
    }
    Ok(sample_sd(&draws))
}

/// The unadjusted concentration index on all rows, or on the rows of one
/// exposure level.
///
/// The returned influence function is expressed on all rows of `data`
/// (zero outside the level, scaled by `n / n_e` inside) so that naive
/// contrasts can reuse the generic influence-difference se.
pub fn naive_index(data: &Dataset, level: Option<usize>, conf_level: f64, opts: &NaiveOptions) -> Result<IndexEstimate> {
    let rows = subset(data, level)?;
    let y: Vec<f64> = rows.iter().map(|&i| data.y()[i]).collect();
    let inc: Vec<f64> = rows.iter().map(|&i| data.income()[i]).collect();
    let (value, phi) = index_and_influence(&y, &inc)?;
    let n = data.len();
    let scale = n as f64 / rows.len() as f64;
    let mut full = vec![0.0; n];
    for (&i, p) in rows.iter().zip(&phi) {
        full[i] = scale * p;
    }
    let mut est = IndexEstimate::with_influence(
        Estimand::Index { level: level.unwrap_or(0) },
        Estimator::Naive,
        None,
        value,
        Arc::from(full),
        conf_level,
    );
    if opts.bootstrap_reps > 0 {
        let se = naive_bootstrap_se(data, level, opts.bootstrap_reps, opts.seed)?;
        let z = normal_critical_value(conf_level);
        est.se = Some(se);
        est.ci = Some((value - z * se, value + z * se));
    }
    Ok(est)
}

/// Difference of the naive indexes of two exposure levels.
pub fn naive_contrast(data: &Dataset, level: usize, baseline: usize, conf_level: f64, opts: &NaiveOptions) -> Result<IndexEstimate> {
    let a = naive_index(data, Some(level), conf_level, opts)?;
    let b = naive_index(data, Some(baseline), conf_level, opts)?;
    let mut out = contrast(&a, &b)?;
    if opts.bootstrap_reps > 0 && level != baseline {
        // the levels are disjoint, so the two bootstrap distributions are independent
        let se = (a.se.unwrap().powi(2) + b.se.unwrap().powi(2)).sqrt();
        let z = normal_critical_value(conf_level);
        out.se = Some(se);
        out.ci = Some((out.value - z * se, out.value + z * se));
    }
    Ok(out)
}

/// Direct evaluation of the definition with quadratic loops, for tests.
#[cfg(test)]
pub(crate) fn brute_force(y: &[f64], income: &[f64]) -> f64 {
    let n = y.len() as f64;
    let f: Vec<f64> = income.iter().map(|&v| income.iter().filter(|&&s| s <= v).count() as f64 / n).collect();
    let my = y.iter().sum::<f64>() / n;
    let mf = f.iter().sum::<f64>() / n;
    let cov = y.iter().zip(&f).map(|(a, b)| (a - my) * (b - mf)).sum::<f64>() / n;
    2.0 * cov / my
}
