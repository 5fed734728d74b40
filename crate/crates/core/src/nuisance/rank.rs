use nalgebra::DMatrix;

use super::{CdfStrategy, Dataset, NuisanceFits};
use crate::exec::Exec;
use crate::glm::{fit_binary_glm, fit_binary_rows, BinaryRows, DesignMatrix, Family, GlmError, GlmFit, IrlsOptions, Link};
use crate::stats::{argsort, isotonic_nondecreasing, norm_cdf, pairwise_sum};
use crate::{Error, Result};

/// Row-major copy of a covariate matrix, for cache-friendly pair loops.
fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, q) = m.shape();
    let mut out = Vec::with_capacity(n * q);
    for i in 0..n {
        for j in 0..q {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pair grid of one arm. Row `j * n_e + k` pairs target `j` with reference
/// `k`; the response is `1(i_k <= i_j)`.
struct PairGrid<'a> {
    x: &'a [f64],
    q: usize,
    income: &'a [f64],
    /// Put the target income rather than the target covariates in the row.
    income_row: bool,
}

impl PairGrid<'_> {
    fn len(&self) -> usize {
        self.income.len()
    }
}

impl BinaryRows for PairGrid<'_> {
    fn nrows(&self) -> usize {
        self.len() * self.len()
    }

    fn ncols(&self) -> usize {
        if self.income_row {
            self.q + 2
        } else {
            2 * self.q + 1
        }
    }

    fn fill(&self, r: usize, row: &mut [f64]) -> f64 {
        let n = self.len();
        let (j, k) = (r / n, r % n);
        let q = self.q;
        row[0] = 1.0;
        if self.income_row {
            row[1] = self.income[j];
            row[2..].copy_from_slice(&self.x[k * q..(k + 1) * q]);
        } else {
            row[1..=q].copy_from_slice(&self.x[j * q..(j + 1) * q]);
            row[q + 1..].copy_from_slice(&self.x[k * q..(k + 1) * q]);
        }
        if self.income[k] <= self.income[j] {
            1.0
        } else {
            0.0
        }
    }

    // one target row per chunk, so sums never depend on the caller's block size
    fn chunk_len(&self) -> usize {
        self.len().max(1)
    }
}

struct ArmData {
    x: Vec<f64>,
    income: Vec<f64>,
}

fn arm_data(data: &Dataset, covariates: &DMatrix<f64>, e: usize) -> Result<ArmData> {
    if covariates.nrows() != data.len() {
        return Err(Error::RowMismatch(covariates.nrows(), data.len()));
    }
    let rows = data.arm(e);
    if rows.len() < 2 {
        return Err(Error::InvalidData(format!("exposure level {e} needs at least two observations, found {}", rows.len())));
    }
    Ok(ArmData {
        x: row_major(&covariates.select_rows(&rows)),
        income: rows.iter().map(|&i| data.income()[i]).collect(),
    })
}

/// Probit model for `P(I_k <= I_j | x_j, x_k, E = e)`, fitted on the arm's
/// pair grid with design row `(1, x_j, x_k)`.
///
/// `pair(j, k)` evaluates it for two rows of the sample it was fitted for,
/// using cached per-row linear predictors.
#[derive(Debug, Clone)]
pub struct RankPairModel {
    pub fit: GlmFit,
    q: usize,
    target: Vec<f64>,
    reference: Vec<f64>,
}

impl RankPairModel {
    /// Number of sample rows the model can be evaluated on.
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Probability that the income of reference row `k` does not exceed the
    /// income of target row `j`.
    #[inline]
    pub fn pair(&self, j: usize, k: usize) -> f64 {
        match self.fit.constant {
            Some(c) => c,
            None => norm_cdf(self.target[j] + self.reference[k]),
        }
    }

    /// The same probability for arbitrary covariate rows.
    pub fn pair_at(&self, target: &[f64], reference: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(2 * self.q + 1);
        row.push(1.0);
        row.extend_from_slice(target);
        row.extend_from_slice(reference);
        self.fit.mean_at(&row)
    }
}

/// Fits the pairwise rank model for level `e` and caches it on every row of
/// `covariates`.
pub fn fit_pairwise_rank_model(data: &Dataset, covariates: &DMatrix<f64>, e: usize, opts: &IrlsOptions) -> Result<RankPairModel> {
    let arm = arm_data(data, covariates, e)?;
    let q = covariates.ncols();
    let grid = PairGrid { x: &arm.x, q, income: &arm.income, income_row: false };
    let fit = fit_binary_rows(&grid, Link::Probit, opts)?;
    let b = fit.coefficient_vector();
    let all = row_major(covariates);
    let n = covariates.nrows();
    let target = (0..n).map(|i| b[0] + dot(&b.as_slice()[1..=q], &all[i * q..(i + 1) * q])).collect();
    let reference = (0..n).map(|i| dot(&b.as_slice()[q + 1..], &all[i * q..(i + 1) * q])).collect();
    Ok(RankPairModel { fit, q, target, reference })
}

#[derive(Debug, Clone)]
pub enum GridPoint {
    Model(GlmFit),
    /// Arm proportion, used when the fit at this income separates.
    Proportion(f64),
}

/// Conditional income CDF `N_e(i, x) = P(I <= i | X = x, E = e)`.
#[derive(Debug, Clone)]
pub enum CdfModel {
    /// Probit distribution regression on the arm's pair grid, row `(1, i_j, x_k)`.
    Pairwise {
        fit: GlmFit,
        q: usize,
        /// `gamma' x_k` for every sample row.
        offsets: Vec<f64>,
    },
    /// Binary fits of `1(I <= t)` on `(1, x)` at a grid of arm incomes `t`,
    /// linearly interpolated, with `N = 0` below the arm minimum and `N = 1`
    /// from the arm maximum upwards.
    Grid {
        knots: Vec<f64>,
        /// One entry per interior knot.
        points: Vec<GridPoint>,
        x: Vec<f64>,
        q: usize,
        n: usize,
    },
}

impl CdfModel {
    pub fn len(&self) -> usize {
        match self {
            CdfModel::Pairwise { offsets, .. } => offsets.len(),
            CdfModel::Grid { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N_e(income, x_k)` for sample row `k`.
    #[inline]
    pub fn eval(&self, income: f64, k: usize) -> f64 {
        match self {
            CdfModel::Pairwise { fit, offsets, .. } => match fit.constant {
                Some(c) => c,
                None => {
                    let b = &fit.coefficients;
                    norm_cdf(b[(0, 0)] + b[(0, 1)] * income + offsets[k])
                }
            },
            CdfModel::Grid { q, x, .. } => self.eval_at(income, &x[k * q..(k + 1) * q]),
        }
    }

    /// `N_e(income, x)` for an arbitrary covariate row.
    pub fn eval_at(&self, income: f64, x: &[f64]) -> f64 {
        match self {
            CdfModel::Pairwise { fit, .. } => {
                let mut row = Vec::with_capacity(x.len() + 2);
                row.push(1.0);
                row.push(income);
                row.extend_from_slice(x);
                fit.mean_at(&row)
            }
            CdfModel::Grid { knots, points, .. } => {
                let last = knots.len() - 1;
                if income < knots[0] {
                    return 0.0;
                }
                if income >= knots[last] {
                    return 1.0;
                }
                let t = knots.partition_point(|&k| k <= income) - 1;
                let at = |m: usize| -> f64 {
                    if m == 0 {
                        0.0
                    } else if m == last {
                        1.0
                    } else {
                        match &points[m - 1] {
                            GridPoint::Proportion(p) => *p,
                            GridPoint::Model(fit) => match (fit.constant, fit.family) {
                                (Some(c), _) => c,
                                (None, Family::Binomial(link)) => {
                                    let b = &fit.coefficients;
                                    let eta = b[(0, 0)] + x.iter().enumerate().map(|(j, v)| b[(0, j + 1)] * v).sum::<f64>();
                                    link.inverse(eta)
                                }
                                (None, _) => unreachable!("grid points are binary fits"),
                            },
                        }
                    }
                };
                let w = (income - knots[t]) / (knots[t + 1] - knots[t]);
                ((1.0 - w) * at(t) + w * at(t + 1)).clamp(0.0, 1.0)
            }
        }
    }

    /// Writes `N_e(income, x_k)` for every sample row `k` into `out`.
    pub fn row_into(&self, income: f64, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(income, k);
        }
    }
}

/// Arm quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fits the conditional income CDF for level `e` and caches what is needed
/// to evaluate it on every row of `covariates`.
pub fn fit_cdf_model(data: &Dataset, covariates: &DMatrix<f64>, e: usize, strategy: CdfStrategy, opts: &IrlsOptions) -> Result<CdfModel> {
    let arm = arm_data(data, covariates, e)?;
    let q = covariates.ncols();
    let all = row_major(covariates);
    match strategy {
        CdfStrategy::PairwiseDerived => {
            let grid = PairGrid { x: &arm.x, q, income: &arm.income, income_row: true };
            let fit = fit_binary_rows(&grid, Link::Probit, opts)?;
            let b = fit.coefficient_vector();
            let n = covariates.nrows();
            let offsets = (0..n).map(|i| dot(&b.as_slice()[2..], &all[i * q..(i + 1) * q])).collect();
            Ok(CdfModel::Pairwise { fit, q, offsets })
        }
        CdfStrategy::PerIncome { grid, link } => {
            if grid == 0 {
                return Err(Error::InvalidConfig("per-income grid needs at least one point".into()));
            }
            let mut sorted = arm.income.clone();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let mut knots = vec![lo];
            for g in 0..grid {
                let t = quantile(&sorted, (g as f64 + 0.5) / grid as f64);
                if t > *knots.last().unwrap() && t < hi {
                    knots.push(t);
                }
            }
            if hi > lo {
                knots.push(hi);
            } else {
                // a single income value: the CDF is a step at it
                knots.push(f64::from_bits(lo.to_bits() + 1));
            }
            let design = DesignMatrix::with_intercept(&DMatrix::from_row_slice(arm.income.len(), q, &arm.x))?;
            let inner = IrlsOptions { exec: Exec::Sequential, ..*opts };
            let fits = opts.exec.map(knots.len() - 2, |m| -> Result<GridPoint> {
                let t = knots[m + 1];
                let y: Vec<f64> = arm.income.iter().map(|&i| if i <= t { 1.0 } else { 0.0 }).collect();
                match fit_binary_glm(&design, &y, link, &inner) {
                    Ok(fit) => Ok(GridPoint::Model(fit)),
                    Err(GlmError::Separation { .. }) => {
                        log::debug!("separation at income {t}; using the arm proportion");
                        Ok(GridPoint::Proportion(crate::stats::mean(&y)))
                    }
                    Err(err) => Err(err.into()),
                }
            });
            let points = fits.into_iter().collect::<Result<Vec<_>>>()?;
            Ok(CdfModel::Grid { knots, points, x: all, q, n: covariates.nrows() })
        }
    }
}

/// Aggregated rank quantities for one exposure level, on the sample rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSurfaces {
    pub level: usize,
    /// `Xi_e(i_j)` at every sample income, monotone in income.
    pub xi: Vec<f64>,
    /// `E(Xi_e(I) | X = x_k, E = e)` for every sample row.
    pub cond_xi: Vec<f64>,
}

fn blocked<F>(n: usize, block_rows: usize, exec: Exec, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut Vec<f64>) -> f64 + Sync + Send,
{
    let block = block_rows.max(1);
    let blocks = exec.map(n.div_ceil(block), |b| {
        let mut scratch = Vec::new();
        ((b * block)..((b + 1) * block).min(n)).map(|j| f(j, &mut scratch)).collect::<Vec<_>>()
    });
    blocks.into_iter().flatten().collect()
}

/// Raw `Xi_e` at each query income: the average of `N_e(i, x_k)` over the
/// sample rows `k`.
fn xi_raw(cdf: &CdfModel, incomes: &[f64], block_rows: usize, exec: Exec) -> Vec<f64> {
    let n = cdf.len();
    blocked(incomes.len(), block_rows, exec, |j, buf| {
        buf.resize(n, 0.0);
        cdf.row_into(incomes[j], buf);
        pairwise_sum(buf) / n as f64
    })
}

/// Isotonic projection over the income order; tied incomes share a value.
fn rearrange(incomes: &[f64], raw: &[f64]) -> Vec<f64> {
    let order = argsort(incomes);
    let sorted: Vec<f64> = order.iter().map(|&i| raw[i]).collect();
    let mut iso = isotonic_nondecreasing(&sorted);
    let mut s = 0;
    while s < order.len() {
        let mut t = s + 1;
        while t < order.len() && incomes[order[t]] == incomes[order[s]] {
            t += 1;
        }
        if t - s > 1 {
            let avg = iso[s..t].iter().sum::<f64>() / (t - s) as f64;
            iso[s..t].iter_mut().for_each(|v| *v = avg);
        }
        s = t;
    }
    let mut out = vec![0.0; raw.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = iso[pos].clamp(0.0, 1.0);
    }
    out
}

impl RankSurfaces {
    /// Evaluates both surfaces on the `n` sample rows in blocks of
    /// `block_rows` target rows. Results do not depend on the block size or
    /// on the execution strategy.
    pub fn evaluate(level: usize, data: &Dataset, pair: &RankPairModel, cdf: &CdfModel, block_rows: usize, exec: Exec) -> Self {
        let n = data.len();
        debug_assert_eq!(pair.len(), n);
        debug_assert_eq!(cdf.len(), n);
        let raw = xi_raw(cdf, data.income(), block_rows, exec);
        let xi = rearrange(data.income(), &raw);
        let cond_xi = blocked(n, block_rows, exec, |k, buf| {
            buf.clear();
            buf.extend((0..n).map(|l| pair.pair(k, l)));
            pairwise_sum(buf) / n as f64
        });
        Self { level, xi, cond_xi }
    }
}

/// `out_o = (1/n) sum_k w_k N_e(incomes_o, x_k)`.
pub fn weighted_cdf_means(cdf: &CdfModel, incomes: &[f64], weights: &[f64], block_rows: usize, exec: Exec) -> Vec<f64> {
    let n = cdf.len();
    blocked(incomes.len(), block_rows, exec, |o, buf| {
        buf.resize(n, 0.0);
        cdf.row_into(incomes[o], buf);
        for (v, w) in buf.iter_mut().zip(weights) {
            *v *= w;
        }
        pairwise_sum(buf) / n as f64
    })
}

/// `out_o = (1/n) sum_k w_k pair(k, o)`: the weighted average over target
/// rows of the probability that row `o`'s income lies below theirs.
pub fn weighted_pair_means(pair: &RankPairModel, weights: &[f64], block_rows: usize, exec: Exec) -> Vec<f64> {
    let n = pair.len();
    blocked(n, block_rows, exec, |o, buf| {
        buf.clear();
        buf.extend((0..n).map(|k| weights[k] * pair.pair(k, o)));
        pairwise_sum(buf) / n as f64
    })
}

/// `out_o = sum_j c_j N_e(incomes_j, x_o)` for every sample row `o`.
pub fn cdf_reference_sums(cdf: &CdfModel, incomes: &[f64], coef: &[f64], block_rows: usize, exec: Exec) -> Vec<f64> {
    blocked(cdf.len(), block_rows, exec, |o, buf| {
        buf.clear();
        buf.extend(incomes.iter().zip(coef).map(|(&i, c)| c * cdf.eval(i, o)));
        pairwise_sum(buf)
    })
}

/// `Xi_e` at arbitrary incomes, averaged over the kept sample and rearranged
/// to be monotone over the query set.
pub fn counterfactual_cdf(fits: &NuisanceFits, e: usize, incomes: &[f64]) -> Vec<f64> {
    let cdf = &fits.level(e).cdf;
    let raw = xi_raw(cdf, incomes, fits.options.block_rows, fits.options.exec());
    rearrange(incomes, &raw)
}

/// `E(Xi_e(I) | X = x_k, E = e)` for every kept row.
pub fn cond_rank_expectation(fits: &NuisanceFits, e: usize) -> Vec<f64> {
    fits.level(e).surfaces.cond_xi.clone()
}
