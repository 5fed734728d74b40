//! Shared helpers for the integration tests: a loop-by-loop transcription of
//! the influence functions and estimators, and small data generators.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ccindex::estimators::Variant;
use ccindex::nuisance::{Dataset, NuisanceFits};

pub struct Oracle {
    pub a: f64,
    pub b: f64,
    pub phi: Vec<f64>,
    pub phi_a: Vec<f64>,
    pub phi_b: Vec<f64>,
    pub plug_in: f64,
    pub one_step: f64,
    pub est_eq: f64,
}

/// Least squares of `target` on `(1, x)` over `rows`, predicted at every row
/// of `x`, through a singular value decomposition.
fn ols_predict(x: &DMatrix<f64>, rows: &[usize], target: &[f64]) -> Vec<f64> {
    let p = x.ncols() + 1;
    let design = DMatrix::from_fn(rows.len(), p, |r, c| if c == 0 { 1.0 } else { x[(rows[r], c - 1)] });
    let beta = design.svd(true, true).solve(&DVector::from_column_slice(target), 1e-13).expect("svd solve");
    (0..x.nrows())
        .map(|k| beta[0] + (1..p).map(|c| beta[c] * x[(k, c - 1)]).sum::<f64>())
        .collect()
}

/// Evaluates the efficient influence function of `G(e)` with every
/// expectation written out as an explicit loop over the kept sample.
///
/// Inputs are the fitted nuisance functions themselves: propensities,
/// outcome means, the pairwise rank model, the conditional income CDF and
/// the monotone `Xi` at the sample incomes. Conditional expectations over
/// income given `x_k` are taken with the fitted models; outer expectations
/// are sample means.
pub fn oracle(fits: &NuisanceFits, e: usize, variant: Variant) -> Oracle {
    let d = &fits.data;
    let n = d.len();
    let nf = n as f64;
    let lf = fits.level(e);
    let (y, inc, ex) = (d.y(), d.income(), d.exposure());
    let m = &lf.outcome_mean;
    let xi = &lf.surfaces.xi;
    let h: Vec<f64> = (0..n).map(|o| if ex[o] == e { 1.0 / lf.propensity[o] } else { 0.0 }).collect();
    let pair = |j: usize, k: usize| lf.rank_pair.pair(j, k);
    let cdf = |i: f64, k: usize| lf.cdf.eval(i, k);

    let mut b = 0.0;
    for k in 0..n {
        b += m[k];
    }
    b /= nf;
    let phi_b: Vec<f64> = (0..n).map(|o| h[o] * (y[o] - m[o]) + m[o] - b).collect();

    // E(Xi(I) | x_k, E = e): average over reference rows of P(I_ref <= I | x_k, x_ref)
    let mut c = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for l in 0..n {
            s += pair(k, l);
        }
        c[k] = s / nf;
    }

    let (a, phi_a) = match variant {
        Variant::A1 => {
            let mut a = 0.0;
            for k in 0..n {
                a += m[k] * c[k];
            }
            a /= nf;
            let phi_a: Vec<f64> = (0..n)
                .map(|o| {
                    let own = h[o] * (y[o] * xi[o] - m[o] * c[o]) + m[o] * c[o] - a;
                    // E_X[ M(X) E{ phi_Xi(I, o) | X } ]
                    let mut nested = 0.0;
                    for k in 0..n {
                        let above = 1.0 - cdf(inc[o], k); // E{1(i_o <= I) | x_k}
                        let below_o = pair(k, o); // E{N(I, x_o) | x_k}
                        let phi_xi = h[o] * (above - below_o) + below_o - c[k];
                        nested += m[k] * phi_xi;
                    }
                    own + nested / nf
                })
                .collect();
            (a, phi_a)
        }
        Variant::A2 => {
            let x = &fits.covariates.outcome;
            let arm: Vec<usize> = (0..n).filter(|&j| ex[j] == e).collect();
            let r = ols_predict(x, &arm, &arm.iter().map(|&j| y[j] * xi[j]).collect::<Vec<_>>());
            let a = r.iter().sum::<f64>() / nf;
            let phi_a: Vec<f64> = (0..n)
                .map(|o| {
                    let own = h[o] * (y[o] * xi[o] - r[o]) + r[o] - a;
                    // E_X[ E{ Y phi_Xi(I, o) | X } ] with each inner regression refitted
                    let t1: Vec<f64> = arm.iter().map(|&j| y[j] * if inc[o] <= inc[j] { 1.0 } else { 0.0 }).collect();
                    let t2: Vec<f64> = arm.iter().map(|&j| y[j] * cdf(inc[j], o)).collect();
                    let s1 = ols_predict(x, &arm, &t1).iter().sum::<f64>() / nf;
                    let s2 = ols_predict(x, &arm, &t2).iter().sum::<f64>() / nf;
                    own + h[o] * (s1 - s2) + s2 - a
                })
                .collect();
            (a, phi_a)
        }
    };

    let phi: Vec<f64> = (0..n).map(|o| 2.0 * phi_a[o] / b - 2.0 * phi_b[o] * a / (b * b)).collect();
    let plug_in = 2.0 * a / b - 1.0;
    let one_step = plug_in + phi.iter().sum::<f64>() / nf;
    let mean_a = phi_a.iter().sum::<f64>() / nf;
    let mean_b = phi_b.iter().sum::<f64>() / nf;
    let est_eq = 2.0 * (mean_a + 2.0 * a) / (mean_b + 2.0 * b) - 1.0;
    Oracle { a, b, phi, phi_a, phi_b, plug_in, one_step, est_eq }
}

/// `|got - want| <= tol * max(1, |want|)`.
pub fn close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want.abs().max(1.0)
}

/// Dataset with exposure and income independent of the covariates:
/// `k` levels assigned uniformly, `I = level shift + 2 * noise`.
pub fn randomized(n: usize, k: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { 10.0 } + rng.sample::<f64, _>(StandardNormal));
    let exposure: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let income: Vec<f64> = exposure.iter().map(|&e| e as f64 + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = (0..n).map(|i| 20.0 + 10.0 * x[(i, 0)] + 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::new(y, income, exposure, x, k).unwrap()
}

/// Kolmogorov distance between `Xi` evaluated at the sorted arm incomes
/// and the arm's empirical CDF, checking both sides of every jump.
pub fn sup_to_ecdf(sorted_arm_income: &[f64], xi: &[f64]) -> f64 {
    let m = sorted_arm_income.len() as f64;
    let mut s: f64 = 0.0;
    let mut t = 0;
    while t < sorted_arm_income.len() {
        let mut u = t + 1;
        while u < sorted_arm_income.len() && sorted_arm_income[u] == sorted_arm_income[t] {
            u += 1;
        }
        let (below, at) = (t as f64 / m, u as f64 / m);
        for v in &xi[t..u] {
            s = s.max((v - below).abs()).max((v - at).abs());
        }
        t = u;
    }
    s
}

/// Whether `xi` is non-decreasing along increasing `income` and in `[0, 1]`.
pub fn monotone_in_unit_interval(income: &[f64], xi: &[f64]) -> bool {
    let mut order: Vec<usize> = (0..income.len()).collect();
    order.sort_by(|&a, &b| income[a].total_cmp(&income[b]));
    xi.iter().all(|v| (0.0..=1.0).contains(v)) && order.windows(2).all(|w| xi[w[0]] <= xi[w[1]])
}

/// Small confounded dataset for oracle comparisons: `k` levels with at least
/// three rows each, `q` covariates.
pub fn small_dataset(n: usize, k: usize, q: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let x = DMatrix::from_fn(n, q, |_, _| z());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let exposure: Vec<usize> = (0..n)
        .map(|i| if i < 3 * k { i % k } else { ((x[(i, 0)] * 0.5 + rng.gen::<f64>() * k as f64) as usize).min(k - 1) })
        .collect();
    let income: Vec<f64> = (0..n).map(|i| x[(i, 0)] + exposure[i] as f64 * 0.3 + rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = (0..n).map(|i| 5.0 + x[(i, q - 1)] + 0.5 * income[i] + rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::new(y, income, exposure, x, k).unwrap()
}

/// Fits one small dataset and compares the library against [`oracle`] for
/// every level. `None` when the nuisance fit itself fails (separation or
/// rank deficiency on a tiny sample).
pub fn oracle_case(
    n: usize,
    k: usize,
    q: usize,
    strategy: ccindex::nuisance::CdfStrategy,
    variant: Variant,
    seed: u64,
    tol: f64,
) -> Option<Result<(), String>> {
    use ccindex::estimators::{eif, est_eq, one_step, plug_in};
    use ccindex::nuisance::{fit_nuisance, LinearLearner, ModelCovariates, NuisanceOptions};
    use std::sync::Arc;

    let d = small_dataset(n, k, q, seed);
    let opts = NuisanceOptions { cdf_strategy: strategy, product_regression: variant == Variant::A2, ..Default::default() };
    let fits = fit_nuisance(&d, &ModelCovariates::shared(&d), Arc::new(LinearLearner), &opts).ok()?;
    for e in 0..k {
        let want = oracle(&fits, e, variant);
        let got = match eif(&fits, e, variant) {
            Ok(v) => v,
            Err(_) => return None,
        };
        let tag = format!("n {n}, k {k}, q {q}, {strategy:?}, {variant:?}, seed {seed}, level {e}");
        for (o, (g, w)) in got.values.iter().zip(&want.phi).enumerate() {
            if !close(*g, *w, tol) {
                return Some(Err(format!("{tag}: phi[{o}] {g} vs oracle {w}")));
            }
        }
        let checks = [
            ("plug-in", plug_in(&fits, e, variant, 0.95).map(|x| x.value), want.plug_in),
            ("one-step", one_step(&fits, e, variant, 0.95).map(|x| x.value), want.one_step),
            ("est-eq", est_eq(&fits, e, variant, 0.95).map(|x| x.value), want.est_eq),
        ];
        for (name, got, want) in checks {
            match got {
                Ok(g) if close(g, want, tol) => {}
                Ok(g) => return Some(Err(format!("{tag}: {name} {g} vs oracle {want}"))),
                Err(err) => return Some(Err(format!("{tag}: {name} failed: {err}"))),
            }
        }
    }
    Some(Ok(()))
}
