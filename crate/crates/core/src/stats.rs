//! Small numerical helpers shared by the fitting and estimation code.

use statrs::distribution::{ContinuousCDF, Normal};
use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
///
/// Evaluated through the `libm` port of the fdlibm `erfc` (piecewise rational
/// approximations, error below one ulp), so both tails keep full relative
/// accuracy.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Two-sided normal critical value for a confidence level in (0, 1).
pub fn normal_critical_value(level: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    std.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Logistic function with a branch that avoids overflow for large |x|.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise (cascade) summation. The association order depends only on the
/// slice length, so sums are reproducible bit for bit.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Sample variance with the `n - 1` denominator. `NaN` for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&dev) / (values.len() - 1) as f64
}

pub fn sample_sd(values: &[f64]) -> f64 {
    sample_variance(values).sqrt()
}

/// Equal-weight isotonic (nondecreasing) regression by pool-adjacent-violators.
///
/// The output has the same total as the input, so means are preserved.
pub fn isotonic_nondecreasing(values: &[f64]) -> Vec<f64> {
    // (sum, count) per pooled block
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 1];
            let (s0, c0) = blocks[blocks.len() - 2];
            if s0 / c0 as f64 > s1 / c1 as f64 {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = (s0 + s1, c0 + c1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (s, c) in blocks {
        let avg = s / c as f64;
        out.extend(std::iter::repeat_n(avg, c));
    }
    out
}

/// Indices that sort `values` ascending (stable for ties).
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

/// Empirical CDF of `sample` evaluated at each point of `at`, counting ties
/// as "less than or equal".
pub fn ecdf_at(sample: &[f64], at: &[f64]) -> Vec<f64> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    at.iter()
        .map(|&t| sorted.partition_point(|&s| s <= t) as f64 / n)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        // reference values from high precision tables
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.96, 0.024_997_895_148_220_43),
            (3.0, 0.998_650_101_968_369_9),
            (-5.0, 2.866_515_718_791_939e-7),
        ];
        for (x, p) in cases {
            assert!((norm_cdf(x) - p).abs() < 1e-12, "x = {x}: {} vs {p}", norm_cdf(x));
        }
        assert!(norm_cdf(-10.0) > 0.0 && norm_cdf(-10.0) < 1e-22);
    }

    #[test]
    fn normal_density_integrates_to_cdf_difference() {
        // Simpson's rule on [-1, 1.5]
        let (a, b, m) = (-1.0, 1.5, 2000);
        let h = (b - a) / m as f64;
        let mut s = norm_pdf(a) + norm_pdf(b);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * norm_pdf(a + k as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!((integral - (norm_cdf(b) - norm_cdf(a))).abs() < 1e-10);
    }

    #[test]
    fn critical_value_95() {
        assert!((normal_critical_value(0.95) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn pava_pools_violators_and_keeps_total() {
        let v = [0.1, 0.3, 0.2, 0.2, 0.9, 0.5];
        let r = isotonic_nondecreasing(&v);
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
        let expect = [0.1, 0.7 / 3.0, 0.7 / 3.0, 0.7 / 3.0, 0.7, 0.7];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((v.iter().sum::<f64>() - r.iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn ecdf_counts_ties_as_le() {
        let f = ecdf_at(&[1.0, 2.0, 2.0, 3.0], &[0.0, 2.0, 3.0]);
        assert_eq!(f, vec![0.0, 0.75, 1.0]);
    }

    #[test]
    fn variance_uses_n_minus_one() {
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }
}
