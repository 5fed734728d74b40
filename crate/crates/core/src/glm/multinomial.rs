use nalgebra::{DMatrix, DVector};

use super::{check_full_rank, gram, DesignMatrix, Family, GlmError, GlmFit, IrlsOptions};

const CHUNK: usize = 2048;

/// Softmax with class 0 as the zero-score baseline, written into `out`.
fn softmax_row(coef: &DMatrix<f64>, row: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for c in 1..out.len() {
        out[c] = (0..row.len()).map(|j| coef[(c - 1, j)] * row[j]).sum();
    }
    let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

pub(super) fn probabilities(coef: &DMatrix<f64>, classes: usize, x: &DesignMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), classes);
    let mut row = vec![0.0; x.ncols()];
    let mut probs = vec![0.0; classes];
    for i in 0..x.nrows() {
        x.row_into(i, &mut row);
        softmax_row(coef, &row, &mut probs);
        for c in 0..classes {
            out[(i, c)] = probs[c];
        }
    }
    out
}

struct Pass {
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
    deviance: f64,
}

fn evaluate(x: &DesignMatrix, labels: &[usize], classes: usize, coef: &DMatrix<f64>, opts: &IrlsOptions) -> Pass {
    let n = x.nrows();
    let p = x.ncols();
    let m = (classes - 1) * p;
    let nchunks = n.div_ceil(CHUNK);
    let parts = opts.exec.map(nchunks, |c| {
        let mut h = DMatrix::<f64>::zeros(m, m);
        let mut g = DVector::<f64>::zeros(m);
        let mut dev = 0.0;
        let mut row = vec![0.0; p];
        let mut pr = vec![0.0; classes];
        for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
            x.row_into(i, &mut row);
            softmax_row(coef, &row, &mut pr);
            dev -= 2.0 * pr[labels[i]].max(f64::MIN_POSITIVE).ln();
            for a in 1..classes {
                let resid = if labels[i] == a { 1.0 } else { 0.0 } - pr[a];
                for j in 0..p {
                    g[(a - 1) * p + j] += row[j] * resid;
                }
                for b in a..classes {
                    let w = pr[a] * (if a == b { 1.0 } else { 0.0 } - pr[b]);
                    for j in 0..p {
                        for l in 0..p {
                            h[((a - 1) * p + j, (b - 1) * p + l)] += w * row[j] * row[l];
                        }
                    }
                }
            }
        }
        (h, g, dev)
    });
    let mut hessian = DMatrix::zeros(m, m);
    let mut gradient = DVector::zeros(m);
    let mut deviance = 0.0;
    for (h, g, d) in parts {
        hessian += h;
        gradient += g;
        deviance += d;
    }
    // fill the lower class blocks from the upper ones
    for r in 0..m {
        for c in 0..r {
            if (c / p) < (r / p) {
                hessian[(r, c)] = hessian[(c, r)];
            }
        }
    }
    Pass { hessian, gradient, deviance }
}

/// Baseline-category multinomial logit fitted by damped Newton iterations.
///
/// `classes` may be 1, in which case the fit has no coefficients and every
/// predicted probability is 1.
pub fn fit_multinomial(x: &DesignMatrix, labels: &[usize], classes: usize, opts: &IrlsOptions) -> Result<GlmFit, GlmError> {
    let n = x.nrows();
    let p = x.ncols();
    if labels.len() != n {
        return Err(GlmError::DimensionMismatch { expected: n, found: labels.len() });
    }
    if classes == 0 {
        return Err(GlmError::InvalidInput("at least one class is required".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(GlmError::InvalidInput(format!("label {bad} outside 0..{classes}")));
    }
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(GlmError::EmptyClass { class });
    }
    let mut coef = DMatrix::zeros(classes - 1, p);
    if classes == 1 {
        return Ok(GlmFit {
            family: Family::Multinomial { classes },
            coefficients: coef,
            constant: None,
            converged: true,
            iterations: 0,
            deviance: 0.0,
        });
    }
    check_full_rank(&gram(x))?;

    let nf = n as f64;
    let mut state = evaluate(x, labels, classes, &coef, opts);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let step = match state.hessian.clone().cholesky() {
            Some(ch) => ch.solve(&state.gradient),
            None => return Err(GlmError::Separation { max_abs: super::max_abs(&coef), bound: opts.separation_bound }),
        };
        let step = DMatrix::from_row_slice(classes - 1, p, step.as_slice());
        let mut scale = 1.0;
        let mut halvings = 0;
        let (cand, next) = loop {
            let cand = &coef + &step * scale;
            let next = evaluate(x, labels, classes, &cand, opts);
            if next.deviance.is_finite() && next.deviance <= state.deviance * (1.0 + 1e-12) + 1e-12 {
                break (cand, next);
            }
            halvings += 1;
            if halvings > 30 {
                break (coef.clone(), evaluate(x, labels, classes, &coef, opts));
            }
            scale *= 0.5;
        };
        debug_assert!(next.deviance <= state.deviance * (1.0 + 1e-10) + 1e-10, "Newton deviance increased");
        let coef_norm = super::max_abs(&cand);
        if coef_norm > opts.separation_bound {
            return Err(GlmError::Separation { max_abs: coef_norm, bound: opts.separation_bound });
        }
        let moved = super::max_abs(&(&cand - &coef));
        let rel = (state.deviance - next.deviance).abs() / (next.deviance.abs() + 0.1);
        let score_max = next.gradient.amax() / nf;
        let stalled = halvings > 30;
        coef = cand;
        state = next;
        if score_max < opts.score_tol && ((rel < opts.deviance_tol && moved <= 1e-6 * (1.0 + coef_norm)) || stalled) {
            converged = true;
            break;
        }
        if stalled {
            break;
        }
    }
    Ok(GlmFit {
        family: Family::Multinomial { classes },
        coefficients: coef,
        constant: None,
        converged,
        iterations,
        deviance: state.deviance,
    })
}
