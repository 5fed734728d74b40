use nalgebra::{DMatrix, DVector};

use super::{check_full_rank, gram, DesignMatrix, Family, GlmError, GlmFit};

/// Ordinary least squares through a Householder QR factorisation.
pub fn fit_linear(x: &DesignMatrix, y: &[f64]) -> Result<GlmFit, GlmError> {
    if y.len() != x.nrows() {
        return Err(GlmError::DimensionMismatch { expected: x.nrows(), found: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::InvalidInput("response has non-finite values".into()));
    }
    check_full_rank(&gram(x))?;

    let p = x.ncols();
    let qr = x.matrix().clone().qr();
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let r = qr.r();
    let beta = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or(GlmError::RankDeficient { column: p - 1 })?;

    let resid = &yv - x.matrix() * &beta;
    let rss = resid.dot(&resid);
    Ok(GlmFit {
        family: Family::Linear,
        coefficients: DMatrix::from_row_slice(1, p, beta.as_slice()),
        constant: None,
        converged: true,
        iterations: 1,
        deviance: rss,
    })
}
