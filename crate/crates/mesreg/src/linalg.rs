//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number guard used before inverting the Hessian-type blocks.
pub const COND_LIMIT: f64 = 1e12;

/// Least-squares solution of `a * theta = b` via a rank-revealing SVD.
///
/// Single-column designs are solved by plain dot products so that an
/// intercept-only regression reduces to the subsample mean exactly.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::Dimension(format!(
            "{what}: {rows} rows for {cols} parameters"
        )));
    }
    if cols == 1 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..rows {
            num += a[(i, 0)] * b[i];
            den += a[(i, 0)] * a[(i, 0)];
        }
        if den == 0.0 {
            return Err(Error::Singular(format!("{what}: zero column")));
        }
        return Ok(DVector::from_element(1, num / den));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = f64::EPSILON * rows.max(cols) as f64 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < cols {
        return Err(Error::Singular(format!(
            "{what}: rank {rank} < {cols} columns"
        )));
    }
    svd.solve(b, eps)
        .map_err(|e| Error::Singular(format!("{what}: {e}")))
}

/// Numerical rank via SVD with the usual epsilon threshold.
pub fn rank(a: &DMatrix<f64>) -> usize {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    let eps = f64::EPSILON * a.nrows().max(a.ncols()) as f64 * smax;
    svd.singular_values.iter().filter(|&&s| s > eps).count()
}

/// 2-norm condition number; infinite for singular or zero matrices.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Inverse guarded by the condition-number limit; the label names the
/// offending block in the error.
pub fn invert_guarded(a: &DMatrix<f64>, label: &str) -> Result<(DMatrix<f64>, f64)> {
    let cond = condition_number(a);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::Singular(format!(
            "{label} has condition number {cond:.3e}"
        )));
    }
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{label} is not invertible")))?;
    Ok((inv, cond))
}

/// Symmetrize as (A + A')/2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Relative asymmetry ‖A − A'‖ / ‖A‖ (Frobenius), 0 for the zero matrix.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        0.0
    } else {
        (a - a.transpose()).norm() / norm
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    eig.eigenvalues.min()
}

/// Sample median (mid-mean for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Type-1 (left-continuous inverse ecdf) empirical quantile.
///
/// The order-statistic index is the smallest integer k with k >= len * p;
/// products within 1e-9 of an integer are snapped to it so that levels such
/// as 0.9 on a sample of 10 pick the 9th order statistic.
pub fn quantile_type1(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t = v.len() as f64 * p;
    let r = t.round();
    let k = if (t - r).abs() < 1e-9 { r } else { t.ceil() };
    let idx = (k as usize).clamp(1, v.len());
    v[idx - 1]
}
