//! Quasi-Newton descent used by both estimation steps.

use nalgebra::{DMatrix, DVector};

pub(crate) struct BfgsOutcome {
    pub theta: DVector<f64>,
    pub converged: bool,
}

/// Minimize a smooth objective by BFGS with Armijo backtracking.
///
/// `f` evaluates the objective and writes the gradient into its second
/// argument. Stops when the gradient norm falls below `gtol` or after
/// `max_iter` iterations.
pub(crate) fn bfgs<F>(
    f: &mut F,
    theta0: DVector<f64>,
    gtol: f64,
    max_iter: usize,
) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let dim = theta0.len();
    let mut theta = theta0;
    let mut grad = DVector::zeros(dim);
    let mut value = f(&theta, &mut grad);
    let mut h_inv = DMatrix::identity(dim, dim);
    let mut converged = grad.norm() <= gtol;

    for _ in 0..max_iter {
        if grad.norm() <= gtol {
            converged = true;
            break;
        }
        let mut dir = -(&h_inv * &grad);
        let mut slope = dir.dot(&grad);
        if !(slope < 0.0) {
            // reset to steepest descent if curvature information went bad
            h_inv = DMatrix::identity(dim, dim);
            dir = -grad.clone();
            slope = dir.dot(&grad);
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut new_theta;
        let mut new_grad = DVector::zeros(dim);
        let mut new_value;
        let mut ok = false;
        for _ in 0..60 {
            new_theta = &theta + &dir * step;
            new_value = f(&new_theta, &mut new_grad);
            if new_value.is_finite() && new_value <= value + 1e-4 * step * slope {
                let s = &new_theta - &theta;
                let yv = &new_grad - &grad;
                let sy = s.dot(&yv);
                if sy > 1e-12 * s.norm() * yv.norm() {
                    let rho = 1.0 / sy;
                    let i = DMatrix::identity(dim, dim);
                    let left = &i - &s * yv.transpose() * rho;
                    let right = &i - &yv * s.transpose() * rho;
                    h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
                }
                theta = new_theta;
                grad = new_grad.clone();
                value = new_value;
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if !ok {
            break;
        }
    }
    if grad.norm() <= gtol {
        converged = true;
    }
    BfgsOutcome { theta, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let mut f = |t: &DVector<f64>, g: &mut DVector<f64>| {
            g[0] = 2.0 * (t[0] - 3.0);
            g[1] = 8.0 * (t[1] + 1.0);
            (t[0] - 3.0).powi(2) + 4.0 * (t[1] + 1.0).powi(2)
        };
        let out = bfgs(&mut f, DVector::zeros(2), 1e-10, 200);
        assert!(out.converged);
        assert!((out.theta[0] - 3.0).abs() < 1e-8);
        assert!((out.theta[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let mut f = |t: &DVector<f64>, g: &mut DVector<f64>| {
            let (a, b) = (t[0], t[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let out = bfgs(&mut f, DVector::from_vec(vec![-1.2, 1.0]), 1e-9, 500);
        assert!((out.theta[0] - 1.0).abs() < 1e-6);
        assert!((out.theta[1] - 1.0).abs() < 1e-6);
    }
}
