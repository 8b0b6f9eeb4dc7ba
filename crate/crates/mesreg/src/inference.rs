//! Asymptotic covariance estimation for the two-step estimator.
//!
//! The covariance has the sandwich form G M G' with
//! G = [[L^-1, 0], [-L1^-1 L2 L^-1, L1^-1]] and M = blockdiag(V, M*),
//! estimated by plug-in sample analogues. The density-type blocks use a
//! uniform kernel with the median-absolute-deviation bandwidth of the
//! Koenker / Machado–Santos Silva rule.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::{condition_number, invert_guarded, symmetrize};
use crate::mes::MesFit;
use crate::quantile::VarFit;
use crate::special::{norm_pdf, norm_quantile};

/// Uniform-kernel bandwidth c_n = MAD(residuals) * (Phi^-1(beta + m) - Phi^-1(beta - m)).
#[derive(Debug, Clone, Copy)]
pub struct Bandwidth {
    pub c_n: f64,
    /// Unscaled sample median absolute deviation of the VaR residuals.
    pub mad: f64,
    /// The spread term m(n, beta).
    pub m_nbeta: f64,
}

/// m(n, beta) = n^(-1/3) (Phi^-1(0.975))^(2/3) (1.5 phi(Phi^-1(beta))^2 / (2 Phi^-1(beta)^2 + 1))^(1/3)
pub fn bandwidth_spread(n: usize, beta: f64) -> Result<f64> {
    let z = norm_quantile(beta)?;
    let z975 = norm_quantile(0.975)?;
    let num = 1.5 * norm_pdf(z) * norm_pdf(z);
    let den = 2.0 * z * z + 1.0;
    Ok((n as f64).powf(-1.0 / 3.0) * z975.powf(2.0 / 3.0) * (num / den).powf(1.0 / 3.0))
}

/// Bandwidth from the VaR residuals x_t - v_t.
pub fn bandwidth(var_residuals: &[f64], beta: f64, n: usize) -> Result<Bandwidth> {
    if n < 2 || var_residuals.len() != n {
        return Err(Error::Dimension(format!(
            "bandwidth needs n >= 2 residuals, got {} for n = {n}",
            var_residuals.len()
        )));
    }
    let m = bandwidth_spread(n, beta)?;
    if !(beta + m < 1.0 && beta - m > 0.0) {
        return Err(Error::Level(format!(
            "beta +/- m(n, beta) = {} +/- {m} leaves (0, 1); a larger sample is required",
            beta
        )));
    }
    let med = crate::linalg::median(var_residuals);
    let abs_dev: Vec<f64> = var_residuals.iter().map(|r| (r - med).abs()).collect();
    let mad = crate::linalg::median(&abs_dev);
    if mad == 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    let c_n = mad * (norm_quantile(beta + m)? - norm_quantile(beta - m)?);
    Ok(Bandwidth { c_n, mad, m_nbeta: m })
}

/// The plug-in matrices of the covariance estimator, with condition numbers
/// of the two blocks that must be inverted.
#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub v_hat: DMatrix<f64>,
    pub lambda_hat: DMatrix<f64>,
    pub m_star_hat: DMatrix<f64>,
    pub lambda1_hat: DMatrix<f64>,
    pub lambda2_hat: DMatrix<f64>,
    pub cond_lambda: f64,
    pub cond_lambda1: f64,
}

/// Sample analogues of V, Lambda, M*, Lambda_(1) and Lambda_(2), all
/// evaluated at the two-step estimates.
pub fn estimate_matrices(
    dataset: &Dataset,
    spec: &ModelSpec,
    var_fit: &VarFit,
    mes_fit: &MesFit,
    bw: &Bandwidth,
) -> FitDiagnostics {
    let n = dataset.n();
    let p = spec.p;
    let q = spec.q;
    let beta = spec.beta;
    let c = bw.c_n;
    let inv_2c = 1.0 / (2.0 * c);

    let mut v_hat = DMatrix::zeros(p, p);
    let mut lambda_hat = DMatrix::zeros(p, p);
    let mut m_star_hat = DMatrix::zeros(q, q);
    let mut lambda1_hat = DMatrix::zeros(q, q);
    let mut lambda2_hat = DMatrix::zeros(q, p);

    let mut z_row = vec![0.0; dataset.z_v.ncols()];
    let mut zm_row = vec![0.0; dataset.z_m.ncols()];
    let mut grad_v = vec![0.0; p];
    let mut grad_m = vec![0.0; q];
    let theta_v = var_fit.theta_v.as_slice();
    let theta_m = mes_fit.theta_m.as_slice();

    for t in 0..n {
        for j in 0..dataset.z_v.ncols() {
            z_row[j] = dataset.z_v[(t, j)];
        }
        for j in 0..dataset.z_m.ncols() {
            zm_row[j] = dataset.z_m[(t, j)];
        }
        spec.var_link.gradient(&z_row, theta_v, &mut grad_v);
        spec.mes_link.gradient(&zm_row, theta_m, &mut grad_m);

        let u = dataset.x[t] - var_fit.fitted[t];
        let in_window = u.abs() < c;
        let exceed = var_fit.exceed_mask[t];
        let e_m = dataset.y[t] - mes_fit.fitted[t];

        for a in 0..p {
            for b in 0..p {
                let vv = grad_v[a] * grad_v[b];
                v_hat[(a, b)] += vv;
                if in_window {
                    lambda_hat[(a, b)] += inv_2c * vv;
                }
            }
        }
        for a in 0..q {
            for b in 0..q {
                let mm = grad_m[a] * grad_m[b];
                lambda1_hat[(a, b)] += mm;
                if exceed {
                    m_star_hat[(a, b)] += e_m * e_m * mm;
                }
            }
        }
        if in_window {
            for a in 0..q {
                for b in 0..p {
                    lambda2_hat[(a, b)] += e_m * inv_2c * grad_m[a] * grad_v[b];
                }
            }
        }
    }
    let n_f = n as f64;
    v_hat *= beta * (1.0 - beta) / n_f;
    lambda_hat /= n_f;
    m_star_hat /= n_f;
    lambda1_hat *= (1.0 - beta) / n_f;
    lambda2_hat /= n_f;

    let cond_lambda = condition_number(&lambda_hat);
    let cond_lambda1 = condition_number(&lambda1_hat);
    FitDiagnostics {
        v_hat,
        lambda_hat,
        m_star_hat,
        lambda1_hat,
        lambda2_hat,
        cond_lambda,
        cond_lambda1,
    }
}

/// Assemble G M G' from the estimated blocks; symmetrized before return.
pub fn sandwich(diag: &FitDiagnostics) -> Result<DMatrix<f64>> {
    let p = diag.lambda_hat.nrows();
    let q = diag.lambda1_hat.nrows();
    let (lambda_inv, _) = invert_guarded(&diag.lambda_hat, "Lambda")?;
    let (lambda1_inv, _) = invert_guarded(&diag.lambda1_hat, "Lambda_1")?;

    let dim = p + q;
    let mut gamma = DMatrix::zeros(dim, dim);
    gamma.view_mut((0, 0), (p, p)).copy_from(&lambda_inv);
    let lower_left = -(&lambda1_inv * &diag.lambda2_hat * &lambda_inv);
    gamma.view_mut((p, 0), (q, p)).copy_from(&lower_left);
    gamma.view_mut((p, p), (q, q)).copy_from(&lambda1_inv);

    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (p, p)).copy_from(&diag.v_hat);
    m.view_mut((p, p), (q, q)).copy_from(&diag.m_star_hat);

    let avar = &gamma * &m * gamma.transpose();
    Ok(symmetrize(&avar))
}

/// Standard errors, two-sided normal tests and confidence intervals.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub estimates: DVector<f64>,
    pub se: DVector<f64>,
    pub t_stats: DVector<f64>,
    pub p_values: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    pub level: f64,
}

/// Inference report for a joint fit at the given confidence level.
pub fn report(fit: &crate::mes::JointFit, level: f64) -> Result<InferenceReport> {
    let avar = fit.avar.as_ref().ok_or_else(|| {
        Error::InferenceUnavailable(
            "the fit carries no covariance (see its warnings)".into(),
        )
    })?;
    report_from_parts(fit.estimates(), avar, fit.n, level)
}

/// Build the report from stacked estimates and the asymptotic covariance;
/// the per-sample covariance is `avar / n`.
pub fn report_from_parts(
    estimates: DVector<f64>,
    avar: &DMatrix<f64>,
    n: usize,
    level: f64,
) -> Result<InferenceReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Level(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let dim = estimates.len();
    if avar.nrows() != dim || avar.ncols() != dim {
        return Err(Error::Dimension(format!(
            "avar is {}x{} for {dim} estimates",
            avar.nrows(),
            avar.ncols()
        )));
    }
    let z = norm_quantile(1.0 - (1.0 - level) / 2.0)?;
    let mut se = DVector::zeros(dim);
    let mut t = DVector::zeros(dim);
    let mut pv = DVector::zeros(dim);
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for i in 0..dim {
        let variance = avar[(i, i)] / n as f64;
        se[i] = variance.max(0.0).sqrt();
        t[i] = if se[i] > 0.0 {
            estimates[i] / se[i]
        } else {
            f64::INFINITY * estimates[i].signum()
        };
        pv[i] = 2.0 * (1.0 - crate::special::norm_cdf(t[i].abs()));
        lo[i] = estimates[i] - z * se[i];
        hi[i] = estimates[i] + z * se[i];
    }
    Ok(InferenceReport {
        estimates,
        se,
        t_stats: t,
        p_values: pv,
        ci_lower: lo,
        ci_upper: hi,
        level,
    })
}
