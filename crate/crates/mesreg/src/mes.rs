//! Second-step estimator and the joint two-step fit.
//!
//! Given the first-step VaR fit, the MES objective is the truncated squared
//! error over the exceedance subsample. With a linear link this is ordinary
//! least squares on that subsample; the indicator does not depend on the MES
//! parameters, so custom links face a smooth problem and are solved by BFGS.

use nalgebra::{DMatrix, DVector};

use crate::data::{validate, Dataset, Link, ModelSpec};
use crate::error::{Error, Result};
use crate::inference::{bandwidth, estimate_matrices, sandwich, Bandwidth, FitDiagnostics};
use crate::linalg::solve_least_squares;
use crate::optim::bfgs;
use crate::quantile::{eval_rows, fit_var, VarFit};

/// Inference requires this many exceedances; estimation alone needs q.
pub const MIN_EXCEEDANCES_FOR_INFERENCE: usize = 5;

/// Result of the second estimation step.
#[derive(Debug, Clone)]
pub struct MesFit {
    pub theta_m: DVector<f64>,
    /// m_t at the estimate, for every row of the sample.
    pub fitted: DVector<f64>,
    pub n_exceed: usize,
    pub final_loss: f64,
    pub multistart_spread: Option<f64>,
}

/// Non-fatal conditions attached to a joint fit.
#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// Covariance estimation failed; point estimates remain valid.
    InferenceDegraded(String),
    /// Fewer than [`MIN_EXCEEDANCES_FOR_INFERENCE`] exceedances.
    FewExceedances(usize),
    /// Multistart runs disagreed by more than 1e-4 in objective.
    MultistartDisagreement(f64),
}

/// Complete two-step fit with covariance and diagnostics.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub theta_v: DVector<f64>,
    pub theta_m: DVector<f64>,
    pub n: usize,
    /// Uniform-kernel bandwidth c_n (absent when inference degraded early).
    pub bandwidth: Option<f64>,
    /// Asymptotic matrix G M G'; per-sample covariance is avar / n.
    pub avar: Option<DMatrix<f64>>,
    /// sqrt(avar_ii / n), stacked (VaR then MES).
    pub se: Option<DVector<f64>>,
    pub exceedance_count: usize,
    pub converged: bool,
    /// (final VaR loss, final MES loss).
    pub loss_values: (f64, f64),
    pub diagnostics: Option<FitDiagnostics>,
    pub warnings: Vec<FitWarning>,
}

impl JointFit {
    /// Stacked parameter vector (VaR part first).
    pub fn estimates(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.theta_v.len() + self.theta_m.len());
        out.rows_mut(0, self.theta_v.len()).copy_from(&self.theta_v);
        out.rows_mut(self.theta_v.len(), self.theta_m.len())
            .copy_from(&self.theta_m);
        out
    }
}

fn mes_objective(
    link: &Link,
    theta: &DVector<f64>,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    mask: &[bool],
) -> f64 {
    let fitted = eval_rows(link, theta, z);
    let n = y.len();
    (0..n)
        .filter(|&t| mask[t])
        .map(|t| 0.5 * (y[t] - fitted[t]).powi(2))
        .sum::<f64>()
        / n as f64
}

fn mes_value_grad(
    link: &Link,
    theta: &DVector<f64>,
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    mask: &[bool],
    grad: &mut DVector<f64>,
) -> f64 {
    let n = z.nrows();
    grad.fill(0.0);
    let mut row = vec![0.0; z.ncols()];
    let mut g_row = vec![0.0; theta.len()];
    let mut value = 0.0;
    for t in 0..n {
        if !mask[t] {
            continue;
        }
        for j in 0..z.ncols() {
            row[j] = z[(t, j)];
        }
        let m = link.value(&row, theta.as_slice());
        let e = y[t] - m;
        value += 0.5 * e * e;
        link.gradient(&row, theta.as_slice(), &mut g_row);
        for j in 0..theta.len() {
            grad[j] -= e * g_row[j];
        }
    }
    *grad /= n as f64;
    value / n as f64
}

/// Second-step fit on the exceedance subsample of `var_fit`.
pub fn fit_mes(dataset: &Dataset, spec: &ModelSpec, var_fit: &VarFit) -> Result<MesFit> {
    if var_fit.fitted.len() != dataset.n() {
        return Err(Error::Dimension(
            "var_fit was computed on a sample of different length".into(),
        ));
    }
    let mask = &var_fit.exceed_mask;
    let n_exceed = mask.iter().filter(|&&e| e).count();
    if n_exceed < spec.q {
        return Err(Error::InsufficientExceedances {
            got: n_exceed,
            need: spec.q,
        });
    }

    let (theta, spread) = match &spec.mes_link {
        Link::Linear => {
            let rows: Vec<usize> = (0..dataset.n()).filter(|&t| mask[t]).collect();
            let mut a = DMatrix::zeros(n_exceed, spec.q);
            let mut b = DVector::zeros(n_exceed);
            for (i, &t) in rows.iter().enumerate() {
                for j in 0..spec.q {
                    a[(i, j)] = dataset.z_m[(t, j)];
                }
                b[i] = dataset.y[t];
            }
            let theta = solve_least_squares(&a, &b, "exceedance-subsample design")?;
            (theta, None)
        }
        Link::Custom { f: _, start } => {
            let base = DVector::from_vec(start.clone());
            // one Gauss-Newton step from the user start as initialization
            let init = gauss_newton_step(&spec.mes_link, &base, dataset, mask, n_exceed)
                .unwrap_or_else(|| base.clone());
            let mut best: Option<(DVector<f64>, f64)> = None;
            let mut worst = f64::NEG_INFINITY;
            for k in 0..5 {
                let s0 = if k == 0 {
                    init.clone()
                } else {
                    perturb(&init, k)
                };
                let mut obj = |t: &DVector<f64>, g: &mut DVector<f64>| {
                    mes_value_grad(&spec.mes_link, t, &dataset.z_m, &dataset.y, mask, g)
                };
                let out = bfgs(&mut obj, s0, 1e-8, 500);
                let f = mes_objective(&spec.mes_link, &out.theta, &dataset.z_m, &dataset.y, mask);
                worst = worst.max(f);
                match &best {
                    Some((_, fb)) if *fb <= f => {}
                    _ => best = Some((out.theta, f)),
                }
            }
            let (theta, f_best) = best.unwrap();
            (theta, Some(worst - f_best))
        }
    };

    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Convergence {
            message: "MES optimizer produced non-finite parameters".into(),
            last_iterate: theta.iter().copied().collect(),
        });
    }
    let fitted = eval_rows(&spec.mes_link, &theta, &dataset.z_m);
    let final_loss = (0..dataset.n())
        .filter(|&t| mask[t])
        .map(|t| 0.5 * (dataset.y[t] - fitted[t]).powi(2))
        .sum::<f64>()
        / dataset.n() as f64;
    Ok(MesFit {
        theta_m: theta,
        fitted,
        n_exceed,
        final_loss,
        multistart_spread: spread,
    })
}

fn gauss_newton_step(
    link: &Link,
    start: &DVector<f64>,
    dataset: &Dataset,
    mask: &[bool],
    n_exceed: usize,
) -> Option<DVector<f64>> {
    let dim = start.len();
    let mut jac = DMatrix::zeros(n_exceed, dim);
    let mut resid = DVector::zeros(n_exceed);
    let mut row = vec![0.0; dataset.z_m.ncols()];
    let mut g_row = vec![0.0; dim];
    let mut i = 0;
    for t in 0..dataset.n() {
        if !mask[t] {
            continue;
        }
        for j in 0..dataset.z_m.ncols() {
            row[j] = dataset.z_m[(t, j)];
        }
        resid[i] = dataset.y[t] - link.value(&row, start.as_slice());
        link.gradient(&row, start.as_slice(), &mut g_row);
        for j in 0..dim {
            jac[(i, j)] = g_row[j];
        }
        i += 1;
    }
    let delta = solve_least_squares(&jac, &resid, "gauss-newton step").ok()?;
    Some(start + delta)
}

fn perturb(base: &DVector<f64>, k: usize) -> DVector<f64> {
    DVector::from_iterator(
        base.len(),
        base.iter().enumerate().map(|(i, &s)| {
            let sign = if (i + k) % 2 == 0 { 1.0 } else { -1.0 };
            if s != 0.0 {
                s * (1.0 + 0.1 * sign)
            } else {
                0.1 * sign
            }
        }),
    )
}

/// Run both estimation steps and attach sandwich inference.
///
/// Estimation failures abort; inference failures (singular blocks, degenerate
/// bandwidth, too few exceedances) degrade to a fit without covariance and a
/// warning describing the cause.
pub fn fit_joint(dataset: &Dataset, spec: &ModelSpec) -> Result<JointFit> {
    validate(dataset, spec)?;
    let var_fit = fit_var(dataset, spec)?;
    let mes_fit = fit_mes(dataset, spec, &var_fit)?;
    let mut warnings = Vec::new();
    if let Some(s) = var_fit.multistart_spread {
        if s > 1e-4 {
            warnings.push(FitWarning::MultistartDisagreement(s));
        }
    }
    if let Some(s) = mes_fit.multistart_spread {
        if s > 1e-4 {
            warnings.push(FitWarning::MultistartDisagreement(s));
        }
    }

    let n = dataset.n();
    let mut bw_opt: Option<Bandwidth> = None;
    let mut diagnostics = None;
    let mut avar = None;
    let mut se = None;

    let enough = mes_fit.n_exceed >= MIN_EXCEEDANCES_FOR_INFERENCE.max(spec.q);
    if !enough {
        warnings.push(FitWarning::FewExceedances(mes_fit.n_exceed));
        warnings.push(FitWarning::InferenceDegraded(format!(
            "only {} exceedances; inference needs at least {}",
            mes_fit.n_exceed,
            MIN_EXCEEDANCES_FOR_INFERENCE.max(spec.q)
        )));
    } else {
        let resid: Vec<f64> = (0..n).map(|t| dataset.x[t] - var_fit.fitted[t]).collect();
        match bandwidth(&resid, spec.beta, n) {
            Ok(bw) => {
                let diag = estimate_matrices(dataset, spec, &var_fit, &mes_fit, &bw);
                match sandwich(&diag) {
                    Ok(a) => {
                        let mut s = DVector::zeros(spec.p + spec.q);
                        for i in 0..spec.p + spec.q {
                            s[i] = (a[(i, i)] / n as f64).max(0.0).sqrt();
                        }
                        se = Some(s);
                        avar = Some(a);
                    }
                    Err(e) => {
                        warnings.push(FitWarning::InferenceDegraded(e.to_string()));
                    }
                }
                diagnostics = Some(diag);
                bw_opt = Some(bw);
            }
            Err(e) => {
                warnings.push(FitWarning::InferenceDegraded(e.to_string()));
            }
        }
    }

    Ok(JointFit {
        theta_v: var_fit.theta_v.clone(),
        theta_m: mes_fit.theta_m.clone(),
        n,
        bandwidth: bw_opt.map(|b| b.c_n),
        avar,
        se,
        exceedance_count: mes_fit.n_exceed,
        converged: var_fit.converged,
        loss_values: (var_fit.final_loss, mes_fit.final_loss),
        diagnostics,
        warnings,
    })
}
