//! Risk contributions and equal-risk-contribution portfolio weights.
//!
//! Component risk contributions follow the Euler rule for the expected
//! shortfall: each component's contribution is the MES of its weighted loss
//! given a portfolio VaR exceedance, forecast from covariate regressions on
//! an expanding window. The ERC weights equalize those forecasts by a
//! damped reciprocal fixed-point iteration.

use nalgebra::DMatrix;

use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::quantile_type1;
use crate::mes::fit_mes;
use crate::quantile::fit_var;

/// Default ERC loop controls.
pub const DEFAULT_TOL: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Risk-contribution forecasts for one date.
#[derive(Debug, Clone)]
pub struct RcForecast {
    /// One forecast per component; sums to `es` by construction of the
    /// shared exceedance mask and linear links.
    pub rc: Vec<f64>,
    /// ES forecast of the weighted portfolio.
    pub es: f64,
}

/// Forecast per-component risk contributions at `t_forecast`.
///
/// Fits one VaR regression on the weighted portfolio loss and one MES
/// regression per weighted component, all on rows strictly before
/// `t_forecast`, then evaluates at the covariate row `t_forecast`.
pub fn risk_contributions(
    losses: &DMatrix<f64>,
    weights: &[f64],
    z: &DMatrix<f64>,
    beta: f64,
    t_forecast: usize,
) -> Result<RcForecast> {
    let n = losses.nrows();
    let d = losses.ncols();
    if weights.len() != d {
        return Err(Error::Dimension(format!(
            "{} weights for {d} components",
            weights.len()
        )));
    }
    if z.nrows() != n {
        return Err(Error::Dimension(format!(
            "covariates have {} rows, losses {n}",
            z.nrows()
        )));
    }
    if t_forecast >= n {
        return Err(Error::Dimension(format!(
            "t_forecast = {t_forecast} outside the sample of {n}"
        )));
    }
    let k = z.ncols();
    if t_forecast < k + k + 2 {
        return Err(Error::Dimension(format!(
            "t_forecast = {t_forecast} leaves too little history"
        )));
    }

    // expanding window strictly before the forecast date
    let m = t_forecast;
    let mut x = Vec::with_capacity(m);
    for s in 0..m {
        x.push((0..d).map(|j| weights[j] * losses[(s, j)]).sum());
    }
    let z_fit = z.rows(0, m).into_owned();
    let dataset = Dataset::new(x.clone(), x, z_fit.clone(), z_fit.clone())?;
    let spec = ModelSpec::linear(beta, k, k);
    let var_fit = fit_var(&dataset, &spec)?;

    let z_now: Vec<f64> = (0..k).map(|j| z[(t_forecast, j)]).collect();
    let mut rc = Vec::with_capacity(d);
    for dcol in 0..d {
        let y_d: Vec<f64> = (0..m).map(|s| weights[dcol] * losses[(s, dcol)]).collect();
        let ds_d = Dataset::new(y_d, dataset.x.as_slice().to_vec(), z_fit.clone(), z_fit.clone())?;
        let mes_d = fit_mes(&ds_d, &spec, &var_fit)?;
        let forecast: f64 = (0..k).map(|j| mes_d.theta_m[j] * z_now[j]).sum();
        rc.push(forecast);
    }
    // ES forecast from the portfolio's own second step
    let es_step = fit_mes(&dataset, &spec, &var_fit)?;
    let es: f64 = (0..k).map(|j| es_step.theta_m[j] * z_now[j]).sum();
    Ok(RcForecast { rc, es })
}

/// State of the ERC iteration for one forecast date.
#[derive(Debug, Clone)]
pub struct PortfolioState {
    pub weights: Vec<f64>,
    pub rc_forecasts: Vec<f64>,
    pub iterations: usize,
    /// Largest pairwise difference of the final risk contributions.
    pub spread: f64,
    pub converged: bool,
    /// True when a nonpositive forecast had to be clamped in the update.
    pub clamped: bool,
    /// Spread after each estimation pass.
    pub trace: Vec<f64>,
}

fn spread_of(rc: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &v in rc {
        max = max.max(v);
        min = min.min(v);
    }
    max - min
}

/// Equal-risk-contribution weights for one forecast date.
///
/// Starts from equal weights and iterates: forecast the contributions under
/// the current weights, update w_d <- w_d / (2 rc_d) + w_d / 2, renormalize
/// to the simplex, until the forecast spread is at most `tol` or `max_iter`
/// passes ran (flagged, state still returned). Nonpositive forecasts are
/// clamped to a small positive floor inside the update only.
pub fn erc_weights(
    losses: &DMatrix<f64>,
    z: &DMatrix<f64>,
    beta: f64,
    t_forecast: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PortfolioState> {
    let d = losses.ncols();
    if d == 0 {
        return Err(Error::Dimension("no components".into()));
    }
    let mut weights = vec![1.0 / d as f64; d];
    // sentinel forecasts force at least one estimation pass
    let mut rc: Vec<f64> = {
        let mut v = vec![0.0; d];
        v[0] = 1.0;
        v
    };
    let mut iterations = 0;
    let mut clamped = false;
    let mut trace = Vec::new();
    let mut converged = true;

    while spread_of(&rc) > tol {
        if iterations >= max_iter {
            converged = false;
            break;
        }
        let forecast = risk_contributions(losses, &weights, z, beta, t_forecast)?;
        rc = forecast.rc;
        trace.push(spread_of(&rc));

        let positive_mean = {
            let pos: Vec<f64> = rc.iter().copied().filter(|&v| v > 0.0).collect();
            if pos.is_empty() {
                let worst = rc
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                return Err(Error::UpdateDomain { component: worst });
            }
            pos.iter().sum::<f64>() / pos.len() as f64
        };
        let floor = 1e-6 * positive_mean;
        let mut tilde = vec![0.0; d];
        for j in 0..d {
            let rc_j = if rc[j] < floor {
                clamped = true;
                floor
            } else {
                rc[j]
            };
            tilde[j] = weights[j] / (2.0 * rc_j) + weights[j] / 2.0;
        }
        let norm: f64 = tilde.iter().sum();
        for j in 0..d {
            weights[j] = tilde[j] / norm;
        }
        iterations += 1;
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    Ok(PortfolioState {
        spread: spread_of(&rc),
        weights,
        rc_forecasts: rc,
        iterations,
        converged,
        clamped,
        trace,
    })
}

/// Empirical portfolio performance over a loss series.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PerformanceMetrics {
    pub avg_return: f64,
    pub std_dev: f64,
    /// Type-1 empirical beta-quantile of the losses.
    pub var: f64,
    /// Mean loss at or above the VaR.
    pub es: f64,
    /// Absent when the loss series is constant.
    pub sharpe: Option<f64>,
    /// Absent when the ES is zero.
    pub rorac: Option<f64>,
}

/// Classical performance functionals of the empirical loss distribution.
pub fn performance_metrics(losses: &[f64], beta: f64) -> Result<PerformanceMetrics> {
    let n = losses.len();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Level(format!("beta = {beta}")));
    }
    let mean_loss = losses.iter().sum::<f64>() / n as f64;
    let avg_return = -mean_loss;
    let var_s = losses
        .iter()
        .map(|l| (l - mean_loss).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let std_dev = var_s.sqrt();
    let var_q = quantile_type1(losses, beta);
    let tail: Vec<f64> = losses.iter().copied().filter(|&l| l >= var_q).collect();
    let es = tail.iter().sum::<f64>() / tail.len() as f64;
    let sharpe = if std_dev > 0.0 {
        Some(avg_return / std_dev)
    } else {
        None
    };
    let rorac = if es != 0.0 { Some(avg_return / es) } else { None };
    Ok(PerformanceMetrics {
        avg_return,
        std_dev,
        var: var_q,
        es,
        sharpe,
        rorac,
    })
}

/// Result of a weekly re-balanced backtest.
#[derive(Debug, Clone)]
pub struct Backtest {
    /// First forecast index.
    pub start: usize,
    /// One weight row per forecast date.
    pub weights: Vec<Vec<f64>>,
    /// Per-date ERC iteration counts and final spreads (empty for EW).
    pub states: Vec<(usize, f64)>,
    /// Realized portfolio losses over the out-of-sample window.
    pub realized: Vec<f64>,
    pub metrics: PerformanceMetrics,
}

/// Equal-weight benchmark over the out-of-sample window.
pub fn ew_backtest(
    losses: &DMatrix<f64>,
    beta: f64,
    start: usize,
) -> Result<Backtest> {
    let n = losses.nrows();
    let d = losses.ncols();
    if start >= n {
        return Err(Error::Dimension(format!(
            "start = {start} outside sample of {n}"
        )));
    }
    let w = vec![1.0 / d as f64; d];
    let mut weights = Vec::with_capacity(n - start);
    let mut realized = Vec::with_capacity(n - start);
    for t in start..n {
        realized.push((0..d).map(|j| w[j] * losses[(t, j)]).sum());
        weights.push(w.clone());
    }
    let metrics = performance_metrics(&realized, beta)?;
    Ok(Backtest {
        start,
        weights,
        states: Vec::new(),
        realized,
        metrics,
    })
}

/// ERC backtest: recompute the equalizing weights at every forecast date on
/// the expanding window, then realize the portfolio loss.
pub fn erc_backtest(
    losses: &DMatrix<f64>,
    z: &DMatrix<f64>,
    beta: f64,
    start: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Backtest> {
    let n = losses.nrows();
    let d = losses.ncols();
    if start >= n {
        return Err(Error::Dimension(format!(
            "start = {start} outside sample of {n}"
        )));
    }
    let mut weights = Vec::with_capacity(n - start);
    let mut states = Vec::with_capacity(n - start);
    let mut realized = Vec::with_capacity(n - start);
    for t in start..n {
        let state = erc_weights(losses, z, beta, t, tol, max_iter)?;
        realized.push((0..d).map(|j| state.weights[j] * losses[(t, j)]).sum());
        states.push((state.iterations, state.spread));
        weights.push(state.weights);
    }
    let metrics = performance_metrics(&realized, beta)?;
    Ok(Backtest {
        start,
        weights,
        states,
        realized,
        metrics,
    })
}
