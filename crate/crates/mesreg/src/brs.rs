//! Rolling-window comparator: transform the outcome into a trailing
//! empirical MES series and regress it on covariates by ordinary least
//! squares. Kept as the benchmark whose bias the two-step estimator removes.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{quantile_type1, solve_least_squares};

/// Default rolling window length (one trading year).
pub const DEFAULT_WINDOW: usize = 250;

/// OLS fit on the transformed response.
#[derive(Debug, Clone)]
pub struct BrsFit {
    pub theta: DVector<f64>,
    /// Classical homoskedastic standard errors.
    pub se_ols: DVector<f64>,
    /// Transformed response, aligned to t = window..n-1.
    pub y_star: Vec<f64>,
    pub window: usize,
}

/// Trailing empirical MES: for each t >= S, the type-1 beta-quantile of
/// x over {t-S, ..., t} and the average of y over the window points with
/// x at or above it (weak inequality).
pub fn brs_transform(y: &[f64], x: &[f64], window: usize, beta: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "y has {} entries, x has {n}",
            y.len()
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Level(format!("beta = {beta}")));
    }
    let needed = {
        let t = 1.0 / (1.0 - beta);
        let r = t.round();
        if (t - r).abs() < 1e-9 {
            r as usize
        } else {
            t.ceil() as usize
        }
    };
    // the window spans window + 1 points, which must cover one expected
    // exceedance at level beta
    if window + 1 < needed {
        return Err(Error::Window(format!(
            "window of {} points shorter than ceil(1/(1-beta)) = {needed}",
            window + 1
        )));
    }
    if n <= window {
        return Err(Error::Window(format!(
            "sample of {n} does not cover one window of {window} plus a forecast point"
        )));
    }
    let mut out = Vec::with_capacity(n - window);
    for t in window..n {
        let lo = t - window;
        let q = quantile_type1(&x[lo..=t], beta);
        let mut sum = 0.0;
        let mut count = 0.0;
        for s in lo..=t {
            if x[s] >= q {
                sum += y[s];
                count += 1.0;
            }
        }
        // the window maximum always satisfies x >= q, so count >= 1
        out.push(sum / count);
    }
    Ok(out)
}

/// Transform then regress on the MES covariates, aligned to t >= window.
pub fn fit_brs(dataset: &Dataset, window: usize, beta: f64) -> Result<BrsFit> {
    let y_star = brs_transform(
        dataset.y.as_slice(),
        dataset.x.as_slice(),
        window,
        beta,
    )?;
    let n_used = y_star.len();
    let k = dataset.z_m.ncols();
    if n_used <= k {
        return Err(Error::Dimension(format!(
            "{n_used} transformed observations for {k} regressors"
        )));
    }
    let mut design = DMatrix::zeros(n_used, k);
    for (i, t) in (window..dataset.n()).enumerate() {
        for j in 0..k {
            design[(i, j)] = dataset.z_m[(t, j)];
        }
    }
    let response = DVector::from_vec(y_star.clone());
    let theta = solve_least_squares(&design, &response, "BRS regression design")?;

    let fitted = &design * &theta;
    let rss: f64 = (0..n_used).map(|i| (response[i] - fitted[i]).powi(2)).sum();
    let s2 = rss / (n_used - k) as f64;
    let xtx = design.transpose() * &design;
    let xtx_inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Singular("BRS regression design".into()))?;
    let mut se = DVector::zeros(k);
    for j in 0..k {
        se[j] = (s2 * xtx_inv[(j, j)]).max(0.0).sqrt();
    }
    Ok(BrsFit {
        theta,
        se_ols: se,
        y_star,
        window,
    })
}
