//! Expected-Shortfall regression: the special case with the outcome equal to
//! the distress variable, plus the ES risk decomposition into component MES
//! regressions sharing one exceedance mask.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::inference::{
    bandwidth, estimate_matrices, sandwich, Bandwidth, FitDiagnostics,
};
use crate::mes::{fit_mes, FitWarning, MesFit, MIN_EXCEEDANCES_FOR_INFERENCE};
use crate::quantile::{fit_var, VarFit};

/// Joint (VaR, ES) regression fit.
#[derive(Debug, Clone)]
pub struct EsFit {
    pub theta_v: DVector<f64>,
    pub theta_e: DVector<f64>,
    pub n: usize,
    pub bandwidth: Option<f64>,
    pub avar: Option<DMatrix<f64>>,
    pub se: Option<DVector<f64>>,
    pub exceedance_count: usize,
    pub converged: bool,
    pub loss_values: (f64, f64),
    pub diagnostics: Option<FitDiagnostics>,
    pub warnings: Vec<FitWarning>,
}

/// Run the two-step estimator with the outcome set to the distress series
/// and ES-specific inference.
pub fn fit_es(
    x: &[f64],
    z_v: DMatrix<f64>,
    z_e: DMatrix<f64>,
    beta: f64,
) -> Result<EsFit> {
    let dataset = Dataset::new(x.to_vec(), x.to_vec(), z_v, z_e)?;
    let spec = ModelSpec::linear(beta, dataset.z_v.ncols(), dataset.z_m.ncols());
    fit_es_on(&dataset, &spec)
}

/// ES fit on an already-constructed dataset whose y equals x.
pub fn fit_es_on(dataset: &Dataset, spec: &ModelSpec) -> Result<EsFit> {
    let var_fit = fit_var(dataset, spec)?;
    let es_step = fit_mes(dataset, spec, &var_fit)?;
    let mut warnings = Vec::new();

    let n = dataset.n();
    let mut bw_opt = None;
    let mut diagnostics = None;
    let mut avar = None;
    let mut se = None;

    let enough = es_step.n_exceed >= MIN_EXCEEDANCES_FOR_INFERENCE.max(spec.q);
    if !enough {
        warnings.push(FitWarning::FewExceedances(es_step.n_exceed));
        warnings.push(FitWarning::InferenceDegraded(format!(
            "only {} exceedances; inference needs at least {}",
            es_step.n_exceed,
            MIN_EXCEEDANCES_FOR_INFERENCE.max(spec.q)
        )));
    } else {
        let resid: Vec<f64> = (0..n).map(|t| dataset.x[t] - var_fit.fitted[t]).collect();
        match bandwidth(&resid, spec.beta, n) {
            Ok(bw) => {
                let mut diag = estimate_matrices(dataset, spec, &var_fit, &es_step, &bw);
                diag.lambda2_hat =
                    lambda2_es(dataset, spec, &var_fit, &es_step, &bw);
                match sandwich(&diag) {
                    Ok(a) => {
                        let mut s = DVector::zeros(spec.p + spec.q);
                        for i in 0..spec.p + spec.q {
                            s[i] = (a[(i, i)] / n as f64).max(0.0).sqrt();
                        }
                        se = Some(s);
                        avar = Some(a);
                    }
                    Err(e) => warnings.push(FitWarning::InferenceDegraded(e.to_string())),
                }
                diagnostics = Some(diag);
                bw_opt = Some(bw);
            }
            Err(e) => warnings.push(FitWarning::InferenceDegraded(e.to_string())),
        }
    }

    Ok(EsFit {
        theta_v: var_fit.theta_v.clone(),
        theta_e: es_step.theta_m.clone(),
        n,
        bandwidth: bw_opt.map(|b: Bandwidth| b.c_n),
        avar,
        se,
        exceedance_count: es_step.n_exceed,
        converged: var_fit.converged,
        loss_values: (var_fit.final_loss, es_step.final_loss),
        diagnostics,
        warnings,
    })
}

/// Kernel plug-in for the ES cross matrix, evaluated from the fitted paths:
/// (1/n) sum (v_t - m_t) (2 c_n)^-1 1{|x_t - v_t| < c_n} grad_m grad_v'.
pub fn lambda2_es(
    dataset: &Dataset,
    spec: &ModelSpec,
    var_fit: &VarFit,
    es_step: &MesFit,
    bw: &Bandwidth,
) -> DMatrix<f64> {
    let n = dataset.n();
    let inv_2c = 1.0 / (2.0 * bw.c_n);
    let mut out = DMatrix::zeros(spec.q, spec.p);
    let mut zv_row = vec![0.0; dataset.z_v.ncols()];
    let mut zm_row = vec![0.0; dataset.z_m.ncols()];
    let mut grad_v = vec![0.0; spec.p];
    let mut grad_m = vec![0.0; spec.q];
    for t in 0..n {
        let u = dataset.x[t] - var_fit.fitted[t];
        if u.abs() >= bw.c_n {
            continue;
        }
        for j in 0..dataset.z_v.ncols() {
            zv_row[j] = dataset.z_v[(t, j)];
        }
        for j in 0..dataset.z_m.ncols() {
            zm_row[j] = dataset.z_m[(t, j)];
        }
        spec.var_link
            .gradient(&zv_row, var_fit.theta_v.as_slice(), &mut grad_v);
        spec.mes_link
            .gradient(&zm_row, es_step.theta_m.as_slice(), &mut grad_m);
        let factor = (var_fit.fitted[t] - es_step.fitted[t]) * inv_2c;
        for a in 0..spec.q {
            for b in 0..spec.p {
                out[(a, b)] += factor * grad_m[a] * grad_v[b];
            }
        }
    }
    out / n as f64
}

/// One component of an ES decomposition.
#[derive(Debug, Clone)]
pub struct ComponentFit {
    pub theta_m: DVector<f64>,
    pub se: Option<DVector<f64>>,
    pub avar: Option<DMatrix<f64>>,
    pub n_exceed: usize,
    pub warnings: Vec<FitWarning>,
}

/// ES decomposition output: the aggregate (VaR, ES) fit, one MES fit per
/// component, and the reconciliation residual between the ES coefficients
/// and the weighted sum of component coefficients.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub es: EsFit,
    pub components: Vec<ComponentFit>,
    pub mean_weights: Vec<f64>,
    /// theta_e minus the mean-weighted sum of component theta_m.
    pub reconciliation: DVector<f64>,
}

/// Component weights: constant per component or one row per observation.
#[derive(Debug, Clone)]
pub enum Weights {
    Constant(Vec<f64>),
    Varying(DMatrix<f64>),
}

impl Weights {
    fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            Weights::Constant(w) => {
                if w.len() != d {
                    return Err(Error::Dimension(format!(
                        "{} weights for {d} components",
                        w.len()
                    )));
                }
                if w.iter().any(|&v| v < 0.0) {
                    return Err(Error::Dimension("weights must be nonnegative".into()));
                }
                if (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                    return Err(Error::Dimension("weights must sum to one".into()));
                }
            }
            Weights::Varying(w) => {
                if w.nrows() != n || w.ncols() != d {
                    return Err(Error::Dimension(format!(
                        "weight matrix is {}x{}, expected {n}x{d}",
                        w.nrows(),
                        w.ncols()
                    )));
                }
                for t in 0..n {
                    let s: f64 = (0..d).map(|j| w[(t, j)]).sum();
                    if (s - 1.0).abs() > 1e-6 {
                        return Err(Error::Dimension(format!(
                            "weights in row {} sum to {s}",
                            t + 1
                        )));
                    }
                    if (0..d).any(|j| w[(t, j)] < 0.0) {
                        return Err(Error::Dimension(format!(
                            "negative weight in row {}",
                            t + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn mean(&self, n: usize, d: usize) -> Vec<f64> {
        match self {
            Weights::Constant(w) => w.clone(),
            Weights::Varying(w) => (0..d)
                .map(|j| (0..n).map(|t| w[(t, j)]).sum::<f64>() / n as f64)
                .collect(),
        }
    }
}

/// Decompose the ES of an aggregate series into component MES regressions.
///
/// Fits one VaR regression on `x`, the ES second step on `x`, and one MES
/// regression per component column, all sharing the aggregate exceedance
/// mask and covariates. With constant weights the ES coefficients equal the
/// weighted sum of component coefficients up to least-squares rounding; the
/// reconciliation residual quantifies the gap (time-varying weights blur it).
pub fn decompose(
    x: &[f64],
    components: &DMatrix<f64>,
    weights: &Weights,
    z_v: DMatrix<f64>,
    z_m: DMatrix<f64>,
    beta: f64,
) -> Result<Decomposition> {
    let n = x.len();
    let d = components.ncols();
    if components.nrows() != n {
        return Err(Error::Dimension(format!(
            "components have {} rows for {n} observations",
            components.nrows()
        )));
    }
    if d == 0 {
        return Err(Error::Dimension("no components supplied".into()));
    }
    weights.validate(n, d)?;

    let dataset = Dataset::new(x.to_vec(), x.to_vec(), z_v, z_m)?;
    let spec = ModelSpec::linear(beta, dataset.z_v.ncols(), dataset.z_m.ncols());
    let var_fit = fit_var(&dataset, &spec)?;
    let es = fit_es_on(&dataset, &spec)?;

    let resid: Vec<f64> = (0..n).map(|t| dataset.x[t] - var_fit.fitted[t]).collect();
    let bw = bandwidth(&resid, beta, n).ok();

    let mut component_fits = Vec::with_capacity(d);
    for dcol in 0..d {
        let y_d: Vec<f64> = (0..n).map(|t| components[(t, dcol)]).collect();
        let ds_d = Dataset::new(
            y_d,
            x.to_vec(),
            dataset.z_v.clone(),
            dataset.z_m.clone(),
        )?;
        let mes_d = fit_mes(&ds_d, &spec, &var_fit)?;
        let mut warnings = Vec::new();
        let mut avar = None;
        let mut se = None;
        if let Some(bw) = &bw {
            let diag = estimate_matrices(&ds_d, &spec, &var_fit, &mes_d, bw);
            match sandwich(&diag) {
                Ok(a) => {
                    let mut s = DVector::zeros(spec.p + spec.q);
                    for i in 0..spec.p + spec.q {
                        s[i] = (a[(i, i)] / n as f64).max(0.0).sqrt();
                    }
                    se = Some(s);
                    avar = Some(a);
                }
                Err(e) => warnings.push(FitWarning::InferenceDegraded(e.to_string())),
            }
        } else {
            warnings.push(FitWarning::InferenceDegraded(
                "bandwidth unavailable for the aggregate fit".into(),
            ));
        }
        component_fits.push(ComponentFit {
            theta_m: mes_d.theta_m,
            se,
            avar,
            n_exceed: mes_d.n_exceed,
            warnings,
        });
    }

    let mean_weights = weights.mean(n, d);
    let mut weighted_sum = DVector::zeros(spec.q);
    for (dcol, fit) in component_fits.iter().enumerate() {
        weighted_sum += &fit.theta_m * mean_weights[dcol];
    }
    let reconciliation = &es.theta_e - &weighted_sum;

    Ok(Decomposition {
        es,
        components: component_fits,
        mean_weights,
        reconciliation,
    })
}
