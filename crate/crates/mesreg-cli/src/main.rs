//! Command-line front end: fit, simulate, brs, decompose, erc and oracle
//! subcommands with CSV input and CSV/JSON output.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 estimation failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mesreg::brs::{fit_brs, DEFAULT_WINDOW};
use mesreg::data::{dataset_from_table, CsvSchema, NumericTable};
use mesreg::es::{decompose, Weights};
use mesreg::inference::report_from_parts;
use mesreg::mes::{fit_joint, FitWarning, JointFit};
use mesreg::portfolio::{erc_backtest, ew_backtest, DEFAULT_MAX_ITER, DEFAULT_TOL};
use mesreg::sim::{
    run_monte_carlo, tail_expectation_mc, true_params, SimConfig, DEFAULT_SIGMA,
    TAIL_ORACLE_DRAWS, TAIL_ORACLE_SEED,
};
use mesreg::{Error, ModelSpec};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_ESTIMATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mesreg",
    about = "Joint (VaR, MES) regressions: estimation, inference, simulation, portfolios",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint (VaR, MES) regression and report inference.
    Fit(FitArgs),
    /// Monte Carlo study of the estimator on the built-in process.
    Simulate(SimulateArgs),
    /// Rolling-window comparator regression.
    Brs(BrsArgs),
    /// ES regression of an aggregate plus component MES regressions.
    Decompose(DecomposeArgs),
    /// Equal-risk-contribution backtest on component loss series.
    Erc(ErcArgs),
    /// Recompute the simulation tail-expectation constants.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV (header row required).
    #[arg(long)]
    input: PathBuf,
    /// Outcome column.
    #[arg(long)]
    y: String,
    /// Distress column.
    #[arg(long)]
    x: String,
    /// VaR covariate columns, comma separated; a leading '1' adds an intercept.
    #[arg(long, value_delimiter = ',')]
    zv: Vec<String>,
    /// MES covariate columns, same convention as --zv.
    #[arg(long, value_delimiter = ',')]
    zm: Vec<String>,
    /// Probability level in (0, 1).
    #[arg(long)]
    beta: f64,
    /// Confidence level for intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output base path; writes <out>.json (and <out>_paths.csv with --paths).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report to stdout instead of the table.
    #[arg(long)]
    json: bool,
    /// Also write the fitted VaR/MES paths next to --out.
    #[arg(long)]
    paths: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    beta: f64,
    /// Sample size per replication.
    #[arg(long)]
    n: usize,
    /// Number of replications.
    #[arg(long)]
    reps: usize,
    /// RNG seed (the MESREG_SEED environment variable overrides it).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads for the replication loop (0 = rayon default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output base path; writes <out>.csv and <out>.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON summary instead of the CSV table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BrsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    y: String,
    #[arg(long)]
    x: String,
    /// Regressor columns, comma separated; leading '1' adds an intercept.
    #[arg(long, value_delimiter = ',')]
    zm: Vec<String>,
    #[arg(long)]
    beta: f64,
    /// Rolling window length S (the window spans S + 1 observations).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Aggregate distress column.
    #[arg(long)]
    x: String,
    /// Component outcome columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    components: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    zv: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    zm: Vec<String>,
    #[arg(long)]
    beta: f64,
    /// Constant component weights, comma separated (sum to one).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Columns holding time-varying weights, one per component.
    #[arg(long, value_delimiter = ',')]
    weight_cols: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ErcArgs {
    #[arg(long)]
    input: PathBuf,
    /// Component loss columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    components: Vec<String>,
    /// Covariate columns for the forecasting regressions.
    #[arg(long, value_delimiter = ',')]
    z: Vec<String>,
    #[arg(long)]
    beta: f64,
    /// First forecast index (expanding estimation window ends before it).
    #[arg(long)]
    start: usize,
    /// Convergence guard on the risk-contribution spread.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    beta: f64,
    #[arg(long, default_value_t = 6.0)]
    df: f64,
    /// Shock covariance entries s11,s12,s21,s22.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long, default_value_t = TAIL_ORACLE_DRAWS)]
    draws: u64,
    #[arg(long, default_value_t = TAIL_ORACLE_SEED)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Brs(args) => cmd_brs(args),
        Command::Decompose(args) => cmd_decompose(args),
        Command::Erc(args) => cmd_erc(args),
        Command::Oracle(args) => cmd_oracle(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_)
            | Error::Csv(_)
            | Error::Schema(_)
            | Error::Parse { .. }
            | Error::Dimension(_)
            | Error::Window(_) => EXIT_DATA,
            _ => EXIT_ESTIMATION,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn check_level(name: &str, value: f64) -> Result<(), CliError> {
    if !(value > 0.0 && value < 1.0) {
        return Err(usage(format!(
            "--{name} = {value} violates the level constraint 0 < {name} < 1"
        )));
    }
    Ok(())
}

fn seed_override(seed: u64) -> u64 {
    match std::env::var("MESREG_SEED") {
        Ok(s) => s.parse().unwrap_or(seed),
        Err(_) => seed,
    }
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|e| CliError {
        code: EXIT_DATA,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn param_names(prefix: &str, cols: &[String]) -> Vec<String> {
    cols.iter()
        .map(|c| {
            if c == "1" {
                format!("{prefix}_const")
            } else {
                format!("{prefix}_{c}")
            }
        })
        .collect()
}

fn warning_strings(warnings: &[FitWarning]) -> Vec<String> {
    warnings
        .iter()
        .map(|w| match w {
            FitWarning::InferenceDegraded(msg) => format!("inference degraded: {msg}"),
            FitWarning::FewExceedances(k) => format!("only {k} exceedances"),
            FitWarning::MultistartDisagreement(s) => {
                format!("multistart objectives disagree by {s:.3e}")
            }
        })
        .collect()
}

fn fit_report_json(
    fit: &JointFit,
    names: &[String],
    beta: f64,
    level: f64,
) -> Result<serde_json::Value, CliError> {
    let estimates = fit.estimates();
    let parameters: Vec<serde_json::Value> = match &fit.avar {
        Some(avar) => {
            let report = report_from_parts(estimates.clone(), avar, fit.n, level)?;
            (0..estimates.len())
                .map(|i| {
                    json!({
                        "name": names[i],
                        "estimate": report.estimates[i],
                        "se": report.se[i],
                        "t": report.t_stats[i],
                        "p_value": report.p_values[i],
                        "ci_lower": report.ci_lower[i],
                        "ci_upper": report.ci_upper[i],
                    })
                })
                .collect()
        }
        None => (0..estimates.len())
            .map(|i| json!({"name": names[i], "estimate": estimates[i]}))
            .collect(),
    };
    Ok(json!({
        "schema_version": 1,
        "command": "fit",
        "beta": beta,
        "level": level,
        "n": fit.n,
        "p": fit.theta_v.len(),
        "q": fit.theta_m.len(),
        "exceedance_count": fit.exceedance_count,
        "converged": fit.converged,
        "bandwidth": fit.bandwidth,
        "loss": {"var": fit.loss_values.0, "mes": fit.loss_values.1},
        "parameters": parameters,
        "diagnostics": fit.diagnostics.as_ref().map(|d| json!({
            "cond_lambda": d.cond_lambda,
            "cond_lambda1": d.cond_lambda1,
        })),
        "warnings": warning_strings(&fit.warnings),
    }))
}

fn print_fit_table(fit: &JointFit, names: &[String], level: f64) -> Result<(), CliError> {
    let estimates = fit.estimates();
    println!(
        "n = {}, exceedances = {}, bandwidth = {}",
        fit.n,
        fit.exceedance_count,
        fit.bandwidth
            .map(|b| format!("{b:.6}"))
            .unwrap_or_else(|| "n/a".into())
    );
    match &fit.avar {
        Some(avar) => {
            let report = report_from_parts(estimates.clone(), avar, fit.n, level)?;
            println!(
                "{:<16} {:>12} {:>12} {:>9} {:>9} {:>12} {:>12}",
                "parameter", "estimate", "se", "t", "p", "ci_lower", "ci_upper"
            );
            for i in 0..estimates.len() {
                println!(
                    "{:<16} {:>12.6} {:>12.6} {:>9.3} {:>9.4} {:>12.6} {:>12.6}",
                    names[i],
                    report.estimates[i],
                    report.se[i],
                    report.t_stats[i],
                    report.p_values[i],
                    report.ci_lower[i],
                    report.ci_upper[i]
                );
            }
        }
        None => {
            println!("{:<16} {:>12}", "parameter", "estimate");
            for i in 0..estimates.len() {
                println!("{:<16} {:>12.6}", names[i], estimates[i]);
            }
        }
    }
    for w in warning_strings(&fit.warnings) {
        println!("warning: {w}");
    }
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    check_level("level", args.level)?;
    if args.zv.is_empty() || args.zm.is_empty() {
        return Err(usage("--zv and --zm must name at least one column"));
    }
    let table = NumericTable::read_path(&args.input)?;
    let schema = CsvSchema {
        y: args.y.clone(),
        x: args.x.clone(),
        z_v: args.zv.clone(),
        z_m: args.zm.clone(),
    };
    let dataset = dataset_from_table(&table, &schema)?;
    let spec = ModelSpec::linear(args.beta, dataset.z_v.ncols(), dataset.z_m.ncols());
    let fit = fit_joint(&dataset, &spec)?;

    let mut names = param_names("var", &args.zv);
    names.extend(param_names("mes", &args.zm));
    let report = fit_report_json(&fit, &names, args.beta, args.level)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        print_fit_table(&fit, &names, args.level)?;
    }
    if let Some(out) = &args.out {
        let json_path = out.with_extension("json");
        write_text(&json_path, &serde_json::to_string_pretty(&report).unwrap())?;
        if args.paths {
            let var_fit = mesreg::fit_var(&dataset, &spec)?;
            let mes_fit = mesreg::fit_mes(&dataset, &spec, &var_fit)?;
            let mut csv = String::from("t,x,y,var_fitted,mes_fitted,exceed\n");
            for t in 0..dataset.n() {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    t,
                    dataset.x[t],
                    dataset.y[t],
                    var_fit.fitted[t],
                    mes_fit.fitted[t],
                    u8::from(var_fit.exceed_mask[t])
                ));
            }
            let csv_path = paths_sibling(out, "_paths.csv");
            write_text(&csv_path, &csv)?;
        }
    } else if args.paths {
        return Err(usage("--paths requires --out"));
    }
    Ok(())
}

fn paths_sibling(base: &Path, suffix: &str) -> PathBuf {
    let stem = base
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    base.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    if args.n == 0 || args.reps == 0 {
        return Err(usage("--n and --reps must be positive"));
    }
    let seed = seed_override(args.seed);
    let config = SimConfig::new(args.beta, args.n, args.reps, seed);
    let run = || run_monte_carlo(&config);
    let summary = if args.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build()
            .map_err(|e| usage(format!("--threads: {e}")))?;
        pool.install(run)?
    } else {
        run()?
    };
    let csv = summary.to_csv();
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&summary.to_json()).unwrap()
        );
    } else {
        print!("{csv}");
    }
    if let Some(out) = &args.out {
        write_text(&out.with_extension("csv"), &csv)?;
        write_text(
            &out.with_extension("json"),
            &serde_json::to_string_pretty(&summary.to_json()).unwrap(),
        )?;
    }
    Ok(())
}

fn cmd_brs(args: BrsArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    if args.zm.is_empty() {
        return Err(usage("--zm must name at least one column"));
    }
    let table = NumericTable::read_path(&args.input)?;
    let schema = CsvSchema {
        y: args.y.clone(),
        x: args.x.clone(),
        z_v: args.zm.clone(),
        z_m: args.zm.clone(),
    };
    let dataset = dataset_from_table(&table, &schema)?;
    let fit = fit_brs(&dataset, args.window, args.beta)?;
    let names = param_names("brs", &args.zm);
    let report = json!({
        "schema_version": 1,
        "command": "brs",
        "beta": args.beta,
        "window": fit.window,
        "n_used": fit.y_star.len(),
        "parameters": (0..names.len()).map(|i| json!({
            "name": names[i],
            "estimate": fit.theta[i],
            "se": fit.se_ols[i],
        })).collect::<Vec<_>>(),
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!(
            "window = {}, transformed observations = {}",
            fit.window,
            fit.y_star.len()
        );
        println!("{:<16} {:>12} {:>12}", "parameter", "estimate", "se");
        for i in 0..names.len() {
            println!(
                "{:<16} {:>12.6} {:>12.6}",
                names[i], fit.theta[i], fit.se_ols[i]
            );
        }
    }
    if let Some(out) = &args.out {
        write_text(
            &out.with_extension("json"),
            &serde_json::to_string_pretty(&report).unwrap(),
        )?;
        let mut csv = String::from("t,y_star\n");
        for (i, v) in fit.y_star.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", args.window + i, v));
        }
        write_text(&out.with_extension("csv"), &csv)?;
    }
    Ok(())
}

fn cmd_decompose(args: DecomposeArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    if args.components.is_empty() {
        return Err(usage("--components must name at least one column"));
    }
    if args.zv.is_empty() || args.zm.is_empty() {
        return Err(usage("--zv and --zm must name at least one column"));
    }
    let table = NumericTable::read_path(&args.input)?;
    let x = table.column(&args.x)?.to_vec();
    let n = x.len();
    let d = args.components.len();
    let mut comps = mesreg::nalgebra::DMatrix::zeros(n, d);
    for (j, name) in args.components.iter().enumerate() {
        let col = table.column(name)?;
        for t in 0..n {
            comps[(t, j)] = col[t];
        }
    }
    let weights = match (&args.weights, &args.weight_cols) {
        (Some(_), Some(_)) => {
            return Err(usage("--weights and --weight-cols are mutually exclusive"))
        }
        (Some(w), None) => Weights::Constant(w.clone()),
        (None, Some(cols)) => {
            if cols.len() != d {
                return Err(usage(format!(
                    "{} weight columns for {d} components",
                    cols.len()
                )));
            }
            let mut m = mesreg::nalgebra::DMatrix::zeros(n, d);
            for (j, name) in cols.iter().enumerate() {
                let col = table.column(name)?;
                for t in 0..n {
                    m[(t, j)] = col[t];
                }
            }
            Weights::Varying(m)
        }
        (None, None) => Weights::Constant(vec![1.0 / d as f64; d]),
    };
    let z_v = table.design(&args.zv)?;
    let z_m = table.design(&args.zm)?;
    let out = decompose(&x, &comps, &weights, z_v, z_m, args.beta)?;

    let es_names = param_names("es", &args.zm);
    let var_names = param_names("var", &args.zv);
    let mes_names = param_names("mes", &args.zm);
    let mut fits = Vec::with_capacity(d + 1);
    let p = out.es.theta_v.len();
    let mut es_params = Vec::new();
    for i in 0..p {
        es_params.push(json!({
            "name": var_names[i],
            "estimate": out.es.theta_v[i],
            "se": out.es.se.as_ref().map(|s| s[i]),
        }));
    }
    for i in 0..out.es.theta_e.len() {
        es_params.push(json!({
            "name": es_names[i],
            "estimate": out.es.theta_e[i],
            "se": out.es.se.as_ref().map(|s| s[p + i]),
        }));
    }
    fits.push(json!({
        "kind": "es",
        "series": args.x,
        "exceedances": out.es.exceedance_count,
        "parameters": es_params,
        "warnings": warning_strings(&out.es.warnings),
    }));
    for (j, comp) in out.components.iter().enumerate() {
        let params: Vec<serde_json::Value> = (0..comp.theta_m.len())
            .map(|i| {
                json!({
                    "name": mes_names[i],
                    "estimate": comp.theta_m[i],
                    "se": comp.se.as_ref().map(|s| s[p + i]),
                })
            })
            .collect();
        fits.push(json!({
            "kind": "mes",
            "series": args.components[j],
            "mean_weight": out.mean_weights[j],
            "exceedances": comp.n_exceed,
            "parameters": params,
            "warnings": warning_strings(&comp.warnings),
        }));
    }
    let report = json!({
        "schema_version": 1,
        "command": "decompose",
        "beta": args.beta,
        "n": n,
        "fits": fits,
        "reconciliation": out.reconciliation.as_slice(),
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!(
            "aggregate {} decomposed into {d} components at beta = {}",
            args.x, args.beta
        );
        println!("es coefficients:   {:?}", out.es.theta_e.as_slice());
        for (j, comp) in out.components.iter().enumerate() {
            println!(
                "mes {:<12} w = {:.4}  {:?}",
                args.components[j],
                out.mean_weights[j],
                comp.theta_m.as_slice()
            );
        }
        println!(
            "reconciliation residual: {:?}",
            out.reconciliation.as_slice()
        );
    }
    if let Some(base) = &args.out {
        write_text(
            &base.with_extension("json"),
            &serde_json::to_string_pretty(&report).unwrap(),
        )?;
        let mut csv = String::from("fit,series,parameter,estimate,se\n");
        for i in 0..p {
            let se = out
                .es
                .se
                .as_ref()
                .map(|s| s[i].to_string())
                .unwrap_or_default();
            csv.push_str(&format!(
                "es,{},{},{},{}\n",
                args.x, var_names[i], out.es.theta_v[i], se
            ));
        }
        for i in 0..out.es.theta_e.len() {
            let se = out
                .es
                .se
                .as_ref()
                .map(|s| s[p + i].to_string())
                .unwrap_or_default();
            csv.push_str(&format!(
                "es,{},{},{},{}\n",
                args.x, es_names[i], out.es.theta_e[i], se
            ));
        }
        for (j, comp) in out.components.iter().enumerate() {
            for i in 0..comp.theta_m.len() {
                let se = comp
                    .se
                    .as_ref()
                    .map(|s| s[p + i].to_string())
                    .unwrap_or_default();
                csv.push_str(&format!(
                    "mes,{},{},{},{}\n",
                    args.components[j], mes_names[i], comp.theta_m[i], se
                ));
            }
        }
        write_text(&base.with_extension("csv"), &csv)?;
    }
    Ok(())
}

fn cmd_erc(args: ErcArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    if args.components.len() < 2 {
        return Err(usage("--components must name at least two columns"));
    }
    if args.z.is_empty() {
        return Err(usage("--z must name at least one column"));
    }
    if !(args.tol > 0.0) {
        return Err(usage("--tol must be positive"));
    }
    let table = NumericTable::read_path(&args.input)?;
    let n = table.n;
    let d = args.components.len();
    let mut losses = mesreg::nalgebra::DMatrix::zeros(n, d);
    for (j, name) in args.components.iter().enumerate() {
        let col = table.column(name)?;
        for t in 0..n {
            losses[(t, j)] = col[t];
        }
    }
    let z = table.design(&args.z)?;
    let erc = erc_backtest(&losses, &z, args.beta, args.start, args.tol, args.max_iter)?;
    let ew = ew_backtest(&losses, args.beta, args.start)?;

    let report = json!({
        "schema_version": 1,
        "command": "erc",
        "beta": args.beta,
        "start": args.start,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "forecast_dates": erc.weights.len(),
        "metrics": {"erc": erc.metrics, "ew": ew.metrics},
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!(
            "{} forecast dates, beta = {}, tol = {}",
            erc.weights.len(),
            args.beta,
            args.tol
        );
        println!(
            "erc: avg_return {:.4}  std {:.4}  var {:.4}  es {:.4}",
            erc.metrics.avg_return, erc.metrics.std_dev, erc.metrics.var, erc.metrics.es
        );
        println!(
            "ew : avg_return {:.4}  std {:.4}  var {:.4}  es {:.4}",
            ew.metrics.avg_return, ew.metrics.std_dev, ew.metrics.var, ew.metrics.es
        );
    }
    if let Some(base) = &args.out {
        write_text(
            &base.with_extension("json"),
            &serde_json::to_string_pretty(&report).unwrap(),
        )?;
        let mut csv = String::from("t,");
        csv.push_str(
            &(1..=d)
                .map(|j| format!("w_{j}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        csv.push_str(",iterations,spread\n");
        for (i, w) in erc.weights.iter().enumerate() {
            let (iters, spread) = erc.states[i];
            csv.push_str(&format!(
                "{},{},{},{}\n",
                args.start + i,
                w.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                iters,
                spread
            ));
        }
        write_text(&paths_sibling(base, "_weights.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    check_level("beta", args.beta)?;
    let sigma = match &args.sigma {
        None => DEFAULT_SIGMA,
        Some(v) if v.len() == 4 => [[v[0], v[1]], [v[2], v[3]]],
        Some(v) => {
            return Err(usage(format!(
                "--sigma needs 4 entries (s11,s12,s21,s22), got {}",
                v.len()
            )))
        }
    };
    let seed = seed_override(args.seed);
    let (m_tilde, se) = tail_expectation_mc(args.beta, args.df, &sigma, args.draws, seed)?;
    let config = SimConfig {
        sigma,
        df: args.df,
        ..SimConfig::new(args.beta, 2, 1, seed)
    };
    let tp = true_params(&config)?;
    let report = json!({
        "schema_version": 1,
        "command": "oracle",
        "beta": args.beta,
        "df": args.df,
        "sigma": sigma,
        "draws": args.draws,
        "seed": seed,
        "q_tilde": tp.q_tilde,
        "m_tilde_mc": m_tilde,
        "m_tilde_mc_se": se,
        "m_tilde_cached": tp.m_tilde,
    });
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!("q_tilde      = {:.10}", tp.q_tilde);
        println!("m_tilde (mc) = {:.6} +/- {:.6}", m_tilde, se);
        println!("m_tilde used = {:.6}", tp.m_tilde);
    }
    Ok(())
}
