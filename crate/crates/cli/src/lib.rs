//! Command-line front end: argument parsing, command drivers and the report
//! types they emit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use panelmg::simulation::{run_monte_carlo, GridCell, MonteCarloConfig, SimError, SimReport};
use panelmg::{
    confidence_interval, estimate, jackknife_with_kappa, poolability_test_with_kappa,
    read_panel_csv, EstimationError, InferenceError, KappaPolicy, Method, PanelData, PanelError,
    PoolabilityReport, SCHEMA,
};
use serde::{Deserialize, Serialize};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "panelmg",
    version,
    about = "Two-way mean-group estimation and poolability tests for panel data"
)]
pub struct Cli {
    /// Worker threads (falls back to PANELMG_THREADS, then all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate slopes with jackknife standard errors and confidence intervals.
    Estimate(EstimateArgs),
    /// Test whether the pooled two-way estimator is adequate.
    Test(TestArgs),
    /// Run the Monte Carlo designs and write CSV and JSON reports.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Long-format CSV with header unit,time,y,<regressors...>.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "tw-mg,tw-mg-ridge,tw-pooled,mg"
    )]
    pub estimators: Vec<Method>,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Ridge parameter for tw-mg-ridge (default: data-driven).
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Write per-unit slopes to this CSV.
    #[arg(long)]
    pub unit_slopes: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Use the ridge mean-group estimator.
    #[arg(long)]
    pub ridge: bool,
    /// Ridge parameter (implies --ridge).
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Designs, 1 to 6.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dgp: Vec<u8>,
    /// Numbers of units.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    pub n_units: Vec<usize>,
    /// Numbers of periods.
    #[arg(long = "t", value_delimiter = ',', required = true)]
    pub n_periods: Vec<usize>,
    #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u64).range(1..))]
    pub reps: u64,
    #[arg(long, default_value_t = 20240101)]
    pub seed: u64,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "tw-mg,tw-mg-ridge,tw-pooled,mg"
    )]
    pub estimators: Vec<Method>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Directory for sim_report.csv and sim_report.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// A failed command: message for standard error plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<PanelError> for Failure {
    fn from(e: PanelError) -> Self {
        let code = match e {
            PanelError::Io(_) => EXIT_IO,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<EstimationError> for Failure {
    fn from(e: EstimationError) -> Self {
        Failure::new(EXIT_ESTIMATION, e.to_string())
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        let code = match e {
            InferenceError::InvalidLevel(_) => EXIT_USAGE,
            _ => EXIT_ESTIMATION,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Io(_) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

/// Writes `contents` to `output` or returns it for standard output.
fn emit(output: Option<&Path>, contents: String) -> Result<Option<String>, Failure> {
    match output {
        Some(path) => write_file(path, &contents).map(|_| None),
        None => Ok(Some(contents)),
    }
}

fn check_level(level: f64) -> Result<(), Failure> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_USAGE,
            format!("--level must lie in (0, 1), got {level}"),
        ))
    }
}

fn check_kappa(kappa: Option<f64>) -> Result<(), Failure> {
    match kappa {
        Some(k) if !(k.is_finite() && k >= 0.0) => Err(Failure::new(
            EXIT_USAGE,
            format!("--kappa must be finite and nonnegative, got {k}"),
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub estimator: Method,
    pub regressor: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema: String,
    pub n_units: usize,
    pub n_periods: usize,
    pub regressors: Vec<String>,
    pub level: f64,
    pub coefficients: Vec<CoefficientRow>,
}

impl EstimateReport {
    pub fn get(&self, estimator: Method, regressor: &str) -> Option<&CoefficientRow> {
        self.coefficients
            .iter()
            .find(|c| c.estimator == estimator && c.regressor == regressor)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.coefficients {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    pub fn rows_from_csv(s: &str) -> Result<Vec<CoefficientRow>, csv::Error> {
        csv::Reader::from_reader(s.as_bytes())
            .deserialize()
            .collect()
    }

    pub fn to_table(&self) -> String {
        let pct = 100.0 * self.level;
        let mut out = format!(
            "N = {}, T = {}\n{:<12} {:<12} {:>11} {:>11} {:>11} {:>11}\n",
            self.n_units,
            self.n_periods,
            "estimator",
            "regressor",
            "estimate",
            "std. error",
            format!("{pct:.0}% lower"),
            format!("{pct:.0}% upper"),
        );
        for c in &self.coefficients {
            let _ = writeln!(
                out,
                "{:<12} {:<12} {:>11.4} {:>11.4} {:>11.4} {:>11.4}",
                c.estimator.name(),
                c.regressor,
                c.estimate,
                c.std_error,
                c.lower,
                c.upper
            );
        }
        out
    }
}

/// One row per unit and estimator that has unit-level slopes.
fn unit_slopes_csv(p: &PanelData, slopes: &[(Method, Vec<Vec<f64>>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["estimator".to_string(), "unit".to_string()];
    header.extend(p.regressor_names().iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (method, rows) in slopes {
        for (unit, row) in p.unit_labels().iter().zip(rows) {
            let mut rec = vec![method.name().to_string(), unit.clone()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<Option<String>, Failure> {
    check_level(args.level)?;
    check_kappa(args.kappa)?;
    let p = read_panel_csv(&args.input)?;
    let names = p.regressor_names().to_vec();
    let mut coefficients = Vec::new();
    let mut unit_slopes = Vec::new();
    for &method in &args.estimators {
        let kappa = if method == Method::TwMgRidge {
            args.kappa
        } else {
            None
        };
        let est = estimate(&p, method, kappa)?;
        let jk = jackknife_with_kappa(&p, method, est.kappa_used, KappaPolicy::Fixed)?;
        for (j, name) in names.iter().enumerate() {
            let ci = confidence_interval(&est, &jk, args.level, j)?;
            coefficients.push(CoefficientRow {
                estimator: method,
                regressor: name.clone(),
                estimate: ci.point,
                std_error: ci.std_error,
                lower: ci.lower,
                upper: ci.upper,
                level: args.level,
                kappa: est.kappa_used,
            });
        }
        if let Some(s) = &est.unit_slopes {
            let rows = s.row_iter().map(|r| r.iter().copied().collect()).collect();
            unit_slopes.push((method, rows));
        }
    }
    if let Some(path) = &args.unit_slopes {
        write_file(path, &unit_slopes_csv(&p, &unit_slopes))?;
    }
    let report = EstimateReport {
        schema: SCHEMA.to_string(),
        n_units: p.n_units(),
        n_periods: p.n_periods(),
        regressors: names,
        level: args.level,
        coefficients,
    };
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    };
    emit(args.output.as_deref(), text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema: String,
    pub regressors: Vec<String>,
    #[serde(flatten)]
    pub result: PoolabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub hypothesis: String,
    pub statistic: f64,
    pub df: u32,
    pub pvalue: f64,
    pub holm_pvalue: f64,
}

impl TestReport {
    /// Per-coefficient rows followed by the joint row.
    pub fn rows(&self) -> Vec<TestRow> {
        let r = &self.result;
        let mut rows: Vec<TestRow> = self
            .regressors
            .iter()
            .zip(&r.per_coef)
            .map(|(name, c)| TestRow {
                hypothesis: name.clone(),
                statistic: c.statistic,
                df: 1,
                pvalue: c.pvalue,
                holm_pvalue: c.holm_pvalue,
            })
            .collect();
        rows.push(TestRow {
            hypothesis: "joint".into(),
            statistic: r.joint_stat,
            df: r.joint_df,
            pvalue: r.joint_pvalue,
            holm_pvalue: r.joint_holm_pvalue,
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    pub fn rows_from_csv(s: &str) -> Result<Vec<TestRow>, csv::Error> {
        csv::Reader::from_reader(s.as_bytes())
            .deserialize()
            .collect()
    }

    pub fn to_table(&self) -> String {
        let r = &self.result;
        let mut out = format!(
            "poolability test ({} vs tw-pooled), N = {}\n{:<12} {:>12} {:>4} {:>10} {:>10}\n",
            r.mean_group, r.n_units, "hypothesis", "statistic", "df", "p-value", "Holm"
        );
        for row in self.rows() {
            let _ = writeln!(
                out,
                "{:<12} {:>12.4} {:>4} {:>10.4} {:>10.4}",
                row.hypothesis, row.statistic, row.df, row.pvalue, row.holm_pvalue
            );
        }
        out
    }
}

pub fn cmd_test(args: &TestArgs) -> Result<Option<String>, Failure> {
    check_kappa(args.kappa)?;
    let p = read_panel_csv(&args.input)?;
    let ridge = args.ridge || args.kappa.is_some();
    let result = poolability_test_with_kappa(&p, ridge, args.kappa)?;
    let report = TestReport {
        schema: SCHEMA.to_string(),
        regressors: p.regressor_names().to_vec(),
        result,
    };
    let text = match args.format {
        Format::Json => to_json(&report),
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    };
    emit(args.output.as_deref(), text)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Option<String>, Failure> {
    check_level(args.level)?;
    let mut grid = Vec::new();
    for &dgp in &args.dgp {
        for &n in &args.n_units {
            for &t in &args.n_periods {
                grid.push(GridCell::new(dgp, n, t)?);
            }
        }
    }
    let cfg = MonteCarloConfig {
        replications: args.reps as usize,
        base_seed: args.seed,
        estimators: args.estimators.clone(),
        level: args.level,
        ..MonteCarloConfig::default()
    };
    let report: SimReport = run_monte_carlo(&grid, &cfg)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| {
        Failure::new(
            EXIT_IO,
            format!("cannot create {}: {e}", args.out_dir.display()),
        )
    })?;
    write_file(&args.out_dir.join("sim_report.csv"), &report.to_csv())?;
    write_file(&args.out_dir.join("sim_report.json"), &report.to_json())?;
    Ok(Some(report.summary_table()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn thread_count(flag: Option<u64>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n as usize));
    }
    match std::env::var("PANELMG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::new(
                EXIT_USAGE,
                format!("PANELMG_THREADS must be a positive integer, got '{v}'"),
            )),
        },
        Err(_) => Ok(None),
    }
}

/// Runs a parsed command line; returns the text for standard output.
pub fn run(cli: &Cli) -> Result<Option<String>, Failure> {
    let dispatch = || match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match thread_count(cli.threads)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot start {n} threads: {e}")))?
            .install(dispatch),
        None => dispatch(),
    }
}
