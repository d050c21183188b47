//! Command-line front end: CSV ingestion, estimation, diagnostics and
//! simulation runs with JSON or CSV output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::Error;
use crate::estimate::{diagnose, estimate, EstimatorConfig};
use crate::estimators::{two_sided_pvalue, EstimateResult, Method};
use crate::likelihood::{het_test, KAPPA_WARN_THRESHOLD};
use crate::model::{Dataset, Theta};
use crate::simulation::{
    generate, run_replicates, summarize, DesignKind, KappaSweep, MonteCarloSummary, Scenario,
};

/// Environment variable that overrides any configured seed.
pub const SEED_ENV: &str = "MISTERI_SEED";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const IDENTIFICATION: i32 = 5;
    pub const UNMAPPED_COLUMN: i32 = 6;
    pub const BAD_CELL: i32 = 7;
    pub const SHAPE_MISMATCH: i32 = 8;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("column '{0}' not found in header")]
    UnmappedColumn(String),
    #[error("row {row}, column '{column}': cannot parse {value:?} as a number")]
    BadCell { row: usize, column: String, value: String },
    #[error(transparent)]
    Model(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Input(_) => exit::INPUT,
            CliError::UnmappedColumn(_) => exit::UNMAPPED_COLUMN,
            CliError::BadCell { .. } => exit::BAD_CELL,
            CliError::Model(e) => match e {
                Error::InvalidArgument(_) => exit::USAGE,
                Error::InvalidData(_) => exit::INPUT,
                Error::ShapeMismatch(_) | Error::ContinuousInstrument(_) => exit::SHAPE_MISMATCH,
                Error::WeakFirstStage(_) => exit::IDENTIFICATION,
                e if e.is_identification() => exit::IDENTIFICATION,
                _ => exit::NUMERIC,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "misteri", version, about = "Causal effect estimation with possibly invalid instruments")]
struct Cli {
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the causal effect from a CSV file
    Estimate(EstimateArgs),
    /// Heteroskedasticity test and kappa diagnostic for a CSV file
    Diagnose(DataArgs),
    /// Monte Carlo run of one estimator on one scenario
    Simulate(SimulateArgs),
    /// Rerun a full simulation table
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV file with a header row
    input: PathBuf,
    /// Outcome column
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Treatment column
    #[arg(long, default_value = "a")]
    treatment: String,
    /// Instrument columns; defaults to every other column
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,
    /// Output file; stdout when absent
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "cmle", value_parser = parse_method)]
    method: Method,
    /// Bootstrap resamples; each method has its own default
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Mixture components
    #[arg(long, default_value_t = 2)]
    mixture_k: usize,
    /// Weight the stage-1 regression by the stage-2 variance fit
    #[arg(long)]
    reweight: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_design)]
    scenario: DesignKind,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Number of instruments (many-instrument design only)
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    eta_z: Option<f64>,
    #[arg(long)]
    maf: Option<f64>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value = "one_step", value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 2)]
    mixture_k: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the first replicate's dataset as CSV
    #[arg(long)]
    emit_data: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Table {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    Kappa,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[arg(long, value_enum)]
    table: Table,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Sample size; defaults to 10000 (tables 1 and 3) or 100000
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_design(s: &str) -> Result<DesignKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Seed precedence: environment, then flag, then the crate default.
fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(crate::DEFAULT_SEED)),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads > 0 {
        // Fails only when a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let out = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Reproduce(a) => cmd_reproduce(&a),
    };
    match out {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Reads the mapped columns of a CSV file into a [`Dataset`].
pub fn read_dataset(path: &Path, outcome: &str, treatment: &str, instruments: &[String]) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> =
        reader.headers().map_err(|e| io_err(path, e))?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(CliError::Input(format!("{}: empty file or missing header", path.display())));
    }
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::UnmappedColumn(name.to_string()))
    };
    let iy = find(outcome)?;
    let ia = find(treatment)?;
    let iz: Vec<usize> = if instruments.is_empty() {
        (0..header.len()).filter(|&j| j != iy && j != ia).collect()
    } else {
        instruments.iter().map(|c| find(c)).collect::<CliResult<_>>()?
    };
    if iz.is_empty() {
        return Err(CliError::Input("no instrument columns".into()));
    }
    let p = iz.len();
    let (mut y, mut a, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = r + 2;
        let rec = rec.map_err(|e| io_err(path, e))?;
        let cell = |j: usize| -> CliResult<f64> {
            let raw = rec.get(j).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::BadCell { row, column: header[j].clone(), value: raw.to_string() }),
            }
        };
        y.push(cell(iy)?);
        a.push(cell(ia)?);
        for &j in &iz {
            z.push(cell(j)?);
        }
    }
    if y.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new(y, a, z, p)?)
}

/// Writes `data` as CSV with columns `y, a, z1, ..., zp`. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    let mut header = vec!["y".to_string(), "a".to_string()];
    header.extend((1..=data.p()).map(|j| format!("z{j}")));
    w.write_record(&header).map_err(|e| io_err(path, e))?;
    let mut row = Vec::with_capacity(2 + data.p());
    for i in 0..data.n() {
        row.clear();
        row.push(data.y()[i].to_string());
        row.push(data.a()[i].to_string());
        row.extend(data.z_row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize)]
struct ParamJson {
    est: f64,
    se: f64,
    ci: [f64; 2],
    p: f64,
}

#[derive(Debug, Serialize)]
struct KappaJson {
    value: f64,
    k: usize,
    min_eigenvalue: f64,
    warning: bool,
}

#[derive(Debug, Serialize)]
struct HetJson {
    het_stat: Option<f64>,
    het_pvalue: Option<f64>,
}

/// JSON layout of an estimate. Keys depend only on the method.
#[derive(Debug, Serialize)]
pub struct EstimateJson {
    method: Method,
    beta: ParamJson,
    gamma: ParamJson,
    theta_names: Vec<String>,
    theta: Vec<f64>,
    se: Vec<f64>,
    kappa: Option<KappaJson>,
    diagnostics: HetJson,
    converged: bool,
    iterations: usize,
    n: usize,
    p: usize,
    centering_offset: f64,
    warnings: Vec<String>,
}

fn param_json(r: &EstimateResult, i: usize) -> ParamJson {
    let est = r.theta_hat.to_vec()[i];
    ParamJson { est, se: r.se[i], ci: [r.ci_low[i], r.ci_high[i]], p: two_sided_pvalue(est, r.se[i]) }
}

impl EstimateJson {
    pub fn new(r: &EstimateResult, data: &Dataset) -> Self {
        let het = het_test(data).ok();
        Self {
            method: r.method,
            beta: param_json(r, 0),
            gamma: param_json(r, 1),
            theta_names: Theta::names(data.p()),
            theta: r.theta_hat.to_vec(),
            se: r.se.clone(),
            kappa: r.kappa.as_ref().map(|k| KappaJson {
                value: k.kappa,
                k: k.k,
                min_eigenvalue: k.min_eigenvalue,
                warning: k.warning,
            }),
            diagnostics: HetJson { het_stat: het.map(|h| h.0), het_pvalue: het.map(|h| h.1) },
            converged: r.converged,
            iterations: r.iterations,
            n: data.n(),
            p: data.p(),
            centering_offset: r.centering_offset,
            warnings: r.warnings.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct DiagnoseJson {
    het_stat: f64,
    het_pvalue: f64,
    kappa: f64,
    k: usize,
    min_eigenvalue: f64,
    warning: bool,
}

/// Writes `bytes` to `path`, or stdout when absent. Nothing is written
/// unless the command has already succeeded.
fn emit(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v).map_err(|e| CliError::Input(e.to_string()))?;
    s.push(b'\n');
    Ok(s)
}

fn estimator_config(seed: u64, bootstrap: Option<usize>, mixture_k: usize) -> EstimatorConfig {
    EstimatorConfig { bootstrap, seed, mixture_k, ..Default::default() }
}

fn cmd_estimate(args: &EstimateArgs) -> CliResult<()> {
    let d = &args.data;
    let data = read_dataset(&d.input, &d.outcome, &d.treatment, &d.instruments)?;
    let cfg = EstimatorConfig {
        reweight_stage1: args.reweight,
        ..estimator_config(resolve_seed(d.seed)?, args.bootstrap, args.mixture_k)
    };
    let result = estimate(&data, args.method, &cfg)?;
    emit(d.output.as_deref(), &to_json(&EstimateJson::new(&result, &data))?)
}

fn cmd_diagnose(args: &DataArgs) -> CliResult<()> {
    let data = read_dataset(&args.input, &args.outcome, &args.treatment, &args.instruments)?;
    let cfg = EstimatorConfig { seed: resolve_seed(args.seed)?, ..Default::default() };
    let r = diagnose(&data, &cfg)?;
    let out = DiagnoseJson {
        het_stat: r.het_test_stat,
        het_pvalue: r.het_test_pvalue,
        kappa: r.kappa_hat,
        k: r.k,
        min_eigenvalue: r.min_eigenvalue,
        warning: r.kappa_hat < KAPPA_WARN_THRESHOLD,
    };
    emit(args.output.as_deref(), &to_json(&out)?)
}

/// One row of a summary table.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub eta_z: f64,
    pub method: String,
    pub reps: usize,
    pub failures: usize,
    pub flagged: bool,
    pub beta_hat: f64,
    pub bias_pct: f64,
    pub se: f64,
    pub sd: Option<f64>,
    pub cover: f64,
    pub gamma_hat: f64,
    pub gamma_bias_pct: f64,
    pub gamma_se: f64,
    pub gamma_sd: Option<f64>,
    pub gamma_cover: f64,
    pub kappa: Option<f64>,
}

impl SummaryRow {
    pub fn new(s: &Scenario, m: &MonteCarloSummary) -> Self {
        Self {
            scenario: s.design.as_str().to_string(),
            n: s.n,
            p: s.p,
            eta_z: s.eta_z,
            method: m.method.as_str().to_string(),
            reps: m.reps,
            failures: m.failures,
            flagged: m.flagged,
            beta_hat: m.beta.mean,
            bias_pct: m.beta.bias_pct,
            se: m.beta.se_avg,
            sd: m.beta.sd,
            cover: m.beta.coverage,
            gamma_hat: m.gamma.mean,
            gamma_bias_pct: m.gamma.bias_pct,
            gamma_se: m.gamma.se_avg,
            gamma_sd: m.gamma.sd,
            gamma_cover: m.gamma.coverage,
            kappa: m.mean_kappa,
        }
    }
}

/// CSV with a header row. Absent values are empty cells.
fn rows_to_csv<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Input(e.to_string()))
}

fn run_row(s: &Scenario, method: Method, reps: usize, cfg: &EstimatorConfig) -> CliResult<SummaryRow> {
    let records = run_replicates(s, method, reps, cfg)?;
    let summary = summarize(s, method, &records)?;
    if summary.flagged {
        eprintln!(
            "warning: {} of {} replicates failed for {} / {}",
            summary.failures,
            summary.reps,
            s.design.as_str(),
            method
        );
    }
    Ok(SummaryRow::new(s, &summary))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed)?;
    let mut s = Scenario::for_design(args.scenario, args.n, seed);
    if let Some(p) = args.p {
        if s.design != DesignKind::Table2WeakMany && p != 1 {
            return Err(CliError::Usage(format!("scenario {} has a single instrument", s.design.as_str())));
        }
        s.p = p;
    }
    if let Some(e) = args.eta_z {
        s.eta_z = e;
    }
    if let Some(m) = args.maf {
        s.maf = m;
    }
    s.validate()?;
    if let Some(path) = &args.emit_data {
        write_dataset(path, &generate(&s)?)?;
    }
    let cfg = estimator_config(seed, args.bootstrap, args.mixture_k);
    let row = run_row(&s, args.method, args.reps, &cfg)?;
    let bytes = match args.format {
        Format::Csv => rows_to_csv(&[row])?,
        Format::Json => to_json(&row)?,
    };
    emit(args.output.as_deref(), &bytes)
}

#[derive(Debug, Serialize)]
struct KappaRow {
    rep: usize,
    kappa: f64,
    beta_hat: f64,
    band_low: f64,
    band_high: f64,
}

fn cmd_reproduce(args: &ReproduceArgs) -> CliResult<()> {
    let seed = resolve_seed(args.seed)?;
    let cfg = estimator_config(seed, args.bootstrap, 2);
    let bytes = match args.table {
        Table::One => {
            let n = args.n.unwrap_or(10_000);
            let rows = [0.2, 0.15, 0.1, 0.05]
                .into_iter()
                .map(|eta| run_row(&Scenario::table1(n, eta, seed), Method::OneStep, args.reps, &cfg))
                .collect::<CliResult<Vec<_>>>()?;
            rows_to_csv(&rows)?
        }
        Table::Two => {
            let n = args.n.unwrap_or(100_000);
            let mut rows = Vec::new();
            for p in [20, 50] {
                let s = Scenario::table2(n, p, seed);
                for m in [Method::ThreeStage, Method::Cmle] {
                    rows.push(run_row(&s, m, args.reps, &cfg)?);
                }
            }
            rows_to_csv(&rows)?
        }
        Table::Three => {
            let n = args.n.unwrap_or(10_000);
            let rows = [0.1, 0.25, 0.5]
                .into_iter()
                .map(|eta| run_row(&Scenario::table3(n, eta, seed), Method::Mixture, args.reps, &cfg))
                .collect::<CliResult<Vec<_>>>()?;
            rows_to_csv(&rows)?
        }
        Table::Kappa => {
            let s = Scenario::table2(args.n.unwrap_or(100_000), 20, seed);
            let records = run_replicates(&s, Method::Cmle, args.reps, &cfg)?;
            let sweep = KappaSweep::from_records(&s, &records)?;
            let rows: Vec<KappaRow> = sweep
                .kappa
                .iter()
                .zip(&sweep.beta)
                .enumerate()
                .map(|(rep, (&kappa, &beta_hat))| KappaRow {
                    rep,
                    kappa,
                    beta_hat,
                    band_low: sweep.band_low,
                    band_high: sweep.band_high,
                })
                .collect();
            rows_to_csv(&rows)?
        }
    };
    emit(args.output.as_deref(), &bytes)
}
