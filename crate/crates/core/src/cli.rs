//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::combined::{combined_test, contrast_statistic, CombinedConfig, Procedure};
use crate::error::Error;
use crate::estimators::GroupSample;
use crate::hypotheses::{self, HypothesisFamily, HypothesisSpec};
use crate::pipeline::{test_groups, TestOptions, DEFAULT_ALPHA, DEFAULT_BOOT_REPS, DEFAULT_MC_REPS};
use crate::quadform::Method;
use crate::resampling::WildWeight;
use crate::simlab::{
    power_curve, type1_experiment, write_csv, BaseStructure, DistributionFamily, DistributionSpec, ScenarioLabel,
    SimScenario, DEFAULT_GAMMA_SHAPE,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const THREADS_ENV: &str = "CORRTEST_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } | CliError::Io { .. } => EXIT_DATA,
            CliError::Core(e) => match e {
                Error::Argument(_) | Error::Config(_) | Error::DegenerateHypothesis(_) => EXIT_USAGE,
                Error::Dimension(_) | Error::ZeroVariance { .. } | Error::DegenerateData(_) | Error::TransformDomain(_) => {
                    EXIT_DATA
                }
                Error::Numerical(_) => EXIT_NUMERICAL,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "corrtest", version, about = "Tests for hypotheses about correlation matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a hypothesis about the correlation matrices of one or more groups.
    Test(TestArgs),
    /// Simulate rejection rates (type-I error or power) of the tests.
    Simulate(SimulateArgs),
    /// Combined test for equal variances and equal correlations of two groups.
    Combined(CombinedArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file of one group (one row per subject); repeat for several groups.
    #[arg(long = "data", required = true, value_name = "FILE")]
    pub data: Vec<PathBuf>,

    /// Hypothesis family: equal-corr-matrices, identity-corr, equal-correlations,
    /// given-corr FILE, custom FILE.
    #[arg(long, num_args = 1..=2, value_names = ["FAMILY", "FILE"], required = true)]
    pub hypothesis: Vec<String>,

    /// Test method, optionally with the `-m` small-sample suffix.
    #[arg(long, default_value = "ats-par", value_parser = parse_method)]
    pub method: Method,

    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,

    /// Monte-Carlo draws for ats-mc, atsfz-mc and ats-tay.
    #[arg(long, default_value_t = DEFAULT_MC_REPS)]
    pub reps: usize,

    /// Bootstrap replicates for ats-par and ats-wild.
    #[arg(long, default_value_t = DEFAULT_BOOT_REPS)]
    pub boot: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "rademacher", value_parser = parse_wild_weight)]
    pub wild_weight: WildWeight,

    /// Output file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// A_r, B_r, C_r, E, power-A or power-B.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: ScenarioLabel,

    /// normal, t9, skew-normal or gamma.
    #[arg(long, default_value = "normal", value_parser = parse_distribution)]
    pub dist: DistributionFamily,

    /// Total sample size (two-group designs) or group size.
    #[arg(long, default_value_t = 250)]
    pub n: usize,

    #[arg(long, default_value_t = 5)]
    pub d: usize,

    /// Covariance of the two-group designs: toeplitz or ar.
    #[arg(long, default_value = "toeplitz", value_parser = parse_structure)]
    pub cov: BaseStructure,

    /// Methods to compare; repeat or separate by commas. Defaults to all.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,

    #[arg(long, default_value_t = 2000)]
    pub runs: usize,

    #[arg(long, default_value_t = DEFAULT_MC_REPS)]
    pub reps: usize,

    #[arg(long, default_value_t = 500)]
    pub boot: usize,

    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Comma-separated shifts; produces a power curve instead of a type-I table.
    #[arg(long, value_delimiter = ',')]
    pub delta_grid: Option<Vec<f64>>,

    #[arg(long, default_value_t = DEFAULT_GAMMA_SHAPE)]
    pub gamma_shape: f64,

    #[arg(long, default_value = "rademacher", value_parser = parse_wild_weight)]
    pub wild_weight: WildWeight,

    /// Output CSV (stdout if omitted). A manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CombinedArgs {
    /// Exactly two CSV files, one per group.
    #[arg(long = "data", required = true, value_name = "FILE")]
    pub data: Vec<PathBuf>,

    /// taylor or equicoordinate.
    #[arg(long, default_value = "taylor", value_parser = parse_procedure)]
    pub procedure: Procedure,

    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,

    #[arg(long, default_value_t = DEFAULT_MC_REPS)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Compare signed instead of absolute coordinates.
    #[arg(long)]
    pub one_sided: bool,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_wild_weight(s: &str) -> Result<WildWeight, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scenario(s: &str) -> Result<ScenarioLabel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_distribution(s: &str) -> Result<DistributionFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_structure(s: &str) -> Result<BaseStructure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_procedure(s: &str) -> Result<Procedure, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Digest of one input file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub columns: usize,
    pub header: bool,
}

/// Provenance attached to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: &'static str,
    pub threads: usize,
    pub elapsed_seconds: f64,
    pub inputs: Vec<InputDigest>,
}

/// Numeric table read from CSV.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub matrix: DMatrix<f64>,
    pub header: Option<Vec<String>>,
    pub digest: InputDigest,
}

/// Reads a numeric CSV file. A first row with any non-numeric field is taken as a header.
pub fn read_csv_matrix(path: &Path) -> CliResult<CsvTable> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| CliError::Io { path: display.clone(), source })?;
    let data_err = |message: String| CliError::Data { path: display.clone(), message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());

    let mut header = None;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| data_err(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        if i == 0 && header.is_none() && parsed.iter().any(Option::is_none) {
            header = Some(rec.iter().map(str::to_string).collect::<Vec<_>>());
            cols = Some(rec.len());
            continue;
        }
        match cols {
            Some(c) if c != rec.len() => {
                return Err(data_err(format!("line {line}: expected {c} fields, found {}", rec.len())));
            }
            None => cols = Some(rec.len()),
            _ => {}
        }
        for (j, (v, raw)) in parsed.into_iter().zip(rec.iter()).enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(v),
                _ => return Err(data_err(format!("line {line}, column {}: '{raw}' is not a finite number", j + 1))),
            }
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    if rows == 0 {
        return Err(data_err("no numeric rows".into()));
    }
    let digest = InputDigest {
        path: display,
        sha256: hex::encode(Sha256::digest(&bytes)),
        rows,
        columns: cols,
        header: header.is_some(),
    };
    Ok(CsvTable { matrix: DMatrix::from_row_slice(rows, cols, &values), header, digest })
}

/// Reads one group and attaches the file name (and column name) to data errors.
pub fn read_group(path: &Path) -> CliResult<(GroupSample, InputDigest)> {
    let table = read_csv_matrix(path)?;
    let path = table.digest.path.clone();
    match GroupSample::new(table.matrix) {
        Ok(g) => Ok((g, table.digest)),
        Err(Error::ZeroVariance { column }) => {
            let name = table
                .header
                .as_ref()
                .and_then(|h| h.get(column - 1))
                .map(|n| format!(" ('{n}')"))
                .unwrap_or_default();
            Err(CliError::Data { path, message: format!("column {column}{name} has zero sample variance") })
        }
        Err(e @ (Error::DegenerateData(_) | Error::Dimension(_))) => Err(CliError::Data { path, message: e.to_string() }),
        Err(e) => Err(e.into()),
    }
}

fn read_groups(paths: &[PathBuf]) -> CliResult<(Vec<GroupSample>, Vec<InputDigest>)> {
    let mut groups = Vec::new();
    let mut digests = Vec::new();
    for p in paths {
        let (g, dg) = read_group(p)?;
        if let Some(first) = groups.first().map(GroupSample::d) {
            if g.d() != first {
                return Err(CliError::Data {
                    path: dg.path,
                    message: format!("has {} columns, the first file has {first}", g.d()),
                });
            }
        }
        groups.push(g);
        digests.push(dg);
    }
    Ok((groups, digests))
}

/// Builds the hypothesis named by `--hypothesis FAMILY [FILE]`.
pub fn build_hypothesis(args: &[String], a: usize, d: usize) -> CliResult<(HypothesisSpec, Option<InputDigest>)> {
    let family: HypothesisFamily = args[0].parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let file = args.get(1).map(PathBuf::from);
    match (family.needs_input(), &file) {
        (true, None) => return Err(CliError::Usage(format!("hypothesis {family} needs a matrix file"))),
        (false, Some(_)) => return Err(CliError::Usage(format!("hypothesis {family} takes no file"))),
        _ => {}
    }
    let one_group = |a: usize| {
        if a != 1 {
            Err(CliError::Usage(format!("hypothesis {family} is for one group, got {a} data files")))
        } else {
            Ok(())
        }
    };
    let spec = match family {
        HypothesisFamily::EqualCorrelationMatrices => {
            if a < 2 {
                return Err(CliError::Usage(format!("hypothesis {family} needs at least two data files")));
            }
            hypotheses::equal_correlation_matrices(a, d)?
        }
        HypothesisFamily::Identity => {
            one_group(a)?;
            hypotheses::identity_correlation(d)?
        }
        HypothesisFamily::EqualCorrelations => {
            one_group(a)?;
            hypotheses::equal_correlations(d)?
        }
        HypothesisFamily::Given | HypothesisFamily::Custom => {
            let table = read_csv_matrix(file.as_deref().expect("checked above"))?;
            let path = table.digest.path.clone();
            let wrap = |e: Error| CliError::Data { path: path.clone(), message: e.to_string() };
            let spec = if family == HypothesisFamily::Given {
                one_group(a)?;
                if table.matrix.nrows() != d {
                    return Err(wrap(Error::Argument(format!(
                        "target correlation is {}x{}, data has {d} variables",
                        table.matrix.nrows(),
                        table.matrix.ncols()
                    ))));
                }
                hypotheses::given_correlation(&table.matrix).map_err(wrap)?
            } else {
                let pu = d * (d - 1) / 2;
                let m = &table.matrix;
                if m.ncols() == a * pu {
                    hypotheses::custom(m.clone(), DVector::zeros(m.nrows()), a, d).map_err(wrap)?
                } else {
                    hypotheses::custom_from_block(m, a, d).map_err(wrap)?
                }
            };
            return Ok((spec, Some(table.digest)));
        }
    };
    Ok((spec, None))
}

fn configure_threads() -> CliResult<usize> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(rayon::current_num_threads());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // a second call in the same process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}

fn write_output(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|source| CliError::Io { path: p.display().to_string(), source }),
        None => stdout
            .write_all(bytes)
            .map_err(|source| CliError::Io { path: "<stdout>".into(), source }),
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable output");
    s.push(b'\n');
    s
}

fn cmd_test(a: &TestArgs, argv: &[String], threads: usize, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let (groups, mut inputs) = read_groups(&a.data)?;
    let (h, hfile) = build_hypothesis(&a.hypothesis, groups.len(), groups[0].d())?;
    inputs.extend(hfile);
    let opts = TestOptions { alpha: a.alpha, mc_reps: a.reps, boot_reps: a.boot, seed: a.seed, wild_weight: a.wild_weight };
    let report = test_groups(&groups, &h, a.method, &opts)?;
    let manifest = RunManifest {
        command: "test".into(),
        args: argv.to_vec(),
        config: json!({ "hypothesis": h.label, "options": opts, "method": a.method }),
        seed: a.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        inputs,
    };
    let body = json!({
        "schema": SCHEMA_VERSION,
        "statistic": report.statistic,
        "critical_value": report.critical_value,
        "p_value": report.p_value,
        "decision": if report.reject { "reject" } else { "retain" },
        "report": report,
        "hypothesis": { "label": h.label, "rows": h.m(), "rank": h.rank(), "groups": h.a(), "variables": h.dims.d },
        "group_sizes": groups.iter().map(GroupSample::n).collect::<Vec<_>>(),
        "manifest": manifest,
    });
    write_output(a.out.as_deref(), &to_json(&body), stdout)
}

fn cmd_simulate(a: &SimulateArgs, argv: &[String], threads: usize, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    let dist = DistributionSpec::with_gamma_shape(a.dist, a.gamma_shape)?;
    let mut sc = SimScenario::preset(a.scenario, a.d, a.n, dist, a.cov, 0.0)?;
    sc.methods = if a.method.is_empty() { Method::all() } else { a.method.clone() };
    sc.runs = a.runs;
    sc.mc_reps = a.reps;
    sc.boot_reps = a.boot;
    sc.alpha = a.alpha;
    sc.seed = a.seed;
    sc.wild_weight = a.wild_weight;

    let mut csv = Vec::new();
    match &a.delta_grid {
        Some(grid) => write_csv(&power_curve(&sc, grid)?, &mut csv)?,
        None => {
            if matches!(sc.label, ScenarioLabel::PowerA | ScenarioLabel::PowerB) {
                return Err(CliError::Usage(format!("scenario {} needs --delta-grid", sc.label)));
            }
            write_csv(&type1_experiment(&sc)?, &mut csv)?
        }
    }
    write_output(a.out.as_deref(), &csv, stdout)?;

    if let Some(out) = &a.out {
        let manifest = RunManifest {
            command: "simulate".into(),
            args: argv.to_vec(),
            config: json!({ "scenario": sc, "delta_grid": a.delta_grid }),
            seed: a.seed,
            version: env!("CARGO_PKG_VERSION"),
            threads,
            elapsed_seconds: start.elapsed().as_secs_f64(),
            inputs: vec![],
        };
        let side = manifest_path(out);
        let body = json!({ "schema": SCHEMA_VERSION, "output": out.display().to_string(), "manifest": manifest });
        fs::write(&side, to_json(&body)).map_err(|source| CliError::Io { path: side.display().to_string(), source })?;
    }
    Ok(())
}

/// Sidecar file holding the manifest of a CSV output.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_combined(a: &CombinedArgs, argv: &[String], threads: usize, stdout: &mut dyn Write) -> CliResult<()> {
    let start = Instant::now();
    if a.data.len() != 2 {
        return Err(CliError::Usage(format!("combined needs exactly two --data files, got {}", a.data.len())));
    }
    let (groups, inputs) = read_groups(&a.data)?;
    let cs = contrast_statistic(&groups[0], &groups[1])?;
    let cfg = CombinedConfig { two_sided: !a.one_sided, ..CombinedConfig::new(a.alpha, a.reps, a.seed) };
    let verdict = combined_test(&cs, a.procedure, &cfg)?;
    let manifest = RunManifest {
        command: "combined".into(),
        args: argv.to_vec(),
        config: json!({ "procedure": a.procedure, "config": cfg }),
        seed: a.seed,
        version: env!("CARGO_PKG_VERSION"),
        threads,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        inputs,
    };
    let body = json!({
        "schema": SCHEMA_VERSION,
        "classification": verdict.classification.to_string(),
        "labels": cs.labels(),
        "verdict": verdict,
        "group_sizes": groups.iter().map(GroupSample::n).collect::<Vec<_>>(),
        "manifest": manifest,
    });
    write_output(a.out.as_deref(), &to_json(&body), stdout)
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = configure_threads().and_then(|threads| match &cli.command {
        Command::Test(a) => cmd_test(a, &argv, threads, stdout),
        Command::Simulate(a) => cmd_simulate(a, &argv, threads, stdout),
        Command::Combined(a) => cmd_combined(a, &argv, threads, stdout),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
