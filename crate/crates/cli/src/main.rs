//! `foliquant` command line: validate configs, quantize, run property suites.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use foliquant::cartan::ConnKind;
use foliquant::chart::{induce_foliated, validate_adapted, FoliatedConnection, VALIDATION_TOL};
use foliquant::quant::{coeff, coeff_f64, reduce_symbol, term_weight, Quantizer};
use foliquant::verify::{run_suite, CheckReport, CheckSpec, DEFAULT_SEED, SUITES};
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use config::ProblemConfig;

const SCHEMA: u32 = 1;
const SEED_ENV: &str = "FOLIQUANT_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Core(#[from] foliquant::Error),
    #[error("{0}")]
    Io(String),
    #[error("unknown suite `{0}`; valid suites: all, {}", SUITES.join(", "))]
    UnknownSuite(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "foliquant", version, about = "Projectively invariant quantization on foliated charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Adapted,
    Foliated,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the configured connection (and symbol) are adapted.
    Validate { config: PathBuf },
    /// Evaluate Q(S)(f) at a configured point.
    Quantize {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "adapted")]
        mode: Mode,
        /// 0-based index into `[points] at`.
        #[arg(long, default_value_t = 0)]
        point: usize,
        /// Also print the coefficients of the differential operator.
        #[arg(long)]
        emit_operator: bool,
    },
    /// Run property suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Override random connections per (p, q).
        #[arg(long)]
        connections: Option<usize>,
        /// Override sample points per connection.
        #[arg(long)]
        points: Option<usize>,
    },
}

fn read_config(path: &Path) -> Result<ProblemConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ProblemConfig::parse(&text)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    use std::io::Write;
    let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct ValidateReport {
    schema: u32,
    command: &'static str,
    valid: bool,
    tolerance: f64,
    residuals: Residuals,
    violations: Vec<&'static str>,
}

#[derive(Serialize)]
struct Residuals {
    symmetry: f64,
    mixed_block: f64,
    x_dependence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    symbol_x_dependence: Option<f64>,
}

const SYMBOL_ADAPTED: &str = "∂_x S^{𝔦…𝔦}=0";

/// Exit 0 iff valid.
fn cmd_validate(path: &Path) -> Result<bool, CliError> {
    let cfg = read_config(path)?;
    let chart = cfg.chart()?;
    let conn = cfg.connection(&chart)?;
    let report = validate_adapted(&conn)?;
    let mut violations = report.violations(VALIDATION_TOL);
    let symbol_x_dependence = match cfg.symbol {
        Some(_) => Some(cfg.symbol(&chart, ConnKind::Adapted)?.adaptedness_residual()?),
        None => None,
    };
    if symbol_x_dependence.is_some_and(|r| r > VALIDATION_TOL) {
        violations.push(SYMBOL_ADAPTED);
    }
    let valid = violations.is_empty();
    for v in &violations {
        eprintln!("invalid: condition {v} violated");
    }
    print_json(&ValidateReport {
        schema: SCHEMA,
        command: "validate",
        valid,
        tolerance: VALIDATION_TOL,
        residuals: Residuals {
            symmetry: report.symmetry,
            mixed_block: report.mixed_block,
            x_dependence: report.x_dependence,
            symbol_x_dependence,
        },
        violations,
    })?;
    Ok(valid)
}

#[derive(Serialize)]
struct QuantizeReport {
    schema: u32,
    command: &'static str,
    mode: Mode,
    point: Vec<f64>,
    k: usize,
    q: usize,
    value: f64,
    terms: Vec<Term>,
    #[serde(skip_serializing_if = "Option::is_none")]
    operator: Option<OperatorReport>,
}

#[derive(Serialize)]
struct Term {
    l: usize,
    coefficient: String,
    coefficient_value: f64,
    /// `C_{k,l} (k-l)!/k!`, the multiplier of `pairing` in the value.
    weight: f64,
    pairing: f64,
}

#[derive(Serialize)]
struct OperatorReport {
    k: usize,
    q: usize,
    dim: usize,
    base_point: Vec<f64>,
    /// `C_{k,l}` for `l = 0..=k`.
    c: Vec<CoeffEntry>,
    coefficients: Ordered,
}

#[derive(Serialize)]
struct CoeffEntry {
    l: usize,
    exact: String,
    value: f64,
}

/// Map in insertion order.
struct Ordered(Vec<(String, f64)>);

impl Serialize for Ordered {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

fn cmd_quantize(path: &Path, mode: Mode, index: usize, emit: bool) -> Result<(), CliError> {
    let cfg = read_config(path)?;
    let chart = cfg.chart()?;
    let m = cfg.point(index)?.to_vec();
    let f = cfg.function(&chart)?;
    let (qz, f, m) = match mode {
        Mode::Adapted => {
            let conn = cfg.connection(&chart)?;
            (Quantizer::adapted(&conn, &cfg.symbol(&chart, ConnKind::Adapted)?)?, f, m)
        }
        Mode::Foliated if cfg.p == 0 => {
            let field = cfg.connection(&chart)?.field().clone();
            let fconn = FoliatedConnection::new(chart.clone(), field)?;
            (Quantizer::foliated(&fconn, &cfg.symbol(&chart, ConnKind::Foliated)?)?, f, m)
        }
        Mode::Foliated => {
            let fconn = induce_foliated(&cfg.connection(&chart)?)?;
            let s = reduce_symbol(&cfg.symbol(&chart, ConnKind::Adapted)?)?;
            (Quantizer::foliated(&fconn, &s)?, f.reduce()?, m[cfg.p..].to_vec())
        }
    };
    let k = qz.symbol().degree();
    let q = cfg.q;
    let terms: Vec<Term> = qz
        .terms(&f, &m)?
        .into_iter()
        .map(|t| Term {
            l: t.l,
            coefficient: coeff(k, t.l, q).to_string(),
            coefficient_value: t.coefficient,
            weight: term_weight(k, t.l, q),
            pairing: t.pairing,
        })
        .collect();
    let value = qz.apply(&f, &m)?;
    let operator = if emit {
        let table = qz.at(&m)?.operator()?;
        Some(OperatorReport {
            k,
            q,
            dim: table.dim,
            base_point: table.base_point.clone(),
            c: (0..=k)
                .map(|l| CoeffEntry {
                    l,
                    exact: coeff(k, l, q).to_string(),
                    value: coeff_f64(k, l, q),
                })
                .collect(),
            coefficients: Ordered(
                table
                    .coefficients
                    .iter()
                    .map(|(g, v)| {
                        let key: Vec<String> = g.exponents().iter().map(ToString::to_string).collect();
                        (key.join(","), *v)
                    })
                    .collect(),
            ),
        })
    } else {
        None
    };
    print_json(&QuantizeReport {
        schema: SCHEMA,
        command: "quantize",
        mode,
        point: m,
        k,
        q,
        value,
        terms,
        operator,
    })
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    schema: u32,
    command: &'static str,
    seed: u64,
    passed: bool,
    reports: &'a [CheckReport],
}

fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Parse(format!("{SEED_ENV} must be an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn cmd_verify(
    suite: &str,
    seed: Option<u64>,
    json: Option<&Path>,
    connections: Option<usize>,
    points: Option<usize>,
) -> Result<bool, CliError> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&suite) {
        vec![suite]
    } else {
        return Err(CliError::UnknownSuite(suite.to_string()));
    };
    let seed = match seed {
        Some(s) => s,
        None => seed_override()?.unwrap_or(DEFAULT_SEED),
    };
    let mut reports = Vec::with_capacity(names.len());
    for name in names {
        let mut spec = CheckSpec::new(name, seed)?;
        if let Some(c) = connections {
            spec.connections = c;
        }
        if let Some(p) = points {
            spec.points = p;
        }
        let r = run_suite(&spec)?;
        eprintln!(
            "{:<24} {}  worst {:.3e} (tol {:.1e})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.worst_residual,
            r.tolerance
        );
        reports.push(r);
    }
    let passed = reports.iter().all(|r| r.passed);
    let report = VerifyReport {
        schema: SCHEMA,
        command: "verify",
        seed,
        passed,
        reports: &reports,
    };
    match json {
        Some(path) => {
            let s = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
            std::fs::write(path, s + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        None => print_json(&report)?,
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Validate { config } => cmd_validate(config),
        Command::Quantize {
            config,
            mode,
            point,
            emit_operator,
        } => cmd_quantize(config, *mode, *point, *emit_operator).map(|()| true),
        Command::Verify {
            suite,
            seed,
            json,
            connections,
            points,
        } => cmd_verify(suite, *seed, json.as_deref(), *connections, *points),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
