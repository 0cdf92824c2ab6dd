//! Command-line front end.
//!
//! Exit codes: 0 success, 1 threshold breach under `--strict`, 2 usage or
//! configuration error, 3 precision-abort failure, 66 missing config file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::Error;
use crate::experiments::{
    apply_overrides, chen_stein_e2, check_assumption_a2, hitting_dispersion, run_almost_sure, run_distributional,
    ExperimentConfig,
};
use crate::limitlaw::{as_summability_check, normalisation, LimitLawTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BREACH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PRECISION: i32 = 3;
pub const EXIT_NO_INPUT: i32 = 66;

/// Largest per-tau total-variation distance tolerated under `--strict`.
pub const STRICT_TV: f64 = 0.02;
pub const STRICT_UPPER_FREQ: f64 = 0.03;
pub const STRICT_LOWER_FREQ: f64 = 0.02;
pub const STRICT_BETA0: (f64, f64) = (0.9, 1.1);
pub const STRICT_NORMALISATION: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "recurlab", version, about = "Recurrence statistics of interval maps")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VerbKind {
    Simulate,
    Limitlaw,
    AlmostSure,
    CheckA2,
    E2,
    Compare,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Empirical pmf of the recurrence count against the limit law.
    Simulate(Common),
    /// Limit-law table, normalisation and tail diagnostics.
    Limitlaw(Common),
    /// Violation frequencies of the almost-sure rates.
    AlmostSure(Common),
    /// Short-return measure estimates and scaling fit.
    CheckA2(Common),
    /// Chen-Stein short-return sums and hitting-count dispersion.
    E2(Common),
    /// Like simulate, printing the distance per tau.
    Compare(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Config file (TOML, or a report.json whose config is reused).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    map: Option<String>,
    /// Override any config key, e.g. `--set almost_sure.paths=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Exit with 1 when a result misses its acceptance threshold.
    #[arg(long)]
    strict: bool,
}

/// A parsed and validated invocation.
#[derive(Debug, Clone)]
pub struct Command {
    pub verb: &'static str,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub strict: bool,
    pub config: ExperimentConfig,
}

/// Failure to build a [`Command`], with its exit code.
#[derive(Debug)]
pub struct UsageError {
    pub code: i32,
    pub message: String,
}

impl UsageError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn split_verb(v: Verb) -> (VerbKind, Common) {
    match v {
        Verb::Simulate(c) => (VerbKind::Simulate, c),
        Verb::Limitlaw(c) => (VerbKind::Limitlaw, c),
        Verb::AlmostSure(c) => (VerbKind::AlmostSure, c),
        Verb::CheckA2(c) => (VerbKind::CheckA2, c),
        Verb::E2(c) => (VerbKind::E2, c),
        Verb::Compare(c) => (VerbKind::Compare, c),
    }
}

fn verb_name(v: VerbKind) -> &'static str {
    match v {
        VerbKind::Simulate => "simulate",
        VerbKind::Limitlaw => "limitlaw",
        VerbKind::AlmostSure => "almost-sure",
        VerbKind::CheckA2 => "check-a2",
        VerbKind::E2 => "e2",
        VerbKind::Compare => "compare",
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            EXIT_NO_INPUT
        } else {
            EXIT_USAGE
        };
        UsageError::new(code, format!("cannot read config {}: {e}", path.display()))
    })?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        let report: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
        let cfg = report
            .get("config")
            .ok_or_else(|| UsageError::new(EXIT_USAGE, format!("{} has no `config` field", path.display())))?;
        serde_json::from_value(cfg.clone()).map_err(|e| Error::config("config", e.to_string()))
    } else {
        ExperimentConfig::from_toml_str(&text)
    };
    parsed.map_err(|e| UsageError::new(EXIT_USAGE, format!("{}: {e}", path.display())))
}

/// Parses `argv` (program name first) into a validated [`Command`].
pub fn parse_and_validate<I, T>(argv: I) -> Result<Command, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let code = match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_USAGE,
        };
        UsageError::new(code, e.render().to_string())
    })?;
    let (kind, common) = split_verb(cli.verb);
    let base = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(s) = common.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    if let Some(s) = common.samples {
        overrides.push(("samples".to_string(), s.to_string()));
    }
    if let Some(n) = common.n {
        overrides.push(("n".to_string(), n.to_string()));
    }
    if let Some(m) = &common.map {
        overrides.push(("map.name".to_string(), format!("{m:?}")));
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError::new(EXIT_USAGE, format!("override `{kv}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut config = apply_overrides(&base, &overrides).map_err(|e| UsageError::new(EXIT_USAGE, e.to_string()))?;
    if let Ok(w) = std::env::var("RECURLAB_WORKERS") {
        config.workers = w.trim().parse().map_err(|_| {
            UsageError::new(EXIT_USAGE, format!("RECURLAB_WORKERS must be a count, got `{w}`"))
        })?;
    }
    config.validate().map_err(|e| UsageError::new(EXIT_USAGE, e.to_string()))?;
    Ok(Command {
        verb: verb_name(kind),
        config_path: common.config,
        output_dir: common.output,
        overrides,
        strict: common.strict,
        config,
    })
}

/// Outcome of a verb before it is written out.
struct Outcome {
    result: Value,
    summary: String,
    /// Partial result: precision aborts above the tolerated rate.
    aborted: bool,
    breach: Option<String>,
}

fn run_verb(cmd: &Command) -> crate::Result<(Outcome, Vec<(&'static str, Vec<u8>)>)> {
    let cfg = &cmd.config;
    let mut files = Vec::new();
    let outcome = match cmd.verb {
        "simulate" | "compare" => {
            let r = run_distributional(cfg)?;
            let mut csv = Vec::new();
            r.write_pmf_csv(&mut csv)?;
            files.push(("pmf.csv", csv));
            let max_tv = r.max_tv();
            let mut summary = format!(
                "map={} n={} samples={} max_tv={max_tv:.5}",
                r.map, r.n, r.samples
            );
            if cmd.verb == "compare" {
                for t in &r.per_tau {
                    summary.push_str(&format!("\ntau={} tv={:.5} max_dev={:.5}", t.tau, t.tv_distance, t.max_abs_dev));
                }
                summary.push_str(&format!("\nmax_tv={max_tv:.5}"));
            }
            Outcome {
                breach: (max_tv > STRICT_TV).then(|| format!("max TV distance {max_tv:.5} exceeds {STRICT_TV}")),
                aborted: r.aborts.failed,
                summary,
                result: serde_json::to_value(&r)?,
            }
        }
        "limitlaw" => {
            let map = cfg.build_map()?;
            let table = LimitLawTable::build(&map, &cfg.tau_grid, cfg.k_max, &cfg.quadrature)?;
            let mut csv = Vec::new();
            table.write_csv(&mut csv)?;
            files.push(("limitlaw.csv", csv));
            let norms = cfg
                .tau_grid
                .iter()
                .map(|&t| normalisation(&map.density, t, 64, &cfg.quadrature))
                .collect::<crate::Result<Vec<_>>>()?;
            let worst = norms
                .iter()
                .map(|n| (n.partial_sum + n.tail_bound - 1.0).abs())
                .fold(0.0, f64::max);
            let summ = as_summability_check(
                &map.density,
                cfg.almost_sure.as_gamma,
                &[0.5, 1.0, 2.0],
                &cfg.quadrature,
            )?;
            Outcome {
                summary: format!(
                    "map={} density={} taus={} k_max={} max_norm_defect={worst:.2e}",
                    map.name(),
                    map.density.id,
                    cfg.tau_grid.len(),
                    cfg.k_max
                ),
                breach: (!table.converged || worst > STRICT_NORMALISATION)
                    .then(|| format!("normalisation defect {worst:.2e} or unconverged quadrature")),
                aborted: false,
                result: json!({ "table": table, "normalisation": norms, "summability": summ }),
            }
        }
        "almost-sure" => {
            let r = run_almost_sure(cfg)?;
            let mut csv = Vec::new();
            r.write_csv(&mut csv)?;
            files.push(("as.csv", csv));
            let last = r.rows.last().expect("non-empty subsequence");
            Outcome {
                summary: format!(
                    "map={} paths={} n_max={} upper_freq={:.4} lower_freq={:.4}",
                    r.map, r.paths, last.n_k, last.viol_upper_freq, last.viol_lower_freq
                ),
                breach: (last.viol_upper_freq > STRICT_UPPER_FREQ || last.viol_lower_freq > STRICT_LOWER_FREQ)
                    .then(|| "final violation frequency above threshold".to_string()),
                aborted: r.aborts.failed,
                result: serde_json::to_value(&r)?,
            }
        }
        "check-a2" => {
            let r = check_assumption_a2(cfg, cfg.a2.a_exponent)?;
            let mut csv = Vec::new();
            r.write_csv(&mut csv)?;
            files.push(("a2.csv", csv));
            let beta = r.fitted_beta0;
            Outcome {
                summary: format!(
                    "map={} samples={} a={} beta0={}",
                    r.map,
                    r.samples,
                    r.a_exponent,
                    beta.map_or("none".into(), |b| format!("{b:.4}"))
                ),
                breach: (!beta.is_some_and(|b| (STRICT_BETA0.0..=STRICT_BETA0.1).contains(&b)))
                    .then(|| "fitted exponent outside [0.9, 1.1]".to_string()),
                aborted: r.aborts.failed,
                result: serde_json::to_value(&r)?,
            }
        }
        "e2" => {
            let mut sums = Vec::new();
            let mut disp = Vec::new();
            for &c in &cfg.e2.centers {
                sums.push(chen_stein_e2(cfg, c, cfg.e2.r, cfg.e2.p)?);
                disp.push(hitting_dispersion(cfg, c)?);
            }
            let map = cfg.build_map()?;
            let parts: Vec<String> = sums
                .iter()
                .zip(&disp)
                .map(|(s, d)| format!("center={:.6} e2={:.3e} dispersion={:.3}", s.center, s.total, d.index))
                .collect();
            Outcome {
                summary: format!("map={} r={} p={} {}", map.name(), cfg.e2.r, cfg.e2.p, parts.join(" ")),
                breach: None,
                aborted: disp.iter().any(|d| d.aborts.failed),
                result: json!({ "e2": sums, "dispersion": disp }),
            }
        }
        other => unreachable!("unknown verb {other}"),
    };
    Ok((outcome, files))
}

fn report(cmd: &Command, failed: bool, result: Value, error: Option<String>) -> Value {
    let mut v = json!({
        "failed": failed,
        "verb": cmd.verb,
        "version": env!("CARGO_PKG_VERSION"),
        "git": option_env!("RECURLAB_GIT_REV").unwrap_or("unknown"),
        "config": cmd.config,
        "result": result,
    });
    if let Some(e) = error {
        v["error"] = Value::String(e);
    }
    v
}

fn write_outputs(cmd: &Command, report: &Value, files: &[(&str, Vec<u8>)]) -> std::io::Result<()> {
    fs::create_dir_all(&cmd.output_dir)?;
    let text = cmd.config.to_toml_string().map_err(std::io::Error::other)?;
    fs::write(cmd.output_dir.join("config.toml"), text)?;
    for (name, bytes) in files {
        fs::write(cmd.output_dir.join(name), bytes)?;
    }
    let mut json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    json.push('\n');
    fs::write(cmd.output_dir.join("report.json"), json)
}

/// Runs a validated command, writes its outputs and returns the exit code.
pub fn execute(cmd: &Command) -> i32 {
    match run_verb(cmd) {
        Ok((outcome, files)) => {
            let rep = report(cmd, outcome.aborted, outcome.result, None);
            if let Err(e) = write_outputs(cmd, &rep, &files) {
                eprintln!("error: cannot write outputs to {}: {e}", cmd.output_dir.display());
                return EXIT_USAGE;
            }
            println!("{}", outcome.summary);
            if outcome.aborted {
                eprintln!("error: more than 0.1% of samples hit the precision limit; see report.json");
                return EXIT_PRECISION;
            }
            match outcome.breach {
                Some(b) if cmd.strict => {
                    eprintln!("threshold breach: {b}");
                    EXIT_BREACH
                }
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            let code = if e.is_precision_abort() {
                EXIT_PRECISION
            } else {
                EXIT_USAGE
            };
            let rep = report(cmd, true, Value::Null, Some(e.to_string()));
            let _ = write_outputs(cmd, &rep, &[]);
            eprintln!("error: {e}");
            code
        }
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_and_validate(argv) {
        Ok(cmd) => execute(&cmd),
        Err(e) => {
            if e.code == EXIT_OK {
                print!("{}", e.message);
            } else {
                eprintln!("{}", e.message.trim_end());
            }
            e.code
        }
    }
}
