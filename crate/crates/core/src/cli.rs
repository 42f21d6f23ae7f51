//! The `patchboard` command line.
//!
//! | command | exit codes |
//! |---|---|
//! | `run` | 0 finished, 1 I/O or parse failure, 2 blueprint rejected, 3 halted |
//! | `replay` | 0 no divergences, 1 I/O or parse failure, 2 blueprint rejected, 4 diverged |
//! | `inject` | 0 done, 1 I/O or config failure, 2 scenario blueprint rejected |
//! | `validate-blueprint` | 0 valid, 1 I/O or parse failure, 2 rejected |

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::harness::{Campaign, CampaignConfig, CampaignError, Scenario};
use crate::kernel::{read_log, replay, run_blueprint, write_log, RunError};
use crate::schema::validate_blueprint;
use crate::state::{Map, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_HALTED: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Environment variable naming the default directory for logs and reports.
pub const LOG_DIR_VAR: &str = "PATCHBOARD_LOG_DIR";

#[derive(Debug, Parser)]
#[command(name = "patchboard", version, about = "Run, replay and fault-test blueprint workflows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its transaction log.
    Run(RunArgs),
    /// Re-execute a logged run and compare it transaction by transaction.
    Replay(ReplayArgs),
    /// Run a fault-injection campaign and report per fault type.
    Inject(InjectArgs),
    /// Check a blueprint document and list every violation.
    ValidateBlueprint {
        blueprint: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file, or the name of a built-in scenario.
    pub scenario: String,
    /// View budget, in characters, for every worker.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Consecutive invalid patches before the circuit escalates
    #[arg(long)]
    pub circuit_invalid_threshold: Option<u32>,
    /// Number of recent state hashes searched for cycles
    #[arg(long)]
    pub circuit_window: Option<usize>,
    /// Seed for randomised workers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Invocation limit per worker
    #[arg(long)]
    pub max_invocations: Option<u64>,
    /// Log file. Defaults to `$PATCHBOARD_LOG_DIR/<scenario>.ndjson`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Transaction log written by `run`
    pub log: PathBuf,
    pub blueprint: PathBuf,
    /// Initial state of the recorded run. Defaults to the blueprint's.
    pub initial_state: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Campaign file naming the fault types, count, seed and scenario
    pub campaign: PathBuf,
    /// Overrides the campaign's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the campaign's injection count.
    #[arg(long)]
    pub count: Option<u64>,
    /// Report path stem; `.csv` and `.json` are appended. Defaults to
    /// `$PATCHBOARD_LOG_DIR/<campaign>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let failed = e.use_stderr();
            let _ = if failed { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return if failed { EXIT_IO } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args, out, err),
        Command::Replay(args) => cmd_replay(&args, out, err),
        Command::Inject(args) => cmd_inject(&args, out, err),
        Command::ValidateBlueprint { blueprint } => cmd_validate(&blueprint, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_IO
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Scenario(#[from] crate::harness::ScenarioError),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("{0}")]
    Other(String),
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    Value::parse(&read_text(path)?).map_err(|e| CliError::Parse { path: path.to_owned(), message: e.to_string() })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_owned(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn pretty(value: &Value) -> String {
    let mut text = serde_json::to_string_pretty(&value.to_json()).expect("JSON values serialize");
    text.push('\n');
    text
}

fn default_dir() -> PathBuf {
    std::env::var_os(LOG_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn load_scenario(spec: &str) -> Result<Scenario, CliError> {
    let path = Path::new(spec);
    if !path.exists() && Scenario::BUILTIN_NAMES.contains(&spec) {
        return Ok(Scenario::builtin(spec)?);
    }
    Ok(Scenario::load(path)?)
}

/// Walks to `keys` in `doc`, creating objects along the way.
fn slot<'a>(doc: &'a mut Value, keys: &[&str]) -> Option<&'a mut Value> {
    let mut node = doc;
    for key in keys {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else { return None };
        node = map.entry((*key).to_owned()).or_insert(Value::Null);
    }
    Some(node)
}

fn set(doc: &mut Value, keys: &[&str], value: Value) {
    if let Some(target) = slot(doc, keys) {
        *target = value;
    }
}

/// The blueprint document with the command-line overrides applied.
fn effective_blueprint(doc: &Value, args: &RunArgs) -> Value {
    let mut doc = doc.clone();
    if let Some(budget) = args.budget {
        if let Some(Value::Array(workers)) = slot(&mut doc, &["workers"]) {
            for worker in workers {
                set(worker, &["view_budget"], Value::int(budget as i64));
            }
        }
    }
    if let Some(n) = args.max_invocations {
        set(&mut doc, &["budgets", "max_worker_invocations"], Value::int(n as i64));
    }
    if let Some(n) = args.circuit_invalid_threshold {
        set(&mut doc, &["budgets", "circuit", "invalid_threshold"], Value::int(i64::from(n)));
    }
    if let Some(n) = args.circuit_window {
        set(&mut doc, &["budgets", "circuit", "cycle_window"], Value::int(n as i64));
    }
    doc
}

fn report_rejection(err: &mut dyn Write, report: &crate::schema::ValidationReport) {
    let _ = writeln!(err, "blueprint rejected ({} violations):", report.violations.len());
    for v in &report.violations {
        let _ = writeln!(err, "  {v}");
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let scenario = load_scenario(&args.scenario)?;
    let doc = effective_blueprint(&scenario.blueprint, args);
    let blueprint = match validate_blueprint(&doc) {
        Ok(bp) => bp,
        Err(report) => {
            report_rejection(err, &report);
            return Ok(EXIT_REJECTED);
        }
    };
    let mut registry = scenario.registry(args.seed)?;
    let result = match run_blueprint(&blueprint, scenario.request.as_ref(), &mut registry) {
        Ok(result) => result,
        Err(RunError::BlueprintRejected(report)) => {
            report_rejection(err, &report);
            return Ok(EXIT_REJECTED);
        }
        Err(RunError::InitialState(e)) => {
            let _ = writeln!(err, "blueprint rejected: {e}");
            return Ok(EXIT_REJECTED);
        }
    };

    let log_path = args.out.clone().unwrap_or_else(|| default_dir().join(format!("{}.ndjson", scenario.name)));
    let mut bytes = Vec::new();
    write_log(&mut bytes, &result.log).map_err(|source| CliError::Io { path: log_path.clone(), source })?;
    write_file(&log_path, &bytes)?;
    write_file(&sibling(&log_path, ".blueprint.json"), pretty(&doc).as_bytes())?;
    write_file(&sibling(&log_path, ".initial.json"), pretty(&result.initial_state).as_bytes())?;

    for warning in &result.warnings {
        let _ = writeln!(err, "warning: {warning}");
    }
    let c = &result.counters;
    let _ = writeln!(
        out,
        "{}: {} invocations, {} accepted, {} rejected, final state {}",
        scenario.name,
        c.invocations,
        c.accepted,
        c.rejected_total(),
        result.final_hash().to_hex()
    );
    let _ = writeln!(out, "log: {}", log_path.display());
    Ok(match &result.halt_reason {
        Some(reason) => {
            let _ = writeln!(out, "halted: {reason}");
            EXIT_HALTED
        }
        None => EXIT_OK,
    })
}

fn cmd_replay(args: &ReplayArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let text = read_text(&args.log)?;
    // A final line without its newline was cut off mid-write.
    let (complete, partial) = match text.rfind('\n') {
        _ if text.is_empty() || text.ends_with('\n') => (text.as_str(), false),
        Some(i) => (&text[..=i], true),
        None => ("", true),
    };
    let recorded =
        read_log(complete.as_bytes()).map_err(|e| CliError::Parse { path: args.log.clone(), message: e.to_string() })?;
    let doc = read_json(&args.blueprint)?;
    let blueprint = match validate_blueprint(&doc) {
        Ok(bp) => bp,
        Err(report) => {
            report_rejection(err, &report);
            return Ok(EXIT_REJECTED);
        }
    };
    let initial = match &args.initial_state {
        Some(path) => read_json(path)?,
        None => blueprint.initial_state_for(None).map_err(|e| CliError::Other(e.to_string()))?,
    };
    let report = replay(&blueprint, initial, &recorded);
    for d in &report.divergences {
        let _ = writeln!(out, "divergence: {d}");
    }
    let _ = writeln!(
        out,
        "replayed {} of {} logged transactions, {} divergences, final state {}",
        report.compared,
        report.recorded,
        report.divergences.len(),
        report.final_hash().to_hex()
    );
    if report.ok() && (report.truncated || partial) {
        let _ = writeln!(out, "note: the log ends before the run does; only the recorded prefix was verified");
    }
    Ok(if report.ok() { EXIT_OK } else { EXIT_DIVERGED })
}

fn cmd_inject(args: &InjectArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let (config, scenario) = CampaignConfig::load(&args.campaign)?;
    let campaign = match Campaign::new(scenario) {
        Ok(c) => c,
        Err(CampaignError::Blueprint(summary)) => {
            let _ = writeln!(err, "blueprint rejected: {summary}");
            return Ok(EXIT_REJECTED);
        }
        Err(e) => return Err(e.into()),
    };
    let report = campaign.run(&config.kinds(), args.count.unwrap_or(config.count), args.seed.unwrap_or(config.seed))?;
    let stem = args.out.clone().unwrap_or_else(|| {
        let name = args.campaign.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "campaign".into());
        default_dir().join(name)
    });
    let csv_path = stem.with_file_name(format!("{}.csv", stem.file_name().unwrap_or_default().to_string_lossy()));
    let json_path = csv_path.with_extension("json");
    let csv = report.to_csv();
    write_file(&csv_path, csv.as_bytes())?;
    write_file(&json_path, format!("{}\n", report.to_json()).as_bytes())?;
    let _ = write!(out, "{csv}");
    let _ = writeln!(out, "wrote {} and {}", csv_path.display(), json_path.display());
    Ok(EXIT_OK)
}

fn cmd_validate(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let doc = read_json(path)?;
    Ok(match validate_blueprint(&doc) {
        Ok(bp) => {
            let _ = writeln!(
                out,
                "ok: {} workers, {} rules, {} invariants",
                bp.workers.len(),
                bp.rules.len(),
                bp.invariants.len()
            );
            EXIT_OK
        }
        Err(report) => {
            report_rejection(err, &report);
            EXIT_REJECTED
        }
    })
}
