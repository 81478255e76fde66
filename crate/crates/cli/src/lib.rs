//! Command-line front end for `mfcontrol`.
//!
//! Every subcommand reads an optional JSON config, writes `report.json` plus
//! task-specific artifacts into the output directory, and maps the outcome to
//! an exit status: 0 on success, 1 on operational errors, 2 on a negative
//! verdict when `--strict` is given.

pub mod commands;
pub mod config;
pub mod report;
pub mod repro;

use clap::{Parser, Subcommand};
use config::{Format, RunConfig, TaskConfig};
use report::{Artifact, ReportMeta};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use mfcontrol::DEFAULT_SEED;

/// Output directory used when neither `--out` nor the config names one.
pub const DEFAULT_OUT_DIR: &str = "mfcontrol-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NEGATIVE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", describe_config(*line, *column, field.as_deref(), message))]
    Config {
        line: Option<usize>,
        column: Option<usize>,
        field: Option<String>,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] mfcontrol::Error),

    #[error("unknown repro case `{id}`; available cases: {}", available.join(", "))]
    UnknownCase { id: String, available: Vec<String> },
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            column: None,
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn describe_config(line: Option<usize>, column: Option<usize>, field: Option<&str>, message: &str) -> String {
    let mut out = String::from("config error");
    if let (Some(l), Some(c)) = (line, column) {
        out.push_str(&format!(" at line {l}, column {c}"));
    }
    if let Some(f) = field {
        out.push_str(&format!(" in field `{f}`"));
    }
    out.push_str(": ");
    out.push_str(message);
    out
}

#[derive(Debug, Parser)]
#[command(
    name = "mfcontrol",
    version,
    about = "Controllability analysis and control synthesis for linear mean-field SDEs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Random seed (overrides the task seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Table format; may be repeated (overrides `output.formats`).
    #[arg(long, global = true, value_enum)]
    pub format: Vec<Format>,

    /// Exit with status 2 when the verdict is negative.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Worker threads for Monte-Carlo work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Controllability verdicts for a system.
    Analyze,
    /// Steer the state to a Gaussian target law.
    Synthesize,
    /// Pathwise exact control toward a Hermite-polynomial terminal target.
    Exactctrl,
    /// Particle Monte-Carlo simulation under a given control.
    Simulate,
    /// Backward reachable Gaussian laws of the scalar weak BSDE.
    Wbsde,
    /// Run the reproduction catalog.
    Repro {
        /// Case identifier, or `all`.
        #[arg(long)]
        case: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Synthesize => "synthesize",
            Command::Exactctrl => "exactctrl",
            Command::Simulate => "simulate",
            Command::Wbsde => "wbsde",
            Command::Repro { .. } => "repro",
        }
    }
}

/// What a command produced, before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Serialized `report.json`.
    pub report: String,
    pub artifacts: Vec<Artifact>,
    /// Reason the verdict counts as negative, if it does.
    pub negative: Option<String>,
    pub summary: String,
}

/// Everything a command needs besides its task block.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_dir: PathBuf,
    pub meta: ReportMeta,
}

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let strict = cli.strict;
    let result = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            return EXIT_ERROR;
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => {
                eprintln!("error: cannot start thread pool: {e}");
                return EXIT_ERROR;
            }
        },
        None => execute(&cli),
    };
    match result {
        Ok((outcome, dir)) => {
            println!("{}", outcome.summary);
            println!("artifacts written to {}", dir.display());
            match outcome.negative {
                Some(reason) if strict => {
                    eprintln!("negative verdict: {reason}");
                    EXIT_NEGATIVE
                }
                _ => EXIT_OK,
            }
        }
        Err(CliError::Core(mfcontrol::Error::SynthesisUnavailable(reason))) if strict => {
            eprintln!("negative verdict: synthesis unavailable: {reason}");
            EXIT_NEGATIVE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn execute(cli: &Cli) -> Result<(Outcome, PathBuf), CliError> {
    let (text, config_dir) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, dir)
        }
        None => (String::new(), PathBuf::new()),
    };
    let config = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        config::parse_config(&text)?
    };
    let name = cli.command.name();
    if let Some(task) = &config.task {
        if task.kind() != name {
            return Err(CliError::config(
                "task.kind",
                format!("task is `{}` but the command is `{name}`", task.kind()),
            ));
        }
    }
    let seed = cli
        .seed
        .or_else(|| config.task.as_ref().and_then(TaskConfig::seed))
        .unwrap_or(DEFAULT_SEED);
    let formats = if cli.format.is_empty() {
        config.output.formats.clone().unwrap_or_else(|| vec![Format::Csv])
    } else {
        cli.format.clone()
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let meta = ReportMeta {
        tool: "mfcontrol".to_string(),
        version: mfcontrol_version().to_string(),
        command: name.to_string(),
        config_sha256: sha256_hex(text.as_bytes()),
        seed: None,
    };
    let ctx = Context {
        config,
        config_dir,
        meta,
    };
    let outcome = match &cli.command {
        Command::Analyze => commands::analyze(&ctx)?,
        Command::Synthesize => commands::synthesize(&ctx, seed)?,
        Command::Exactctrl => commands::exactctrl(&ctx, seed)?,
        Command::Simulate => commands::simulate(&ctx, seed)?,
        Command::Wbsde => commands::wbsde(&ctx)?,
        Command::Repro { case } => {
            let from_task = match &ctx.config.task {
                Some(TaskConfig::Repro { case, .. }) => case.clone(),
                _ => None,
            };
            let id = case.clone().or(from_task).unwrap_or_else(|| "all".to_string());
            repro::command(&ctx, &id, seed)?
        }
    };
    report::write_outcome(&out_dir, &ctx.meta, &outcome, &formats)?;
    Ok((outcome, out_dir))
}

/// Version of the numerical library embedded in every report.
pub fn mfcontrol_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
