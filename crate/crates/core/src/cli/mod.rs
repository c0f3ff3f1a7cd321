//! Command-line front end. Every command reads its parameters from flags
//! and/or one `--config` JSON file (flags win), writes its artifacts into
//! `--out`, and returns 0 on success, 1 on invalid input and 2 when a
//! verification suite finds violations.

mod commands;
pub mod fixtures;
mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub use commands::*;
pub use output::{rounded_json, write_csv, write_json};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files.
    Invalid(String),
    /// A verification suite found violations.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Options every command accepts.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON file with the command's parameters; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// RoPE shift-invariance, layout-equivalence and frequency-decay suites.
    RopeCheck(RopeCheckArgs),
    /// Sample two-object scenes and export direction vectors and their PCA.
    Simulate(SimulateArgs),
    /// Collinearity, orthogonality, reassembly and intervention checks.
    VerifyGeometry(VerifyGeometryArgs),
    /// Per-layer X/Y attention split on synthetic rotary attention.
    AxisSplit(AxisSplitArgs),
    /// Decode embeddings through an unembedding into a token map.
    Tokenmap(TokenmapArgs),
    /// Label map and PPM segmentation map from a token map and keywords.
    Segmap(SegmapArgs),
    /// Word ratios, emergence rate and synonym answer of a token map.
    Stats(StatsArgs),
    /// Run-length compression of an embedding sequence.
    Compress(CompressArgs),
    /// Distill a linear visual decoder from teacher logits.
    Distill(DistillArgs),
    /// Write seeded synthetic fixtures for the other commands.
    GenFixtures(GenFixturesArgs),
}

/// Overlays the non-null flag values onto the config file values and
/// deserializes the result; unknown config keys are rejected.
pub fn resolve<A: Serialize + DeserializeOwned>(flags: &A, config: Option<&Path>) -> CliResult<A> {
    let mut merged = match config {
        None => serde_json::Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
            let Value::Object(map) = value else {
                return Err(invalid(format!("config {}: expected a JSON object", path.display())));
            };
            serde_json::from_value::<A>(Value::Object(map.clone()))
                .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
            map
        }
    };
    let Value::Object(flag_map) = serde_json::to_value(flags).map_err(|e| invalid(e.to_string()))? else {
        return Err(invalid("flags did not serialize to an object"));
    };
    for (k, v) in flag_map {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| invalid(format!("config: {e}")))
}

fn dispatch(cmd: Command, common: &Common) -> CliResult<String> {
    let cfg = common.config.as_deref();
    std::fs::create_dir_all(&common.out).map_err(|e| invalid(format!("out {}: {e}", common.out.display())))?;
    let out = common.out.as_path();
    match cmd {
        Command::RopeCheck(a) => rope_check(&resolve(&a, cfg)?, out),
        Command::Simulate(a) => simulate(&resolve(&a, cfg)?, out),
        Command::VerifyGeometry(a) => verify_geometry(&resolve(&a, cfg)?, out),
        Command::AxisSplit(a) => axis_split_cmd(&resolve(&a, cfg)?, out),
        Command::Tokenmap(a) => tokenmap_cmd(&resolve(&a, cfg)?, out),
        Command::Segmap(a) => segmap_cmd(&resolve(&a, cfg)?, out),
        Command::Stats(a) => stats_cmd(&resolve(&a, cfg)?, out),
        Command::Compress(a) => compress_cmd(&resolve(&a, cfg)?, out),
        Command::Distill(a) => distill_cmd(&resolve(&a, cfg)?, out),
        Command::GenFixtures(a) => gen_fixtures(&resolve(&a, cfg)?, out),
    }
}

#[derive(Debug, Parser)]
#[command(name = "vislens", version, about = "Desk-scale numerical lab for VLM visual processing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Messages go to stdout/stderr.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let inv = match Cli::try_parse_from(argv) {
        Ok(inv) => inv,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(inv.command, &inv.common) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
