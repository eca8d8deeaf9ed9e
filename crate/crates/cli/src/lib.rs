//! Command-line front end for kinlab experiments.
//!
//! Every command reads one TOML file, writes its tables, a JSON summary and
//! a `manifest.json` under `<out-dir>/<command>/`, and maps its verdict to
//! the exit code.

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use kinlab::harness::Verdict;

pub mod commands;
pub mod config;
pub mod output;

pub use output::{Format, RunManifest};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_FAIL: i32 = 4;

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "KINETIC_EM_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<kinlab::Error> for CliError {
    fn from(e: kinlab::Error) -> Self {
        match e {
            kinlab::Error::Config(m) | kinlab::Error::Domain(m) => CliError::Config(m),
            kinlab::Error::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) | CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => EXIT_PASS,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "kinlab", version, about = "Tamed Euler-Maruyama experiments for kinetic SDEs")]
pub struct Cli {
    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "results")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Endpoint samples of the tamed or standard scheme.
    Sample { config: PathBuf },
    /// Weak error against a reference and its fitted rate.
    WeakRate { config: PathBuf },
    /// Density distance against a reference and its fitted rate.
    Density { config: PathBuf },
    /// Besov-norm decay of the taming error.
    BesovRate { config: PathBuf },
    /// Fixed battery of free-kernel identities.
    KernelCheck,
    /// Growth bounds of a tamed drift family.
    TamingCheck { config: PathBuf },
}

/// Options shared by all commands.
#[derive(Clone, Debug)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub format: Format,
}

/// What a command produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    /// `None` for commands without a pass rule.
    pub verdict: Option<Verdict>,
    pub manifest: RunManifest,
    pub dir: PathBuf,
    /// Human-readable lines for the terminal.
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.verdict.map(verdict_exit_code).unwrap_or(EXIT_PASS)
    }
}

pub fn execute(command: &Command, g: &Globals) -> Result<Outcome, CliError> {
    match command {
        Command::Sample { config } => commands::sample(config, g),
        Command::WeakRate { config } => commands::weak_rate(config, g),
        Command::Density { config } => commands::density(config, g),
        Command::BesovRate { config } => commands::besov_rate(config, g),
        Command::KernelCheck => commands::kernel_check(g),
        Command::TamingCheck { config } => commands::taming_check(config, g),
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("config error: --threads must be >= 1");
            return EXIT_CONFIG;
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let g = Globals {
        seed: cli.seed,
        out_dir: cli.out_dir,
        format: cli.format,
    };
    match execute(&cli.command, &g) {
        Ok(out) => {
            for l in &out.lines {
                println!("{l}");
            }
            if let Some(v) = out.verdict {
                println!("{v}");
            }
            println!("outputs: {}", out.dir.display());
            out.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
