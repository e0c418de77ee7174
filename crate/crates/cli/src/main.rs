mod data;
mod eval;
mod play;
mod serve;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridtalk_core::scenegen::{read_scenes, SceneGenError, SceneRecord, Split, Strictness};
use gridtalk_core::trainer::TrainError;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gridtalk",
    version,
    about = "Dialogue agents that steer a square to a circle by talking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene dataset with train/test/validation splits.
    GenData(data::GenArgs),
    /// Train a Q-network against the simulated user.
    Train(train::TrainArgs),
    /// Evaluate a policy on a held-out split.
    Eval(eval::EvalArgs),
    /// Print a scene's optimal solve length and one optimal path.
    Oracle(data::OracleArgs),
    /// Play one episode in the agent's seat, without seeing the grid.
    PlayLocal(play::PlayArgs),
    /// Run the human-play HTTP service.
    Serve(serve::ServeArgs),
}

/// Failure classes that map onto exit codes.
pub enum Failure {
    /// Bad flags or an impossible configuration: exit 2.
    Usage(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e: anyhow::Error = e.into();
        if let Some(SceneGenError::Config(m)) = e.downcast_ref::<SceneGenError>() {
            return Failure::Usage(m.clone());
        }
        if let Some(TrainError::Config(m)) = e.downcast_ref::<TrainError>() {
            return Failure::Usage(format!("invalid training config: {m}"));
        }
        Failure::Runtime(e)
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Validation,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::Validation => Some(Split::Validation),
            SplitArg::All => None,
        }
    }
}

pub fn load_scenes(path: &Path, split: SplitArg) -> anyhow::Result<Vec<SceneRecord>> {
    let records = read_scenes(path, Strictness::Lenient)?;
    let selected: Vec<SceneRecord> = match split.split() {
        Some(s) => records.into_iter().filter(|r| r.split == s).collect(),
        None => records,
    };
    if selected.is_empty() {
        anyhow::bail!("{} has no scenes in the requested split", path.display());
    }
    Ok(selected)
}

/// `out/report.json` -> `out/report.manifest.json`.
pub fn manifest_beside(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    gridtalk_core::write_atomic(path, &bytes)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// Provenance written beside every output.
#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: C,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &'static str, seed: u64, config: C) -> Self {
        Self {
            tool: "gridtalk",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv: std::env::args().skip(1).collect(),
            seed,
            config,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => data::gen_data(a),
        Command::Train(a) => train::train(a),
        Command::Eval(a) => eval::eval(a),
        Command::Oracle(a) => data::oracle(a),
        Command::PlayLocal(a) => play::play_local(a),
        Command::Serve(a) => serve::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
