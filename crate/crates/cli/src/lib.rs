//! Subcommands of the `morphbench` binary. Every command resolves its
//! arguments into a [`Command`], validates paths before touching the output
//! directory and writes a `manifest.json` that [`replay`] can rerun.

mod eval;
mod morph;
mod toy;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use eval::{cmd_mad, cmd_quality, cmd_vuln, MadArgs, QualityArgs, VulnArgs};
pub use morph::{cmd_ablation, cmd_morph, MorphArgs, ModelSource};
pub use toy::{cmd_mad_baseline, cmd_toy_subjects, MadBaselineArgs, ToySubjectsArgs};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Partial = 1,
    Config = 2,
    Data = 3,
    Compute = 4,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            status: Status::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            status: Status::Data,
            message: message.into(),
        }
    }

    pub fn compute(message: impl Into<String>) -> Self {
        Self {
            status: Status::Compute,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type CmdResult = Result<Status, CliError>;

#[derive(Debug, Parser)]
#[command(name = "morphbench", version, about = "Latent morph generation and morph-attack evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Generate one optimised morph per pair.
    Morph(MorphArgs),
    /// Run `morph` four times, each with one loss weight set to zero.
    Ablation(MorphArgs),
    /// Vulnerability report from a comparison score CSV.
    Vuln(VulnArgs),
    /// PSNR / SSIM of morphs against their parents.
    Quality(QualityArgs),
    /// MAD grid report from a detector score CSV.
    Mad(MadArgs),
    /// Render toy subject images and a pair list.
    ToySubjects(ToySubjectsArgs),
    /// Score images with the bundled median-residual detector.
    MadBaseline(MadBaselineArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolved configuration of one run, as stored in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    Morph(MorphArgs),
    Ablation(MorphArgs),
    Vuln(VulnArgs),
    Quality(QualityArgs),
    Mad(MadArgs),
    ToySubjects(ToySubjectsArgs),
    MadBaseline(MadBaselineArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub morphbench_version: String,
    pub run: Command,
}

impl Command {
    pub fn out_dir(&self) -> &Path {
        match self {
            Command::Morph(a) | Command::Ablation(a) => &a.out,
            Command::Vuln(a) => &a.out,
            Command::Quality(a) => &a.out,
            Command::Mad(a) => &a.out,
            Command::ToySubjects(a) => &a.out,
            Command::MadBaseline(a) => &a.out,
        }
    }

    fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Command::Morph(a) | Command::Ablation(a) => a.out = out,
            Command::Vuln(a) => a.out = out,
            Command::Quality(a) => a.out = out,
            Command::Mad(a) => a.out = out,
            Command::ToySubjects(a) => a.out = out,
            Command::MadBaseline(a) => a.out = out,
        }
    }
}

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Morph(a) => cmd_morph(a),
        Command::Ablation(a) => cmd_ablation(a),
        Command::Vuln(a) => cmd_vuln(a),
        Command::Quality(a) => cmd_quality(a),
        Command::Mad(a) => cmd_mad(a),
        Command::ToySubjects(a) => cmd_toy_subjects(a),
        Command::MadBaseline(a) => cmd_mad_baseline(a),
    }
}

pub fn run_cli(cli: Cli) -> CmdResult {
    let cmd = match cli.command {
        CliCommand::Morph(a) => Command::Morph(a),
        CliCommand::Ablation(a) => Command::Ablation(a),
        CliCommand::Vuln(a) => Command::Vuln(a),
        CliCommand::Quality(a) => Command::Quality(a),
        CliCommand::Mad(a) => Command::Mad(a),
        CliCommand::ToySubjects(a) => Command::ToySubjects(a),
        CliCommand::MadBaseline(a) => Command::MadBaseline(a),
        CliCommand::Replay(a) => return replay(&a.manifest, a.out),
    };
    run(cmd)
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn replay(manifest: &Path, out: Option<PathBuf>) -> CmdResult {
    let mut m = read_manifest(manifest)?;
    if m.morphbench_version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest written by morphbench {}, replaying with {}",
            m.morphbench_version,
            env!("CARGO_PKG_VERSION")
        );
    }
    if let Some(out) = out {
        m.run.set_out_dir(absolute(&out)?);
    }
    run(m.run)
}

pub(crate) fn write_manifest(cmd: &Command) -> Result<(), CliError> {
    let m = Manifest {
        morphbench_version: env!("CARGO_PKG_VERSION").to_string(),
        run: cmd.clone(),
    };
    let text = serde_json::to_string_pretty(&m).expect("manifest serialises");
    write_file(&cmd.out_dir().join(MANIFEST), text.as_bytes())
}

pub(crate) fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
}

pub(crate) fn require_file(p: &Path, what: &str) -> Result<PathBuf, CliError> {
    if !p.is_file() {
        return Err(CliError::config(format!("{what} {} does not exist", p.display())));
    }
    absolute(p)
}

pub(crate) fn require_dir(p: &Path, what: &str) -> Result<PathBuf, CliError> {
    if !p.is_dir() {
        return Err(CliError::config(format!("{what} {} is not a directory", p.display())));
    }
    absolute(p)
}

/// The output directory may exist but must not be a file.
pub(crate) fn check_out_dir(p: &Path) -> Result<PathBuf, CliError> {
    if p.exists() && !p.is_dir() {
        return Err(CliError::config(format!("output {} exists and is not a directory", p.display())));
    }
    absolute(p)
}

pub(crate) fn create_out_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub(crate) fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    if jobs == 0 {
        return Err(CliError::config("--jobs must be >= 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(e.to_string()))
}

/// Resolves `name` against `base` unless it is already absolute.
pub(crate) fn relative_to(base: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
