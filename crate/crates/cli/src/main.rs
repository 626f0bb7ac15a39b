//! `phforge` — build, repair and check port-Hamiltonian structure from the
//! command line.
//!
//! Exit codes: 0 success, 1 domain or verification failure, 2 usage or IO
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use phforge::decomp::{Policy, Ray};
use phforge::dynamics::Scheme;

#[derive(Debug, Parser)]
#[command(name = "phforge", version, about = "Port-Hamiltonian construction, repair and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the standing assumptions (H ≥ 0, passivity, Dη) on sampled states.
    Audit(AuditArgs),
    /// Compute J, R (and the correction P) at given or sampled states.
    Decompose(DecomposeArgs),
    /// Integrate with an energy-consistent scheme and write the energy ledger.
    Simulate(SimulateArgs),
    /// Write the system document and its derived expressions.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct SystemArgs {
    /// JSON system document.
    #[arg(long, value_name = "PATH", required_unless_present = "corpus", conflicts_with = "corpus")]
    system: Option<PathBuf>,
    /// Built-in system: linear-kq, rigid-body or wave.
    #[arg(long, value_name = "ID")]
    corpus: Option<String>,
    /// Corpus parameter, e.g. `--param I1=2` (repeatable).
    #[arg(long = "param", value_name = "K=V", requires = "corpus")]
    params: Vec<String>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Sampling box LO,HI applied to every coordinate [default: the corpus box, else -1,1].
    #[arg(long = "box", value_name = "LO,HI", allow_hyphen_values = true)]
    bounds: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DecompArgs {
    #[arg(long, default_value = "auto")]
    policy: Policy,
    /// Gauss–Legendre nodes for M(z).
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..=1024))]
    quad_nodes: u32,
    /// Integration path for M(z): auto, state or co-energy.
    #[arg(long, default_value = "auto")]
    ray: Ray,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[command(flatten)]
    source: SystemArgs,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[command(flatten)]
    sampling: SampleArgs,
    /// Write audit.json and manifest.json here instead of printing the report.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[command(flatten)]
    source: SystemArgs,
    #[command(flatten)]
    decomp: DecompArgs,
    /// Point as a comma-separated vector (repeatable).
    #[arg(long, value_name = "Z", allow_hyphen_values = true)]
    at: Vec<String>,
    /// Uniform grid with this many points per coordinate over the box.
    #[arg(long, value_name = "N")]
    grid: Option<usize>,
    /// This many seeded random points in the box.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    #[command(flatten)]
    sampling: SampleArgs,
    /// Write decompositions.jsonl, summary.csv and manifest.json here
    /// instead of printing records.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SystemArgs,
    #[command(flatten)]
    decomp: DecompArgs,
    /// Initial state.
    #[arg(long, value_name = "Z", allow_hyphen_values = true)]
    z0: String,
    /// Final time.
    #[arg(long = "T", value_name = "T")]
    t_end: f64,
    #[arg(long)]
    dt: f64,
    /// jr, b or rk4.
    #[arg(long, default_value = "jr")]
    scheme: Scheme,
    /// Constant input vector [default: zero].
    #[arg(long, value_name = "U", allow_hyphen_values = true)]
    u: Option<String>,
    /// Largest acceptable |ledger residual| [default: the master tolerance].
    #[arg(long, value_name = "EPS")]
    residual_bound: Option<f64>,
    /// Directory for trajectory.csv, ledger.csv and manifest.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: SystemArgs,
    /// Directory for system.json and derived.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Audit(a) => commands::audit(a),
        Command::Decompose(a) => commands::decompose(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Export(a) => commands::export(a),
    };
    match result {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
