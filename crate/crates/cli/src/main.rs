//! `hmmrnn` command line: sample HMMs, train, evaluate, analyse and intervene.
//! Every run writes under `<out>/<digest>/{checkpoints,reports,logs}`.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "hmmrnn", version, about = "Train RNNs to emulate HMMs and dissect their dynamics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON config; keys not given keep their defaults, unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Override a config key, e.g. `--set epochs=10` or `--set zones.cap=40`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// HMM utilities.
    Hmm {
        #[command(subcommand)]
        cmd: HmmCmd,
    },
    /// Train a network; writes checkpoints, the loss log and a summary.
    Train {
        /// Linear-chain target with this many hidden states.
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Sample from a checkpoint and its HMM and score the four metrics.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Compare two independent HMM sample sets instead of a network.
        #[arg(long)]
        hmm_only: bool,
        /// Linear-chain size for `--hmm-only`.
        #[arg(long = "M", default_value_t = 2)]
        m: usize,
    },
    /// Latent-dynamics analyses of one checkpoint.
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
    /// Kick-neuron circuit analyses of one checkpoint.
    Circuit {
        #[command(subcommand)]
        cmd: CircuitCmd,
    },
    /// Aggregate reports.
    Report {
        #[command(subcommand)]
        cmd: ReportCmd,
    },
}

#[derive(Subcommand)]
enum HmmCmd {
    /// Sample observation sequences.
    Sample {
        #[arg(long = "M")]
        m: Option<usize>,
        #[arg(long)]
        len: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Args, Clone)]
pub struct CheckpointArg {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    FixedPoints(CheckpointArg),
    Orbits(CheckpointArg),
    Zones(CheckpointArg),
    Noise(CheckpointArg),
    Perturbation(CheckpointArg),
    /// Sweep every checkpoint of a training run.
    Epochs {
        /// Run directory holding `checkpoints/`.
        #[arg(long)]
        run: PathBuf,
    },
    Subspaces(CheckpointArg),
}

#[derive(Args, Clone)]
pub struct GroupArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Groups written by `circuit detect`; detected afresh when absent.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CircuitCmd {
    Detect(CheckpointArg),
    Report(GroupArgs),
    Intervene(GroupArgs),
    Oscillations(GroupArgs),
    Alignment(CheckpointArg),
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Merge every report of a run into `reports/bundle.json`.
    Bundle {
        #[arg(long)]
        run: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let c = &cli.common;
    match cli.cmd {
        Cmd::Hmm { cmd: HmmCmd::Sample { m, len, n } } => run::hmm_sample(c, m, len, n),
        Cmd::Train { m, epochs } => run::train(c, m, epochs),
        Cmd::Evaluate { checkpoint, hmm_only, m } => run::evaluate(c, checkpoint.as_deref(), hmm_only, m),
        Cmd::Analyze { cmd } => match cmd {
            AnalyzeCmd::FixedPoints(a) => run::analyze(c, &a.checkpoint, run::Analysis::FixedPoints),
            AnalyzeCmd::Orbits(a) => run::analyze(c, &a.checkpoint, run::Analysis::Orbits),
            AnalyzeCmd::Zones(a) => run::analyze(c, &a.checkpoint, run::Analysis::Zones),
            AnalyzeCmd::Noise(a) => run::analyze(c, &a.checkpoint, run::Analysis::Noise),
            AnalyzeCmd::Perturbation(a) => run::analyze(c, &a.checkpoint, run::Analysis::Perturbation),
            AnalyzeCmd::Subspaces(a) => run::analyze(c, &a.checkpoint, run::Analysis::Subspaces),
            AnalyzeCmd::Epochs { run } => run::epochs(c, &run),
        },
        Cmd::Circuit { cmd } => match cmd {
            CircuitCmd::Detect(a) => run::circuit(c, &a.checkpoint, None, run::CircuitStep::Detect),
            CircuitCmd::Report(a) => run::circuit(c, &a.checkpoint, a.groups.as_deref(), run::CircuitStep::Report),
            CircuitCmd::Intervene(a) => run::circuit(c, &a.checkpoint, a.groups.as_deref(), run::CircuitStep::Intervene),
            CircuitCmd::Oscillations(a) => run::circuit(c, &a.checkpoint, a.groups.as_deref(), run::CircuitStep::Oscillations),
            CircuitCmd::Alignment(a) => run::circuit(c, &a.checkpoint, None, run::CircuitStep::Alignment),
        },
        Cmd::Report { cmd: ReportCmd::Bundle { run } } => run::bundle(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
