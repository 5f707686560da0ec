use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bondmm::error::Error;
use bondmm::harness::{
    emit_plotdata, run_compare, run_evaluate, run_solve, run_table4, run_train, ExactMethod, ExperimentSpec, Mode, PlotKind,
};
use bondmm::model::PenaltyKind;

#[derive(Parser)]
#[command(name = "bondmm", version, about = "Optimal RFQ quoting: exact solvers and actor-critic training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Market file (TOML or JSON); the bundled 20-bond market by default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated bond ids.
    #[arg(long, global = true, value_delimiter = ',')]
    bonds: Vec<String>,
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    penalty: Option<Penalty>,
    /// Risk aversion γ.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Discount rate r.
    #[arg(long, global = true)]
    discount: Option<f64>,
    /// Overrides the preset's number of training steps.
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Penalty {
    Stddev,
    Variance,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exact {
    Vi,
    Fd,
    Both,
}

impl From<Exact> for ExactMethod {
    fn from(e: Exact) -> Self {
        match e {
            Exact::Vi => ExactMethod::ValueIteration,
            Exact::Fd => ExactMethod::FiniteDifference,
            Exact::Both => ExactMethod::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference solve on the maximum risk limits.
    SolveFd,
    /// Value-iteration solve on the maximum risk limits.
    SolveVi,
    /// Evaluate a trained checkpoint, or the myopic policy.
    Evaluate {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Pre-train and train; checkpoints go to --out.
    Train,
    /// Exact solution against a trained policy (at most two bonds).
    Compare {
        /// Existing checkpoint; trains the preset when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "vi")]
        exact: Exact,
    },
    /// Single-bond exact average rewards for every bond.
    Table4 {
        #[arg(long, value_enum, default_value = "vi")]
        exact: Exact,
    },
    /// Plot data from a checkpoint or solve directory.
    Plotdata {
        #[arg(long)]
        artifact: PathBuf,
        /// learning-curve, quotes, values or value-diff.
        #[arg(long)]
        kind: String,
        /// Second artifact for value-diff.
        #[arg(long)]
        other: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn spec(common: &Common, mode: Mode) -> ExperimentSpec {
    ExperimentSpec {
        config: common.config.clone(),
        mode,
        bonds: common.bonds.clone(),
        preset: common.preset.clone(),
        out: common.out.clone(),
        seed: common.seed,
        penalty: common.penalty.map(|p| match p {
            Penalty::Stddev => PenaltyKind::StdDev,
            Penalty::Variance => PenaltyKind::Variance,
        }),
        gamma: common.gamma,
        discount: common.discount,
        steps: common.steps,
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let c = &cli.common;
    let json = match cli.command {
        Command::SolveFd => serde_json::to_string_pretty(&run_solve(&spec(c, Mode::SolveFd), ExactMethod::FiniteDifference)?)?,
        Command::SolveVi => serde_json::to_string_pretty(&run_solve(&spec(c, Mode::SolveVi), ExactMethod::ValueIteration)?)?,
        Command::Evaluate { policy } => {
            serde_json::to_string_pretty(&run_evaluate(&spec(c, Mode::EvaluatePolicy), policy.as_deref())?)?
        }
        Command::Train => serde_json::to_string_pretty(&run_train(&spec(c, Mode::Train))?.1)?,
        Command::Compare { checkpoint, exact } => {
            serde_json::to_string_pretty(&run_compare(&spec(c, Mode::Compare), checkpoint.as_deref(), exact.into())?)?
        }
        Command::Table4 { exact } => serde_json::to_string_pretty(&run_table4(&spec(c, Mode::SolveVi), exact.into())?)?,
        Command::Plotdata { artifact, kind, other } => {
            let path = emit_plotdata(&artifact, kind.parse::<PlotKind>()?, other.as_deref(), &c.out)?;
            serde_json::to_string(&path)?
        }
    };
    Ok(json)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = ErrorReport { error: "usage", message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = ErrorReport { error: e.code(), message: e.to_string() };
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_default());
            ExitCode::FAILURE
        }
    }
}
