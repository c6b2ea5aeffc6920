//! `colocate`: trace analysis, request planning, contention prediction,
//! simulation and controller runs from the command line.
//!
//! Exit status is 0 on success, 2 for unreadable or invalid input and 3 when
//! valid input violates a capacity, budget or quota constraint.

mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const DEFAULT_SEED: u64 = colocate_core::sim::scenario::DEFAULT_SEED;

/// Verbosity is read from this variable (`error`, `warn`, `info`, `debug`).
pub const LOG_ENV: &str = "COLOCATE_LOG";

#[derive(Debug, Parser)]
#[command(name = "colocate", version, about = "Plan and simulate CPU co-location of MPI simulations")]
pub struct Cli {
    /// Seed for every stochastic path.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-rank duty cycles, group means and reclaimable capacity from a trace directory.
    Analyze(AnalyzeArgs),
    /// Proportional CPU requests from weights or duties, with an aggregate capacity check.
    Plan(PlanArgs),
    /// Fit the contention model to measured makespans; Pareto and cost tables.
    Predict(PredictArgs),
    /// Run a simulator scenario file to completion.
    Simulate(SimulateArgs),
    /// Run the profile, resize, pack and monitor pipeline on the simulator.
    Control(ControlArgs),
    /// Print Kubernetes and MPI artefacts.
    #[command(subcommand)]
    Emit(EmitCommand),
    /// Write synthetic per-rank trace files.
    GenTraces(GenTracesArgs),
}

/// Cluster geometry overrides; unset values come from the reference cluster.
#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub nodes: Option<u32>,
    #[arg(long)]
    pub vcpus: Option<u32>,
    /// Cluster price per hour.
    #[arg(long)]
    pub price: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding one `rank_<r>.csv` file per rank.
    pub trace_dir: PathBuf,
    /// Leading fraction of iterations dropped as warm-up.
    #[arg(long, default_value_t = colocate_core::trace::DEFAULT_SKIP_FRACTION)]
    pub skip: f64,
    /// CSV of `rank,group` labels.
    #[arg(long, conflicts_with = "reference_groups")]
    pub groups: Option<PathBuf>,
    /// Label ranks with the sparse, medium and dense groups of the 16-rank reference case.
    #[arg(long)]
    pub reference_groups: bool,
    /// Budget of the proportional request assumption, in millicores.
    #[arg(long, default_value_t = colocate_core::alloc::DEFAULT_SIM_BUDGET_MILLICPU)]
    pub budget: u64,
    /// Directory for CSV and JSON reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct PlanArgs {
    /// Comma-separated integer decomposition weights.
    #[arg(long, group = "source", value_delimiter = ',')]
    pub weights: Option<Vec<u32>>,
    /// The 16-rank three-zone weights (8 x 1, 4 x 5, 4 x 15).
    #[arg(long, group = "source")]
    pub three_zone: bool,
    /// Equal weights for this many ranks.
    #[arg(long, group = "source")]
    pub uniform: Option<usize>,
    /// CSV of `rank,duty`, as written by `analyze`.
    #[arg(long, group = "source")]
    pub duties: Option<PathBuf>,
    /// Per-simulation budget in millicores.
    #[arg(long, default_value_t = colocate_core::alloc::DEFAULT_SIM_BUDGET_MILLICPU)]
    pub budget: u64,
    /// Number of simulations sharing the cluster at this plan.
    #[arg(long, default_value_t = 1)]
    pub sims: u32,
    /// Namespace quota on total requests, in millicores.
    #[arg(long)]
    pub quota: Option<u64>,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    /// Write one pod manifest per rank under this directory.
    #[arg(long)]
    pub manifests: Option<PathBuf>,
    /// Simulation id used in manifest names and labels.
    #[arg(long, default_value = "A")]
    pub sim: String,
    #[arg(long, default_value = colocate_core::k8s::DEFAULT_IMAGE)]
    pub image: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// CSV of `n,makespan_s` rows; the N = 1 row supplies T1 unless `--t1` is given.
    pub points: PathBuf,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long, default_value_t = 16)]
    pub ranks: u32,
    /// Use this β for the prediction table instead of the all-points fit.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Last N in the prediction table; rows past the largest measured N are flagged.
    #[arg(long)]
    pub up_to: Option<u32>,
    #[command(flatten)]
    pub cluster: ClusterArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML scenario file.
    pub scenario: PathBuf,
    /// Utilisation sampling interval in seconds; overrides the scenario.
    #[arg(long)]
    pub sample_interval: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    /// TOML controller scenario; the reference scenario when omitted.
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub max_sims: Option<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EmitCommand {
    /// Pod manifest for one rank.
    Manifest {
        #[arg(long, default_value = "A")]
        sim: String,
        #[arg(long)]
        rank: u32,
        /// CPU request in millicores.
        #[arg(long)]
        cpu: u32,
        #[arg(long, default_value = colocate_core::k8s::DEFAULT_IMAGE)]
        image: String,
    },
    /// Hostfile ConfigMap listing one address per rank.
    Hostfile {
        #[arg(long, default_value = "A")]
        sim: String,
        #[arg(required = true)]
        addresses: Vec<String>,
    },
    /// In-place resize patch and the kubectl command that applies it.
    Resize {
        #[arg(long)]
        pod: String,
        #[arg(long)]
        cpu: u32,
    },
    /// mpirun launch line.
    Mpirun {
        #[arg(long, default_value = "A")]
        sim: String,
        #[arg(long)]
        ranks: u32,
        #[arg(long, default_value = "/etc/mpi/hostfile")]
        hostfile: String,
    },
}

#[derive(Debug, Args)]
pub struct GenTracesArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated per-rank duties; the 16-rank reference profile when omitted.
    #[arg(long, value_delimiter = ',')]
    pub duties: Option<Vec<f64>>,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// Wall time of one iteration in seconds.
    #[arg(long, default_value_t = 6.245)]
    pub wall: f64,
    /// Compute-gap perturbation as a fraction of the iteration wall, at most 0.01.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
