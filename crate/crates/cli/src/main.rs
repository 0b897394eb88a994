use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;
mod report;

/// Bad flags, a missing required input or a malformed config; exits with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "bread",
    version,
    about = "Bounds on the accuracy of annealed importance samplers"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Master seed. Drawn from entropy and recorded when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel chains (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Include wall-clock times in outputs (makes them run-dependent).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    /// Numbers of distributions, comma separated.
    #[arg(long = "T", value_delimiter = ',')]
    pub stages: Option<Vec<usize>>,
    /// Number of chains.
    #[arg(long = "K")]
    pub chains: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct TargetArgs {
    /// Toy target: barrier or random.
    #[arg(long)]
    pub target: Option<String>,
    /// Log-potential scale of a random target.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed of a random target (default: derived from --seed).
    #[arg(long)]
    pub grid_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// linreg, mf-collapsed or mf-uncollapsed.
    #[arg(long)]
    pub model: Option<String>,
    /// Regression observations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Regression features.
    #[arg(long)]
    pub d: Option<usize>,
    /// Noise prior: fixed, inverse-gaussian or half-cauchy.
    #[arg(long)]
    pub noise: Option<String>,
    /// Noise scale for the fixed or half-cauchy prior.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Seed of the random regression design (default: derived from --seed).
    #[arg(long)]
    pub design_seed: Option<u64>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct KernelArgs {
    /// hmc or random-walk.
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub leapfrog_steps: Option<usize>,
    /// Random-walk proposal scale.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub steps_per_stage: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact J and B on a toy grid target over a sweep of T.
    ToyExact {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long = "T", value_delimiter = ',')]
        stages: Option<Vec<usize>>,
    },
    /// Sampled forward and reverse AIS on a toy grid target.
    ToyAis {
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long)]
        steps_per_stage: Option<usize>,
    },
    /// BDMC bounds on data simulated from a model.
    Bdmc {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// The full validation protocol on a real regression dataset.
    Bread {
        /// CSV with a header row.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Response column (default: y).
        #[arg(long)]
        target_column: Option<String>,
        /// Noise prior: fixed, inverse-gaussian or half-cauchy.
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        noise_scale: Option<f64>,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long)]
        estimation_budget: Option<usize>,
        #[arg(long)]
        refresh_steps: Option<usize>,
        /// Simulate at these hyperparameters instead of the estimated ones.
        #[arg(long, value_delimiter = ',')]
        simulate_at: Option<Vec<f64>>,
        /// Also run the refresh-length study with its default settings.
        #[arg(long)]
        refresh_study: bool,
        #[arg(long)]
        consistency_threshold: Option<f64>,
    },
    /// Write a simulated dataset and its exact posterior sample.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Print a saved protocol report as text.
    Report {
        /// A bread_report.json file.
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
