use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consensus_cli::commands;
use consensus_cli::config::{EvalConfig, FitConfig, InferConfig, SimulateConfig, load_config};
use consensus_cli::error::Result;

/// Consensus estimation pipelines: synthetic sweeps, model fitting, inverse
/// inference and model comparison.
#[derive(Parser)]
#[command(name = "consensus", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the config's verbosity (0 = quiet).
    #[arg(long)]
    verbosity: Option<u8>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo RMSE sweep of the closed-form estimators.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the number of realizations.
        #[arg(long)]
        num_realizations: Option<usize>,
        /// Override the bad-instrument fraction.
        #[arg(long)]
        delta: Option<f64>,
        /// Override the miscalibration slope.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the miscalibration offset.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Fit the latent-group consensus model.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the number of latent groups.
        #[arg(long)]
        num_groups: Option<usize>,
        /// Replace the prior-strength grid with a single value.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Posterior-mean consensus estimates from a fitted snapshot.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the chain length.
        #[arg(long)]
        num_samples: Option<usize>,
        /// Override the burn-in length.
        #[arg(long)]
        burn_in: Option<usize>,
        /// Override the prior precision.
        #[arg(long)]
        lambda0: Option<f64>,
    },
    /// Score predictions and/or run the model-comparison pipeline.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the bootstrap replicate count.
        #[arg(long)]
        n_bootstrap: Option<usize>,
    },
}

fn apply_common(common: &CommonArgs, seed: &mut u64, out_dir: &mut PathBuf, verbosity: &mut u8) {
    if let Some(s) = common.seed {
        *seed = s;
    }
    if let Some(dir) = &common.out_dir {
        *out_dir = dir.clone();
    }
    if let Some(v) = common.verbosity {
        *verbosity = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, num_realizations, delta, alpha, beta } => {
            let mut cfg: SimulateConfig = load_config(&common.config)?;
            apply_common(&common, &mut cfg.seed, &mut cfg.out_dir, &mut cfg.verbosity);
            if let Some(n) = num_realizations {
                cfg.sim.num_realizations = n;
            }
            if let Some(d) = delta {
                cfg.sim.delta = d;
            }
            if let Some(a) = alpha {
                cfg.sim.alpha = a;
            }
            if let Some(b) = beta {
                cfg.sim.beta = b;
            }
            commands::run_simulate(&cfg)
        }
        Command::Fit { common, num_groups, lambda } => {
            let mut cfg: FitConfig = load_config(&common.config)?;
            apply_common(&common, &mut cfg.seed, &mut cfg.out_dir, &mut cfg.verbosity);
            if let Some(k) = num_groups {
                cfg.fit.num_groups = k;
            }
            if let Some(l) = lambda {
                cfg.fit.lambda_grid = vec![l];
            }
            commands::run_fit(&cfg)
        }
        Command::Infer { common, num_samples, burn_in, lambda0 } => {
            let mut cfg: InferConfig = load_config(&common.config)?;
            apply_common(&common, &mut cfg.seed, &mut cfg.out_dir, &mut cfg.verbosity);
            if let Some(n) = num_samples {
                cfg.infer.num_samples = n;
            }
            if let Some(b) = burn_in {
                cfg.infer.burn_in = b;
            }
            if let Some(l) = lambda0 {
                cfg.infer.lambda0 = l;
            }
            commands::run_infer(&cfg)
        }
        Command::Eval { common, n_bootstrap } => {
            let mut cfg: EvalConfig = load_config(&common.config)?;
            apply_common(&common, &mut cfg.seed, &mut cfg.out_dir, &mut cfg.verbosity);
            if let Some(n) = n_bootstrap {
                cfg.eval.n_bootstrap = n;
            }
            commands::run_eval(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
