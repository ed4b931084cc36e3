//! `kernval`: experiment harness for kernel-based value-process learning.
//!
//! Exit status: 0 on success, 1 on input or configuration errors, 2 on
//! numerical failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernval_core::{Error, ExperimentConfig, GroundTruthSource, PayoffId};

#[derive(Parser, Debug)]
#[command(
    name = "kernval",
    version,
    about = "Learn dynamic value processes by kernel ridge regression"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment configuration file (sectioned key = value); the reference
    /// experiment when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to one payoff.
    #[arg(long, global = true)]
    payoff: Option<PayoffId>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the training sample size.
    #[arg(long, global = true)]
    n_train: Option<usize>,
    /// Use Monte Carlo ground truth with this many inner draws.
    #[arg(long, global = true)]
    n_inner_gt: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a training sample and write it as CSV.
    Simulate {
        /// Training repeat whose seed is used.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
    },
    /// Fit an estimator and write it as JSON.
    Fit {
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
        #[arg(long, default_value_t = 1e-5)]
        lambda: f64,
        /// Training CSV from `simulate`; drawn afresh when omitted.
        #[arg(long)]
        training: Option<PathBuf>,
        /// Solve the system over distinct sample points.
        #[arg(long)]
        sorted: bool,
    },
    /// Hyperparameter grid search on the validation sample.
    GridSearch,
    /// Evaluate a fitted estimator's value process on nominal paths.
    Value {
        #[arg(long)]
        estimator: PathBuf,
        #[arg(long, default_value_t = 10)]
        n_paths: usize,
    },
    /// Grid search, repeated errors and the nested Monte Carlo baseline.
    Table2,
    /// Validation-error sections and value-process trajectories.
    Figures,
    /// Nested Monte Carlo baseline only.
    NestedMc,
    /// Error-bound and limit-theorem diagnostics.
    Diagnostics {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
        #[arg(long, default_value_t = 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.3)]
        beta: f64,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
    },
}

impl Common {
    fn load(&self) -> kernval_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::reference(),
        };
        if let Some(id) = self.payoff {
            cfg.payoffs = vec![id];
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(n) = self.n_train {
            cfg.n_train = n;
        }
        if let Some(n) = self.n_inner_gt {
            cfg.ground_truth = GroundTruthSource::MonteCarlo {
                n_inner: n,
                seed: kernval_core::rng::derive_seed(cfg.master_seed, "ground-truth-mc", 0),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = cli
        .common
        .load()
        .and_then(|cfg| commands::run(&cli.command, &cli.common, &cfg));
    match result {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
