//! `cwh`: split, train, evaluate, sweep gamma and report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use cwh::synth::SynthConfig;
use cwh::{CwhError, ModelKind};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "cwh", version, about = "Cold-warm harmonized hybrid recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one split manifest per configured fold offset.
    Split(Common),
    /// Train one model on one fold; writes a checkpoint and a training report.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Evaluate a trained model on its fold's test sets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Evaluate warm items only (needed for cf_only models).
        #[arg(long)]
        warm_only: bool,
    },
    /// Train and evaluate one model per gamma and fold; pick gamma*.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Comma-separated gamma grid replacing the configured one.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
    },
    /// Summarize results files and plot MRR@20 over popularity regimes.
    Report {
        /// Results files, or run directories holding `results.csv`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, env = "CWH_OUTPUT_DIR", default_value = "cwh-out")]
        output_dir: PathBuf,
    },
    /// Generate a synthetic dataset with content-correlated item factors.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        interactions_per_user: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, env = "CWH_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, env = "CWH_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct TrainOverrides {
    /// Fold offset; defaults to the first configured one.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// cwh, cf_only or cb_only
    #[arg(long)]
    kind: Option<ModelKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

fn load(common: &Common, overrides: Option<&TrainOverrides>) -> Result<(RunConfig, usize)> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(n) = common.threads {
        config.threads = n;
    }
    let mut fold = None;
    if let Some(o) = overrides {
        fold = o.fold;
        if let Some(g) = o.gamma {
            config.train.gamma = g;
        }
        if let Some(k) = o.kind {
            config.train.kind = k;
        }
        if let Some(s) = o.seed {
            config.train.seed = s;
        }
        if let Some(e) = o.max_epochs {
            config.train.max_epochs = e;
        }
    }
    config.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .map_err(|e| CwhError::Config(format!("cannot start {} worker threads: {e}", config.threads)))?;
    let fold = fold.unwrap_or(config.split.offsets[0]);
    Ok((config, fold))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(common) => {
            let (config, _) = load(&common, None)?;
            for path in commands::split(&config)? {
                println!("{}", path.display());
            }
        }
        Command::Train { common, overrides } => {
            let (config, fold) = load(&common, Some(&overrides))?;
            let dir = commands::train(&config, fold)?;
            println!("{}", dir.display());
        }
        Command::Eval {
            common,
            overrides,
            warm_only,
        } => {
            let (config, fold) = load(&common, Some(&overrides))?;
            for r in commands::evaluate(&config, fold, warm_only)? {
                println!("{r}");
            }
        }
        Command::Sweep {
            common,
            overrides,
            gammas,
        } => {
            let mut overrides = overrides;
            // the sweep always covers every configured fold
            overrides.fold = None;
            let (mut config, _) = load(&common, Some(&overrides))?;
            if let Some(g) = gammas {
                config.sweep.gammas = g;
                config.validate()?;
            }
            let outcome = commands::sweep(&config)?;
            println!("gamma* = {}", outcome.gamma_star);
            println!("{}", outcome.dir.display());
        }
        Command::Report { inputs, output_dir } => {
            let dir = commands::report(&inputs, &output_dir.join("report"))?;
            println!("{}", dir.display());
        }
        Command::Synth {
            out,
            users,
            items,
            beta,
            interactions_per_user,
            seed,
        } => {
            let d = SynthConfig::default();
            let config = SynthConfig {
                users: users.unwrap_or(d.users),
                items: items.unwrap_or(d.items),
                beta: beta.unwrap_or(d.beta),
                interactions_per_user: interactions_per_user.unwrap_or(d.interactions_per_user),
                seed,
                ..d
            };
            commands::synth(&config, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

/// Category of the first library error in the chain, `io` for bare I/O
/// failures and `internal` otherwise.
fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CwhError>() {
            return c.category();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {message}", category(&e));
            ExitCode::FAILURE
        }
    }
}
