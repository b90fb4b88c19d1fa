use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use introspect::rollout::PolicyMode;
use introspect_cli::commands::{self, EvalOptions, TraceOptions};
use introspect_cli::config::SEED_ENV;
use introspect_cli::{CliError, ModeName, Overrides, Result, RunConfig};

#[derive(Parser)]
#[command(name = "introspect", version, about = "Train and inspect learned per-token sampling temperatures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes config, metrics, evals, checkpoints and trajectories to --out.
    Train {
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Avg@k / Pass@k and mean temperature per difficulty for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task mix; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        tasks: Option<String>,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Per-token temperature trace (JSONL) for sampled completions.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task to draw one prompt from, e.g. `mod_add:2`.
        #[arg(long, conflicts_with = "prompt")]
        task: Option<String>,
        /// Explicit prompt in token notation, e.g. `<bos><add>12+7=`.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Join the metrics of several runs on the update index.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Override the checkpoint's temperature policy.
    #[arg(long, value_enum)]
    mode: Option<ModeName>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
            Err(_) => Ok(0),
        }
    }

    fn mode(&self) -> Result<Option<PolicyMode>> {
        self.mode
            .map(|m| PolicyMode::from_name(m.as_str(), self.tau).map_err(CliError::from))
            .transpose()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let env = std::env::var(SEED_ENV).ok();
            let cfg = RunConfig::resolve(config.as_deref(), env.as_deref(), &overrides)?;
            commands::train(&cfg)?;
            eprintln!("wrote {}", cfg.out.display());
        }
        Command::Eval {
            checkpoint,
            tasks,
            k,
            instances,
            common,
        } => {
            commands::eval(&EvalOptions {
                checkpoint,
                tasks,
                mode: common.mode()?,
                k,
                instances,
                seed: common.seed()?,
                out: common.out,
            })?;
        }
        Command::Trace {
            checkpoint,
            task,
            prompt,
            samples,
            common,
        } => {
            commands::trace(&TraceOptions {
                checkpoint,
                task,
                prompt,
                mode: common.mode()?,
                samples,
                seed: common.seed()?,
                out: common.out,
            })?;
        }
        Command::Compare { runs, out } => {
            if let Some(w) = commands::compare(&runs, out.as_deref())? {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
