use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use romelab_cli::commands::{cmd_calibrate, cmd_edit, cmd_eval, cmd_sweep, cmd_trace, cmd_train, cmd_world};
use romelab_cli::{ExperimentConfig, Result, Workspace};
use romelab_core::editor::EditMethod;
use romelab_core::tracing::TraceSite;

/// Causal tracing and rank-one fact editing on a small transformer.
///
/// Artifacts go under $ROMELAB_OUT (default ./runs).
#[derive(Debug, Parser)]
#[command(name = "romelab", version)]
struct Cli {
    /// Experiment configuration (JSON); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set seed=3 --set trace.n_prompts=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Site {
    Hidden,
    Mlp,
    Attn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Rome,
    Ft,
    #[value(name = "ft-l")]
    FtL,
    #[value(name = "attn-edit")]
    AttnEdit,
}

impl From<Method> for EditMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Rome => EditMethod::Rome,
            Method::Ft => EditMethod::Ft,
            Method::FtL => EditMethod::FtL,
            Method::AttnEdit => EditMethod::AttnEdit,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the world, training corpus and edit records.
    World,
    /// Train the model and cache key statistics for every layer.
    Train,
    /// Causal traces of known prompts.
    Trace {
        #[arg(long, value_enum, default_value = "hidden")]
        site: Site,
        /// Pin the last-subject-token MLP outputs to their corrupted values.
        #[arg(long)]
        disable_mlp: bool,
        #[arg(long)]
        n_prompts: Option<usize>,
    },
    /// Edit every record independently, one checkpoint per record.
    Edit {
        #[arg(long, value_enum)]
        method: Method,
    },
    /// Score edited checkpoints (or the unedited model) on the records.
    Eval {
        /// Omit to score the unedited model.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Grid of layers and clamps on the sweep records.
    Sweep {
        #[arg(long, value_enum)]
        method: Method,
        /// Bisect for the smallest clamp that reaches the target efficacy.
        #[arg(long)]
        calibrate: bool,
    },
    /// Print the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut config = base.with_overrides(&cli.overrides)?;
    if let Command::Trace { n_prompts: Some(n), .. } = cli.command {
        config.trace.n_prompts = n;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| romelab_cli::CliError::Config(e.to_string()))?;
    let ws = Workspace::from_env(config)?;
    match cli.command {
        Command::World => {
            cmd_world(&ws)?;
        }
        Command::Train => {
            cmd_train(&ws)?;
        }
        Command::Trace { site, disable_mlp, .. } => {
            let site = match site {
                Site::Hidden => TraceSite::Hidden,
                Site::Mlp => TraceSite::Mlp,
                Site::Attn => TraceSite::Attn,
            };
            cmd_trace(&ws, site, disable_mlp)?;
        }
        Command::Edit { method } => {
            cmd_edit(&ws, method.into())?;
        }
        Command::Eval { method } => {
            let report = cmd_eval(&ws, method.map(Into::into))?;
            print!("{}", report.table());
        }
        Command::Sweep { method, calibrate } => {
            if calibrate {
                let r = cmd_calibrate(&ws, method.into())?;
                println!("eps {} (ES {:.3}, target reached: {})", r.eps, r.es, r.reached);
            } else {
                cmd_sweep(&ws, method.into())?;
            }
        }
        Command::Config => println!("{}", serde_json::to_string_pretty(&ws.config)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
