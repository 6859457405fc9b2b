//! `helm-rl`: train, simulate, evaluate and compare ship path-following
//! controllers.
//!
//! Exit codes: 0 success, 1 configuration error or missing checkpoint,
//! 2 a run that failed (blow-up or uncaptured waypoints), 3 training failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "helm-rl", version, about = "Ship path following: MMG simulator, PPO agent and ILOS/PD baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every run command.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON config overriding the built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (defaults to the config's `output.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Pd,
    Ppo,
}

impl ControllerKind {
    fn label(self) -> &'static str {
        match self {
            ControllerKind::Pd => "pd",
            ControllerKind::Ppo => "ppo",
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario closed-loop and write its trajectory and metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario name (see `scenarios list`).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum, default_value = "pd")]
        controller: ControllerKind,
        /// Policy checkpoint, required for the PPO controller.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train a policy, checkpointing every iteration, then select one.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `ppo.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint on fresh random single-goal episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
    /// Run two controllers on one scenario and report the RMS reduction.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Candidate controller.
        #[arg(long, value_enum, default_value = "ppo")]
        a: ControllerKind,
        /// Reference controller.
        #[arg(long, value_enum, default_value = "pd")]
        b: ControllerKind,
    },
    /// Scenario catalogue.
    Scenarios {
        #[command(subcommand)]
        action: ScenariosAction,
    },
}

#[derive(Debug, Subcommand)]
enum ScenariosAction {
    /// Print every scenario name with its geometry.
    List {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Simulate { common, scenario, controller, checkpoint } => {
            commands::simulate(&common, scenario.as_deref(), controller, checkpoint.as_deref())
        }
        Command::Train { common, iterations } => commands::train(&common, iterations),
        Command::Eval { common, checkpoint, episodes } => commands::eval(&common, &checkpoint, episodes),
        Command::Compare { common, scenario, checkpoint, a, b } => {
            commands::compare(&common, scenario.as_deref(), checkpoint.as_deref(), a, b)
        }
        Command::Scenarios { action: ScenariosAction::List { config } } => commands::list_scenarios(config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
