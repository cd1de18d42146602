use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sparserob_cli::config::{ExperimentConfig, Overrides, Task};
use sparserob_cli::{report, runner, CliError};

#[derive(Parser)]
#[command(
    name = "sparserob",
    version,
    about = "Measure how weight and activation sparsity affect the adversarial \
             robustness of linear and ReLU classifiers."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every config-driven experiment stage.
#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Write artifacts here instead of the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated seeds overriding the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// MNIST root directory (also settable via SPARSE_ROB_DATA).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Checkpoint directory for attack/lipschitz evaluation.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    /// Dense-training iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Prune/retrain round count.
    #[arg(long)]
    rounds: Option<usize>,
    /// Retraining iterations per pruning round.
    #[arg(long)]
    retrain_iterations: Option<usize>,
    /// Evaluate attacks on only the first N eval examples (0 = all).
    #[arg(long)]
    subset: Option<usize>,
    /// L1 penalty on hidden activations during training.
    #[arg(long)]
    activation_l1_lambda: Option<f64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output_dir: self.output_dir.clone(),
            seeds: self.seeds.clone(),
            data_root: self.data_root.clone(),
            models_dir: self.models_dir.clone(),
            iterations: self.iterations,
            rounds: self.rounds,
            retrain_iterations: self.retrain_iterations,
            subset: self.subset,
            activation_l1_lambda: self.activation_l1_lambda,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one dense model per seed and checkpoint it.
    Train(RunArgs),
    /// Train, then run the iterative magnitude-prune/retrain pipeline.
    PruneSweep(RunArgs),
    /// Run the configured attacks on every checkpoint under models_dir.
    Attack(RunArgs),
    /// Certify margins of checkpoints via local Lipschitz bounds.
    Lipschitz(RunArgs),
    /// Check the margin identities and robustness bounds on linear models.
    Theorems(RunArgs),
    /// Full pipeline: train, prune, attack every stage, render curves.
    Figure(RunArgs),
    /// Aggregate attack CSVs from finished runs into mean ± std tables.
    Report {
        /// Run directories (each holding manifest.csv and attack_eval.csv).
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write report.csv (default: <first dir>/report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: &Command) -> Result<(), CliError> {
    if let Command::Report { dirs, out } = command {
        let out_path = out
            .clone()
            .unwrap_or_else(|| dirs[0].join("report.csv"));
        let table = report::aggregate(dirs, &out_path)?;
        print!("{table}");
        println!("wrote {}", out_path.display());
        return Ok(());
    }
    let (args, task) = match command {
        Command::Train(a) => (a, Task::Train),
        Command::PruneSweep(a) => (a, Task::PruneSweep),
        Command::Attack(a) => (a, Task::AttackEval),
        Command::Lipschitz(a) => (a, Task::LipschitzEval),
        Command::Theorems(a) => (a, Task::TheoremCheck),
        Command::Figure(a) => (a, Task::FullFigure),
        Command::Report { .. } => unreachable!("handled above"),
    };
    let cfg = ExperimentConfig::load(&args.config, &args.overrides())?;
    if let Some(declared) = cfg.task {
        if declared != task {
            log::warn!(
                "config declares task {declared:?} but the {task:?} subcommand was invoked"
            );
        }
    }
    runner::run_task(&cfg, task)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
