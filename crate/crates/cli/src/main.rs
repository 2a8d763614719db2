use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grasplab::experiments::Category;
use grasplab_cli::*;

#[derive(Parser)]
#[command(name = "grasplab", version, about = "Planar grasp acquisition: datasets, training, evaluation, rendering")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (comments allowed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, overriding the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample pre-grasps for every object and split them into train and test sets.
    Dataset,
    /// Train a policy on one object's train split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "disk")]
        object: String,
        /// Continue from this checkpoint; iteration numbering carries on.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with its mean action.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Restrict to one object.
        #[arg(long)]
        object: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Write one episode trace per pre-grasp.
        #[arg(long)]
        traces: bool,
    },
    /// Physics-score and constant-torque baselines.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        object: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Draw SVG frames from an episode trace.
    Render {
        #[arg(long)]
        trace: PathBuf,
        /// Draw every k-th step, overriding the config.
        #[arg(long)]
        every: Option<usize>,
    },
    /// Run an experiment category end to end.
    Experiment {
        #[arg(long, value_enum)]
        category: Option<CategoryArg>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CategoryArg {
    SinglePregrasp,
    MultiPregrasp,
    MultiPregraspNoise,
}

impl From<CategoryArg> for Category {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::SinglePregrasp => Category::SinglePregrasp,
            CategoryArg::MultiPregrasp => Category::MultiPregrasp,
            CategoryArg::MultiPregraspNoise => Category::MultiPregraspNoise,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let inv = Invocation { config_path: cli.common.config, seed: cli.common.seed, workers: cli.common.workers, out: cli.common.out };
    let mut p = prepare(&inv)?;
    match cli.command {
        Command::Dataset => {
            let path = cmd_dataset(&p)?;
            println!("wrote {}", path.display());
        }
        Command::Train { dataset, object, resume } => {
            let out = cmd_train(&p, &TrainArgs { dataset, object, resume })?;
            if let Some(m) = out.metrics.last() {
                println!(
                    "iteration {} timesteps {} mean return {:.3} success {:.2}",
                    m.iteration, m.timesteps, m.mean_return, m.success_rate
                );
            }
            for c in &out.checkpoint_paths {
                println!("wrote {}", c.display());
            }
        }
        Command::Eval { dataset, checkpoint, object, split, traces } => {
            let t = cmd_eval(&p, &EvalArgs { dataset, checkpoint, object, split, traces })?;
            print!("{}", t.to_text());
        }
        Command::Baseline { dataset, object, split } => {
            let t = cmd_baseline(&p, &BaselineArgs { dataset, object, split })?;
            print!("{}", t.to_text());
        }
        Command::Render { trace, every } => {
            if let Some(k) = every {
                if k == 0 {
                    return Err(CliError::Validation("--every must be >= 1".into()));
                }
                p.config.render.every = k;
            }
            let frames = cmd_render(&p, &trace)?;
            println!("wrote {} frames", frames.len());
        }
        Command::Experiment { category } => {
            let t = cmd_experiment(&p, category.map(Category::from))?;
            print!("{}", t.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
