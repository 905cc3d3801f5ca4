//! `polyfair`: run, sweep, generate and replay fairness re-ranking experiments.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use polyfair::evaluation::evaluate_fold;
use polyfair::io::dataset::{load_bundle, write_raw, DatasetBundle, FoldSpec};
use polyfair::io::output::{
    read_lists, replay_lists_dir, write_outputs, write_summaries, write_summary, SUMMARY_FILE,
};
use polyfair::simulator::prepare_fold;
use polyfair::{generate_synthetic, run_experiment, Cell, ExperimentConfig, SyntheticSpec};

#[derive(Parser)]
#[command(name = "polyfair", version, about)]
struct Cli {
    /// Worker threads for folds and cells (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baseline and the configured allocation/choice cell.
    Run(RunArgs),
    /// Run the baseline and every allocation x choice combination.
    Sweep(RunArgs),
    /// Write a synthetic dataset and a matching experiment.toml.
    Synth(SynthArgs),
    /// Re-evaluate delivered lists written by `run` or `sweep`.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML); data paths resolve relative to it.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.folds`.
    #[arg(long, value_name = "M")]
    folds: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings (TOML); defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    spec: Option<PathBuf>,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the data files and experiment.toml.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// A `lists` directory (one subdirectory per cell) or a single lists file.
    #[arg(long, value_name = "PATH")]
    lists: PathBuf,
    /// Fold of a single lists file.
    #[arg(long, requires_all = ["allocation", "choice"])]
    fold: Option<usize>,
    /// Allocation label written into the summary row of a single lists file.
    #[arg(long)]
    allocation: Option<String>,
    /// Choice label written into the summary row of a single lists file.
    #[arg(long)]
    choice: Option<String>,
    /// Output directory for the summary tables.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

impl ExperimentArgs {
    fn load(&self) -> Result<(ExperimentConfig, DatasetBundle)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        if let Some(folds) = self.folds {
            config.run.folds = folds;
        }
        config.validate()?;
        let spec = FoldSpec {
            folds: config.run.folds,
            seed: config.run.seed,
        };
        let bundle = load_bundle(&config.data, spec, config.like)?;
        info!(
            "loaded {} items, {} ratings",
            bundle.catalog.len(),
            bundle.ratings.len()
        );
        Ok((config, bundle))
    }
}

fn experiment(args: &RunArgs, grid: bool) -> Result<()> {
    let (config, bundle) = args.experiment.load()?;
    let cells = if grid {
        Cell::grid(&config)
    } else {
        Cell::for_run(&config)
    };
    info!(
        "running {} cells over {} folds",
        cells.len(),
        config.run.folds
    );
    let result = run_experiment(&bundle, &config, &cells)?;
    write_outputs(&result, &config, &args.out)?;
    println!("{}", args.out.join(SUMMARY_FILE).display());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SyntheticSpec>(&text)
                .with_context(|| format!("invalid synthetic spec {}", path.display()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let raw = generate_synthetic(&spec)?;
    write_raw(&raw, &args.out)?;
    let config = args.out.join("experiment.toml");
    fs::write(&config, spec.experiment_config().to_toml())
        .with_context(|| format!("writing {}", config.display()))?;
    println!("{}", config.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (config, bundle) = args.experiment.load()?;
    if args.lists.is_dir() {
        let cells = replay_lists_dir(&bundle, &config, &args.lists)?;
        if cells.is_empty() {
            bail!("{}: no cell directories found", args.lists.display());
        }
        write_summaries(&args.out, &config.agents, &cells)?;
    } else {
        let (Some(fold), Some(allocation), Some(choice)) =
            (args.fold, &args.allocation, &args.choice)
        else {
            bail!("a single lists file needs --fold, --allocation and --choice");
        };
        if fold >= config.run.folds {
            bail!(
                "--fold {fold} is out of range for {} folds",
                config.run.folds
            );
        }
        let context = prepare_fold(&bundle, &config, fold)?;
        let lists = read_lists(&args.lists)?;
        let summary = evaluate_fold(
            (allocation, choice),
            fold,
            &lists,
            &context.relevance,
            &config.agents,
            &bundle.catalog,
            config.run.n,
        )?;
        fs::create_dir_all(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))?;
        write_summary(&args.out.join(SUMMARY_FILE), &config.agents, &[summary])?;
    }
    println!("{}", args.out.join(SUMMARY_FILE).display());
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Run(args) => experiment(args, false),
        Command::Sweep(args) => experiment(args, true),
        Command::Synth(args) => synth(args),
        Command::Eval(args) => eval(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
