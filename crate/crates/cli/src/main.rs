use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ckgan::config::RunConfig;
use ckgan::data::DatasetKind;
use ckgan_cli::{self as cli, EvalArgs, Grid, TrainArgs};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ckgan", version, about = "Characteristic-kernel GAN on 2D mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics of a checkpoint's generator, or of real data with --real.
    Eval {
        #[arg(long, required_unless_present = "real")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<DatasetKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        real: bool,
        /// Also write the row to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write generator samples as `x,y` CSV.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train over a grid of config overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON object mapping config keys to arrays of values.
        #[arg(long)]
        grid: PathBuf,
        /// Repetitions per cell with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dataset utilities.
    Data {
        #[command(subcommand)]
        command: DataCommand,
    },
}

#[derive(Subcommand)]
enum DataCommand {
    /// Write real samples as `x,y` CSV.
    Export {
        #[arg(long)]
        dataset: DatasetKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> ckgan::Result<RunConfig> {
    let mut c = RunConfig::load(path)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn run(cli: Cli) -> ckgan::Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            checkpoint,
        } => {
            let config = load(&config, seed)?;
            let out = cli::resolve_out(out.as_ref().unwrap_or(&config.output_dir));
            let outcome = cli::train(TrainArgs {
                config,
                out,
                resume: checkpoint,
            })?;
            eprintln!("wrote {}", outcome.out.display());
        }
        Command::Eval {
            checkpoint,
            config,
            dataset,
            n,
            seed,
            real,
            out,
        } => {
            let config = config.map(|p| RunConfig::load(&p)).transpose()?;
            let row = cli::eval(EvalArgs {
                checkpoint,
                config,
                dataset,
                n,
                seed,
                real,
            })?;
            cli::write_eval(out.map(|p| cli::resolve_out(&p)).as_deref(), &row)?;
        }
        Command::Sample {
            checkpoint,
            n,
            out,
            seed,
        } => cli::sample(&checkpoint, n, seed, &cli::resolve_out(&out))?,
        Command::Sweep {
            config,
            grid,
            seeds,
            out,
        } => {
            let config = load(&config, None)?;
            let text = std::fs::read_to_string(&grid)
                .map_err(|e| ckgan::Error::Config(format!("cannot read grid {}: {e}", grid.display())))?;
            let grid = Grid::from_json(&text)?;
            let out = cli::resolve_out(out.as_ref().unwrap_or(&config.output_dir));
            let path = cli::sweep(&config, &grid, seeds, &out)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Data {
            command:
                DataCommand::Export {
                    dataset,
                    n,
                    out,
                    seed,
                    config,
                },
        } => {
            let mut c = match config {
                Some(p) => load(&p, seed)?,
                None => RunConfig::default(),
            };
            c.dataset = dataset;
            if let Some(s) = seed {
                c.seed = s;
            }
            cli::export_data(&c, n, &cli::resolve_out(&out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
