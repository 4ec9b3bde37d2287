use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mct::error::Result;
use mct::experiment::{self, ExperimentConfig, TransferMode};
use mct::metrics::MapMode;

#[derive(Parser)]
#[command(name = "mct", version, about = "Hyperspectral pixel classification with center-mask pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Record the run as deterministic (all kernels reduce in a fixed order).
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Weight transfer from `init_checkpoint`: full, partial or none.
    #[arg(long)]
    transfer: Option<TransferMode>,
    /// Pretraining checkpoint to initialise from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw interleaved binary + JSON sidecar → .hsic / .hsig
    Convert {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        sidecar: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw the stratified train/test split
    Split(Common),
    /// Center-mask pretraining on the whole scene
    Pretrain(Common),
    /// Fine-tune and evaluate a classifier
    Train(Common),
    /// Evaluate a fine-tuned checkpoint on the test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render a classification map (PPM)
    Map {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_map_mode, default_value = "labeled")]
        map_mode: MapMode,
    },
}

fn parse_map_mode(s: &str) -> std::result::Result<MapMode, String> {
    match s {
        "labeled" => Ok(MapMode::Labeled),
        "full" => Ok(MapMode::Full),
        _ => Err(format!("expected labeled or full, got {s}")),
    }
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if c.deterministic {
        cfg.deterministic = true;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = c.transfer {
        cfg.transfer = t;
    }
    if let Some(p) = &c.init {
        cfg.init_checkpoint = Some(p.clone());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    experiment::init_threads()?;
    match cli.command {
        Command::Convert { raw, sidecar, out } => {
            experiment::cmd_convert(&raw, &sidecar, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Split(c) => {
            let s = experiment::cmd_split(&resolve(&c)?)?;
            println!("train {} / test {} → {}", s.split.train.len(), s.split.test.len(), s.path.display());
        }
        Command::Pretrain(c) => {
            let p = experiment::cmd_pretrain(&resolve(&c)?)?;
            println!(
                "final epoch loss {:.5} → {}",
                p.epoch_losses.last().copied().unwrap_or(f64::NAN),
                p.checkpoint.display()
            );
        }
        Command::Train(c) => {
            let t = experiment::cmd_train(&resolve(&c)?)?;
            let m = &t.metrics;
            println!("OA {:.4}  AA {:.4}  kappa {:.4} → {}", m.oa, m.aa, m.kappa, t.checkpoint.display());
        }
        Command::Eval { common, checkpoint } => {
            let m = experiment::cmd_eval(&resolve(&common)?, checkpoint.as_deref())?;
            println!("OA {:.4}  AA {:.4}  kappa {:.4}", m.oa, m.aa, m.kappa);
        }
        Command::Map {
            common,
            checkpoint,
            map_mode,
        } => {
            let out = experiment::cmd_map(&resolve(&common)?, checkpoint.as_deref(), map_mode)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
