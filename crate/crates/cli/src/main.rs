//! `strokeid`: synthesize touch data, train the stroke identification
//! network and evaluate fused verification.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 an output could
//! not be written, 3 not enough data (a user below the stroke minimum, or
//! nothing left after filtering), 4 training diverged, 5 checkpoint unreadable
//! or inconsistent with the configuration.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use strokeid::ingest::StrokeFilter;
use strokeid::pipeline;
use strokeid::Error;

use config::{FileConfig, Overrides, Resolved};

/// Environment variable holding the log filter (for example `info`).
const LOG_ENV: &str = "STROKEID_LOG";

#[derive(Parser)]
#[command(name = "strokeid", version, about = "Touch-stroke user identification and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic touch CSV to the data path.
    Synth(Common),
    /// Train on the data file; writes the checkpoint and training report to the output directory.
    Train(Common),
    /// Evaluate a checkpoint on the test split; writes the report and one DET CSV per fusion depth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate [default: <out>/checkpoint.txt]
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Touch CSV (written by `synth`, read by `train` and `eval`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory [default: .]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stroke population: all strokes or long strokes only.
    #[arg(long, value_name = "all|long")]
    strokes: Option<StrokeFilter>,
    /// Records per window.
    #[arg(long)]
    window: Option<usize>,
    /// Comma-separated fusion depths, ascending.
    #[arg(long, value_delimiter = ',', value_name = "N,...")]
    fuse: Option<Vec<usize>>,
}

impl Common {
    fn resolve(self, checkpoint: Option<PathBuf>) -> strokeid::Result<Resolved> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let flags = Overrides {
            data: self.data,
            out: self.out,
            checkpoint,
            seed: self.seed,
            strokes: self.strokes,
            window: self.window,
            fuse: self.fuse,
        };
        config::resolve(file, flags)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Output { .. } => 2,
        Error::InsufficientStrokes { .. } | Error::Empty(_) => 3,
        Error::Diverged { .. } => 4,
        Error::Checkpoint(_) | Error::CheckpointMismatch(_) => 5,
        _ => 1,
    }
}

fn require_file(path: &std::path::Path, what: &str) -> strokeid::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn synth(cfg: Resolved) -> strokeid::Result<()> {
    let data = cfg.data()?;
    let summary = pipeline::synth_to_file(&cfg.synth, data)?;
    println!(
        "wrote {}: {} records, {} strokes, {} users",
        data.display(),
        summary.records,
        summary.strokes,
        summary.users
    );
    Ok(())
}

fn train(cfg: Resolved) -> strokeid::Result<()> {
    let data = cfg.data()?;
    require_file(data, "data file")?;
    let summary = pipeline::train_to_dir(data, &cfg.run, &cfg.out)?;
    let best = &summary.report.epochs[summary.report.best_epoch];
    println!("{}", summary.segmentation);
    println!(
        "best epoch {} of {}: val loss {:.5}, val accuracy {:.4}",
        summary.report.best_epoch + 1,
        summary.report.epochs.len(),
        best.val_loss,
        best.val_accuracy
    );
    println!("wrote {}", summary.checkpoint_path.display());
    println!("wrote {}", summary.report_path.display());
    Ok(())
}

fn eval(cfg: Resolved) -> strokeid::Result<()> {
    let data = cfg.data()?;
    require_file(data, "data file")?;
    require_file(&cfg.checkpoint, "checkpoint")?;
    let summary = pipeline::eval_to_dir(data, &cfg.run, &cfg.checkpoint, &cfg.out)?;
    let mut table = Vec::new();
    strokeid::metrics::export_report(&summary.evaluation.report, &mut table)?;
    print!("{}", String::from_utf8_lossy(&table));
    println!("wrote {}", summary.report_path.display());
    for p in &summary.det_paths {
        info!("wrote {}", p.display());
    }
    println!("wrote {} DET curves to {}", summary.det_paths.len(), cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(c) => c.resolve(None).and_then(synth),
        Command::Train(c) => c.resolve(None).and_then(train),
        Command::Eval { common, checkpoint } => common.resolve(checkpoint).and_then(eval),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
