//! `sparseseg`: scenes, annotations, downsampling, gradient statistics,
//! training and evaluation from the command line. Every command writes its
//! outputs and a `manifest.json` into `--out`.

mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use sparseseg::Error;

use commands::*;
use manifest::{RunManifest, MANIFEST_FILE};

/// Number of worker threads; unset means one per core.
const THREADS_ENV: &str = "SPARSESEG_THREADS";

#[derive(Parser)]
#[command(name = "sparseseg", version, about = "Weakly supervised point cloud segmentation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labelled scenes.
    Gen {
        #[command(flatten)]
        args: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the sparse annotations of a scene.
    Annotate {
        #[command(flatten)]
        args: AnnotateArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxel downsampling with one of the rr/rl/ll/lr strategies.
    Downsample {
        #[command(flatten)]
        args: DownsampleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampled-gradient deviation statistics on a frozen model.
    Gradlab {
        #[command(flatten)]
        args: GradlabArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from sparse labels.
    Train {
        #[command(flatten)]
        args: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a densely labelled cloud.
    Eval {
        #[command(flatten)]
        args: EvalArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired baseline / mde_at sweep over label rate and cluster count.
    Bench {
        #[command(flatten)]
        args: BenchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output directory; defaults to the manifest's own directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn params<T: DeserializeOwned>(m: &RunManifest, path: &Path) -> Result<T, Error> {
    serde_json::from_value(m.params.clone()).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: format!("bad parameters for {}: {e}", m.command),
    })
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let m = RunManifest::read(path)?;
    let out = out.unwrap_or_else(|| {
        path.parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    match m.command.as_str() {
        "gen" => gen(&params(&m, path)?, &out),
        "annotate" => annotate(&params(&m, path)?, &out),
        "downsample" => downsample(&params(&m, path)?, &out),
        "gradlab" => gradlab(&params(&m, path)?, &out),
        "train" => train_cmd(&params(&m, path)?, &out),
        "eval" => eval(&params(&m, path)?, &out),
        "bench" => bench(&params(&m, path)?, &out),
        other => Err(Error::Format {
            path: path.to_owned(),
            message: format!("unknown command {other:?}"),
        }),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { args, out } => gen(&args, &out),
        Command::Annotate { args, out } => annotate(&args, &out),
        Command::Downsample { args, out } => downsample(&args, &out),
        Command::Gradlab { args, out } => gradlab(&args, &out),
        Command::Train { args, out } => train_cmd(&args, &out),
        Command::Eval { args, out } => eval(&args, &out),
        Command::Bench { args, out } => bench(&args, &out),
        Command::Replay { manifest, out } => {
            let manifest = if manifest.is_dir() {
                manifest.join(MANIFEST_FILE)
            } else {
                manifest
            };
            replay(&manifest, out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
