//! `shapelinker` command-line pipelines.
//!
//! Exit status: 0 on success, 2 for input errors, 3 for numeric or training
//! failures.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "shapelinker", version, about = "Shape-conditioned linker design pipelines")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SHAPELINKER_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding `rng_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the molecular surface of an XYZ or molfile into an XYZ cloud.
    Surface {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write synthetic self-alignment pairs and their manifest.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        /// Entries at the end of the manifest marked for validation.
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the point-cloud aligner on a manifest of XYZ pairs.
    TrainAligner {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Align a query cloud onto a reference cloud.
    Align {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Also run the RANSAC baseline.
        #[arg(long)]
        ransac: bool,
        /// RANSAC iterations (config default otherwise).
        #[arg(long)]
        iters: Option<usize>,
        /// Directory for `alignment.json`; printed to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score linker SMILES against a reference cloud.
    Score {
        /// One SMILES per line.
        #[arg(long)]
        smiles: PathBuf,
        /// JSON array, one `{linker_atoms, attachments}` or null per line.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain (or load) a prior, optimize an agent and sample from it.
    Rl {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Validity, uniqueness, novelty and shape metrics of generated SMILES.
    Eval {
        #[arg(long)]
        smiles: PathBuf,
        #[arg(long)]
        reference_smiles: PathBuf,
        /// CSV with a `cd` column and either `similarity` or `smiles`.
        #[arg(long)]
        cd: Option<PathBuf>,
        /// Linker SMILES to compare against when the CSV has no `similarity`.
        #[arg(long)]
        linker: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Surface { input, out, common } => commands::surface(&input, &out, &common),
        Command::MakeSynthetic { out, val, common } => commands::make_synthetic(&out, val, &common),
        Command::TrainAligner { manifest, out, common } => commands::train_aligner(&manifest, &out, &common),
        Command::Align {
            checkpoint,
            query,
            reference,
            ransac,
            iters,
            out,
            common,
        } => commands::align(&checkpoint, &query, &reference, ransac, iters, out.as_deref(), &common),
        Command::Score {
            smiles,
            annotations,
            reference,
            checkpoint,
            out,
            common,
        } => commands::score(&smiles, annotations.as_deref(), &reference, &checkpoint, &out, &common),
        Command::Rl { out, common } => commands::rl(&out, &common),
        Command::Eval {
            smiles,
            reference_smiles,
            cd,
            linker,
            out,
            common,
        } => commands::eval(&smiles, &reference_smiles, cd.as_deref(), linker.as_deref(), out.as_deref(), &common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(io::exit_code(&e) as u8)
        }
    }
}
