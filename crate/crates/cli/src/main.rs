//! Batch pipeline driver: preprocess scans, sample the implicit field,
//! adapt meshes around the surface, extract the zero level set.
//!
//! Exit codes: 0 success, 2 I/O or parse failure, 3 configuration error,
//! 4 unmet data precondition, 5 internal assertion.

mod commands;
mod pipeline;

use clap::{Parser, Subcommand};
use pssmesh::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pssmesh", version, about = "Anisotropic meshes around point-sampled surfaces")]
struct Cli {
    /// Cap the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print machine-readable JSON stats on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter outliers, subsample, estimate and orient normals.
    Preprocess(commands::PreprocessArgs),
    /// Sample the signed field on a grid and write structured-points VTK.
    Field(commands::FieldArgs),
    /// Run the iterative adaptation loop and write mesh + level set.
    Adapt(commands::AdaptArgs),
    /// Run preprocess, adapt and extraction from one JSON config file.
    Pipeline(PipelineArgs),
}

#[derive(clap::Args)]
pub struct PipelineArgs {
    /// Declarative configuration; see the README for the schema.
    pub config: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse { .. } => 2,
        Error::InvalidParameter(_) => 3,
        Error::EmptyCloud
        | Error::MissingNormals
        | Error::MissingScanOrigins
        | Error::DegenerateNeighborhood { .. }
        | Error::DegenerateStar { .. }
        | Error::NotAnEdge(..)
        | Error::OutsideMesh(_) => 4,
        Error::InvalidMesh(_) | Error::Internal(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            eprintln!("error: thread pool already initialized");
            return ExitCode::from(3);
        }
    }
    let result = match &cli.command {
        Command::Preprocess(args) => commands::run_preprocess(args, cli.json),
        Command::Field(args) => commands::run_field(args, cli.json),
        Command::Adapt(args) => commands::run_adapt(args, cli.json),
        Command::Pipeline(args) => pipeline::run(args, cli.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
