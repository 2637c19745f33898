use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use reuse_core::pipeline::{self, stage_markers};
use reuse_core::timeline::DEFAULT_MIN_TIME;
use reuse_core::{Error, PipelineConfig, Stage};

const EXIT_USAGE: u8 = 1;
const EXIT_STAGE_FAILURE: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

/// Finds whole-file copies across a corpus of git repositories.
#[derive(Parser, Debug)]
#[command(name = "reuse-tracer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the requested pipeline stages, skipping those already up to date.
    Run(PipelineArgs),
    /// Write the Ptb2PtFull release files from finished detection output.
    Export(PipelineArgs),
    /// Run the pipeline and compare its output with a direct recomputation.
    Verify(PipelineArgs),
    /// Show the stage markers and counts stored in a work directory.
    Report {
        #[arg(long)]
        work_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Tab-separated `project<TAB>repository path` lines.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    work_dir: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    /// Commit times before this (unix seconds) are treated as bogus.
    #[arg(long, default_value_t = DEFAULT_MIN_TIME, allow_negative_numbers = true)]
    min_time: i64,
    /// Commit times after this are treated as bogus. Defaults to the ingest time.
    #[arg(long, allow_negative_numbers = true)]
    max_time: Option<i64>,
    /// Extra blob ids (one per line) to ignore, on top of the empty blob.
    #[arg(long)]
    exclude_blobs: Option<PathBuf>,
    /// Comma-separated subset of ingest,defork,timeline,detect,export.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<Stage>>,
    /// Rerun stages even when their markers are current.
    #[arg(long)]
    force: bool,
    /// Version tag in release file names.
    #[arg(long, default_value = reuse_core::export::DEFAULT_TAG)]
    tag: String,
    /// Sort buffer per worker, in MiB.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    memory_mb: u64,
}

impl PipelineArgs {
    fn config(self, default_stages: &[Stage]) -> PipelineConfig {
        let mut c = PipelineConfig::new(self.manifest, self.work_dir);
        c.workers = self.workers as usize;
        c.min_time = self.min_time;
        c.max_time = self.max_time;
        c.exclude_blobs_path = self.exclude_blobs;
        c.stages = match self.stages {
            Some(s) => s.into_iter().collect(),
            None => default_stages.iter().copied().collect::<BTreeSet<_>>(),
        };
        c.force = self.force;
        c.tag = self.tag;
        c.memory_budget = (self.memory_mb as usize) << 20;
        c
    }
}

fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::Manifest { .. } => ExitCode::from(EXIT_USAGE),
        _ => ExitCode::from(EXIT_STAGE_FAILURE),
    }
}

fn run(config: &PipelineConfig) -> ExitCode {
    if let Err(e) = config.validate() {
        return failure(&e);
    }
    match pipeline::run(config) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => failure(&e),
    }
}

fn verify(config: &PipelineConfig) -> ExitCode {
    if let Err(e) = config.validate() {
        return failure(&e);
    }
    match pipeline::verify(config) {
        Ok(report) => {
            println!("{report}");
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_MISMATCH)
            }
        }
        Err(e) => failure(&e),
    }
}

fn report(work_dir: &std::path::Path) -> ExitCode {
    let markers = match stage_markers(work_dir) {
        Ok(m) => m,
        Err(e) => return failure(&e),
    };
    for (stage, marker) in markers {
        match marker {
            None => println!("{stage}: not run"),
            Some(m) => {
                println!("{stage}: complete (output {})", &m.output_hash[..12]);
                for (k, v) in &m.counts {
                    println!("  {k:<24} {v}");
                }
            }
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match cli.command {
        Command::Run(args) => run(&args.config(&Stage::ALL)),
        Command::Export(args) => run(&args.config(&[Stage::Export])),
        Command::Verify(args) => verify(&args.config(&Stage::ALL)),
        Command::Report { work_dir } => report(&work_dir),
    }
}
