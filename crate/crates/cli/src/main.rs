//! `occam`: object-centric classification experiments from the command line.
//!
//! Every subcommand writes its reports under `--out`. The process exits with
//! 0 when every sample was processed and every requested metric computed, 1
//! when some samples or metrics failed, and 2 on a fatal error.

mod commands;
mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use commands::{ClassifyArgs, DiscoverArgs, FgEvalArgs, FitToyArgs, GapArgs, Globals, SynthArgs};
use report::Format;

#[derive(Debug, Parser)]
#[command(
    name = "occam",
    version,
    about = "Object-centric classification experiments"
)]
struct Cli {
    /// Directory that relative manifest paths resolve against (defaults to
    /// each manifest's own directory).
    #[arg(long, global = true, env = occam_core::backend::manifest::DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    /// Report directory; its parent must exist.
    #[arg(long, global = true, default_value = "occam-out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for per-sample parallelism (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON reports are always written; `csv` adds flat CSV mirrors.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic spurious-background dataset.
    Synth(SynthArgs),
    /// Fit toy centroid heads on unmasked images and write an ensemble config.
    FitToy(FitToyArgs),
    /// Object discovery: FG-ARI and mBO of predicted masks against gt_seg.
    DiscoverEval(DiscoverArgs),
    /// Foreground detection: AUROC of each scoring strategy.
    FgEval(FgEvalArgs),
    /// Classification accuracy and worst-group accuracy over a factor grid.
    ClassifyEval(ClassifyArgs),
    /// Common minus counter accuracy, without masks and with OCCAM.
    Gap(GapArgs),
}

fn prepare_out(out: &PathBuf) -> Result<()> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => std::path::Path::new("."),
    };
    if !parent.is_dir() {
        bail!("parent of --out {} does not exist", out.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn run(cli: Cli) -> Result<usize> {
    prepare_out(&cli.out)?;
    let g = Globals {
        data_root: cli.data_root,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        format: cli.format,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth(&g, a),
        Command::FitToy(a) => commands::fit_toy(&g, a),
        Command::DiscoverEval(a) => commands::discover_eval(&g, a),
        Command::FgEval(a) => commands::fg_eval(&g, a),
        Command::ClassifyEval(a) => commands::classify_eval(&g, a),
        Command::Gap(a) => commands::gap(&g, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("occam: {n} failures, see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("occam: {e:#}");
            ExitCode::from(2)
        }
    }
}
