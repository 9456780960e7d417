//! `rlalign`: synthetic data generation, agent training, single-pair
//! alignment, batch evaluation, the classical baseline, and report
//! comparison, all behind one binary.
//!
//! Exit codes: 0 ok, 2 configuration or input problem, 3 I/O failure,
//! 4 numeric abort, 5 malformed file format.

mod align;
mod config;
mod evaluate;
mod gen;
mod report;
mod train;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand};
use rlalign::Error;

/// Set by SIGINT; training checks it between steps and shuts down cleanly.
static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn note_interrupt(_sig: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn install_interrupt_flag() {
    let handler: extern "C" fn(libc::c_int) = note_interrupt;
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

#[derive(Parser)]
#[command(
    name = "rlalign",
    version,
    about = "Rigid alignment of adjacent tomography slices: a Q-learning agent and a classical baseline over the same transform space"
)]
struct Cli {
    /// Worker threads for batch subcommands [default: available cores].
    /// 1 forces sequential runs and zeroes wall-time fields in outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Flat TOML config file. Flags override file values; the merged
    /// effective config is echoed into every output directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic misaligned slice-pair dataset with a truth manifest
    GenData(gen::GenArgs),
    /// Train a Q-network agent on a generated dataset
    Train(train::TrainArgs),
    /// Align one moving image to one fixed image with a trained agent
    Align(align::AlignArgs),
    /// Run a trained agent over a dataset and write per-pair reports
    Evaluate(evaluate::EvalArgs),
    /// Run the derivative-free pattern-search registrar over a dataset
    Baseline(evaluate::BaselineArgs),
    /// Compare two or more report files side by side
    Report(report::ReportArgs),
}

fn run(cli: Cli) -> rlalign::Result<()> {
    let file = match &cli.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let workers = config::resolve_workers(cli.workers, file.workers)?;
    match cli.command {
        Command::GenData(args) => gen::run(args, &file),
        Command::Train(args) => train::run(args, &file, workers, &STOP),
        Command::Align(args) => align::run(args, &file),
        Command::Evaluate(args) => evaluate::run_agent(args, &file, workers),
        Command::Baseline(args) => evaluate::run_baseline(args, &file, workers),
        Command::Report(args) => report::run(args),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 3,
        Error::Numeric(_) => 4,
        Error::Format(_) => 5,
        _ => 2,
    }
}

fn main() {
    install_interrupt_flag();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
