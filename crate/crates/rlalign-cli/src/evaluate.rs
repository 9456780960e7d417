//! `evaluate` and `baseline`: batch runs over a dataset, one report per
//! pair, with summary statistics written as CSV and aligned text.
//!
//! Both subcommands emit the same report shape so `report` can compare them
//! directly. Wall-time fields are measured only when more than one worker is
//! requested; `--workers 1` zeroes them for byte-stable outputs.

use std::path::{Path, PathBuf};

use clap::Args;
use rlalign::baseline::{BaselineConfig, BaselineMetric};
use rlalign::dataset;
use rlalign::evalkit::{self, EpisodeReport};
use rlalign::neural::load_checkpoint;
use rlalign::{Error, Result};
use serde::Serialize;

use crate::config::{self, EnvEcho, FileConfig};

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory or manifest path
    #[arg(long)]
    pub data: PathBuf,

    /// Trained agent checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,

    /// Output directory [default: eval_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Method label stamped on reports [default: the checkpoint tag]
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Args)]
pub struct BaselineArgs {
    /// Dataset directory or manifest path
    #[arg(long)]
    pub data: PathBuf,

    /// Output directory [default: baseline_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Search objective: nmi, correlation, or dissimilarity [default: nmi]
    #[arg(long)]
    pub metric: Option<String>,

    /// Multi-start grid size [default: 9]
    #[arg(long)]
    pub starts: Option<usize>,

    /// Objective evaluation budget per start [default: 600]
    #[arg(long)]
    pub max_evals: Option<usize>,
}

#[derive(Serialize)]
struct AgentEffective {
    command: String,
    data: String,
    ckpt: String,
    method: String,
    workers: usize,
    #[serde(flatten)]
    env: EnvEcho,
}

#[derive(Serialize)]
struct BaselineEffective {
    command: String,
    data: String,
    workers: usize,
    metric: String,
    starts: usize,
    max_evals: usize,
    initial_step: f64,
    initial_step_deg: f64,
    shrink: f64,
    tol: f64,
    start_extent: f64,
    nmi_bins: usize,
}

fn write_outputs(out_dir: &Path, reports: &[EpisodeReport]) -> Result<()> {
    evalkit::write_reports(&out_dir.join("reports.jsonl"), reports)?;
    std::fs::write(out_dir.join("summary.csv"), evalkit::summary_csv(reports)?)?;
    let text = evalkit::summary_text(reports)?;
    std::fs::write(out_dir.join("summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn run_agent(args: EvalArgs, file: &FileConfig, workers: usize) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let pairs = dataset::load_all(&config::manifest_path(&args.data))?;
    if pairs.is_empty() {
        return Err(Error::Input(format!(
            "no pairs in {}",
            config::manifest_path(&args.data).display()
        )));
    }
    let ncfg = ckpt.net.config();
    let env_cfg = config::env_config(file, ncfg.in_channels);
    let method = args.method.clone().unwrap_or_else(|| {
        if ckpt.tag.is_empty() {
            "agent".into()
        } else {
            ckpt.tag.clone()
        }
    });

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("eval_out"));
    std::fs::create_dir_all(&out_dir)?;
    config::write_effective(
        &out_dir,
        &AgentEffective {
            command: "evaluate".into(),
            data: args.data.display().to_string(),
            ckpt: args.ckpt.display().to_string(),
            method: method.clone(),
            workers,
            env: EnvEcho::from(&env_cfg),
        },
    )?;

    let reports =
        evalkit::evaluate_agent(&pairs, &ckpt.net, &env_cfg, &method, workers, workers != 1)?;
    write_outputs(&out_dir, &reports)
}

pub fn run_baseline(args: BaselineArgs, file: &FileConfig, workers: usize) -> Result<()> {
    let mut cfg = BaselineConfig::default();
    if let Some(s) = args.metric.as_deref().or(file.metric.as_deref()) {
        cfg.metric = BaselineMetric::parse(s)?;
    }
    cfg.starts = config::pick(args.starts, file.starts, cfg.starts);
    cfg.max_evals = config::pick(args.max_evals, file.max_evals, cfg.max_evals);
    if let Some(v) = file.initial_step {
        cfg.initial_step.0 = v;
        cfg.initial_step.1 = v;
        cfg.initial_step.2 = v;
    }
    if let Some(v) = file.initial_step_deg {
        cfg.initial_step.2 = v;
    }
    if let Some(v) = file.shrink {
        cfg.shrink = v;
    }
    if let Some(v) = file.tol {
        cfg.tol = v;
    }
    if let Some(v) = file.start_extent {
        cfg.start_extent = v;
    }
    if let Some(v) = file.nmi_bins {
        cfg.similarity.nmi_bins = v;
    }
    cfg.validate()?;

    let pairs = dataset::load_all(&config::manifest_path(&args.data))?;
    if pairs.is_empty() {
        return Err(Error::Input(format!(
            "no pairs in {}",
            config::manifest_path(&args.data).display()
        )));
    }

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("baseline_out"));
    std::fs::create_dir_all(&out_dir)?;
    config::write_effective(
        &out_dir,
        &BaselineEffective {
            command: "baseline".into(),
            data: args.data.display().to_string(),
            workers,
            metric: cfg.metric.label().into(),
            starts: cfg.starts,
            max_evals: cfg.max_evals,
            initial_step: cfg.initial_step.0,
            initial_step_deg: cfg.initial_step.2,
            shrink: cfg.shrink,
            tol: cfg.tol,
            start_extent: cfg.start_extent,
            nmi_bins: cfg.similarity.nmi_bins,
        },
    )?;

    let reports = evalkit::evaluate_baseline(&pairs, &cfg, workers, workers != 1)?;
    write_outputs(&out_dir, &reports)
}
