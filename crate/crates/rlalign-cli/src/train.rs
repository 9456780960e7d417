//! `train`: fit a Q-network to a generated dataset.
//!
//! Epoch records stream to `train_log.jsonl` (and stdout) as they finish,
//! and every epoch also drops a checkpoint, so an interrupt or a numeric
//! abort never loses more than the epoch in flight. SIGINT flips a flag the
//! trainer honours between steps; the epoch so far is flushed before exit.

use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use clap::Args;
use rlalign::agent::{cycling_source, AgentConfig, EpochRecord, ExplorationSchedule, TrainObserver, Variant};
use rlalign::dataset;
use rlalign::neural::{
    save_checkpoint, AdamState, Checkpoint, QNetwork, QNetworkConfig,
};
use rlalign::rlenv::RewardForm;
use rlalign::{Error, Image2D, Result, RigidTransform2D};
use serde::Serialize;

use crate::config::{self, EnvEcho, FileConfig};

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest path
    #[arg(long)]
    pub data: PathBuf,

    /// Directory for checkpoints and the epoch log [default: train_out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Final checkpoint path [default: <out-dir>/checkpoint.ckpt]
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Sizing preset, desk or paper-scale [default: desk]
    #[arg(long)]
    pub preset: Option<String>,

    /// Q-learning variant: dqn, double, dueling, double-dueling [default: preset]
    #[arg(long)]
    pub variant: Option<String>,

    /// Reward signal, unsupervised or supervised [default: unsupervised]
    #[arg(long)]
    pub reward_mode: Option<String>,

    /// Reward form, signed or abs [default: signed]
    #[arg(long)]
    pub reward_form: Option<String>,

    /// Exploration schedule, standard or compressed [default: compressed for
    /// the desk preset, standard for paper-scale]
    #[arg(long)]
    pub schedule: Option<String>,

    /// Discount factor [default: 0.9]
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,

    /// Transitions per gradient update [default: preset]
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Training epochs [default: preset]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Environment steps per epoch [default: preset]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,

    /// Stored transitions before updates begin [default: preset]
    #[arg(long)]
    pub warmup: Option<usize>,

    /// Replay buffer capacity [default: preset]
    #[arg(long)]
    pub replay_capacity: Option<usize>,

    /// Environment steps between target-network refreshes [default: 2500]
    #[arg(long)]
    pub target_sync_every: Option<usize>,

    /// Environment steps per gradient update [default: preset]
    #[arg(long)]
    pub update_every: Option<usize>,

    /// Base seed [default: RLALIGN_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Effective {
    command: String,
    seed: u64,
    data: String,
    preset: String,
    variant: String,
    reward_mode: String,
    reward_form: String,
    schedule: String,
    gamma: f64,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    steps_per_epoch: usize,
    warmup: usize,
    replay_capacity: usize,
    target_sync_every: usize,
    update_every: usize,
    #[serde(flatten)]
    env: EnvEcho,
}

/// Streams epoch records to the log file and stdout and keeps the most
/// recent per-epoch checkpoint path for crash reporting.
struct DiskObserver {
    log: std::io::BufWriter<std::fs::File>,
    out_dir: PathBuf,
    tag: String,
    last_checkpoint: Option<PathBuf>,
}

impl DiskObserver {
    fn new(out_dir: &PathBuf, tag: String) -> Result<Self> {
        let log = std::io::BufWriter::new(std::fs::File::create(out_dir.join("train_log.jsonl"))?);
        Ok(DiskObserver {
            log,
            out_dir: out_dir.clone(),
            tag,
            last_checkpoint: None,
        })
    }
}

impl TrainObserver for DiskObserver {
    fn epoch(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Data(format!("cannot serialize epoch record: {e}")))?;
        writeln!(self.log, "{line}")?;
        self.log.flush()?;
        println!("{line}");
        Ok(())
    }

    fn checkpoint(
        &mut self,
        net: &QNetwork<f32>,
        adam: &AdamState<f32>,
        epoch: usize,
    ) -> Result<()> {
        let path = self.out_dir.join(format!("ckpt_epoch_{epoch:03}.ckpt"));
        save_checkpoint(
            &path,
            &Checkpoint {
                net: net.clone(),
                adam: adam.clone(),
                tag: self.tag.clone(),
            },
        )?;
        self.last_checkpoint = Some(path);
        Ok(())
    }
}

pub fn run(args: TrainArgs, file: &FileConfig, workers: usize, stop: &AtomicBool) -> Result<()> {
    let seed = config::resolve_seed(args.seed, file.seed)?;
    let preset = args.preset.as_deref().or(file.preset.as_deref()).unwrap_or("desk");
    let mut cfg = match preset {
        "desk" => AgentConfig::desk(),
        "paper-scale" | "paper_scale" => AgentConfig::paper_scale(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; expected desk or paper-scale"
            )))
        }
    };
    if let Some(s) = args.variant.as_deref().or(file.variant.as_deref()) {
        cfg.variant = Variant::parse(s)?;
    }
    if let Some(s) = args.reward_mode.as_deref().or(file.reward_mode.as_deref()) {
        cfg.reward_signal = rlalign::agent::RewardSignal::parse(s)?;
    }
    if let Some(s) = args.reward_form.as_deref().or(file.reward_form.as_deref()) {
        cfg.reward_form = RewardForm::parse(s)?;
    }
    cfg.gamma = config::pick(args.gamma, file.gamma, cfg.gamma);
    cfg.lr = config::pick(args.lr, file.lr, cfg.lr);
    cfg.batch_size = config::pick(args.batch_size, file.batch_size, cfg.batch_size);
    cfg.epochs = config::pick(args.epochs, file.epochs, cfg.epochs);
    cfg.steps_per_epoch = config::pick(args.steps_per_epoch, file.steps_per_epoch, cfg.steps_per_epoch);
    cfg.warmup = config::pick(args.warmup, file.warmup, cfg.warmup);
    cfg.replay_capacity = config::pick(args.replay_capacity, file.replay_capacity, cfg.replay_capacity);
    cfg.target_sync_every =
        config::pick(args.target_sync_every, file.target_sync_every, cfg.target_sync_every);
    cfg.update_every = config::pick(args.update_every, file.update_every, cfg.update_every);
    cfg.validate()?;

    let schedule_name = args
        .schedule
        .as_deref()
        .or(file.schedule.as_deref())
        .unwrap_or(if preset == "desk" { "compressed" } else { "standard" });
    let schedule = match schedule_name {
        "standard" => ExplorationSchedule::standard(),
        "compressed" => ExplorationSchedule::compressed(cfg.epochs),
        other => {
            return Err(Error::Config(format!(
                "unknown schedule {other:?}; expected standard or compressed"
            )))
        }
    };

    let manifest = config::manifest_path(&args.data);
    let pairs = dataset::load_all(&manifest)?;
    if pairs.is_empty() {
        return Err(Error::Input(format!("no pairs in {}", manifest.display())));
    }
    let (h, w) = (pairs[0].fixed.height(), pairs[0].fixed.width());
    for p in &pairs {
        if p.fixed.height() != h || p.fixed.width() != w {
            return Err(Error::Config(format!(
                "pair {:?} is {}x{}, dataset started at {}x{}; training needs uniform frames",
                p.pair_id,
                p.fixed.height(),
                p.fixed.width(),
                h,
                w
            )));
        }
    }
    if cfg.reward_signal == rlalign::agent::RewardSignal::Supervised {
        if let Some(p) = pairs.iter().find(|p| p.truth.is_none()) {
            return Err(Error::Config(format!(
                "pair {:?} has no truth transform; the supervised reward needs one per pair",
                p.pair_id
            )));
        }
    }

    let env_cfg = config::env_config(file, 4);
    let net_cfg = QNetworkConfig {
        input_h: h,
        input_w: w,
        in_channels: env_cfg.history,
        dueling: cfg.variant.dueling_head(),
        ..QNetworkConfig::bscan84()
    };
    net_cfg.validate().map_err(|e| {
        Error::Config(format!("no network fits {h}x{w} frames with history {}: {e}", env_cfg.history))
    })?;

    let out_dir = args.out_dir.unwrap_or_else(|| PathBuf::from("train_out"));
    let final_ckpt = args.out.unwrap_or_else(|| out_dir.join("checkpoint.ckpt"));
    std::fs::create_dir_all(&out_dir)?;
    config::write_effective(
        &out_dir,
        &Effective {
            command: "train".into(),
            seed,
            data: args.data.display().to_string(),
            preset: preset.into(),
            variant: cfg.variant.label().into(),
            reward_mode: cfg.reward_signal.label().into(),
            reward_form: cfg.reward_form.label().into(),
            schedule: schedule_name.into(),
            gamma: cfg.gamma,
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            steps_per_epoch: cfg.steps_per_epoch,
            warmup: cfg.warmup,
            replay_capacity: cfg.replay_capacity,
            target_sync_every: cfg.target_sync_every,
            update_every: cfg.update_every,
            env: EnvEcho::from(&env_cfg),
        },
    )?;

    let tag = format!("agent-{}", cfg.variant.label());
    let tuples: Vec<(Image2D, Image2D, Option<RigidTransform2D>)> =
        pairs.into_iter().map(|p| (p.fixed, p.moving, p.truth)).collect();
    let mut source = cycling_source(&tuples, &env_cfg, cfg.reward_signal, cfg.reward_form);
    let trainer =
        rlalign::agent::Trainer::new(cfg, net_cfg, schedule, seed, &mut source)?;
    let mut observer = DiskObserver::new(&out_dir, tag.clone())?;
    match trainer.train(&mut source, &mut observer, stop, workers != 1) {
        Ok(result) => {
            save_checkpoint(
                &final_ckpt,
                &Checkpoint { net: result.net, adam: result.adam, tag },
            )?;
            println!("final checkpoint: {}", final_ckpt.display());
            Ok(())
        }
        Err(err) => {
            match &observer.last_checkpoint {
                Some(path) => eprintln!("last good checkpoint: {}", path.display()),
                None => eprintln!("no checkpoint was written before the failure"),
            }
            Err(err)
        }
    }
}
