//! `align`: one greedy episode on a single image pair.
//!
//! Prints the recovered transform and the similarity of the final warp in a
//! fixed order: tx, ty, theta_deg, steps, nmi, rho. Numeric fields use three
//! decimals.

use std::path::PathBuf;

use clap::Args;
use rlalign::agent::greedy_action;
use rlalign::imgcore::{read_image, warp, write_img1};
use rlalign::neural::load_checkpoint;
use rlalign::rlenv::{run_episode, RegistrationEnv, RewardForm, RewardMode};
use rlalign::{Error, Result};

use crate::config::{self, FileConfig};

#[derive(Args)]
pub struct AlignArgs {
    /// Fixed (reference) image, IMG1 or PGM
    #[arg(long)]
    pub fixed: PathBuf,

    /// Moving image to align, IMG1 or PGM
    #[arg(long)]
    pub moving: PathBuf,

    /// Trained agent checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,

    /// Write the aligned moving image here (IMG1)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: AlignArgs, file: &FileConfig) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let fixed = read_image(&args.fixed)?;
    let moving = read_image(&args.moving)?;
    let ncfg = ckpt.net.config();
    let env_cfg = config::env_config(file, ncfg.in_channels);
    if fixed.height() != ncfg.input_h
        || fixed.width() != ncfg.input_w
        || moving.height() != ncfg.input_h
        || moving.width() != ncfg.input_w
        || env_cfg.history != ncfg.in_channels
    {
        return Err(Error::Format(format!(
            "checkpoint expects {}x{} frames with history {}; got fixed {}x{}, moving {}x{}, history {}",
            ncfg.input_h,
            ncfg.input_w,
            ncfg.in_channels,
            fixed.height(),
            fixed.width(),
            moving.height(),
            moving.width(),
            env_cfg.history
        )));
    }

    let env = RegistrationEnv::new(
        env_cfg,
        fixed,
        moving.clone(),
        RewardMode::Unsupervised { form: RewardForm::Signed },
    )?;
    let rollout = run_episode(&env, |state| greedy_action(&ckpt.net, state))?;

    println!("tx: {:.3}", rollout.transform.tx);
    println!("ty: {:.3}", rollout.transform.ty);
    println!("theta_deg: {:.3}", rollout.transform.theta_deg);
    println!("steps: {}", rollout.steps);
    println!("nmi: {:.3}", rollout.nmi);
    println!("rho: {:.3}", rollout.rho);

    if let Some(out) = args.out {
        write_img1(&warp(&moving, &rollout.transform), &out)?;
    }
    Ok(())
}
