//! `gen-data`: synthetic misaligned slice pairs plus a truth manifest.
//!
//! Two shapes of dataset come out of the same phantom generator: full-frame
//! pairs (default) where the whole slice is misaligned, and windowed pairs
//! (`--window`) where a crop sampled near the bright band is misaligned,
//! which is the shape training consumes. Pair `i` of volume `i /
//! scans_per_volume` shares that volume's anatomy; speckle, window placement
//! and the truth motion are fresh per pair.

use std::path::PathBuf;

use clap::Args;
use rlalign::dataset::{self, PairRecord};
use rlalign::imgcore::write_img1;
use rlalign::phantom::{self, MotionRange, PhantomConfig};
use rlalign::seed;
use rlalign::{Error, Result};
use serde::Serialize;

use crate::config::{self, FileConfig};

const STREAM_VOLUME: u64 = 0x67656E5F766F6C;
const STREAM_PAIR: u64 = 0x67656E5F706172;

#[derive(Args)]
pub struct GenArgs {
    /// Output directory for images and the manifest
    #[arg(long)]
    pub out: PathBuf,

    /// Number of pairs to generate [default: 100]
    #[arg(long)]
    pub pairs: Option<usize>,

    /// Misalignment bound, px for translations and degrees for rotation,
    /// at most 5 [default: 5]
    #[arg(long)]
    pub range: Option<f64>,

    /// Translation bound in px, overriding --range on the two translation axes
    #[arg(long)]
    pub translation_range: Option<f64>,

    /// Rotation bound in degrees, overriding --range on the rotation axis
    #[arg(long)]
    pub rotation_range: Option<f64>,

    /// Speckle looks; higher is cleaner [default: 4]
    #[arg(long)]
    pub noise: Option<f64>,

    /// Crop pairs to this window size instead of writing full frames
    #[arg(long)]
    pub window: Option<usize>,

    /// Full phantom height in px [default: 200]
    #[arg(long)]
    pub height: Option<usize>,

    /// Full phantom width in px [default: 200]
    #[arg(long)]
    pub width: Option<usize>,

    /// Retinal layers per phantom [default: 5]
    #[arg(long)]
    pub layer_count: Option<usize>,

    /// Amplitude of layer boundary undulation in px [default: 6]
    #[arg(long)]
    pub layer_amplitude: Option<f64>,

    /// Strength of lateral intensity modulation, 0 to 1 [default: 0.12]
    #[arg(long)]
    pub intensity_modulation: Option<f64>,

    /// Pairs sharing one phantom's anatomy [default: 20]
    #[arg(long)]
    pub scans_per_volume: Option<usize>,

    /// Base seed [default: RLALIGN_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Effective {
    command: String,
    seed: u64,
    pairs: usize,
    translation_range: f64,
    rotation_range: f64,
    noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    window_spacing: usize,
    height: usize,
    width: usize,
    layer_count: usize,
    layer_amplitude: f64,
    intensity_modulation: f64,
    scans_per_volume: usize,
}

/// Layer contrast pattern for a given layer count: the stock five-layer
/// palette when it applies, otherwise alternating bright and dark values
/// drifting toward the middle so neighbouring layers always differ.
pub fn contrasts_for(layer_count: usize) -> Vec<f64> {
    if layer_count == 5 {
        return PhantomConfig::default().layer_contrasts;
    }
    (0..layer_count)
        .map(|i| {
            let v = if i % 2 == 0 {
                0.9 - 0.05 * i as f64
            } else {
                0.35 + 0.05 * i as f64
            };
            v.clamp(0.05, 0.95)
        })
        .collect()
}

pub fn run(args: GenArgs, file: &FileConfig) -> Result<()> {
    let seed = config::resolve_seed(args.seed, file.seed)?;
    let pairs = config::pick(args.pairs, file.pairs, 100);
    let range = config::pick(args.range, file.range, 5.0);
    let translation = config::pick(args.translation_range, file.translation_range, range);
    let rotation = config::pick(args.rotation_range, file.rotation_range, range);
    let noise = config::pick(args.noise, file.noise, 4.0);
    let window = args.window.or(file.window);
    let spacing = file.window_spacing.unwrap_or(4);
    let height = config::pick(args.height, file.height, 200);
    let width = config::pick(args.width, file.width, 200);
    let layer_count = config::pick(args.layer_count, file.layer_count, 5);
    let layer_amplitude = config::pick(args.layer_amplitude, file.layer_amplitude, 6.0);
    let intensity_modulation =
        config::pick(args.intensity_modulation, file.intensity_modulation, 0.12);
    let scans_per_volume = config::pick(args.scans_per_volume, file.scans_per_volume, 20);

    let motion = MotionRange { translation, rotation };
    motion.validate()?;
    if pairs == 0 {
        return Err(Error::Config("pairs must be at least 1".into()));
    }
    if scans_per_volume == 0 {
        return Err(Error::Config("scans_per_volume must be at least 1".into()));
    }
    if window.is_none() && translation != rotation {
        return Err(Error::Config(
            "full-frame pairs take one isotropic --range; pass --window to bound \
             translation and rotation separately"
                .into(),
        ));
    }
    let template = PhantomConfig {
        height,
        width,
        layer_count,
        layer_amplitude,
        layer_contrasts: contrasts_for(layer_count),
        intensity_modulation,
        speckle_looks: noise,
        seed: 0,
    };
    template.validate()?;

    std::fs::create_dir_all(&args.out)?;
    config::write_effective(
        &args.out,
        &Effective {
            command: "gen-data".into(),
            seed,
            pairs,
            translation_range: translation,
            rotation_range: rotation,
            noise,
            window,
            window_spacing: spacing,
            height,
            width,
            layer_count,
            layer_amplitude,
            intensity_modulation,
            scans_per_volume,
        },
    )?;

    let mut records = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let volume = (i / scans_per_volume) as u64;
        let cfg = PhantomConfig {
            seed: seed::derive(seed::derive(seed, STREAM_VOLUME), volume),
            ..template.clone()
        };
        let pair_seed = seed::derive(seed::derive(seed, STREAM_PAIR), i as u64);
        let (fixed, moving, truth) = match window {
            Some(size) => {
                let (fixed, moving, sample) =
                    phantom::generate_windowed_pair(&cfg, size, spacing, spacing, &motion, pair_seed)?;
                (fixed, moving, sample.truth)
            }
            None => phantom::generate_pair(&cfg, translation, pair_seed)?,
        };
        let pair_id = format!("pair_{i:04}");
        let fixed_name = format!("{pair_id}_fixed.img");
        let moving_name = format!("{pair_id}_moving.img");
        write_img1(&fixed, &args.out.join(&fixed_name))?;
        write_img1(&moving, &args.out.join(&moving_name))?;
        records.push(PairRecord {
            pair_id,
            fixed: fixed_name,
            moving: moving_name,
            truth: Some(truth.into()),
        });
    }
    dataset::write_manifest(&args.out.join("manifest.jsonl"), &records)?;
    println!("wrote {} pairs to {}", pairs, args.out.display());
    Ok(())
}
