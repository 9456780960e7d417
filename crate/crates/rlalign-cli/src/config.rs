//! Flat key-value config file shared by all subcommands, plus the
//! flag/file/environment merge rules.
//!
//! Precedence, highest first: command-line flag, config file key,
//! `RLALIGN_SEED` (seed only), built-in default. Unknown keys in the file
//! are rejected before any work starts.

use std::path::{Path, PathBuf};

use rlalign::rlenv::EnvConfig;
use rlalign::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,

    // dataset generation
    pub pairs: Option<usize>,
    pub range: Option<f64>,
    pub translation_range: Option<f64>,
    pub rotation_range: Option<f64>,
    pub noise: Option<f64>,
    pub window: Option<usize>,
    pub window_spacing: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub layer_count: Option<usize>,
    pub layer_amplitude: Option<f64>,
    pub intensity_modulation: Option<f64>,
    pub scans_per_volume: Option<usize>,

    // alignment environment
    pub epsilon_d: Option<f64>,
    pub bonus: Option<f64>,
    pub max_steps: Option<usize>,
    pub history: Option<usize>,
    pub step_translation: Option<f64>,
    pub step_rotation: Option<f64>,
    pub param_bound: Option<f64>,
    pub nmi_bins: Option<usize>,

    // agent training
    pub preset: Option<String>,
    pub variant: Option<String>,
    pub reward_mode: Option<String>,
    pub reward_form: Option<String>,
    pub schedule: Option<String>,
    pub gamma: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub warmup: Option<usize>,
    pub replay_capacity: Option<usize>,
    pub target_sync_every: Option<usize>,
    pub update_every: Option<usize>,

    // baseline search
    pub metric: Option<String>,
    pub starts: Option<usize>,
    pub max_evals: Option<usize>,
    pub initial_step: Option<f64>,
    pub initial_step_deg: Option<f64>,
    pub shrink: Option<f64>,
    pub tol: Option<f64>,
    pub start_extent: Option<f64>,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {}", path.display(), e)))
}

/// Flag beats file beats default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag.or(file) {
        return Ok(seed);
    }
    match std::env::var("RLALIGN_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            Error::Config(format!("RLALIGN_SEED {:?} is not an unsigned integer", text))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Error::Config(format!("RLALIGN_SEED: {e}"))),
    }
}

pub fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    let workers = flag.or(file).unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    Ok(workers)
}

/// Environment settings come from the config file only; `history` defaults
/// to whatever the consumer needs to match (checkpoint channels, usually).
pub fn env_config(file: &FileConfig, default_history: usize) -> EnvConfig {
    let mut cfg = EnvConfig::default();
    if let Some(v) = file.epsilon_d {
        cfg.epsilon_d = v;
    }
    if let Some(v) = file.bonus {
        cfg.bonus = v;
    }
    if let Some(v) = file.max_steps {
        cfg.max_steps = v;
    }
    cfg.history = file.history.unwrap_or(default_history);
    if let Some(v) = file.step_translation {
        cfg.step_translation = v;
    }
    if let Some(v) = file.step_rotation {
        cfg.step_rotation = v;
    }
    if let Some(v) = file.param_bound {
        cfg.param_bound = v;
    }
    if let Some(v) = file.nmi_bins {
        cfg.similarity.nmi_bins = v;
    }
    cfg
}

/// Writes the merged settings a command actually ran with into
/// `<dir>/effective-config.toml`.
pub fn write_effective<T: Serialize>(dir: &Path, effective: &T) -> Result<()> {
    let text = toml::to_string_pretty(effective)
        .map_err(|e| Error::Config(format!("cannot serialize effective config: {e}")))?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("effective-config.toml"), text)?;
    Ok(())
}

/// `path` may be the manifest itself or the dataset directory holding
/// `manifest.jsonl`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.jsonl")
    } else {
        path.to_path_buf()
    }
}

/// Serializable mirror of the environment settings for the config echo.
#[derive(Serialize)]
pub struct EnvEcho {
    pub epsilon_d: f64,
    pub bonus: f64,
    pub max_steps: usize,
    pub history: usize,
    pub step_translation: f64,
    pub step_rotation: f64,
    pub param_bound: f64,
    pub nmi_bins: usize,
}

impl From<&EnvConfig> for EnvEcho {
    fn from(cfg: &EnvConfig) -> Self {
        EnvEcho {
            epsilon_d: cfg.epsilon_d,
            bonus: cfg.bonus,
            max_steps: cfg.max_steps,
            history: cfg.history,
            step_translation: cfg.step_translation,
            step_rotation: cfg.step_rotation,
            param_bound: cfg.param_bound,
            nmi_bins: cfg.similarity.nmi_bins,
        }
    }
}
