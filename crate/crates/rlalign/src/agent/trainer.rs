//! The training loop: environment interaction, replay, target-network
//! bookkeeping, Adam updates, per-epoch records.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::RigidTransform2D;
use crate::neural::{
    adam_step, AdamConfig, AdamState, ConvSpec, DuelingAggregation, QNetwork, QNetworkConfig,
};
use crate::rlenv::{EnvConfig, EnvState, RegistrationEnv, RewardForm, RewardMode};

use super::policy::{select_action, states_to_input, td_target, Variant};
use super::replay::ReplayBuffer;
use super::schedule::ExplorationSchedule;

/// Where the reward comes from: intensity similarity alone, or the known
/// simulation truth (ablation mode).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardSignal {
    Unsupervised,
    Supervised,
}

impl RewardSignal {
    pub fn label(self) -> &'static str {
        match self {
            RewardSignal::Unsupervised => "unsupervised",
            RewardSignal::Supervised => "supervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unsupervised" => Ok(RewardSignal::Unsupervised),
            "supervised" => Ok(RewardSignal::Supervised),
            other => Err(Error::Config(format!(
                "unknown reward mode {:?}; expected unsupervised or supervised",
                other
            ))),
        }
    }
}

/// Terminal tolerance on the parameter distance in supervised mode.
pub const SUPERVISED_TOLERANCE: f64 = 1.0;

/// Builds the environment reward mode for one pair. Supervised training
/// needs the pair's truth transform; its inverse is the goal the running
/// estimate is compared against.
pub fn build_reward_mode(
    signal: RewardSignal,
    form: RewardForm,
    truth: Option<&RigidTransform2D>,
) -> Result<RewardMode> {
    match signal {
        RewardSignal::Unsupervised => Ok(RewardMode::Unsupervised { form }),
        RewardSignal::Supervised => match truth {
            Some(t) => Ok(RewardMode::Supervised {
                goal: t.invert(),
                tolerance: SUPERVISED_TOLERANCE,
            }),
            None => Err(Error::Config(
                "supervised reward requires ground-truth transforms in the dataset".into(),
            )),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    pub reward_signal: RewardSignal,
    pub reward_form: RewardForm,
    pub gamma: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Environment steps between target-network refreshes.
    pub target_sync_every: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub replay_capacity: usize,
    /// Stored transitions before updates begin.
    pub warmup: usize,
    /// Environment steps per gradient update once warm-up is reached.
    pub update_every: usize,
}

impl AgentConfig {
    /// Sized to learn visibly on one CPU core in well under half an hour.
    pub fn desk() -> Self {
        AgentConfig {
            variant: Variant::Dueling,
            reward_signal: RewardSignal::Unsupervised,
            reward_form: RewardForm::Signed,
            gamma: 0.9,
            batch_size: 32,
            lr: 1e-3,
            target_sync_every: 2500,
            steps_per_epoch: 2000,
            epochs: 8,
            replay_capacity: 20_000,
            warmup: 2000,
            update_every: 3,
        }
    }

    /// The full-size recipe: replay 1e6, 125 epochs of 20k steps, batch
    /// 256, an update every step.
    pub fn paper_scale() -> Self {
        AgentConfig {
            variant: Variant::DoubleDueling,
            reward_signal: RewardSignal::Unsupervised,
            reward_form: RewardForm::Signed,
            gamma: 0.9,
            batch_size: 256,
            lr: 1e-3,
            target_sync_every: 2500,
            steps_per_epoch: 20_000,
            epochs: 125,
            replay_capacity: 1_000_000,
            warmup: 5000,
            update_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr = {} must be finite and non-negative", self.lr)));
        }
        if self.warmup < self.batch_size {
            return Err(Error::Config(format!(
                "warmup ({}) must cover at least one batch ({})",
                self.warmup, self.batch_size
            )));
        }
        if self.warmup > self.replay_capacity {
            return Err(Error::Config(format!(
                "warmup ({}) exceeds replay capacity ({})",
                self.warmup, self.replay_capacity
            )));
        }
        for (name, v) in [
            ("target_sync_every", self.target_sync_every),
            ("steps_per_epoch", self.steps_per_epoch),
            ("epochs", self.epochs),
            ("update_every", self.update_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{} must be at least 1", name)));
            }
        }
        Ok(())
    }
}

/// One stored interaction.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: EnvState,
    pub action: usize,
    pub reward: f64,
    pub next: EnvState,
    pub terminal: bool,
}

/// Supplies the environment for episode `i`. Training calls it once per
/// episode, in episode order.
pub type EnvSource<'a> = dyn FnMut(usize) -> Result<RegistrationEnv> + 'a;

/// Cycles a fixed set of prepared pairs, episode `i` drawing pair
/// `i % pairs.len()`.
pub fn cycling_source<'a>(
    pairs: &'a [(crate::imgcore::Image2D, crate::imgcore::Image2D, Option<RigidTransform2D>)],
    env_cfg: &'a EnvConfig,
    signal: RewardSignal,
    form: RewardForm,
) -> impl FnMut(usize) -> Result<RegistrationEnv> + 'a {
    move |episode| {
        if pairs.is_empty() {
            return Err(Error::Input("no training pairs".into()));
        }
        let (fixed, moving, truth) = &pairs[episode % pairs.len()];
        let mode = build_reward_mode(signal, form, truth.as_ref())?;
        RegistrationEnv::new(env_cfg.clone(), fixed.clone(), moving.clone(), mode)
    }
}

/// One epoch line of the training log.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Exploration rate at the start of the epoch.
    pub eps: f64,
    /// Mean MSE loss over the epoch's updates; 0 when none ran.
    pub mean_loss: f64,
    /// Mean episode score (cumulative reward) over episodes finished this
    /// epoch; 0 when none finished.
    pub mean_score: f64,
    /// Mean final dissimilarity of episodes finished this epoch.
    #[serde(rename = "mean_final_D")]
    pub mean_final_d: f64,
    pub episodes: usize,
    pub wall_s: f64,
}

/// Receives epoch records and checkpoint snapshots as training runs.
pub trait TrainObserver {
    fn epoch(&mut self, record: &EpochRecord) -> Result<()>;
    fn checkpoint(
        &mut self,
        net: &QNetwork<f32>,
        adam: &AdamState<f32>,
        epoch: usize,
    ) -> Result<()>;
}

/// Observer that discards everything.
pub struct NullObserver;

impl TrainObserver for NullObserver {
    fn epoch(&mut self, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
    fn checkpoint(
        &mut self,
        _net: &QNetwork<f32>,
        _adam: &AdamState<f32>,
        _epoch: usize,
    ) -> Result<()> {
        Ok(())
    }
}

pub struct TrainResult {
    pub net: QNetwork<f32>,
    pub adam: AdamState<f32>,
    pub log: Vec<EpochRecord>,
}

/// What one driver step did, for inspection in tests.
#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    pub action: usize,
    pub reward: f64,
    /// Loss of the gradient update this step ran, if any.
    pub loss: Option<f64>,
    /// Set when this step ended an episode: (final dissimilarity, score).
    pub episode_end: Option<(f64, f64)>,
    /// True when the target network was refreshed on this step.
    pub synced: bool,
}

struct EpochAccum {
    loss_sum: f64,
    updates: usize,
    score_sum: f64,
    final_d_sum: f64,
    episodes: usize,
}

impl EpochAccum {
    fn new() -> Self {
        EpochAccum { loss_sum: 0.0, updates: 0, score_sum: 0.0, final_d_sum: 0.0, episodes: 0 }
    }

    fn record(&self, epoch: usize, eps: f64, wall_s: f64) -> EpochRecord {
        let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        EpochRecord {
            epoch,
            eps,
            mean_loss: mean(self.loss_sum, self.updates),
            mean_score: mean(self.score_sum, self.episodes),
            mean_final_d: mean(self.final_d_sum, self.episodes),
            episodes: self.episodes,
            wall_s,
        }
    }
}

/// Q-learning driver. `step` advances the world by one action and runs
/// whatever bookkeeping falls due; `train` loops it over full epochs.
pub struct Trainer {
    cfg: AgentConfig,
    adam_cfg: AdamConfig,
    schedule: ExplorationSchedule,
    online: QNetwork<f32>,
    target: QNetwork<f32>,
    adam: AdamState<f32>,
    replay: ReplayBuffer<Transition>,
    rng: ChaCha8Rng,
    env: RegistrationEnv,
    state: EnvState,
    env_steps: usize,
    episodes_started: usize,
    accum: EpochAccum,
}

/// Episodes already terminal at reset in a row before the source is
/// declared broken.
const MAX_DEAD_RESETS: usize = 10_000;

impl Trainer {
    pub fn new(
        cfg: AgentConfig,
        net_cfg: QNetworkConfig,
        schedule: ExplorationSchedule,
        seed: u64,
        source: &mut EnvSource,
    ) -> Result<Self> {
        cfg.validate()?;
        net_cfg.validate()?;
        schedule.validate()?;
        if net_cfg.dueling != cfg.variant.dueling_head() {
            return Err(Error::Config(format!(
                "variant {} needs dueling = {} in the network configuration",
                cfg.variant.label(),
                cfg.variant.dueling_head()
            )));
        }

        let online = QNetwork::<f32>::new(net_cfg.clone(), seed)?;
        let mut target = QNetwork::<f32>::new(net_cfg, seed)?;
        target.copy_from(&online)?;
        let adam = AdamState::for_network(&online);
        let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
        adam_cfg.validate()?;
        let replay = ReplayBuffer::new(cfg.replay_capacity)?;
        let rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, 0x7261696e));

        let mut trainer = Trainer {
            cfg,
            adam_cfg,
            schedule,
            online,
            target,
            adam,
            replay,
            rng,
            env: source(0)?,
            state: EnvState {
                stack: Vec::new(),
                current_t: RigidTransform2D::identity(),
                step_index: 0,
                cumulative_reward: 0.0,
                d: 0.0,
                terminal: true,
            },
            env_steps: 0,
            episodes_started: 0,
            accum: EpochAccum::new(),
        };
        trainer.check_env_shape()?;
        trainer.state = trainer.env.reset()?;
        trainer.episodes_started = 1;
        trainer.skip_dead_resets(source)?;
        Ok(trainer)
    }

    fn check_env_shape(&self) -> Result<()> {
        let (h, w) = self.env.frame_shape();
        let cfg = self.online.config();
        if h != cfg.input_h || w != cfg.input_w || self.env.config().history != cfg.in_channels {
            return Err(Error::Dimension(format!(
                "environment frames {}x{} with history {} do not match the {}x{}x{} network input",
                h,
                w,
                self.env.config().history,
                cfg.input_h,
                cfg.input_w,
                cfg.in_channels
            )));
        }
        Ok(())
    }

    /// Counts and replaces episodes that are terminal at reset (a pair
    /// already inside the threshold earns its bonus and ends immediately).
    fn skip_dead_resets(&mut self, source: &mut EnvSource) -> Result<()> {
        let mut dead = 0;
        while self.state.terminal {
            self.accum.episodes += 1;
            self.accum.score_sum += self.state.cumulative_reward;
            self.accum.final_d_sum += self.state.d;
            dead += 1;
            if dead > MAX_DEAD_RESETS {
                return Err(Error::State(
                    "environment source keeps producing already-aligned pairs".into(),
                ));
            }
            self.env = source(self.episodes_started)?;
            self.check_env_shape()?;
            self.state = self.env.reset()?;
            self.episodes_started += 1;
        }
        Ok(())
    }

    pub fn online(&self) -> &QNetwork<f32> {
        &self.online
    }

    pub fn target(&self) -> &QNetwork<f32> {
        &self.target
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    fn current_eps(&self) -> f64 {
        self.schedule.value(self.env_steps as f64 / self.cfg.steps_per_epoch as f64)
    }

    /// One environment step plus any update and target sync that fall due.
    pub fn step(&mut self, source: &mut EnvSource) -> Result<StepOutcome> {
        let eps = self.current_eps();
        let action = select_action(&self.online, &self.state, eps, &mut self.rng)?;
        let (next, reward, terminal) = self.env.step(&self.state, action)?;
        self.replay.push(Transition {
            state: self.state.clone(),
            action,
            reward,
            next: next.clone(),
            terminal,
        });
        self.env_steps += 1;

        let mut episode_end = None;
        if terminal {
            episode_end = Some((next.d, next.cumulative_reward));
            self.accum.episodes += 1;
            self.accum.score_sum += next.cumulative_reward;
            self.accum.final_d_sum += next.d;
            self.env = source(self.episodes_started)?;
            self.check_env_shape()?;
            self.state = self.env.reset()?;
            self.episodes_started += 1;
            self.skip_dead_resets(source)?;
        } else {
            self.state = next;
        }

        let mut loss = None;
        if self.env_steps >= self.cfg.warmup
            && (self.env_steps - self.cfg.warmup) % self.cfg.update_every == 0
        {
            let l = self.update()?;
            self.accum.loss_sum += l;
            self.accum.updates += 1;
            loss = Some(l);
        }

        let synced = self.env_steps % self.cfg.target_sync_every == 0;
        if synced {
            self.target.copy_from(&self.online)?;
        }

        Ok(StepOutcome { action, reward, loss, episode_end, synced })
    }

    /// Samples a batch, computes Bellman targets per variant, and applies
    /// one Adam update to the online network.
    fn update(&mut self) -> Result<f64> {
        let b = self.cfg.batch_size;
        let net_cfg = self.online.config();
        let (h, w) = (net_cfg.input_h, net_cfg.input_w);

        let (x_cur, x_next, actions, rewards, terminals) = {
            let batch = self.replay.sample(b, &mut self.rng)?;
            let cur: Vec<&EnvState> = batch.iter().map(|t| &t.state).collect();
            let nxt: Vec<&EnvState> = batch.iter().map(|t| &t.next).collect();
            (
                states_to_input(&cur, h, w)?,
                states_to_input(&nxt, h, w)?,
                batch.iter().map(|t| t.action).collect::<Vec<_>>(),
                batch.iter().map(|t| t.reward).collect::<Vec<_>>(),
                batch.iter().map(|t| t.terminal).collect::<Vec<_>>(),
            )
        };

        let q_next_target = self.target.forward_eval(&x_next)?;
        let q_next_online = if self.cfg.variant.double_targets() {
            Some(self.online.forward_eval(&x_next)?)
        } else {
            None
        };

        let n = self.online.config().n_actions;
        let mut targets = Vec::with_capacity(b);
        for i in 0..b {
            let target_row = &q_next_target.data()[i * n..(i + 1) * n];
            let online_row = match &q_next_online {
                Some(q) => &q.data()[i * n..(i + 1) * n],
                None => target_row,
            };
            targets.push(td_target(
                self.cfg.variant,
                rewards[i],
                terminals[i],
                self.cfg.gamma,
                target_row,
                online_row,
            ) as f32);
        }

        let (loss, grads) = self.online.backward(&x_cur, &actions, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at environment step {} (episode {})",
                self.env_steps, self.episodes_started
            )));
        }
        adam_step(&mut self.online, &grads, &mut self.adam, &self.adam_cfg)?;
        Ok(loss as f64)
    }

    /// Runs the configured number of epochs, emitting one record per epoch
    /// and a checkpoint after each. A raised stop flag finishes the current
    /// step, flushes a final record and checkpoint, and returns early.
    /// `measure_wall = false` pins every wall_s to zero for reproducible
    /// logs.
    pub fn train(
        mut self,
        source: &mut EnvSource,
        observer: &mut dyn TrainObserver,
        stop: &AtomicBool,
        measure_wall: bool,
    ) -> Result<TrainResult> {
        let mut log = Vec::with_capacity(self.cfg.epochs);
        'epochs: for epoch in 0..self.cfg.epochs {
            let eps = self.schedule.value(epoch as f64);
            let started = Instant::now();
            self.accum = EpochAccum::new();
            let mut stopped = false;
            for _ in 0..self.cfg.steps_per_epoch {
                self.step(source)?;
                if stop.load(Ordering::Relaxed) {
                    stopped = true;
                    break;
                }
            }
            let wall = if measure_wall { started.elapsed().as_secs_f64() } else { 0.0 };
            let record = self.accum.record(epoch, eps, wall);
            observer.epoch(&record)?;
            observer.checkpoint(&self.online, &self.adam, epoch)?;
            log.push(record);
            if stopped {
                break 'epochs;
            }
        }
        Ok(TrainResult { net: self.online, adam: self.adam, log })
    }

    /// Applies one loss update directly (loss and gradients from the given
    /// batch tensors), for loop-free tests.
    #[cfg(test)]
    fn update_once_on(&mut self, x: &crate::neural::TensorN<f32>, actions: &[usize], targets: &[f32]) -> Result<f64> {
        let (loss, grads) = self.online.backward(x, actions, targets)?;
        adam_step(&mut self.online, &grads, &mut self.adam, &self.adam_cfg)?;
        Ok(loss as f64)
    }
}

/// A network configuration small enough for fast tests while keeping the
/// full conv/BN/dueling structure.
pub fn tiny_net_config(dueling: bool) -> QNetworkConfig {
    QNetworkConfig {
        input_h: 16,
        input_w: 16,
        in_channels: 4,
        convs: vec![
            ConvSpec { filters: 4, kernel: 3, stride: 2 },
            ConvSpec { filters: 8, kernel: 3, stride: 2 },
        ],
        fc_units: 16,
        n_actions: 6,
        dueling,
        aggregation: DuelingAggregation::BroadcastSum,
        bn_momentum: 0.99,
        bn_eps: 1e-5,
    }
}
