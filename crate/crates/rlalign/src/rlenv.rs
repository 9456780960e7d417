//! The alignment decision process. An episode starts from a misaligned
//! frame pair; the agent nudges the moving frame by one pixel or one degree
//! per step and is paid the drop in dissimilarity it achieves, plus a bonus
//! when the pair lands within the convergence threshold.
//!
//! The state the agent sees is a short history of signed difference images
//! between the fixed frame and the current warp of the moving frame, newest
//! last. Transitions are pure: stepping the same state twice gives
//! bit-identical results.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::imgcore::{diff, warp, Image2D, RigidTransform2D};
use crate::simkit::{correlation, dissimilarity, nmi, SimilarityConfig};

pub const N_ACTIONS: usize = 6;

/// How the per-step reward is computed from consecutive dissimilarities.
/// `Signed` pays improvement and charges deterioration; `Abs` pays the
/// magnitude of the change regardless of direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardForm {
    Signed,
    Abs,
}

impl RewardForm {
    pub fn label(self) -> &'static str {
        match self {
            RewardForm::Signed => "signed",
            RewardForm::Abs => "abs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(RewardForm::Signed),
            "abs" => Ok(RewardForm::Abs),
            other => Err(Error::Config(format!(
                "unknown reward form {:?}; expected signed or abs",
                other
            ))),
        }
    }
}

/// Reward source. `Unsupervised` is the production mode and needs only the
/// images. `Supervised` pays the drop in parameter distance to a known goal
/// transform (the inverse of the applied misalignment) and terminates when
/// that distance falls to `tolerance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardMode {
    Unsupervised { form: RewardForm },
    Supervised { goal: RigidTransform2D, tolerance: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Dissimilarity at or below this ends the episode with the bonus.
    pub epsilon_d: f64,
    pub bonus: f64,
    pub max_steps: usize,
    /// Number of difference frames stacked into the observation.
    pub history: usize,
    pub step_translation: f64,
    pub step_rotation: f64,
    /// Transform parameters are clamped to this magnitude.
    pub param_bound: f64,
    pub similarity: SimilarityConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            epsilon_d: 0.05,
            bonus: 10.0,
            max_steps: 200,
            history: 4,
            step_translation: 1.0,
            step_rotation: 1.0,
            param_bound: 10.0,
            similarity: SimilarityConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_d >= 0.0 && self.epsilon_d.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon_d = {} must be non-negative",
                self.epsilon_d
            )));
        }
        if !self.bonus.is_finite() || self.bonus < 0.0 {
            return Err(Error::Config(format!("bonus = {} must be non-negative", self.bonus)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.history == 0 {
            return Err(Error::Config("history must be at least 1".into()));
        }
        for (name, v) in [
            ("step_translation", self.step_translation),
            ("step_rotation", self.step_rotation),
            ("param_bound", self.param_bound),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} = {} must be positive", name, v)));
            }
        }
        Ok(())
    }
}

/// Observation plus bookkeeping at one point in an episode. Difference
/// frames are shared, so cloning a state (for replay storage) is cheap.
#[derive(Clone, Debug)]
pub struct EnvState {
    /// History of difference images, oldest first, newest last.
    pub stack: Vec<Arc<Image2D>>,
    pub current_t: RigidTransform2D,
    pub step_index: usize,
    pub cumulative_reward: f64,
    /// Dissimilarity between the fixed frame and the current warp.
    pub d: f64,
    pub terminal: bool,
}

impl EnvState {
    /// Writes the observation channels-last into `out`, which must hold
    /// exactly `h * w * history` values: `out[(y*w + x)*n + k]` is pixel
    /// `(y, x)` of the k-th oldest difference frame.
    pub fn write_channels(&self, out: &mut [f32]) -> Result<()> {
        let n = self.stack.len();
        let frame = self.stack[0].len();
        if out.len() != frame * n {
            return Err(Error::Dimension(format!(
                "observation buffer holds {}, need {}",
                out.len(),
                frame * n
            )));
        }
        for (k, img) in self.stack.iter().enumerate() {
            for (i, &v) in img.as_slice().iter().enumerate() {
                out[i * n + k] = v;
            }
        }
        Ok(())
    }
}

/// The environment for one frame pair.
#[derive(Clone, Debug)]
pub struct RegistrationEnv {
    cfg: EnvConfig,
    fixed: Image2D,
    moving: Image2D,
    mode: RewardMode,
}

impl RegistrationEnv {
    pub fn new(
        cfg: EnvConfig,
        fixed: Image2D,
        moving: Image2D,
        mode: RewardMode,
    ) -> Result<Self> {
        cfg.validate()?;
        if fixed.height() != moving.height() || fixed.width() != moving.width() {
            return Err(Error::Dimension(format!(
                "fixed {}x{} vs moving {}x{}",
                fixed.height(),
                fixed.width(),
                moving.height(),
                moving.width()
            )));
        }
        if fixed.is_empty() {
            return Err(Error::Input("empty frames".into()));
        }
        if !fixed.is_finite() || !moving.is_finite() {
            return Err(Error::Data("non-finite pixel in input pair".into()));
        }
        if let RewardMode::Supervised { tolerance, goal } = &mode {
            if !(*tolerance >= 0.0 && tolerance.is_finite()) {
                return Err(Error::Config(format!(
                    "supervised tolerance = {} must be non-negative",
                    tolerance
                )));
            }
            if !goal.params().iter().all(|p| p.is_finite()) {
                return Err(Error::Config("supervised goal transform not finite".into()));
            }
        }
        Ok(RegistrationEnv { cfg, fixed, moving, mode })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mode(&self) -> &RewardMode {
        &self.mode
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        (self.fixed.height(), self.fixed.width())
    }

    fn warped_diff(&self, t: &RigidTransform2D) -> Result<(Arc<Image2D>, f64)> {
        let warped = if t.is_identity() { self.moving.clone() } else { warp(&self.moving, t) };
        let d = dissimilarity(&self.fixed, &warped, &self.cfg.similarity)?;
        let frame = diff(&self.fixed, &warped)?;
        Ok((Arc::new(frame), d))
    }

    fn goal_reached(&self, t: &RigidTransform2D, d: f64) -> bool {
        match &self.mode {
            RewardMode::Unsupervised { .. } => d <= self.cfg.epsilon_d,
            RewardMode::Supervised { goal, tolerance } => t.param_distance(goal) <= *tolerance,
        }
    }

    /// Starts an episode: identity transform, the history filled with copies
    /// of the initial difference image. A pair already within the threshold
    /// is terminal immediately and collects the bonus at step zero.
    pub fn reset(&self) -> Result<EnvState> {
        let t = RigidTransform2D::identity();
        let (frame, d) = self.warped_diff(&t)?;
        let terminal = self.goal_reached(&t, d);
        Ok(EnvState {
            stack: vec![frame; self.cfg.history],
            current_t: t,
            step_index: 0,
            cumulative_reward: if terminal { self.cfg.bonus } else { 0.0 },
            d,
            terminal,
        })
    }

    /// Applies one action. Returns the successor state, the reward earned,
    /// and whether the episode has ended.
    pub fn step(&self, state: &EnvState, action: usize) -> Result<(EnvState, f64, bool)> {
        if state.terminal {
            return Err(Error::State("cannot step a terminal state".into()));
        }
        if action >= N_ACTIONS {
            return Err(Error::Input(format!("action {} out of range 0..{}", action, N_ACTIONS)));
        }

        let b = self.cfg.param_bound;
        let (dt, dr) = (self.cfg.step_translation, self.cfg.step_rotation);
        let mut t = state.current_t;
        match action {
            0 => t.tx = (t.tx + dt).clamp(-b, b),
            1 => t.tx = (t.tx - dt).clamp(-b, b),
            2 => t.ty = (t.ty + dt).clamp(-b, b),
            3 => t.ty = (t.ty - dt).clamp(-b, b),
            4 => t.theta_deg = (t.theta_deg + dr).clamp(-b, b),
            _ => t.theta_deg = (t.theta_deg - dr).clamp(-b, b),
        }

        let (frame, d) = self.warped_diff(&t)?;
        let mut reward = match &self.mode {
            RewardMode::Unsupervised { form } => {
                let delta = state.d - d;
                match form {
                    RewardForm::Signed => delta,
                    RewardForm::Abs => delta.abs(),
                }
            }
            RewardMode::Supervised { goal, .. } => {
                state.current_t.param_distance(goal) - t.param_distance(goal)
            }
        };
        if !reward.is_finite() {
            return Err(Error::Numeric("non-finite reward".into()));
        }

        let reached = self.goal_reached(&t, d);
        if reached {
            reward += self.cfg.bonus;
        }
        let step_index = state.step_index + 1;
        let terminal = reached || step_index >= self.cfg.max_steps;

        let mut stack = state.stack.clone();
        stack.remove(0);
        stack.push(frame);

        let next = EnvState {
            stack,
            current_t: t,
            step_index,
            cumulative_reward: state.cumulative_reward + reward,
            d,
            terminal,
        };
        Ok((next, reward, terminal))
    }
}

/// Outcome of one full episode.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub transform: RigidTransform2D,
    pub d_initial: f64,
    pub d_final: f64,
    pub nmi: f64,
    pub rho: f64,
    /// Cumulative reward, bonus included.
    pub score: f64,
    pub steps: usize,
    pub wall_s: f64,
    /// True when the episode ended by reaching the goal rather than the
    /// step budget.
    pub converged: bool,
}

/// Drives one episode under `policy` and reports the outcome, including
/// similarity metrics of the final warp.
pub fn run_episode(
    env: &RegistrationEnv,
    mut policy: impl FnMut(&EnvState) -> Result<usize>,
) -> Result<Rollout> {
    let start = Instant::now();
    let mut state = env.reset()?;
    let d_initial = state.d;
    let mut converged = state.terminal;
    while !state.terminal {
        let action = policy(&state)?;
        let (next, _, terminal) = env.step(&state, action)?;
        if terminal && next.step_index < env.cfg.max_steps {
            converged = true;
        } else if terminal {
            converged = env.goal_reached(&next.current_t, next.d);
        }
        state = next;
    }

    let warped = if state.current_t.is_identity() {
        env.moving.clone()
    } else {
        warp(&env.moving, &state.current_t)
    };
    Ok(Rollout {
        transform: state.current_t,
        d_initial,
        d_final: state.d,
        nmi: nmi(&env.fixed, &warped, env.cfg.similarity.nmi_bins)?,
        rho: correlation(&env.fixed, &warped)?,
        score: state.cumulative_reward,
        steps: state.step_index,
        wall_s: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// Reward for moving from `prev` to `curr` when the goal transform is
/// known: the drop in Euclidean parameter distance, plus `bonus` when the
/// new distance is within `tolerance`. Returns `(reward, reached)`.
pub fn supervised_reward(
    goal: &RigidTransform2D,
    prev: &RigidTransform2D,
    curr: &RigidTransform2D,
    tolerance: f64,
    bonus: f64,
) -> (f64, bool) {
    let before = prev.param_distance(goal);
    let after = curr.param_distance(goal);
    let reached = after <= tolerance;
    let reward = before - after + if reached { bonus } else { 0.0 };
    (reward, reached)
}
