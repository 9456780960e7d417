//! Action selection and bootstrap targets, shared by training and
//! evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neural::{QNetwork, TensorN};
use crate::rlenv::{EnvState, N_ACTIONS};

/// The four Q-learning flavors: optional dueling head, optional
/// decoupled action selection for the bootstrap target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Dqn,
    Double,
    Dueling,
    DoubleDueling,
}

impl Variant {
    pub fn dueling_head(self) -> bool {
        matches!(self, Variant::Dueling | Variant::DoubleDueling)
    }

    pub fn double_targets(self) -> bool {
        matches!(self, Variant::Double | Variant::DoubleDueling)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Dqn => "dqn",
            Variant::Double => "double",
            Variant::Dueling => "dueling",
            Variant::DoubleDueling => "double-dueling",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dqn" => Ok(Variant::Dqn),
            "double" => Ok(Variant::Double),
            "dueling" => Ok(Variant::Dueling),
            "double-dueling" | "double_dueling" => Ok(Variant::DoubleDueling),
            other => Err(Error::Config(format!(
                "unknown variant {:?}; expected dqn, double, dueling, or double-dueling",
                other
            ))),
        }
    }
}

/// Stacks observations into a `[batch, h, w, history]` network input.
pub fn states_to_input(states: &[&EnvState], h: usize, w: usize) -> Result<TensorN<f32>> {
    if states.is_empty() {
        return Err(Error::Input("no states to assemble".into()));
    }
    let n = states[0].stack.len();
    let per = h * w * n;
    let mut data = vec![0.0f32; states.len() * per];
    for (i, s) in states.iter().enumerate() {
        if s.stack.len() != n {
            return Err(Error::Dimension("mixed history lengths in batch".into()));
        }
        s.write_channels(&mut data[i * per..(i + 1) * per])?;
    }
    TensorN::from_vec(&[states.len(), h, w, n], data)
}

/// Index of the row maximum, lowest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy action from eval-mode Q-values, ties broken by lowest index.
pub fn greedy_action(net: &QNetwork<f32>, state: &EnvState) -> Result<usize> {
    let cfg = net.config();
    let x = states_to_input(&[state], cfg.input_h, cfg.input_w)?;
    let q = net.forward_eval(&x)?;
    Ok(argmax(q.data()))
}

/// Epsilon-greedy: with probability `eps` a uniform random action,
/// otherwise the greedy one.
pub fn select_action(
    net: &QNetwork<f32>,
    state: &EnvState,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Input(format!("eps = {} outside [0, 1]", eps)));
    }
    if rng.gen::<f64>() < eps {
        return Ok(rng.gen_range(0..N_ACTIONS));
    }
    greedy_action(net, state)
}

/// Bellman backup for one transition given precomputed next-state Q rows.
/// Terminal transitions bootstrap nothing. Double variants pick the action
/// with the online row and score it with the target row; the others take
/// the target row's maximum.
pub fn td_target(
    variant: Variant,
    reward: f64,
    terminal: bool,
    gamma: f64,
    q_next_target: &[f32],
    q_next_online: &[f32],
) -> f64 {
    if terminal {
        return reward;
    }
    let bootstrap = if variant.double_targets() {
        q_next_target[argmax(q_next_online)] as f64
    } else {
        q_next_target[argmax(q_next_target)] as f64
    };
    reward + gamma * bootstrap
}
