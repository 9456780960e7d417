//! Q-learning agent: replay memory, exploration schedule, action
//! selection, Bellman targets for the four network variants, and the
//! training loop that ties them to the alignment environment.

mod policy;
mod replay;
mod schedule;
mod trainer;

pub use policy::{argmax, greedy_action, select_action, states_to_input, td_target, Variant};
pub use replay::ReplayBuffer;
pub use schedule::ExplorationSchedule;
pub use trainer::{
    build_reward_mode, cycling_source, tiny_net_config, AgentConfig, EnvSource, EpochRecord,
    NullObserver, RewardSignal, StepOutcome, TrainObserver, TrainResult, Trainer, Transition,
    SUPERVISED_TOLERANCE,
};
