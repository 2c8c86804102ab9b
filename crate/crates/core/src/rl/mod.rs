//! Cart-pole control with deep Q-learning.

pub mod cartpole;
pub mod dqn;
pub mod replay;

pub use cartpole::{env_reset, Action, CartPole, CartPoleState, StepOutcome, MAX_EPISODE_STEPS};
pub use dqn::{
    argmax, best_eval, dqn_update, epsilon, evaluate_policy, scale_state, select_action,
    sync_target, train_dqn, DqnConfig, DqnMetricRow, DqnUpdate, EpsilonSchedule, TargetMode,
    DQN_METRIC_COLUMNS, DQN_SCHEDULE, OBS_SCALE,
};
pub use replay::{ReplayBuffer, Transition};
