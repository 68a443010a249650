//! Parameter-shared recurrent Q-learners mixed by summation (VDN), with
//! episode replay, a periodically synced target network and ε-greedy
//! exploration.

mod buffer;
mod policy;
mod trainer;

pub use buffer::{EpisodeRecord, ReplayBuffer, Transition};
pub use policy::{epsilon_greedy, greedy_index, mix, td_target, QPolicy};
pub use trainer::{
    eval_seeds, evaluate_greedy, net_shape, select_final_model, train, vdn_loss_grad, write_training_log,
    CurriculumHook, Diagnostics, ExplorationSchedule, FixedEpsilon, LogRow, Snapshot, TrainError, TrainOutcome,
    TrainerConfig, LOG_HEADER,
};
