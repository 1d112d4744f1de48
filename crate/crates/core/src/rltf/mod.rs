//! Preference data, reward modelling and policy fine-tuning driven by the
//! trip-length match between a completion and its reference trajectory.

pub mod ppo;
pub mod prefs;
pub mod reward;
pub mod sft;

use crate::roadnet::RoadNetwork;

pub use ppo::{ppo_finetune, ppo_reward, ppo_trace_csv, PpoConfig, PpoTracePoint};
pub use prefs::{build_preference_dataset, gamma, label_pair, prompt_len, read_pairs, write_pairs, PrefConfig, PrefStats, PreferencePair};
pub use reward::{pair_loss, pairwise_accuracy, reward_trace_csv, train_reward_model, RewardConfig, RewardOutcome, RewardTracePoint};
pub use sft::{sft_finetune, SftConfig};

/// Summed length of the links in `traj`.
pub fn traj_length(traj: &[usize], network: &RoadNetwork) -> f64 {
    traj.iter().map(|&l| network.link(l).length).sum()
}
