//! Shared fixtures for the criterion benchmarks.

use draa_core::model::{BanditInstance, InstanceDescriptor, RewardModel};

/// Eight arms, four agents, each arm held by exactly two agents.
pub fn overlap_instance(reward_model: RewardModel) -> BanditInstance {
    BanditInstance::new(&InstanceDescriptor {
        num_arms: 8,
        num_agents: 4,
        arm_sets: vec![vec![0, 1, 2, 3], vec![2, 3, 4, 5], vec![4, 5, 6, 7], vec![6, 7, 0, 1]],
        means: vec![0.9, 0.5, 0.7, 0.3, 0.8, 0.4, 0.6, 0.2],
        reward_model,
    })
    .expect("valid instance")
}
