//! Bandit instances with heterogeneous per-agent arm-sets, and the
//! stochastic reward environment.

use rand::RngCore;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, CounterRng, Stream};

/// Means closer than this are treated as tied when locating local best arms.
pub const MEAN_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("instance needs at least one arm")]
    NoArms,
    #[error("instance needs at least one agent")]
    NoAgents,
    #[error("expected {expected} arm-sets (one per agent), got {got}")]
    ArmSetCount { expected: usize, got: usize },
    #[error("expected {expected} means (one per arm), got {got}")]
    MeanCount { expected: usize, got: usize },
    #[error("agent {agent} has an empty arm-set")]
    EmptyArmSet { agent: usize },
    #[error("agent {agent} lists arm {arm} but there are only {num_arms} arms")]
    ArmOutOfRange { agent: usize, arm: usize, num_arms: usize },
    #[error("agent {agent} lists arm {arm} more than once")]
    DuplicateArm { agent: usize, arm: usize },
    #[error("arm {arm} is not covered by any agent")]
    UncoveredArm { arm: usize },
    #[error("mean outside [0,1]: arm {arm} has mean {mean}")]
    MeanOutOfRange { arm: usize, mean: f64 },
    #[error("scaled-Beta concentration must be positive and finite, got {0}")]
    BadConcentration(f64),
}

/// Reward distribution family; every draw lies in `[0, 1]` with mean `μ_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardModel {
    #[default]
    Bernoulli,
    /// `Beta(μκ, (1-μ)κ)`, degenerate at 0 or 1 for extreme means.
    ScaledBeta { concentration: f64 },
}

/// Human-editable description of an instance; arms and agents are 0-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescriptor {
    pub num_arms: usize,
    pub num_agents: usize,
    pub arm_sets: Vec<Vec<usize>>,
    pub means: Vec<f64>,
    #[serde(default)]
    pub reward_model: RewardModel,
}

/// A validated instance. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BanditInstance {
    num_arms: usize,
    arm_sets: Vec<Vec<usize>>,
    means: Vec<f64>,
    reward_model: RewardModel,
    agents_per_arm: Vec<usize>,
    min_agents_per_arm: usize,
    /// Local index (into `arm_sets[l]`) of each agent's best arm.
    local_best: Vec<usize>,
    /// `gaps[l][j]` is the true local gap of `arm_sets[l][j]`.
    gaps: Vec<Vec<f64>>,
}

impl BanditInstance {
    pub fn new(desc: &InstanceDescriptor) -> Result<Self, ModelError> {
        build_instance(desc)
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_agents(&self) -> usize {
        self.arm_sets.len()
    }

    /// Agent `agent`'s arms in ascending order.
    pub fn arm_set(&self, agent: usize) -> &[usize] {
        &self.arm_sets[agent]
    }

    pub fn arm_sets(&self) -> &[Vec<usize>] {
        &self.arm_sets
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn mean(&self, arm: usize) -> f64 {
        self.means[arm]
    }

    pub fn reward_model(&self) -> RewardModel {
        self.reward_model
    }

    /// `L_k`: number of agents whose arm-set contains `arm`.
    pub fn agents_per_arm(&self, arm: usize) -> usize {
        self.agents_per_arm[arm]
    }

    /// `L_min = min_k L_k`.
    pub fn min_agents_per_arm(&self) -> usize {
        self.min_agents_per_arm
    }

    /// Agents holding `arm`, ascending.
    pub fn agents_with_arm(&self, arm: usize) -> impl Iterator<Item = usize> + '_ {
        self.arm_sets.iter().enumerate().filter(move |(_, set)| set.binary_search(&arm).is_ok()).map(|(agent, _)| agent)
    }

    /// Position of `arm` inside agent `agent`'s arm-set.
    pub fn local_index(&self, agent: usize, arm: usize) -> Option<usize> {
        self.arm_sets[agent].binary_search(&arm).ok()
    }

    /// Global index of the agent's best local arm (`k*_ℓ`).
    pub fn best_arm(&self, agent: usize) -> usize {
        self.arm_sets[agent][self.local_best[agent]]
    }

    pub fn best_local_index(&self, agent: usize) -> usize {
        self.local_best[agent]
    }

    /// True local gaps of the agent's arms, aligned with [`Self::arm_set`].
    pub fn local_gaps(&self, agent: usize) -> &[f64] {
        &self.gaps[agent]
    }

    pub fn max_local_gap(&self) -> f64 {
        self.gaps.iter().flat_map(|g| g.iter().copied()).fold(0.0, f64::max)
    }

    /// Smallest non-zero global gap `max_k μ_k - μ_j`, if any arm is suboptimal.
    pub fn min_global_gap(&self) -> Option<f64> {
        let best = self.means.iter().copied().fold(f64::MIN, f64::max);
        self.means.iter().map(|&m| best - m).filter(|&g| g > MEAN_TIE_EPS).min_by(f64::total_cmp)
    }

    /// True when every agent holds every arm.
    pub fn is_homogeneous(&self) -> bool {
        self.arm_sets.iter().all(|s| s.len() == self.num_arms)
    }
}

pub fn build_instance(desc: &InstanceDescriptor) -> Result<BanditInstance, ModelError> {
    let k = desc.num_arms;
    if k == 0 {
        return Err(ModelError::NoArms);
    }
    if desc.num_agents == 0 {
        return Err(ModelError::NoAgents);
    }
    if desc.arm_sets.len() != desc.num_agents {
        return Err(ModelError::ArmSetCount { expected: desc.num_agents, got: desc.arm_sets.len() });
    }
    if desc.means.len() != k {
        return Err(ModelError::MeanCount { expected: k, got: desc.means.len() });
    }
    for (arm, &mean) in desc.means.iter().enumerate() {
        if !(0.0..=1.0).contains(&mean) {
            return Err(ModelError::MeanOutOfRange { arm, mean });
        }
    }
    if let RewardModel::ScaledBeta { concentration } = desc.reward_model {
        if !(concentration.is_finite() && concentration > 0.0) {
            return Err(ModelError::BadConcentration(concentration));
        }
    }

    let mut arm_sets = Vec::with_capacity(desc.num_agents);
    let mut agents_per_arm = vec![0usize; k];
    for (agent, raw) in desc.arm_sets.iter().enumerate() {
        if raw.is_empty() {
            return Err(ModelError::EmptyArmSet { agent });
        }
        let mut set = raw.clone();
        set.sort_unstable();
        for w in set.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateArm { agent, arm: w[0] });
            }
        }
        for &arm in &set {
            if arm >= k {
                return Err(ModelError::ArmOutOfRange { agent, arm, num_arms: k });
            }
            agents_per_arm[arm] += 1;
        }
        arm_sets.push(set);
    }
    if let Some(arm) = agents_per_arm.iter().position(|&c| c == 0) {
        return Err(ModelError::UncoveredArm { arm });
    }
    let min_agents_per_arm = *agents_per_arm.iter().min().expect("k > 0");

    let mut local_best = Vec::with_capacity(arm_sets.len());
    let mut gaps = Vec::with_capacity(arm_sets.len());
    for set in &arm_sets {
        // Ascending scan with a strict improvement margin keeps the lowest
        // index among near-ties.
        let mut best = 0;
        for (j, &arm) in set.iter().enumerate().skip(1) {
            if desc.means[arm] > desc.means[set[best]] + MEAN_TIE_EPS {
                best = j;
            }
        }
        let best_mean = desc.means[set[best]];
        gaps.push(set.iter().map(|&arm| (best_mean - desc.means[arm]).max(0.0)).collect());
        local_best.push(best);
    }

    Ok(BanditInstance {
        num_arms: k,
        arm_sets,
        means: desc.means.clone(),
        reward_model: desc.reward_model,
        agents_per_arm,
        min_agents_per_arm,
        local_best,
        gaps,
    })
}

/// Clean rewards for one round: `rewards[l][j]` belongs to `arm_set(l)[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSample {
    pub round: u64,
    pub rewards: Vec<Vec<f64>>,
}

impl RoundSample {
    /// A zeroed sample shaped for `instance`.
    pub fn zeros(instance: &BanditInstance) -> Self {
        Self { round: 0, rewards: instance.arm_sets.iter().map(|s| vec![0.0; s.len()]).collect() }
    }

    pub fn copy_from(&mut self, other: &RoundSample) {
        self.round = other.round;
        for (dst, src) in self.rewards.iter_mut().zip(&other.rewards) {
            dst.copy_from_slice(src);
        }
    }
}

/// Draws one reward from the cell `(seed, t, agent, arm)` of the environment stream.
#[inline]
pub fn draw_reward(model: RewardModel, mean: f64, seed: u64, round: u64, agent: usize, arm: usize) -> f64 {
    let key = rng::stream_key(seed, Stream::Environment, round, agent as u64, arm as u64);
    match model {
        RewardModel::Bernoulli => {
            let u = rng::unit_f64(CounterRng::keyed(key).next_u64());
            if u < mean {
                1.0
            } else {
                0.0
            }
        }
        RewardModel::ScaledBeta { concentration } => {
            if mean <= 0.0 || mean >= 1.0 {
                return mean;
            }
            let beta =
                Beta::new(mean * concentration, (1.0 - mean) * concentration).expect("validated shape parameters");
            beta.sample(&mut CounterRng::keyed(key)).clamp(0.0, 1.0)
        }
    }
}

/// Fills `out` with fresh i.i.d. rewards for every `(agent, local arm)` pair.
pub fn sample_round_into(instance: &BanditInstance, round: u64, seed: u64, out: &mut RoundSample) {
    out.round = round;
    let model = instance.reward_model;
    for (agent, (set, row)) in instance.arm_sets.iter().zip(out.rewards.iter_mut()).enumerate() {
        for (slot, &arm) in row.iter_mut().zip(set) {
            *slot = draw_reward(model, instance.means[arm], seed, round, agent, arm);
        }
    }
}

pub fn sample_round(instance: &BanditInstance, round: u64, seed: u64) -> RoundSample {
    let mut out = RoundSample::zeros(instance);
    sample_round_into(instance, round, seed, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desc(k: usize, sets: Vec<Vec<usize>>, means: Vec<f64>) -> InstanceDescriptor {
        InstanceDescriptor {
            num_arms: k,
            num_agents: sets.len(),
            arm_sets: sets,
            means,
            reward_model: RewardModel::Bernoulli,
        }
    }

    #[test]
    fn single_agent_identity() {
        let inst = build_instance(&desc(2, vec![vec![0, 1]], vec![0.9, 0.1])).unwrap();
        assert_eq!(inst.agents_per_arm(0), 1);
        assert_eq!(inst.agents_per_arm(1), 1);
        assert_eq!(inst.min_agents_per_arm(), 1);
        assert_eq!(inst.best_arm(0), 0);
        assert!((inst.local_gaps(0)[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn heterogeneous_derived_fields() {
        let inst = build_instance(&desc(3, vec![vec![0, 1], vec![1, 2]], vec![0.9, 0.5, 0.7])).unwrap();
        assert_eq!(inst.agents_per_arm(1), 2);
        assert_eq!(inst.min_agents_per_arm(), 1);
        assert_eq!(inst.best_arm(0), 0);
        assert_eq!(inst.best_arm(1), 2);
        assert!((inst.local_gaps(0)[1] - 0.4).abs() < 1e-12);
        assert!((inst.local_gaps(1)[0] - 0.2).abs() < 1e-12);
        assert!(!inst.is_homogeneous());
    }

    #[test]
    fn validation_errors() {
        let e = build_instance(&desc(2, vec![vec![0, 1]], vec![1.3, 0.1])).unwrap_err();
        assert_eq!(e, ModelError::MeanOutOfRange { arm: 0, mean: 1.3 });
        assert!(e.to_string().contains("mean outside [0,1]"));
        assert_eq!(
            build_instance(&desc(2, vec![vec![0, 1], vec![]], vec![0.5, 0.5])).unwrap_err(),
            ModelError::EmptyArmSet { agent: 1 }
        );
        assert_eq!(
            build_instance(&desc(3, vec![vec![0, 1]], vec![0.5, 0.5, 0.5])).unwrap_err(),
            ModelError::UncoveredArm { arm: 2 }
        );
        assert_eq!(
            build_instance(&desc(2, vec![vec![0, 5]], vec![0.5, 0.5])).unwrap_err(),
            ModelError::ArmOutOfRange { agent: 0, arm: 5, num_arms: 2 }
        );
        assert_eq!(
            build_instance(&desc(2, vec![vec![1, 0, 1]], vec![0.5, 0.5])).unwrap_err(),
            ModelError::DuplicateArm { agent: 0, arm: 1 }
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let inst = build_instance(&desc(3, vec![vec![2, 1, 0]], vec![0.4, 0.7, 0.7])).unwrap();
        assert_eq!(inst.best_arm(0), 1);
    }

    #[test]
    fn degenerate_means() {
        let inst = build_instance(&desc(2, vec![vec![0, 1]], vec![0.0, 1.0])).unwrap();
        for t in 1..500 {
            let s = sample_round(&inst, t, 3);
            assert_eq!(s.rewards[0], vec![0.0, 1.0]);
        }
    }

    #[test]
    fn bernoulli_half_mean() {
        let inst = build_instance(&desc(1, vec![vec![0]], vec![0.5])).unwrap();
        let n = 100_000;
        let sum: f64 = (1..=n).map(|t| sample_round(&inst, t, 99).rewards[0][0]).sum();
        assert!((sum / n as f64 - 0.5).abs() <= 0.01);
    }

    #[test]
    fn scaled_beta_in_range_with_mean() {
        let mut d = desc(1, vec![vec![0]], vec![0.3]);
        d.reward_model = RewardModel::ScaledBeta { concentration: 4.0 };
        let inst = build_instance(&d).unwrap();
        let n = 50_000;
        let mut sum = 0.0;
        for t in 1..=n {
            let r = sample_round(&inst, t, 5).rewards[0][0];
            assert!((0.0..=1.0).contains(&r));
            sum += r;
        }
        // Beta(1.2, 2.8) variance = 0.21 * 0.79 / 5 ... sd ~ 0.205
        assert!((sum / n as f64 - 0.3).abs() < 3.0 * 0.205 / (n as f64).sqrt());
    }

    #[test]
    fn bernoulli_concentration_over_seeds() {
        // |mean - mu| <= 3 sqrt(mu(1-mu)/N) on at least 99% of seeds.
        let mu = 0.3;
        let inst = build_instance(&desc(1, vec![vec![0]], vec![mu])).unwrap();
        let n = 100_000u64;
        let bound = 3.0 * (mu * (1.0 - mu) / n as f64).sqrt();
        let seeds = 100;
        let ok = (0..seeds)
            .filter(|&seed| {
                let sum: f64 = (1..=n).map(|t| sample_round(&inst, t, seed).rewards[0][0]).sum();
                (sum / n as f64 - mu).abs() <= bound
            })
            .count();
        assert!(ok >= 99, "{ok}/{seeds}");
    }

    fn arb_instance() -> impl Strategy<Value = InstanceDescriptor> {
        (1usize..7, 1usize..6).prop_flat_map(|(k, l)| {
            (
                proptest::collection::vec(proptest::collection::vec(any::<bool>(), k), l),
                proptest::collection::vec(0.0f64..=1.0, k),
            )
                .prop_map(move |(masks, means)| {
                    let mut sets: Vec<Vec<usize>> = masks.iter().map(|m| (0..k).filter(|&a| m[a]).collect()).collect();
                    // patch up coverage and non-emptiness
                    for (a, agent) in (0..k).zip((0..l).cycle()) {
                        if !sets.iter().any(|s| s.contains(&a)) {
                            sets[agent].push(a);
                        }
                    }
                    for s in sets.iter_mut() {
                        if s.is_empty() {
                            s.push(0);
                        }
                    }
                    desc(k, sets, means)
                })
        })
    }

    proptest! {
        #[test]
        fn min_agents_matches_brute_force(d in arb_instance()) {
            let inst = build_instance(&d).unwrap();
            let brute = (0..d.num_arms)
                .map(|a| d.arm_sets.iter().filter(|s| s.contains(&a)).count())
                .min()
                .unwrap();
            prop_assert_eq!(inst.min_agents_per_arm(), brute);
            for l in 0..d.num_agents {
                for &g in inst.local_gaps(l) {
                    prop_assert!(g >= 0.0);
                }
                prop_assert_eq!(inst.local_gaps(l)[inst.best_local_index(l)], 0.0);
            }
        }

        #[test]
        fn replay_is_bit_identical(d in arb_instance(), seed in any::<u64>(), t in 1u64..1_000_000) {
            let inst = build_instance(&d).unwrap();
            let a = sample_round(&inst, t, seed);
            let b = sample_round(&inst, t, seed);
            prop_assert_eq!(a, b);
        }
    }
}
