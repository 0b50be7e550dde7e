//! Distributed Robust Arm Activation: per-agent epoch state, active/bad set
//! construction, pull probabilities, and the two cross-agent reward
//! estimators.
//!
//! Arms are never eliminated. Near-best arms share most of the probability
//! mass; every other arm keeps a small inverse-gap-squared share that
//! shrinks by a factor of four per epoch.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::EpochBroadcast;
use crate::model::BanditInstance;
use crate::rng::unit_f64;

/// Lower clamp on gap estimates, `2^-3`.
pub const GAP_FLOOR: f64 = 0.125;
/// Additive slack in the gap update and active-set threshold, `3 * 2^-7`.
pub const GAP_SLACK: f64 = 3.0 / 128.0;
/// Largest possible gap estimate, `1 + 3 * 2^-7`.
pub const GAP_CAP: f64 = 1.0 + GAP_SLACK;
/// Fraction of the previous gap subtracted when forming the local maximum.
pub const RMAX_DISCOUNT: f64 = 1.0 / 16.0;
/// Default multiplier in front of the log term of the exploration constant.
pub const DEFAULT_LAMBDA_SCALE: f64 = 16_777_216.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DraaError {
    #[error("exploration constant must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("lambda_scale must be positive and finite, got {0}")]
    InvalidLambdaScale(f64),
    #[error("delta must lie in (0,1), got {0}")]
    InvalidDelta(f64),
    #[error("horizon must be at least 2 rounds, got {0}")]
    InvalidHorizon(u64),
    #[error("observed reward {value} outside [0,1]")]
    RewardOutOfRange { value: f64 },
    #[error("local arm index {index} out of range for an arm-set of size {len}")]
    LocalIndexOutOfRange { index: usize, len: usize },
    #[error("agent {agent}: bad-arm mass leaves remainder {remainder} for epoch {epoch}")]
    NonPositiveRemainder { agent: usize, epoch: usize, remainder: f64 },
    #[error("agent {agent}: probabilities for epoch {epoch} sum to {sum}")]
    SimplexViolation { agent: usize, epoch: usize, sum: f64 },
    #[error("agent {agent}: no report for arm {arm} in epoch {epoch}")]
    MissingReport { agent: usize, arm: usize, epoch: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Inverse-probability weighting per reporting agent.
    #[default]
    Weighted,
    /// Pooled reward sum over pooled expected pulls.
    Naive,
}

impl EstimatorKind {
    /// Estimates the mean of `arm` from one epoch's broadcasts.
    pub fn estimate(self, broadcasts: &[EpochBroadcast], arm: usize, epoch_len: u64) -> Option<f64> {
        let reports = broadcasts.iter().filter_map(|b| b.report(arm));
        match self {
            EstimatorKind::Weighted => estimate_weighted(reports, epoch_len),
            EstimatorKind::Naive => estimate_naive(reports, epoch_len),
        }
    }
}

/// `Σ R̃_ℓ' / p_ℓ'` over reporting agents, divided by `L_k · T^m`.
///
/// Not clipped: inverse-probability weighting can push the estimate
/// outside `[0, 1]`. `None` if nobody reported the arm.
pub fn estimate_weighted(reports: impl IntoIterator<Item = (f64, f64)>, epoch_len: u64) -> Option<f64> {
    let mut weighted = 0.0;
    let mut holders = 0usize;
    for (p, sum) in reports {
        weighted += sum / p;
        holders += 1;
    }
    (holders > 0).then(|| weighted / (holders as f64 * epoch_len as f64))
}

/// `Σ R̃_ℓ' / (Σ p_ℓ' · T^m)`.
pub fn estimate_naive(reports: impl IntoIterator<Item = (f64, f64)>, epoch_len: u64) -> Option<f64> {
    let mut rewards = 0.0;
    let mut mass = 0.0;
    let mut holders = 0usize;
    for (p, sum) in reports {
        rewards += sum;
        mass += p;
        holders += 1;
    }
    (holders > 0).then(|| rewards / (mass * epoch_len as f64))
}

/// `λ = scale · ln(8 K L ln T / δ)`.
pub fn exploration_constant(
    lambda_scale: f64,
    delta: f64,
    num_arms: usize,
    num_agents: usize,
    horizon: u64,
) -> Result<f64, DraaError> {
    if !(lambda_scale.is_finite() && lambda_scale > 0.0) {
        return Err(DraaError::InvalidLambdaScale(lambda_scale));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DraaError::InvalidDelta(delta));
    }
    if horizon < 2 {
        return Err(DraaError::InvalidHorizon(horizon));
    }
    let arg = 8.0 * num_arms as f64 * num_agents as f64 * (horizon as f64).ln() / delta;
    let lambda = lambda_scale * arg.ln();
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(DraaError::InvalidLambda(lambda));
    }
    Ok(lambda)
}

/// Fixed, agent-independent epoch lengths that partition `1..=T`.
///
/// Epoch 1 lasts `ceil(λ K / L_min)` rounds and each later epoch is exactly
/// four times the previous one; the last epoch is cut at the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub lambda: f64,
    pub lambda_scale: Option<f64>,
    pub delta: Option<f64>,
    pub horizon: u64,
    pub base_length: u64,
    lengths: Vec<u64>,
    /// Inclusive last round of each epoch.
    ends: Vec<u64>,
}

impl EpochSchedule {
    pub fn new(lambda: f64, num_arms: usize, min_agents: usize, horizon: u64) -> Result<Self, DraaError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(DraaError::InvalidLambda(lambda));
        }
        let base = (lambda * num_arms as f64 / min_agents as f64).ceil();
        if !(base >= 1.0 && base < u64::MAX as f64) {
            return Err(DraaError::InvalidLambda(lambda));
        }
        let base_length = base as u64;
        let mut lengths = Vec::new();
        let mut ends = Vec::new();
        let mut done = 0u64;
        let mut full = base_length;
        while done < horizon {
            let len = full.min(horizon - done);
            done += len;
            lengths.push(len);
            ends.push(done);
            full = full.saturating_mul(4);
        }
        Ok(Self { lambda, lambda_scale: None, delta: None, horizon, base_length, lengths, ends })
    }

    /// Schedule with `λ` derived from `λ_scale` and `δ`.
    pub fn for_instance(
        instance: &BanditInstance,
        lambda_scale: f64,
        delta: f64,
        horizon: u64,
    ) -> Result<Self, DraaError> {
        let lambda = exploration_constant(lambda_scale, delta, instance.num_arms(), instance.num_agents(), horizon)?;
        let mut s = Self::new(lambda, instance.num_arms(), instance.min_agents_per_arm(), horizon)?;
        s.lambda_scale = Some(lambda_scale);
        s.delta = Some(delta);
        Ok(s)
    }

    /// Length of epoch `m` (1-based) after truncation; 0 past the horizon.
    pub fn epoch_length(&self, m: usize) -> u64 {
        m.checked_sub(1).and_then(|i| self.lengths.get(i)).copied().unwrap_or(0)
    }

    /// `ceil(λK/L_min) · 4^(m-1)`, ignoring the horizon.
    pub fn untruncated_length(&self, m: usize) -> u64 {
        let shift = 2 * (m.max(1) - 1) as u32;
        self.base_length.checked_shl(shift).filter(|v| v >> shift == self.base_length).unwrap_or(u64::MAX)
    }

    /// Number of epochs `M` needed to cover the horizon.
    pub fn num_epochs(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[u64] {
        &self.lengths
    }

    /// First round of epoch `m`.
    pub fn start(&self, m: usize) -> u64 {
        if m <= 1 {
            1
        } else {
            self.ends[m - 2] + 1
        }
    }

    /// Last round of epoch `m`.
    pub fn end(&self, m: usize) -> u64 {
        self.ends[m - 1]
    }

    /// Epoch containing round `t`.
    pub fn epoch_of(&self, t: u64) -> usize {
        self.ends.partition_point(|&e| e < t) + 1
    }
}

/// `2^-(m+3) · sqrt(L_min / L) - 3·2^-7`, the active-set cut after epoch `m`.
pub fn active_threshold(m: usize, min_agents: usize, num_agents: usize) -> f64 {
    let ratio = min_agents as f64 / num_agents as f64;
    2f64.powi(-(m as i32 + 3)) * ratio.sqrt() - GAP_SLACK
}

/// Result of splitting an arm-set after epoch `m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetSplit {
    /// `active[j]` is true when local arm `j` is in the active set.
    pub active: Vec<bool>,
    /// The threshold left nothing active and the top estimate was promoted.
    pub fallback: bool,
}

/// Arms whose estimate is within the threshold of `r_max` are active; the
/// rest are bad. Comparison is strict. If nothing qualifies, the arm with the
/// largest estimate (lowest index on ties) is made active.
pub fn split_sets(estimates: &[f64], r_max: f64, m: usize, min_agents: usize, num_agents: usize) -> SetSplit {
    let threshold = active_threshold(m, min_agents, num_agents);
    let mut active: Vec<bool> = estimates.iter().map(|&r| r_max - r < threshold).collect();
    let fallback = !active.iter().any(|&a| a);
    if fallback {
        let mut best = 0;
        for (j, &r) in estimates.iter().enumerate().skip(1) {
            if r > estimates[best] {
                best = j;
            }
        }
        active[best] = true;
    }
    SetSplit { active, fallback }
}

/// Per-agent constants the probability rule needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmShares {
    /// `L_k` for each local arm.
    pub agents_per_arm: Vec<usize>,
    pub min_agents: usize,
    pub num_arms: usize,
}

/// Pull probabilities for epoch `next_epoch`.
///
/// Bad arm `j` gets `4^-next · (Δ_j^-2 / Σ_all Δ^-2) · (L_min / L_j) · (K_ℓ / K)`;
/// active arms split what remains evenly.
pub fn assign_probabilities(
    active: &[bool],
    gaps: &[f64],
    next_epoch: usize,
    shares: &ArmShares,
) -> Result<Vec<f64>, f64> {
    let local = gaps.len();
    let inv_sq: Vec<f64> = gaps.iter().map(|g| 1.0 / (g * g)).collect();
    let inv_sq_total: f64 = inv_sq.iter().sum();
    let decay = 2f64.powi(-2 * next_epoch as i32);
    let local_frac = local as f64 / shares.num_arms as f64;

    let mut probs = vec![0.0; local];
    let mut bad_mass = 0.0;
    for j in (0..local).filter(|&j| !active[j]) {
        let holders = shares.min_agents as f64 / shares.agents_per_arm[j] as f64;
        probs[j] = decay * (inv_sq[j] / inv_sq_total) * holders * local_frac;
        bad_mass += probs[j];
    }
    let n_active = active.iter().filter(|&&a| a).count();
    let remainder = 1.0 - bad_mass;
    if n_active == 0 || remainder <= 0.0 {
        return Err(remainder);
    }
    let share = remainder / n_active as f64;
    for j in (0..local).filter(|&j| active[j]) {
        probs[j] = share;
    }
    Ok(probs)
}

/// `max_j (r_j - Δ_j^{prev} / 16)`.
pub fn update_rmax(estimates: &[f64], prev_gaps: &[f64]) -> f64 {
    estimates.iter().zip(prev_gaps).map(|(r, g)| r - RMAX_DISCOUNT * g).fold(f64::NEG_INFINITY, f64::max)
}

/// `max(2^-3, r_max - r_j + 3·2^-7)` for each arm, capped at `1 + 3·2^-7`.
///
/// The cap only binds when an unclipped estimate leaves `[0, 1]`.
pub fn update_gaps(estimates: &[f64], r_max: f64) -> Vec<f64> {
    estimates.iter().map(|r| (r_max - r + GAP_SLACK).clamp(GAP_FLOOR, GAP_CAP)).collect()
}

/// Which side of the split a probability bound applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmClass {
    Active,
    Bad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundViolation {
    pub agent: usize,
    pub epoch: usize,
    pub arm: usize,
    pub class: ArmClass,
    pub probability: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Checks the per-arm probability bounds of epoch `epoch`:
/// bad arms in `(L_min/L_k) 2^(-2m∓7) / K`, active arms in `[3/(4|A|), 1/|A|]`.
pub fn probability_bound_violations(
    agent: usize,
    epoch: usize,
    arms: &[usize],
    probabilities: &[f64],
    active: &[bool],
    shares: &ArmShares,
) -> Vec<BoundViolation> {
    let n_active = active.iter().filter(|&&a| a).count() as f64;
    let k = shares.num_arms as f64;
    let m = epoch as i32;
    let mut out = Vec::new();
    for j in 0..arms.len() {
        let p = probabilities[j];
        let (class, lower, upper) = if active[j] {
            (ArmClass::Active, 0.75 / n_active, 1.0 / n_active)
        } else {
            let holders = shares.min_agents as f64 / shares.agents_per_arm[j] as f64;
            (ArmClass::Bad, holders * 2f64.powi(-2 * m - 7) / k, holders * 2f64.powi(-2 * m + 7) / k)
        };
        if !(lower..=upper).contains(&p) {
            out.push(BoundViolation { agent, epoch, arm: arms[j], class, probability: p, lower, upper });
        }
    }
    out
}

/// One agent's view of the algorithm during the current epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    agent: usize,
    epoch: usize,
    arms: Vec<usize>,
    shares: ArmShares,
    num_agents: usize,
    /// `Δ^{m-1}` per local arm.
    prev_gaps: Vec<f64>,
    /// `r^{m-1}` per local arm.
    estimates: Vec<f64>,
    r_max: f64,
    active: Vec<bool>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    reward_sums: Vec<f64>,
    pull_counts: Vec<u64>,
    fallback: bool,
}

impl AgentState {
    /// Epoch-1 state: all gaps and estimates at 1, every arm active, uniform
    /// probabilities.
    pub fn init_epoch1(instance: &BanditInstance, agent: usize) -> Self {
        let arms = instance.arm_set(agent).to_vec();
        let n = arms.len();
        let shares = ArmShares {
            agents_per_arm: arms.iter().map(|&a| instance.agents_per_arm(a)).collect(),
            min_agents: instance.min_agents_per_arm(),
            num_arms: instance.num_arms(),
        };
        let probabilities = vec![1.0 / n as f64; n];
        let mut state = Self {
            agent,
            epoch: 1,
            arms,
            shares,
            num_agents: instance.num_agents(),
            prev_gaps: vec![1.0; n],
            estimates: vec![1.0; n],
            r_max: 1.0 - RMAX_DISCOUNT,
            active: vec![true; n],
            probabilities,
            cumulative: Vec::new(),
            reward_sums: vec![0.0; n],
            pull_counts: vec![0; n],
            fallback: false,
        };
        state.rebuild_cdf();
        state
    }

    /// Epoch-1 state with the pull distribution replaced, for fixed-probability
    /// experiments. `probabilities` must be aligned with the agent's arm-set.
    pub fn with_probabilities(instance: &BanditInstance, agent: usize, probabilities: Vec<f64>) -> Self {
        let mut state = Self::init_epoch1(instance, agent);
        assert_eq!(probabilities.len(), state.arms.len(), "one probability per local arm");
        state.probabilities = probabilities;
        state.rebuild_cdf();
        state
    }

    fn rebuild_cdf(&mut self) {
        let mut acc = 0.0;
        self.cumulative = self
            .probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn arms(&self) -> &[usize] {
        &self.arms
    }

    pub fn shares(&self) -> &ArmShares {
        &self.shares
    }

    pub fn prev_gaps(&self) -> &[f64] {
        &self.prev_gaps
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn reward_sums(&self) -> &[f64] {
        &self.reward_sums
    }

    pub fn pull_counts(&self) -> &[u64] {
        &self.pull_counts
    }

    /// Whether the current active set came from the empty-set fallback.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// Samples a local arm index by inverse CDF over the arm-set in ascending
    /// arm order.
    #[inline]
    pub fn pull<R: RngCore>(&self, rng: &mut R) -> usize {
        let u = unit_f64(rng.next_u64());
        let j = self.cumulative.partition_point(|&c| c <= u);
        j.min(self.cumulative.len() - 1)
    }

    #[inline]
    pub fn record_observation(&mut self, local: usize, reward: f64) -> Result<(), DraaError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(DraaError::RewardOutOfRange { value: reward });
        }
        if local >= self.arms.len() {
            return Err(DraaError::LocalIndexOutOfRange { index: local, len: self.arms.len() });
        }
        self.reward_sums[local] += reward;
        self.pull_counts[local] += 1;
        Ok(())
    }

    /// Snapshot of this epoch's sums, probabilities, previous gaps and active set.
    pub fn broadcast(&self) -> EpochBroadcast {
        EpochBroadcast {
            sender: self.agent,
            epoch: self.epoch,
            arms: self.arms.clone(),
            reward_sums: self.reward_sums.clone(),
            probabilities: self.probabilities.clone(),
            prev_gaps: self.prev_gaps.clone(),
            active: self.arms.iter().zip(&self.active).filter(|(_, &a)| a).map(|(&arm, _)| arm).collect(),
        }
    }

    /// Closes the current epoch from everyone's broadcasts and prepares the
    /// next: estimates, local maximum, gaps, set split, probabilities.
    pub fn finish_epoch(
        &mut self,
        broadcasts: &[EpochBroadcast],
        epoch_len: u64,
        estimator: EstimatorKind,
    ) -> Result<(), DraaError> {
        let m = self.epoch;
        let estimates = self
            .arms
            .iter()
            .map(|&arm| {
                estimator.estimate(broadcasts, arm, epoch_len).ok_or(DraaError::MissingReport {
                    agent: self.agent,
                    arm,
                    epoch: m,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let r_max = update_rmax(&estimates, &self.prev_gaps);
        let gaps = update_gaps(&estimates, r_max);
        let split = split_sets(&estimates, r_max, m, self.shares.min_agents, self.num_agents);
        let probabilities = assign_probabilities(&split.active, &gaps, m + 1, &self.shares)
            .map_err(|remainder| DraaError::NonPositiveRemainder { agent: self.agent, epoch: m + 1, remainder })?;
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DraaError::SimplexViolation { agent: self.agent, epoch: m + 1, sum });
        }

        self.epoch = m + 1;
        self.estimates = estimates;
        self.r_max = r_max;
        self.prev_gaps = gaps;
        self.active = split.active;
        self.fallback = split.fallback;
        self.probabilities = probabilities;
        self.rebuild_cdf();
        self.reward_sums.iter_mut().for_each(|s| *s = 0.0);
        self.pull_counts.iter_mut().for_each(|n| *n = 0);
        Ok(())
    }

    /// Bound violations for the current epoch's probabilities.
    pub fn bound_violations(&self) -> Vec<BoundViolation> {
        probability_bound_violations(
            self.agent,
            self.epoch,
            &self.arms,
            &self.probabilities,
            &self.active,
            &self.shares,
        )
    }
}
