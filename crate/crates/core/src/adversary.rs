//! Reward corruption and the corruption ledger.
//!
//! Each round the adversary sees the clean rewards of every `(agent, arm)`
//! pair and the history of earlier rounds, then edits rewards. Edited values
//! are clamped into `[0, 1]` and the ledger measures the per-agent ∞-norm of
//! what was actually delivered.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BanditInstance, RoundSample};
use crate::rng::CounterRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("target arm {arm} out of range ({num_arms} arms)")]
    ArmOutOfRange { arm: usize, num_arms: usize },
    #[error("target agent {agent} out of range ({num_agents} agents)")]
    AgentOutOfRange { agent: usize, num_agents: usize },
    #[error("magnitude must lie in [0,1], got {0}")]
    BadMagnitude(f64),
    #[error("budget must be nonnegative, got {0}")]
    BadBudget(f64),
    #[error("flood epoch must be at least 1")]
    BadEpoch,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("epoch {epoch} is not finished ({closed} epochs closed)")]
    UnfinishedEpoch { epoch: usize, closed: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Down,
    Up,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Down => -1.0,
            Direction::Up => 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryKind {
    #[default]
    Null,
    /// Shifts one arm by `magnitude` every round until `budget` is spent.
    BudgetedTargeted {
        arm: usize,
        magnitude: f64,
        #[serde(default)]
        budget: Option<f64>,
        #[serde(default)]
        direction: Direction,
        /// Restrict to these agents; `None` means every holder of `arm`.
        #[serde(default)]
        agents: Option<Vec<usize>>,
    },
    /// Drives one arm to 0 (down) or 1 (up) from the start of `epoch`. Without
    /// a budget it stops when that epoch ends; with one it continues until the
    /// budget is spent.
    EpochFlood {
        epoch: usize,
        arm: usize,
        #[serde(default)]
        direction: Direction,
        #[serde(default)]
        budget: Option<f64>,
        #[serde(default)]
        agents: Option<Vec<usize>>,
    },
    /// Adaptive: pushes each agent's empirically best arm down and a randomly
    /// chosen other arm up, re-choosing the promoted arm every epoch.
    GapFlip {
        magnitude: f64,
        #[serde(default)]
        budget: Option<f64>,
    },
}

/// What the adversary may see before round `t`: clean rewards of round `t`
/// arrive separately; agents' observations and pulls are strictly earlier.
#[derive(Clone, Debug)]
pub struct History {
    round: u64,
    epoch: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<Vec<u64>>,
    last_pulls: Vec<Option<usize>>,
}

impl History {
    pub fn new(instance: &BanditInstance) -> Self {
        let shape = |v| instance.arm_sets().iter().map(|s| vec![v; s.len()]).collect();
        Self {
            round: 0,
            epoch: 0,
            sums: shape(0.0),
            counts: instance.arm_sets().iter().map(|s| vec![0; s.len()]).collect(),
            last_pulls: vec![None; instance.num_agents()],
        }
    }

    /// Round about to be played.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Mean observed (delivered) reward of a local arm before this round.
    pub fn empirical_mean(&self, agent: usize, local: usize) -> Option<f64> {
        let n = self.counts[agent][local];
        (n > 0).then(|| self.sums[agent][local] / n as f64)
    }

    pub fn pulls(&self, agent: usize, local: usize) -> u64 {
        self.counts[agent][local]
    }

    /// Local arm the agent pulled in the previous round.
    pub fn last_pull(&self, agent: usize) -> Option<usize> {
        self.last_pulls[agent]
    }

    pub fn begin_round(&mut self, round: u64, epoch: usize) {
        self.round = round;
        self.epoch = epoch;
    }

    /// Appends an observation; call only after the adversary has acted.
    pub fn record(&mut self, agent: usize, local: usize, observed: f64) {
        self.sums[agent][local] += observed;
        self.counts[agent][local] += 1;
        self.last_pulls[agent] = Some(local);
    }
}

/// A configured adversary plus its running state.
#[derive(Clone, Debug)]
pub struct Adversary {
    kind: AdversaryKind,
    spent: f64,
    /// For each agent, whether it is targeted, and the local index of the arm.
    targets: Vec<Option<usize>>,
    promoted: Vec<Option<usize>>,
    promoted_epoch: usize,
}

impl Adversary {
    pub fn new(kind: AdversaryKind, instance: &BanditInstance) -> Result<Self, AdversaryError> {
        let num_agents = instance.num_agents();
        let check_budget = |b: &Option<f64>| match *b {
            Some(b) if !(b >= 0.0 && b.is_finite()) => Err(AdversaryError::BadBudget(b)),
            _ => Ok(()),
        };
        let check_magnitude = |m: f64| {
            if (0.0..=1.0).contains(&m) {
                Ok(())
            } else {
                Err(AdversaryError::BadMagnitude(m))
            }
        };
        let targets = match &kind {
            AdversaryKind::Null => vec![None; num_agents],
            AdversaryKind::GapFlip { magnitude, budget } => {
                check_magnitude(*magnitude)?;
                check_budget(budget)?;
                vec![None; num_agents]
            }
            AdversaryKind::BudgetedTargeted { arm, magnitude, budget, agents, .. } => {
                check_magnitude(*magnitude)?;
                check_budget(budget)?;
                arm_targets(instance, *arm, agents.as_deref())?
            }
            AdversaryKind::EpochFlood { epoch, arm, budget, agents, .. } => {
                if *epoch == 0 {
                    return Err(AdversaryError::BadEpoch);
                }
                check_budget(budget)?;
                arm_targets(instance, *arm, agents.as_deref())?
            }
        };
        Ok(Self { kind, spent: 0.0, targets, promoted: vec![None; num_agents], promoted_epoch: 0 })
    }

    pub fn kind(&self) -> &AdversaryKind {
        &self.kind
    }

    /// Corruption delivered so far, as counted against the budget.
    pub fn spent(&self) -> f64 {
        self.spent
    }

    fn remaining(&self, budget: Option<f64>) -> f64 {
        budget.map_or(f64::INFINITY, |b| (b - self.spent).max(0.0))
    }

    /// Writes the delivered rewards for this round into `delivered` and each
    /// agent's ∞-norm contribution into `contributions`.
    pub fn corrupt(
        &mut self,
        clean: &RoundSample,
        history: &History,
        rng: &mut CounterRng,
        delivered: &mut RoundSample,
        contributions: &mut [f64],
    ) {
        delivered.copy_from(clean);
        contributions.iter_mut().for_each(|c| *c = 0.0);
        match self.kind.clone() {
            AdversaryKind::Null => {}
            AdversaryKind::BudgetedTargeted { magnitude, budget, direction, .. } => {
                self.shift_targets(clean, delivered, contributions, magnitude, direction, budget);
            }
            AdversaryKind::EpochFlood { epoch, direction, budget, .. } => {
                let live = match budget {
                    None => history.epoch() == epoch,
                    Some(_) => history.epoch() >= epoch,
                };
                if live {
                    self.shift_targets(clean, delivered, contributions, 1.0, direction, budget);
                }
            }
            AdversaryKind::GapFlip { magnitude, budget } => {
                self.gap_flip(clean, history, rng, delivered, contributions, magnitude, budget);
            }
        }
    }

    fn shift_targets(
        &mut self,
        clean: &RoundSample,
        delivered: &mut RoundSample,
        contributions: &mut [f64],
        magnitude: f64,
        direction: Direction,
        budget: Option<f64>,
    ) {
        for (agent, &target) in self.targets.iter().enumerate() {
            let Some(j) = target else { continue };
            let step = magnitude.min(self.remaining(budget));
            if step <= 0.0 {
                return;
            }
            let before = clean.rewards[agent][j];
            let after = (before + direction.sign() * step).clamp(0.0, 1.0);
            delivered.rewards[agent][j] = after;
            let d = (after - before).abs();
            contributions[agent] = d;
            self.spent += d;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gap_flip(
        &mut self,
        clean: &RoundSample,
        history: &History,
        rng: &mut CounterRng,
        delivered: &mut RoundSample,
        contributions: &mut [f64],
        magnitude: f64,
        budget: Option<f64>,
    ) {
        let rechoose = history.epoch() != self.promoted_epoch;
        self.promoted_epoch = history.epoch();
        for (agent, row) in clean.rewards.iter().enumerate() {
            let n = row.len();
            if n < 2 {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if let Some(mean) = history.empirical_mean(agent, j) {
                    if best.is_none_or(|(_, b)| mean > b) {
                        best = Some((j, mean));
                    }
                }
            }
            let Some((best, _)) = best else { continue };
            if rechoose || self.promoted[agent].is_none() {
                self.promoted[agent] = Some(rng.random_range(0..n));
            }
            let mut promoted = self.promoted[agent].expect("set above");
            if promoted == best {
                promoted = (best + 1) % n;
            }

            let step = magnitude.min(self.remaining(budget));
            if step <= 0.0 {
                return;
            }
            let down = (row[best] - step).max(0.0);
            let up = (row[promoted] + step).min(1.0);
            delivered.rewards[agent][best] = down;
            delivered.rewards[agent][promoted] = up;
            let d = (row[best] - down).max(up - row[promoted]);
            contributions[agent] = d;
            self.spent += d;
        }
    }
}

fn arm_targets(
    instance: &BanditInstance,
    arm: usize,
    agents: Option<&[usize]>,
) -> Result<Vec<Option<usize>>, AdversaryError> {
    if arm >= instance.num_arms() {
        return Err(AdversaryError::ArmOutOfRange { arm, num_arms: instance.num_arms() });
    }
    let num_agents = instance.num_agents();
    if let Some(list) = agents {
        if let Some(&agent) = list.iter().find(|&&a| a >= num_agents) {
            return Err(AdversaryError::AgentOutOfRange { agent, num_agents });
        }
    }
    Ok((0..num_agents)
        .map(|l| {
            let chosen = agents.is_none_or(|list| list.contains(&l));
            chosen.then(|| instance.local_index(l, arm)).flatten()
        })
        .collect())
}

/// Per-agent ∞-norm of a round's edit: `max_k |delivered - clean|`.
pub fn round_contributions(clean: &RoundSample, delivered: &RoundSample) -> Vec<f64> {
    clean
        .rewards
        .iter()
        .zip(&delivered.rewards)
        .map(|(c, d)| c.iter().zip(d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect()
}

/// Corruption per epoch and agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLedger {
    num_agents: usize,
    /// `per_epoch[m - 1][l]`.
    per_epoch: Vec<Vec<f64>>,
    closed: usize,
    running: f64,
}

/// Aggregates over finished epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerTotals {
    /// `C`.
    pub total: f64,
    /// `C_ℓ`.
    pub per_agent: Vec<f64>,
    /// `C^m`, index `m - 1`.
    pub per_epoch: Vec<f64>,
}

impl CorruptionLedger {
    pub fn new(num_agents: usize) -> Self {
        Self { num_agents, per_epoch: Vec::new(), closed: 0, running: 0.0 }
    }

    pub fn record(&mut self, epoch: usize, agent: usize, amount: f64) {
        debug_assert!(amount >= 0.0);
        while self.per_epoch.len() < epoch {
            self.per_epoch.push(vec![0.0; self.num_agents]);
        }
        self.per_epoch[epoch - 1][agent] += amount;
        self.running += amount;
    }

    pub fn record_round(&mut self, epoch: usize, contributions: &[f64]) {
        for (agent, &c) in contributions.iter().enumerate() {
            if c != 0.0 {
                self.record(epoch, agent, c);
            }
        }
    }

    /// Marks epochs `1..=epoch` finished.
    pub fn close_epoch(&mut self, epoch: usize) {
        while self.per_epoch.len() < epoch {
            self.per_epoch.push(vec![0.0; self.num_agents]);
        }
        self.closed = self.closed.max(epoch);
    }

    pub fn closed_epochs(&self) -> usize {
        self.closed
    }

    /// Everything recorded so far, including an open epoch.
    pub fn running_total(&self) -> f64 {
        self.running
    }

    /// `C^m` for a finished epoch.
    pub fn epoch_total(&self, epoch: usize) -> Result<f64, LedgerError> {
        if epoch == 0 || epoch > self.closed {
            return Err(LedgerError::UnfinishedEpoch { epoch, closed: self.closed });
        }
        Ok(self.per_epoch[epoch - 1].iter().sum())
    }

    /// `C^m_ℓ` for a finished epoch.
    pub fn epoch_agent(&self, epoch: usize, agent: usize) -> Result<f64, LedgerError> {
        self.epoch_total(epoch)?;
        Ok(self.per_epoch[epoch - 1][agent])
    }

    pub fn totals(&self) -> LedgerTotals {
        let closed = &self.per_epoch[..self.closed];
        let per_agent: Vec<f64> = (0..self.num_agents).map(|l| closed.iter().map(|row| row[l]).sum()).collect();
        LedgerTotals {
            total: per_agent.iter().sum(),
            per_epoch: closed.iter().map(|row| row.iter().sum()).collect(),
            per_agent,
        }
    }
}
