//! Regret accounting, run summaries, corruption diagnostics and the
//! reference terms of the regret bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{CorruptionLedger, LedgerError, LedgerTotals};
use crate::draa::{
    probability_bound_violations, ArmShares, BoundViolation, EpochSchedule, EstimatorKind, GAP_CAP, GAP_FLOOR,
};
use crate::model::BanditInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("all arms share the same mean, so the minimum gap is undefined")]
    UndefinedMinGap,
    #[error("delta must lie in (0,1), got {0}")]
    InvalidDelta(f64),
}

/// One agent's record for one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub arm: u32,
    pub observed: f64,
    pub clean: f64,
    /// `μ_{k*_ℓ} - μ_{k^t_ℓ}`.
    pub regret: f64,
    /// This agent's ∞-norm corruption in this round.
    pub corruption: f64,
}

/// Full per-round history of a run, `T · L` entries in round-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub seed: u64,
    pub num_agents: usize,
    pub entries: Vec<TraceEntry>,
}

impl RunTrace {
    pub fn new(seed: u64, num_agents: usize) -> Self {
        Self { seed, num_agents, entries: Vec::new() }
    }

    pub fn rounds(&self) -> u64 {
        (self.entries.len() / self.num_agents.max(1)) as u64
    }

    /// Entries of round `t` (1-based), one per agent.
    pub fn round(&self, t: u64) -> &[TraceEntry] {
        let l = self.num_agents;
        let start = (t as usize - 1) * l;
        &self.entries[start..start + l]
    }

    /// Pulled arms in entry order.
    pub fn pulls(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.arm)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "agent", "arm", "observed", "clean", "regret", "corruption"])?;
        for (i, e) in self.entries.iter().enumerate() {
            let t = i / self.num_agents + 1;
            let agent = i % self.num_agents;
            w.write_record([
                t.to_string(),
                agent.to_string(),
                e.arm.to_string(),
                e.observed.to_string(),
                e.clean.to_string(),
                e.regret.to_string(),
                e.corruption.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTotals {
    pub per_agent: Vec<f64>,
    pub total: f64,
}

/// Realized pseudo-regret of a trace.
pub fn regret(trace: &RunTrace) -> RegretTotals {
    regret_prefix(trace, trace.rounds())
}

/// Pseudo-regret over rounds `1..=t`.
pub fn regret_prefix(trace: &RunTrace, t: u64) -> RegretTotals {
    let l = trace.num_agents;
    let mut per_agent = vec![0.0; l];
    for (i, e) in trace.entries[..t as usize * l].iter().enumerate() {
        per_agent[i % l] += e.regret;
    }
    RegretTotals { total: per_agent.iter().sum(), per_agent }
}

/// Rebuilds the corruption ledger from a trace.
pub fn ledger_from_trace(trace: &RunTrace, schedule: &EpochSchedule) -> CorruptionLedger {
    let mut ledger = CorruptionLedger::new(trace.num_agents);
    for t in 1..=trace.rounds() {
        let epoch = schedule.epoch_of(t);
        for (agent, e) in trace.round(t).iter().enumerate() {
            ledger.record(epoch, agent, e.corruption);
        }
    }
    let complete = (1..=schedule.num_epochs()).take_while(|&m| schedule.end(m) <= trace.rounds()).last().unwrap_or(0);
    ledger.close_epoch(complete);
    ledger
}

/// Regret and cost at one point of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: u64,
    pub total_regret: f64,
    pub regret_per_agent: Vec<f64>,
    pub corruption: f64,
    pub comm_cost: u64,
}

/// One agent's state during one epoch, captured when the epoch closes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentEpoch {
    pub probabilities: Vec<f64>,
    /// Gaps carried into the epoch (`Δ^{m-1}`).
    pub prev_gaps: Vec<f64>,
    pub active: Vec<bool>,
    pub fallback: bool,
    pub pulls: Vec<u64>,
    pub reward_sums: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub start: u64,
    pub length: u64,
    pub agents: Vec<AgentEpoch>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon: u64,
    pub estimator: EstimatorKind,
    pub lambda: f64,
    pub lambda_scale: Option<f64>,
    pub delta: Option<f64>,
    pub epoch_lengths: Vec<u64>,
    pub num_epochs: usize,
    pub regret_per_agent: Vec<f64>,
    pub total_regret: f64,
    pub comm_cost: u64,
    pub message_scalars: usize,
    pub corruption: LedgerTotals,
    pub fallback_activations: usize,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// `ρ^m = Σ_{s≤m} 2 C^s / (8^(m-s-1) L_min T^s)`.
pub fn rho(epoch_corruption: &[f64], epoch_lengths: &[u64], min_agents: usize, m: usize) -> f64 {
    (1..=m)
        .map(|s| {
            let discount = 8f64.powi(m as i32 - s as i32 - 1);
            2.0 * epoch_corruption[s - 1] / (discount * min_agents as f64 * epoch_lengths[s - 1] as f64)
        })
        .sum()
}

/// [`rho`] read from a ledger whose epochs `1..=m` are closed.
pub fn rho_diagnostic(
    ledger: &CorruptionLedger,
    schedule: &EpochSchedule,
    min_agents: usize,
    m: usize,
) -> Result<f64, LedgerError> {
    let per_epoch = (1..=m).map(|s| ledger.epoch_total(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(rho(&per_epoch, schedule.lengths(), min_agents, m))
}

/// The two terms of the high-probability regret bound, without constants.
/// A shape reference for plots, not a bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryTerms {
    /// `(L / L_min) · C`.
    pub corruption_term: f64,
    /// `ln(K L ln T / δ) · ln T · K / Δ_min`.
    pub stochastic_term: f64,
}

pub fn theory_terms(
    instance: &BanditInstance,
    corruption: f64,
    horizon: u64,
    delta: f64,
) -> Result<TheoryTerms, MetricsError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MetricsError::InvalidDelta(delta));
    }
    let min_gap = instance.min_global_gap().ok_or(MetricsError::UndefinedMinGap)?;
    let k = instance.num_arms() as f64;
    let l = instance.num_agents() as f64;
    let log_t = (horizon as f64).ln();
    Ok(TheoryTerms {
        corruption_term: l / instance.min_agents_per_arm() as f64 * corruption,
        stochastic_term: (k * l * log_t / delta).ln() * log_t * k / min_gap,
    })
}

/// A broken per-epoch invariant found in a summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvariantViolation {
    Simplex { agent: usize, epoch: usize, sum: f64 },
    NonPositive { agent: usize, epoch: usize, arm: usize, probability: f64 },
    ProbabilityBound(BoundViolation),
    GapRange { agent: usize, epoch: usize, arm: usize, gap: f64 },
}

/// Checks the simplex, positivity, probability-bound and gap-range
/// invariants for every epoch and agent. Bound checks skip epochs whose
/// active set came from the fallback.
pub fn epoch_invariant_violations(instance: &BanditInstance, summary: &RunSummary) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    for rec in &summary.epochs {
        for (agent, a) in rec.agents.iter().enumerate() {
            let arms = instance.arm_set(agent);
            let sum: f64 = a.probabilities.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                out.push(InvariantViolation::Simplex { agent, epoch: rec.epoch, sum });
            }
            for (j, &p) in a.probabilities.iter().enumerate() {
                if p <= 0.0 {
                    out.push(InvariantViolation::NonPositive { agent, epoch: rec.epoch, arm: arms[j], probability: p });
                }
            }
            for (j, &g) in a.prev_gaps.iter().enumerate() {
                if !(GAP_FLOOR..=GAP_CAP).contains(&g) {
                    out.push(InvariantViolation::GapRange { agent, epoch: rec.epoch, arm: arms[j], gap: g });
                }
            }
            if !a.fallback {
                let shares = ArmShares {
                    agents_per_arm: arms.iter().map(|&k| instance.agents_per_arm(k)).collect(),
                    min_agents: instance.min_agents_per_arm(),
                    num_arms: instance.num_arms(),
                };
                out.extend(
                    probability_bound_violations(agent, rec.epoch, arms, &a.probabilities, &a.active, &shares)
                        .into_iter()
                        .map(InvariantViolation::ProbabilityBound),
                );
            }
        }
    }
    out
}

/// Counts `(arm, agent, epoch)` cells with expected pulls `p·T^m ≥ min_expected`
/// and how many of them exceed `2 p T^m` actual pulls. Returns `(cells, violations)`.
pub fn pull_concentration(summary: &RunSummary, min_expected: f64) -> (usize, usize) {
    let mut cells = 0;
    let mut bad = 0;
    for rec in &summary.epochs {
        for a in &rec.agents {
            for (&p, &n) in a.probabilities.iter().zip(&a.pulls) {
                let expected = p * rec.length as f64;
                if expected >= min_expected {
                    cells += 1;
                    if n as f64 > 2.0 * expected {
                        bad += 1;
                    }
                }
            }
        }
    }
    (cells, bad)
}

/// Probability mass each agent puts on its true local best arm in `epoch`.
pub fn best_arm_mass(instance: &BanditInstance, summary: &RunSummary, epoch: usize) -> Vec<f64> {
    let rec = &summary.epochs[epoch - 1];
    rec.agents.iter().enumerate().map(|(l, a)| a.probabilities[instance.best_local_index(l)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_instance, InstanceDescriptor, RewardModel};

    fn entry(arm: u32, regret: f64) -> TraceEntry {
        TraceEntry { arm, observed: 0.0, clean: 0.0, regret, corruption: 0.0 }
    }

    #[test]
    fn regret_examples() {
        let mut trace = RunTrace::new(0, 1);
        trace.entries = vec![entry(0, 0.0); 10];
        assert_eq!(regret(&trace).total, 0.0);

        trace.entries = vec![entry(1, 0.9 - 0.5); 10];
        assert!((regret(&trace).per_agent[0] - 4.0).abs() < 1e-12);

        let mut two = RunTrace::new(0, 2);
        for _ in 0..4 {
            two.entries.push(entry(1, 1.0));
            two.entries.push(entry(0, 0.0));
        }
        two.entries.push(entry(1, 0.0));
        two.entries.push(entry(1, 1.0));
        let r = regret(&two);
        assert_eq!(r.per_agent, vec![4.0, 1.0]);
        assert_eq!(r.total, 5.0);
        assert_eq!(regret_prefix(&two, 2).total, 2.0);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(&[0.0, 0.0, 0.0], &[10, 40, 160], 2, 3), 0.0);
        assert_eq!(rho(&[10.0], &[2048], 2, 1), 0.0390625);
        let base = rho(&[3.0, 5.0, 1.0], &[10, 40, 160], 2, 3);
        let doubled = rho(&[6.0, 10.0, 2.0], &[10, 40, 160], 2, 3);
        assert!((doubled - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn rho_from_ledger_needs_closed_epochs() {
        let schedule = EpochSchedule::new(1024.0, 4, 2, 100_000).unwrap();
        let mut ledger = CorruptionLedger::new(2);
        ledger.record(1, 0, 6.0);
        ledger.record(1, 1, 4.0);
        assert!(rho_diagnostic(&ledger, &schedule, 2, 1).is_err());
        ledger.close_epoch(1);
        assert_eq!(rho_diagnostic(&ledger, &schedule, 2, 1), Ok(0.0390625));
    }

    fn inst(k: usize, l: usize, sets: Vec<Vec<usize>>, means: Vec<f64>) -> BanditInstance {
        build_instance(&InstanceDescriptor {
            num_arms: k,
            num_agents: l,
            arm_sets: sets,
            means,
            reward_model: RewardModel::Bernoulli,
        })
        .unwrap()
    }

    #[test]
    fn theory_term_examples() {
        // L = 4, L_min = 2
        let i = inst(3, 4, vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1], vec![2]], vec![0.9, 0.5, 0.2]);
        assert_eq!(i.min_agents_per_arm(), 3);
        let i = inst(2, 4, vec![vec![0, 1], vec![0, 1], vec![0], vec![0]], vec![0.9, 0.5]);
        assert_eq!(i.min_agents_per_arm(), 2);
        let terms = theory_terms(&i, 100.0, 10_000, 0.05).unwrap();
        assert_eq!(terms.corruption_term, 200.0);
        assert_eq!(theory_terms(&i, 0.0, 10_000, 0.05).unwrap().corruption_term, 0.0);

        let homog = inst(2, 3, vec![vec![0, 1]; 3], vec![0.9, 0.5]);
        assert_eq!(theory_terms(&homog, 42.0, 10_000, 0.05).unwrap().corruption_term, 42.0);

        let flat = inst(2, 1, vec![vec![0, 1]], vec![0.5, 0.5]);
        assert_eq!(theory_terms(&flat, 0.0, 100, 0.1), Err(MetricsError::UndefinedMinGap));
    }

    #[test]
    fn theory_terms_monotone() {
        let a = inst(3, 1, vec![vec![0, 1, 2]], vec![0.9, 0.5, 0.2]);
        let b = inst(3, 1, vec![vec![0, 1, 2]], vec![0.9, 0.8, 0.2]);
        let ta = theory_terms(&a, 10.0, 1000, 0.1).unwrap();
        let tb = theory_terms(&b, 20.0, 1000, 0.1).unwrap();
        assert!(tb.corruption_term > ta.corruption_term);
        assert!(tb.stochastic_term > ta.stochastic_term);
    }

    #[test]
    fn ledger_rebuilt_from_trace() {
        let schedule = EpochSchedule::new(1.0, 2, 1, 10).unwrap(); // lengths 2, 8
        let mut trace = RunTrace::new(0, 2);
        for t in 1..=10u64 {
            for agent in 0..2 {
                let mut e = entry(0, 0.0);
                e.corruption = if agent == 0 { 0.5 } else { t as f64 / 10.0 };
                trace.entries.push(e);
            }
        }
        let ledger = ledger_from_trace(&trace, &schedule);
        let totals = ledger.totals();
        assert_eq!(totals.per_epoch.len(), 2);
        assert!((totals.per_agent[0] - 5.0).abs() < 1e-12);
        assert!((totals.per_agent[1] - 5.5).abs() < 1e-12);
        assert!((totals.per_epoch[0] - (1.0 + 0.3)).abs() < 1e-12);
    }
}
