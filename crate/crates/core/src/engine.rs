//! The per-seed simulation loop: reward draw, corruption, pulls and
//! observations every round; broadcast and estimate updates every epoch.

use thiserror::Error;

use crate::adversary::{Adversary, AdversaryError, AdversaryKind, CorruptionLedger, History};
use crate::comm::{comm_cost, CommError, MessageLog};
use crate::draa::{AgentState, BoundViolation, DraaError, EpochSchedule, EstimatorKind};
use crate::metrics::{AgentEpoch, Checkpoint, EpochRecord, RunSummary, RunTrace, TraceEntry, SUMMARY_SCHEMA_VERSION};
use crate::model::{sample_round_into, BanditInstance, RoundSample};
use crate::rng::{CounterRng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid adversary: {0}")]
    Adversary(#[from] AdversaryError),
    #[error("algorithm invariant violated: {0}")]
    Algorithm(#[from] DraaError),
    #[error("broadcast invariant violated: {0}")]
    Comm(#[from] CommError),
    #[error(
        "probability bound violated: agent {} epoch {} arm {} p={} not in [{}, {}]",
        .0.agent, .0.epoch, .0.arm, .0.probability, .0.lower, .0.upper
    )]
    Bound(BoundViolation),
}

impl EngineError {
    /// Name of the violated invariant, for diagnostics.
    pub fn invariant(&self) -> &'static str {
        match self {
            EngineError::Adversary(_) => "adversary configuration",
            EngineError::Algorithm(DraaError::NonPositiveRemainder { .. }) => "positive active-set remainder",
            EngineError::Algorithm(DraaError::SimplexViolation { .. }) => "probability simplex",
            EngineError::Algorithm(DraaError::RewardOutOfRange { .. }) => "delivered reward in [0,1]",
            EngineError::Algorithm(_) => "algorithm state",
            EngineError::Comm(_) => "one broadcast per agent per epoch",
            EngineError::Bound(_) => "pull probability bounds",
        }
    }
}

/// Everything that defines a run apart from the seed.
#[derive(Clone, Debug)]
pub struct RunSetup<'a> {
    pub instance: &'a BanditInstance,
    pub adversary: &'a AdversaryKind,
    pub estimator: EstimatorKind,
    pub schedule: &'a EpochSchedule,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub checkpoints: usize,
    pub record_trace: bool,
    /// Abort on a probability-bound violation in a non-fallback epoch.
    pub strict_bounds: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { checkpoints: 64, record_trace: false, strict_bounds: true }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Option<RunTrace>,
    pub messages: MessageLog,
}

/// `n` evenly spaced rounds in `1..=horizon`, always ending at the horizon.
pub fn checkpoint_rounds(horizon: u64, n: usize) -> Vec<u64> {
    let n = n.max(1) as u128;
    let mut out: Vec<u64> = (1..=n).map(|i| (i * horizon as u128).div_ceil(n) as u64).filter(|&t| t >= 1).collect();
    out.dedup();
    out
}

pub fn simulate(setup: &RunSetup<'_>, seed: u64, options: &RunOptions) -> Result<RunOutput, EngineError> {
    let inst = setup.instance;
    let schedule = setup.schedule;
    let num_agents = inst.num_agents();
    let horizon = schedule.horizon;

    let mut agents: Vec<AgentState> = (0..num_agents).map(|l| AgentState::init_epoch1(inst, l)).collect();
    let mut agent_rngs: Vec<CounterRng> = (0..num_agents).map(|l| CounterRng::new(seed, Stream::Agent(l))).collect();
    let mut adv_rng = CounterRng::new(seed, Stream::Adversary);
    let mut adversary = Adversary::new(setup.adversary.clone(), inst)?;
    let mut history = History::new(inst);
    let mut ledger = CorruptionLedger::new(num_agents);
    let mut log = MessageLog::new(num_agents);

    let mut clean = RoundSample::zeros(inst);
    let mut delivered = RoundSample::zeros(inst);
    let mut contributions = vec![0.0; num_agents];
    let mut regret = vec![0.0; num_agents];
    let mut trace = options.record_trace.then(|| {
        let mut t = RunTrace::new(seed, num_agents);
        t.entries.reserve(horizon as usize * num_agents);
        t
    });

    let checkpoints = checkpoint_rounds(horizon, options.checkpoints);
    let mut next_cp = 0usize;
    let mut cps = Vec::with_capacity(checkpoints.len());
    let snapshot = |t: u64, regret: &[f64], ledger: &CorruptionLedger, log: &MessageLog| Checkpoint {
        round: t,
        total_regret: regret.iter().sum(),
        regret_per_agent: regret.to_vec(),
        corruption: ledger.running_total(),
        comm_cost: comm_cost(log),
    };

    let mut epochs = Vec::with_capacity(schedule.num_epochs());
    let mut fallback_activations = 0usize;

    for m in 1..=schedule.num_epochs() {
        if options.strict_bounds {
            for a in agents.iter().filter(|a| !a.used_fallback()) {
                if let Some(v) = a.bound_violations().into_iter().next() {
                    return Err(EngineError::Bound(v));
                }
            }
        }
        fallback_activations += agents.iter().filter(|a| a.used_fallback()).count();

        let (start, end) = (schedule.start(m), schedule.end(m));
        for t in start..=end {
            history.begin_round(t, m);
            sample_round_into(inst, t, seed, &mut clean);
            adversary.corrupt(&clean, &history, &mut adv_rng, &mut delivered, &mut contributions);
            ledger.record_round(m, &contributions);

            for (l, agent) in agents.iter_mut().enumerate() {
                let j = agent.pull(&mut agent_rngs[l]);
                let observed = delivered.rewards[l][j];
                agent.record_observation(j, observed)?;
                history.record(l, j, observed);
                let gap = inst.local_gaps(l)[j];
                regret[l] += gap;
                if let Some(tr) = trace.as_mut() {
                    tr.entries.push(TraceEntry {
                        arm: agent.arms()[j] as u32,
                        observed,
                        clean: clean.rewards[l][j],
                        regret: gap,
                        corruption: contributions[l],
                    });
                }
            }

            if next_cp < checkpoints.len() && checkpoints[next_cp] == t && t != end {
                cps.push(snapshot(t, &regret, &ledger, &log));
                next_cp += 1;
            }
        }

        epochs.push(EpochRecord {
            epoch: m,
            start,
            length: end - start + 1,
            agents: agents
                .iter()
                .map(|a| AgentEpoch {
                    probabilities: a.probabilities().to_vec(),
                    prev_gaps: a.prev_gaps().to_vec(),
                    active: a.active().to_vec(),
                    fallback: a.used_fallback(),
                    pulls: a.pull_counts().to_vec(),
                    reward_sums: a.reward_sums().to_vec(),
                })
                .collect(),
        });

        for a in &agents {
            log.post(a.broadcast())?;
        }
        let messages = log.epoch_messages(m)?;
        let len = schedule.epoch_length(m);
        for a in agents.iter_mut() {
            a.finish_epoch(messages, len, setup.estimator)?;
        }
        ledger.close_epoch(m);

        if next_cp < checkpoints.len() && checkpoints[next_cp] == end {
            cps.push(snapshot(end, &regret, &ledger, &log));
            next_cp += 1;
        }
    }

    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed,
        horizon,
        estimator: setup.estimator,
        lambda: schedule.lambda,
        lambda_scale: schedule.lambda_scale,
        delta: schedule.delta,
        epoch_lengths: schedule.lengths().to_vec(),
        num_epochs: schedule.num_epochs(),
        total_regret: regret.iter().sum(),
        regret_per_agent: regret,
        comm_cost: comm_cost(&log),
        message_scalars: log.payload_scalars(),
        corruption: ledger.totals(),
        fallback_activations,
        epochs,
        checkpoints: cps,
        config: None,
    };
    Ok(RunOutput { summary, trace, messages: log })
}

/// Runs `epochs` independent copies of one epoch with fixed pull
/// probabilities and returns the estimate of `arm` each time. Uses the same
/// pulling, observation and estimator code as [`simulate`] with no adversary.
pub fn estimator_samples(
    instance: &BanditInstance,
    probabilities: &[Vec<f64>],
    epoch_len: u64,
    estimator: EstimatorKind,
    arm: usize,
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>, EngineError> {
    let num_agents = instance.num_agents();
    let mut clean = RoundSample::zeros(instance);
    (0..epochs)
        .map(|rep| {
            let rep_seed = seed.wrapping_add(rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut agents: Vec<AgentState> = (0..num_agents)
                .map(|l| AgentState::with_probabilities(instance, l, probabilities[l].clone()))
                .collect();
            let mut rngs: Vec<CounterRng> =
                (0..num_agents).map(|l| CounterRng::new(rep_seed, Stream::Agent(l))).collect();
            for t in 1..=epoch_len {
                sample_round_into(instance, t, rep_seed, &mut clean);
                for (l, a) in agents.iter_mut().enumerate() {
                    let j = a.pull(&mut rngs[l]);
                    a.record_observation(j, clean.rewards[l][j])?;
                }
            }
            let broadcasts: Vec<_> = agents.iter().map(AgentState::broadcast).collect();
            estimator.estimate(&broadcasts, arm, epoch_len).ok_or(EngineError::Algorithm(DraaError::MissingReport {
                agent: 0,
                arm,
                epoch: 1,
            }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_instance, InstanceDescriptor, RewardModel};

    #[test]
    fn checkpoints_evenly_spaced() {
        assert_eq!(checkpoint_rounds(10, 5), vec![2, 4, 6, 8, 10]);
        assert_eq!(checkpoint_rounds(3, 64), vec![1, 2, 3]);
        let cps = checkpoint_rounds(400_000, 64);
        assert_eq!(cps.len(), 64);
        assert_eq!(*cps.last().unwrap(), 400_000);
        assert_eq!(cps[0], 6250);
    }

    fn small() -> BanditInstance {
        build_instance(&InstanceDescriptor {
            num_arms: 3,
            num_agents: 2,
            arm_sets: vec![vec![0, 1], vec![1, 2]],
            means: vec![0.9, 0.5, 0.2],
            reward_model: RewardModel::Bernoulli,
        })
        .unwrap()
    }

    #[test]
    fn run_is_deterministic_and_consistent() {
        let inst = small();
        let schedule = EpochSchedule::new(20.0, 3, 1, 5_000).unwrap();
        let setup = RunSetup {
            instance: &inst,
            adversary: &AdversaryKind::Null,
            estimator: EstimatorKind::Weighted,
            schedule: &schedule,
        };
        let opts = RunOptions { record_trace: true, ..Default::default() };
        let a = simulate(&setup, 3, &opts).unwrap();
        let b = simulate(&setup, 3, &opts).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.trace, b.trace);
        let s = &a.summary;
        assert_eq!(s.comm_cost, (2 * s.num_epochs) as u64);
        assert_eq!(s.corruption.total, 0.0);
        let trace = a.trace.unwrap();
        assert_eq!(trace.entries.len(), 5_000 * 2);
        let r = crate::metrics::regret(&trace);
        assert!((r.total - s.total_regret).abs() < 1e-9);
        assert!(trace.entries.iter().all(|e| e.observed == e.clean));
        let mut prev = 0.0;
        for cp in &s.checkpoints {
            assert!(cp.total_regret >= prev);
            prev = cp.total_regret;
        }
        assert_eq!(s.checkpoints.last().unwrap().round, 5_000);
        assert_eq!(s.checkpoints.last().unwrap().comm_cost, s.comm_cost);
    }

    #[test]
    fn adversary_does_not_shift_agent_randomness() {
        let inst = small();
        let schedule = EpochSchedule::new(20.0, 3, 1, 3_000).unwrap();
        let run = |adv: &AdversaryKind| {
            let setup =
                RunSetup { instance: &inst, adversary: adv, estimator: EstimatorKind::Weighted, schedule: &schedule };
            simulate(&setup, 11, &RunOptions { record_trace: true, ..Default::default() }).unwrap()
        };
        let plain = run(&AdversaryKind::Null).trace.unwrap();
        let attacked = run(&AdversaryKind::GapFlip { magnitude: 0.5, budget: Some(50.0) }).trace.unwrap();
        // Epoch 1 probabilities do not depend on observations, so pulls match there.
        let first = schedule.end(1) as usize * 2;
        let a: Vec<_> = plain.entries[..first].iter().map(|e| (e.arm, e.clean)).collect();
        let b: Vec<_> = attacked.entries[..first].iter().map(|e| (e.arm, e.clean)).collect();
        assert_eq!(a, b);
        let spent: f64 = attacked.entries.iter().map(|e| e.corruption).sum();
        assert!((spent - 50.0).abs() < 1e-9);
    }
}
