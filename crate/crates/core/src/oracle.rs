//! Independent reference computations: exact expectations by enumeration,
//! expected pull counts, and bit-exact replay of recorded runs.
//!
//! The enumeration code computes estimates with its own arithmetic and never
//! calls the engine's estimators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::draa::EstimatorKind;
use crate::engine::{simulate, EngineError, RunOptions, RunSetup};
use crate::metrics::RunTrace;

/// Largest number of outcomes [`exhaustive_estimator_mean`] will visit.
pub const MAX_ATOMS: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration would visit {0:.3e} outcomes (limit {MAX_ATOMS:.0e})")]
    TooLarge(f64),
    #[error("fixture is malformed: {0}")]
    Fixture(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Outcome of comparing an oracle value with an engine value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub oracle: f64,
    pub engine: f64,
    pub abs_dev: f64,
    pub rel_dev: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    pub passed: bool,
    pub note: String,
}

impl OracleReport {
    /// Deterministic comparison with an absolute tolerance.
    pub fn exact(quantity: impl Into<String>, oracle: f64, engine: f64, tol: f64) -> Self {
        let abs_dev = (engine - oracle).abs();
        Self {
            quantity: quantity.into(),
            oracle,
            engine,
            abs_dev,
            rel_dev: rel(abs_dev, oracle),
            samples: None,
            std_error: None,
            passed: abs_dev <= tol,
            note: format!("|dev| <= {tol:e}"),
        }
    }

    /// Monte-Carlo comparison: passes within `z` standard errors of the oracle.
    pub fn stochastic(quantity: impl Into<String>, oracle: f64, samples: &[f64], z: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        let abs_dev = (mean - oracle).abs();
        Self {
            quantity: quantity.into(),
            oracle,
            engine: mean,
            abs_dev,
            rel_dev: rel(abs_dev, oracle),
            samples: Some(samples.len() as u64),
            std_error: Some(se),
            passed: abs_dev <= z * se,
            note: format!("|dev| <= {z} SE"),
        }
    }
}

fn rel(abs_dev: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if abs_dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        abs_dev / reference.abs()
    }
}

/// `p · T^m` for each arm.
pub fn expected_pulls(probabilities: &[f64], epoch_len: u64) -> Vec<f64> {
    probabilities.iter().map(|p| p * epoch_len as f64).collect()
}

/// One agent of an enumeration fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureAgent {
    pub arms: Vec<usize>,
    pub probabilities: Vec<f64>,
}

/// A tiny epoch whose every outcome can be listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationFixture {
    /// Bernoulli mean of each arm.
    pub means: Vec<f64>,
    pub agents: Vec<FixtureAgent>,
    pub epoch_len: u32,
    pub target_arm: usize,
}

impl EnumerationFixture {
    /// Number of leaves: `Π_ℓ (2 |K_ℓ|)^T`.
    pub fn atoms(&self) -> f64 {
        self.agents.iter().map(|a| (2.0 * a.arms.len() as f64).powi(self.epoch_len as i32)).product()
    }
}

/// Neumaier-compensated running sum.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Exact `E[estimate of target_arm]` over every pull sequence and Bernoulli
/// reward realization of one epoch with no corruption.
pub fn exhaustive_estimator_mean(fixture: &EnumerationFixture, kind: EstimatorKind) -> Result<f64, OracleError> {
    for (l, a) in fixture.agents.iter().enumerate() {
        if a.arms.len() != a.probabilities.len() || a.arms.is_empty() {
            return Err(OracleError::Fixture(format!("agent {l}: arms and probabilities must align")));
        }
        if a.arms.iter().any(|&k| k >= fixture.means.len()) {
            return Err(OracleError::Fixture(format!("agent {l}: arm out of range")));
        }
    }
    let holders: Vec<usize> =
        (0..fixture.agents.len()).filter(|&l| fixture.agents[l].arms.contains(&fixture.target_arm)).collect();
    if holders.is_empty() {
        return Err(OracleError::Fixture("nobody holds the target arm".into()));
    }
    let atoms = fixture.atoms();
    if atoms > MAX_ATOMS {
        return Err(OracleError::TooLarge(atoms));
    }

    // Leaves are visited agent-major: all rounds of agent 0, then agent 1, ...
    let steps = fixture.agents.len() * fixture.epoch_len as usize;
    let mut sums = vec![0.0f64; fixture.agents.len()];
    let mut acc = CompensatedSum::default();
    let mut mass = CompensatedSum::default();
    enumerate(fixture, &holders, kind, 0, steps, 1.0, &mut sums, &mut acc, &mut mass);
    debug_assert!((mass.value() - 1.0).abs() < 1e-9, "outcome mass {}", mass.value());
    Ok(acc.value())
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    fx: &EnumerationFixture,
    holders: &[usize],
    kind: EstimatorKind,
    step: usize,
    steps: usize,
    weight: f64,
    sums: &mut [f64],
    acc: &mut CompensatedSum,
    mass: &mut CompensatedSum,
) {
    if step == steps {
        let t = fx.epoch_len as f64;
        let estimate = match kind {
            EstimatorKind::Weighted => {
                let mut num = 0.0;
                for &l in holders {
                    let j = fx.agents[l].arms.iter().position(|&k| k == fx.target_arm).unwrap();
                    num += sums[l] / fx.agents[l].probabilities[j];
                }
                num / (holders.len() as f64 * t)
            }
            EstimatorKind::Naive => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &l in holders {
                    let j = fx.agents[l].arms.iter().position(|&k| k == fx.target_arm).unwrap();
                    num += sums[l];
                    den += fx.agents[l].probabilities[j];
                }
                num / (den * t)
            }
        };
        acc.add(weight * estimate);
        mass.add(weight);
        return;
    }
    let agent = step / fx.epoch_len as usize;
    let a = &fx.agents[agent];
    for (j, &arm) in a.arms.iter().enumerate() {
        let p = a.probabilities[j];
        if p == 0.0 {
            continue;
        }
        let mu = fx.means[arm];
        for (reward, chance) in [(1.0, mu), (0.0, 1.0 - mu)] {
            if chance == 0.0 {
                continue;
            }
            let hit = arm == fx.target_arm;
            if hit {
                sums[agent] += reward;
            }
            enumerate(fx, holders, kind, step + 1, steps, weight * p * chance, sums, acc, mass);
            if hit {
                sums[agent] -= reward;
            }
        }
    }
}

/// Reruns a recorded run and compares pulls and regret bit for bit.
///
/// When `seed` differs from the trace's seed the traces are expected to
/// differ and the report says so.
pub fn replay_check(trace: &RunTrace, setup: &RunSetup<'_>, seed: u64) -> Result<OracleReport, OracleError> {
    let options = RunOptions { checkpoints: 1, record_trace: true, strict_bounds: false };
    let rerun = simulate(setup, seed, &options)?.trace.expect("trace requested");

    let len_match = rerun.entries.len() == trace.entries.len();
    let mismatches = trace
        .entries
        .iter()
        .zip(&rerun.entries)
        .filter(|(a, b)| {
            a.arm != b.arm || a.regret.to_bits() != b.regret.to_bits() || a.observed.to_bits() != b.observed.to_bits()
        })
        .count()
        + trace.entries.len().abs_diff(rerun.entries.len());
    let first = trace.entries.iter().zip(&rerun.entries).position(|(a, b)| a != b);
    let recorded: f64 = trace.entries.iter().map(|e| e.regret).sum();
    let replayed: f64 = rerun.entries.iter().map(|e| e.regret).sum();
    let identical = len_match && mismatches == 0 && recorded.to_bits() == replayed.to_bits();

    let (passed, note) = if seed != trace.seed {
        (!identical, "different trace (expected): seeds differ".to_string())
    } else if identical {
        (true, "bit-identical replay".to_string())
    } else {
        (
            false,
            format!(
                "determinism mismatch: {mismatches} differing rows, first at row {}",
                first.map_or("-".into(), |i| i.to_string())
            ),
        )
    };
    Ok(OracleReport {
        quantity: format!("replay seed {seed}"),
        oracle: recorded,
        engine: replayed,
        abs_dev: (recorded - replayed).abs(),
        rel_dev: rel((recorded - replayed).abs(), recorded),
        samples: Some(trace.entries.len() as u64),
        std_error: None,
        passed,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversaryKind;
    use crate::draa::EpochSchedule;
    use crate::model::{build_instance, InstanceDescriptor, RewardModel};

    fn single(mu: f64, t: u32) -> EnumerationFixture {
        EnumerationFixture {
            means: vec![mu],
            agents: vec![FixtureAgent { arms: vec![0], probabilities: vec![1.0] }],
            epoch_len: t,
            target_arm: 0,
        }
    }

    #[test]
    fn expected_pull_examples() {
        assert_eq!(expected_pulls(&[0.25], 2048), vec![512.0]);
        assert_eq!(expected_pulls(&[0.0, 1.0], 2048), vec![0.0, 2048.0]);
        let e = expected_pulls(&[0.1, 0.2, 0.7], 300);
        assert!((e.iter().sum::<f64>() - 300.0).abs() < 1e-9);
    }

    #[test]
    fn single_arm_enumeration() {
        let fx = single(0.5, 3);
        assert_eq!(fx.atoms(), 8.0);
        assert_eq!(exhaustive_estimator_mean(&fx, EstimatorKind::Weighted).unwrap(), 0.5);
        assert_eq!(exhaustive_estimator_mean(&single(0.0, 5), EstimatorKind::Weighted).unwrap(), 0.0);
        let long = exhaustive_estimator_mean(&single(0.3, 12), EstimatorKind::Weighted).unwrap();
        assert!((long - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn shared_arm_two_agents() {
        let fx = EnumerationFixture {
            means: vec![0.7, 0.2],
            agents: vec![
                FixtureAgent { arms: vec![0, 1], probabilities: vec![0.5, 0.5] },
                FixtureAgent { arms: vec![0, 1], probabilities: vec![0.5, 0.5] },
            ],
            epoch_len: 2,
            target_arm: 0,
        };
        for kind in [EstimatorKind::Weighted, EstimatorKind::Naive] {
            let v = exhaustive_estimator_mean(&fx, kind).unwrap();
            assert!((v - 0.7).abs() <= 1e-12, "{kind:?}: {v}");
        }
    }

    #[test]
    fn unequal_probabilities_both_unbiased() {
        let fx = EnumerationFixture {
            means: vec![0.35, 0.6, 0.1],
            agents: vec![
                FixtureAgent { arms: vec![0, 1], probabilities: vec![0.8, 0.2] },
                FixtureAgent { arms: vec![0, 2], probabilities: vec![0.1, 0.9] },
            ],
            epoch_len: 3,
            target_arm: 0,
        };
        let w = exhaustive_estimator_mean(&fx, EstimatorKind::Weighted).unwrap();
        assert!((w - 0.35).abs() <= 1e-12);
        let n = exhaustive_estimator_mean(&fx, EstimatorKind::Naive).unwrap();
        assert!((n - 0.35).abs() <= 1e-12);
    }

    #[test]
    fn too_large_rejected() {
        let fx = EnumerationFixture {
            means: vec![0.5; 4],
            agents: vec![FixtureAgent { arms: vec![0, 1, 2, 3], probabilities: vec![0.25; 4] }; 2],
            epoch_len: 12,
            target_arm: 0,
        };
        assert!(matches!(exhaustive_estimator_mean(&fx, EstimatorKind::Weighted), Err(OracleError::TooLarge(_))));
    }

    #[test]
    fn replay_detects_tampering() {
        let inst = build_instance(&InstanceDescriptor {
            num_arms: 2,
            num_agents: 1,
            arm_sets: vec![vec![0, 1]],
            means: vec![0.8, 0.3],
            reward_model: RewardModel::Bernoulli,
        })
        .unwrap();
        let schedule = EpochSchedule::new(10.0, 2, 1, 2_000).unwrap();
        let setup = RunSetup {
            instance: &inst,
            adversary: &AdversaryKind::Null,
            estimator: EstimatorKind::Weighted,
            schedule: &schedule,
        };
        let opts = RunOptions { record_trace: true, ..Default::default() };
        let trace = simulate(&setup, 5, &opts).unwrap().trace.unwrap();

        let same = replay_check(&trace, &setup, 5).unwrap();
        assert!(same.passed);
        assert_eq!(same.abs_dev, 0.0);

        let other = replay_check(&trace, &setup, 6).unwrap();
        assert!(other.passed);
        assert!(other.note.contains("different trace (expected)"));

        let mut tampered = trace.clone();
        tampered.entries[100].arm ^= 1;
        let bad = replay_check(&tampered, &setup, 5).unwrap();
        assert!(!bad.passed);
        assert!(bad.note.contains("first at row 100"));
    }
}
