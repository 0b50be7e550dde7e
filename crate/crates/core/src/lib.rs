//! Deterministic simulation of cooperative multi-agent bandits with
//! heterogeneous arm-sets under adversarial reward corruption, running the
//! DRAA epoch algorithm with weighted or naive cross-agent estimators.
//!
//! Module map:
//! - [`model`]: instances and the reward environment
//! - [`adversary`]: corruption strategies and the corruption ledger
//! - [`draa`]: per-agent algorithm state and estimators
//! - [`comm`]: broadcast log and communication cost
//! - [`metrics`]: regret, summaries, diagnostics
//! - [`oracle`]: brute-force reference computations
//! - [`engine`]: the per-seed run loop
//! - [`config`] and [`harness`]: experiment files, sweeps and outputs

pub mod adversary;
pub mod comm;
pub mod config;
pub mod draa;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;

pub use adversary::{Adversary, AdversaryKind, CorruptionLedger, Direction, History, LedgerTotals};
pub use comm::{comm_cost, EpochBroadcast, MessageLog};
pub use config::{AlgorithmConfig, ExperimentConfig, SeedSpec, SweepSpec};
pub use draa::{AgentState, EpochSchedule, EstimatorKind};
pub use engine::{simulate, RunOptions, RunOutput, RunSetup};
pub use harness::HarnessError;
pub use metrics::{RunSummary, RunTrace};
pub use model::{BanditInstance, InstanceDescriptor, RewardModel, RoundSample};
