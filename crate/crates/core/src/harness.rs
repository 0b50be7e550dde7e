//! Seeded run orchestration, parameter sweeps, the oracle suite, and
//! result files.
//!
//! Seeds run in parallel on the rayon pool; each run writes only its own
//! directory, and merged tables are written afterwards on the caller's
//! thread.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Prepared, SweepSpec};
use crate::draa::{EpochSchedule, EstimatorKind};
use crate::engine::{estimator_samples, simulate, EngineError, RunOptions, RunOutput, RunSetup};
use crate::metrics::{ledger_from_trace, regret, RunSummary};
use crate::oracle::{self, EnumerationFixture, FixtureAgent, OracleReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: internal invariant violated ({invariant}): {source}")]
    Invariant { seed: u64, invariant: &'static str, source: EngineError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 3 for a broken internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Invariant { source: EngineError::Adversary(_), .. } => 2,
            HarnessError::Invariant { .. } => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_owned(), source }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| HarnessError::Json { path: path.to_owned(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

/// Runs one seed of a prepared config.
pub fn run_seed(prepared: &Prepared, seed: u64, record_trace: bool) -> Result<RunOutput, HarnessError> {
    let cfg = &prepared.config;
    let setup = RunSetup {
        instance: &prepared.instance,
        adversary: &cfg.adversary,
        estimator: cfg.algorithm.estimator,
        schedule: &prepared.schedule,
    };
    let options = RunOptions { checkpoints: cfg.output.checkpoints, record_trace, strict_bounds: true };
    let mut out = simulate(&setup, seed, &options).map_err(|source| HarnessError::Invariant {
        seed,
        invariant: source.invariant(),
        source,
    })?;
    out.summary.config = Some(serde_json::to_value(cfg).expect("config serializes"));
    Ok(out)
}

/// Runs every seed and writes per-seed summaries plus merged tables under `out_dir`.
pub fn run(prepared: &Prepared, out_dir: &Path) -> Result<Vec<RunSummary>, HarnessError> {
    let cfg = &prepared.config;
    let summaries = prepared
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = run_seed(prepared, seed, cfg.output.trace)?;
            let dir = out_dir.join(format!("seed_{seed}"));
            write_json(&dir.join("summary.json"), &out.summary)?;
            if let Some(trace) = &out.trace {
                let path = dir.join("trace.csv");
                trace.write_csv(create(&path)?).map_err(|source| HarnessError::Csv { path, source })?;
            }
            if cfg.output.messages {
                let path = dir.join("messages.jsonl");
                let mut w = create(&path)?;
                out.messages.write_jsonl(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
            }
            Ok(out.summary)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    write_checkpoints(&out_dir.join("checkpoints.csv"), &summaries, prepared.instance.num_agents())?;
    write_runs(&out_dir.join("runs.csv"), &summaries)?;
    Ok(summaries)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>, HarnessError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv { path: path.to_owned(), source }
}

/// Columns: `seed, t, total_regret, regret_agent_<l>..., C_so_far, comm_cost`.
pub fn write_checkpoints(path: &Path, summaries: &[RunSummary], num_agents: usize) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["seed".to_string(), "t".into(), "total_regret".into()];
    header.extend((0..num_agents).map(|l| format!("regret_agent_{l}")));
    header.extend(["C_so_far".to_string(), "comm_cost".into()]);
    w.write_record(&header).map_err(csv_err(path))?;
    for s in summaries {
        for cp in &s.checkpoints {
            let mut row = vec![s.seed.to_string(), cp.round.to_string(), cp.total_regret.to_string()];
            row.extend(cp.regret_per_agent.iter().map(f64::to_string));
            row.extend([cp.corruption.to_string(), cp.comm_cost.to_string()]);
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn write_runs(path: &Path, summaries: &[RunSummary]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record(["seed", "total_regret", "corruption", "comm_cost", "epochs", "fallback_activations"])
        .map_err(csv_err(path))?;
    for s in summaries {
        w.write_record([
            s.seed.to_string(),
            s.total_regret.to_string(),
            s.corruption.total.to_string(),
            s.comm_cost.to_string(),
            s.num_epochs.to_string(),
            s.fallback_activations.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Seed-averaged results at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: usize,
    pub labels: Vec<String>,
    pub seeds: usize,
    pub mean_regret: f64,
    pub stderr_regret: f64,
    pub mean_comm_cost: f64,
    pub mean_corruption: f64,
    pub mean_epochs: f64,
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(point: usize, labels: Vec<String>, summaries: &[RunSummary]) -> SweepRow {
    let regrets: Vec<f64> = summaries.iter().map(|s| s.total_regret).collect();
    let (mean_regret, stderr_regret) = mean_and_se(&regrets);
    let n = summaries.len() as f64;
    SweepRow {
        point,
        labels,
        seeds: summaries.len(),
        mean_regret,
        stderr_regret,
        mean_comm_cost: summaries.iter().map(|s| s.comm_cost as f64).sum::<f64>() / n,
        mean_corruption: summaries.iter().map(|s| s.corruption.total).sum::<f64>() / n,
        mean_epochs: summaries.iter().map(|s| s.num_epochs as f64).sum::<f64>() / n,
    }
}

/// Runs every sweep point over its seeds and writes `sweep.csv` and `sweep.json`.
pub fn sweep(spec: &SweepSpec, out_dir: &Path) -> Result<Vec<SweepRow>, HarnessError> {
    let points = spec.points()?;
    let prepared = points.iter().map(|p| p.config.prepare()).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, u64)> =
        prepared.iter().enumerate().flat_map(|(i, p)| p.seeds.iter().map(move |&s| (i, s))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let out = run_seed(&prepared[i], seed, false)?;
            let path = out_dir.join(format!("point_{i}")).join(format!("seed_{seed}.json"));
            write_json(&path, &out.summary)?;
            Ok((i, out.summary))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| {
            let mine: Vec<RunSummary> = results.iter().filter(|(i, _)| *i == p.index).map(|(_, s)| s.clone()).collect();
            aggregate(p.index, p.labels.clone(), &mine)
        })
        .collect();

    let path = out_dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["point".to_string()];
    header.extend(spec.axes.iter().map(|a| a.name.clone()));
    header.extend(
        ["seeds", "mean_regret", "stderr_regret", "mean_comm_cost", "mean_corruption", "mean_epochs"].map(String::from),
    );
    w.write_record(&header).map_err(csv_err(&path))?;
    for r in &rows {
        let mut row = vec![r.point.to_string()];
        row.extend(r.labels.iter().cloned());
        row.extend([
            r.seeds.to_string(),
            r.mean_regret.to_string(),
            r.stderr_regret.to_string(),
            r.mean_comm_cost.to_string(),
            r.mean_corruption.to_string(),
            r.mean_epochs.to_string(),
        ]);
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    write_json(&out_dir.join("sweep.json"), &rows)?;
    Ok(rows)
}

/// Longest run replayed by [`verify`].
pub const VERIFY_REPLAY_ROUNDS: u64 = 200_000;

/// Fixtures small enough to enumerate exactly.
pub fn standard_fixtures() -> Vec<(String, EnumerationFixture)> {
    let one = |arms: Vec<usize>, probabilities: Vec<f64>| FixtureAgent { arms, probabilities };
    vec![
        (
            "single arm, T=3, mu=0.5".into(),
            EnumerationFixture { means: vec![0.5], agents: vec![one(vec![0], vec![1.0])], epoch_len: 3, target_arm: 0 },
        ),
        (
            "single arm, T=12, mu=0.3".into(),
            EnumerationFixture {
                means: vec![0.3],
                agents: vec![one(vec![0], vec![1.0])],
                epoch_len: 12,
                target_arm: 0,
            },
        ),
        (
            "shared arm, L=2, T=2, equal p".into(),
            EnumerationFixture {
                means: vec![0.7, 0.2],
                agents: vec![one(vec![0, 1], vec![0.5, 0.5]), one(vec![0, 1], vec![0.5, 0.5])],
                epoch_len: 2,
                target_arm: 0,
            },
        ),
        (
            "heterogeneous, L=2, T=3, unequal p".into(),
            EnumerationFixture {
                means: vec![0.35, 0.6, 0.1],
                agents: vec![one(vec![0, 1], vec![0.8, 0.2]), one(vec![0, 2], vec![0.1, 0.9])],
                epoch_len: 3,
                target_arm: 0,
            },
        ),
        (
            "three holders, T=2".into(),
            EnumerationFixture {
                means: vec![0.45, 0.9],
                agents: vec![
                    one(vec![0, 1], vec![0.25, 0.75]),
                    one(vec![0], vec![1.0]),
                    one(vec![0, 1], vec![0.6, 0.4]),
                ],
                epoch_len: 2,
                target_arm: 0,
            },
        ),
    ]
}

/// The oracle suite for a config: exact enumeration fixtures, Monte-Carlo
/// unbiasedness on the config's instance, and replay/recomputation checks on
/// the first seed.
pub fn verify(prepared: &Prepared) -> Result<Vec<OracleReport>, HarnessError> {
    let mut reports = Vec::new();
    for (name, fx) in standard_fixtures() {
        let mu = fx.means[fx.target_arm];
        for kind in [EstimatorKind::Weighted, EstimatorKind::Naive] {
            let exact = oracle::exhaustive_estimator_mean(&fx, kind)?;
            reports.push(OracleReport::exact(format!("E[{kind:?}] {name}"), mu, exact, 1e-12));
        }
    }

    let inst = &prepared.instance;
    let uniform: Vec<Vec<f64>> =
        (0..inst.num_agents()).map(|l| vec![1.0 / inst.arm_set(l).len() as f64; inst.arm_set(l).len()]).collect();
    for arm in 0..inst.num_arms() {
        for kind in [EstimatorKind::Weighted, EstimatorKind::Naive] {
            let samples = estimator_samples(inst, &uniform, 256, kind, arm, 400, 0xD1CE + arm as u64)
                .map_err(|source| HarnessError::Invariant { seed: 0, invariant: source.invariant(), source })?;
            reports.push(OracleReport::stochastic(format!("MC[{kind:?}] arm {arm}"), inst.mean(arm), &samples, 3.0));
        }
    }

    let cfg = &prepared.config;
    let seed = prepared.seeds[0];
    let horizon = prepared.schedule.horizon.min(VERIFY_REPLAY_ROUNDS);
    let schedule = EpochSchedule::new(prepared.schedule.lambda, inst.num_arms(), inst.min_agents_per_arm(), horizon)
        .map_err(ConfigError::from)?;
    let setup =
        RunSetup { instance: inst, adversary: &cfg.adversary, estimator: cfg.algorithm.estimator, schedule: &schedule };
    let options = RunOptions { checkpoints: 8, record_trace: true, strict_bounds: true };
    let out = simulate(&setup, seed, &options).map_err(|source| HarnessError::Invariant {
        seed,
        invariant: source.invariant(),
        source,
    })?;
    let trace = out.trace.as_ref().expect("trace requested");
    reports.push(oracle::replay_check(trace, &setup, seed)?);
    reports.push(OracleReport::exact(
        "regret recomputed from trace",
        regret(trace).total,
        out.summary.total_regret,
        1e-9,
    ));
    reports.push(OracleReport::exact(
        "corruption recomputed from trace",
        ledger_from_trace(trace, &schedule).totals().total,
        out.summary.corruption.total,
        1e-9,
    ));
    reports.push(OracleReport::exact(
        "comm cost = L * M",
        (inst.num_agents() * out.summary.num_epochs) as f64,
        out.summary.comm_cost as f64,
        0.0,
    ));
    Ok(reports)
}

/// Plain-text table of oracle reports.
pub fn render_reports(reports: &[OracleReport]) -> String {
    let width = reports.iter().map(|r| r.quantity.len()).max().unwrap_or(8).max(8);
    let mut s =
        format!("{:<width$}  {:>14}  {:>14}  {:>10}  {}\n", "quantity", "oracle", "engine", "abs dev", "result");
    for r in reports {
        s.push_str(&format!(
            "{:<width$}  {:>14.9}  {:>14.9}  {:>10.3e}  {} ({})\n",
            r.quantity,
            r.oracle,
            r.engine,
            r.abs_dev,
            if r.passed { "PASS" } else { "FAIL" },
            r.note
        ));
    }
    s
}

/// Human-readable digest of a run summary.
pub fn render_summary(s: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("seed             {}\n", s.seed));
    out.push_str(&format!("horizon          {}\n", s.horizon));
    out.push_str(&format!("estimator        {:?}\n", s.estimator));
    out.push_str(&format!("lambda           {:.3}", s.lambda));
    if let Some(scale) = s.lambda_scale {
        out.push_str(&format!(" (scale {scale})"));
    }
    out.push('\n');
    out.push_str(&format!("epochs           {} {:?}\n", s.num_epochs, s.epoch_lengths));
    out.push_str(&format!("total regret     {:.3}\n", s.total_regret));
    for (l, r) in s.regret_per_agent.iter().enumerate() {
        out.push_str(&format!("  agent {l:<3}      {r:.3}\n"));
    }
    out.push_str(&format!("corruption C     {:.3}\n", s.corruption.total));
    out.push_str(&format!("comm cost        {} messages, {} scalars\n", s.comm_cost, s.message_scalars));
    out.push_str(&format!("fallbacks        {}\n", s.fallback_activations));
    out
}

pub fn load_summary(path: &Path) -> Result<RunSummary, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.to_owned(), source })
}

/// Loads and validates a config file.
pub fn prepare_file(path: &Path) -> Result<Prepared, HarnessError> {
    Ok(ExperimentConfig::load(path)?.prepare()?)
}

pub fn reports_json(reports: &[OracleReport]) -> Result<String, serde_json::Error> {
    serde_json::to_string_pretty(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::draa::DraaError;

    #[test]
    fn exit_codes() {
        let source = EngineError::Algorithm(DraaError::SimplexViolation { agent: 1, epoch: 3, sum: 0.9 });
        let e = HarnessError::Invariant { seed: 4, invariant: source.invariant(), source };
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().contains("probability simplex"));
        assert_eq!(HarnessError::from(ConfigError::Schema(9)).exit_code(), 2);
    }

    #[test]
    fn mean_and_standard_error() {
        assert_eq!(mean_and_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
