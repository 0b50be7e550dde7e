use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use draa_bench::overlap_instance;
use draa_core::adversary::AdversaryKind;
use draa_core::draa::{AgentState, EpochSchedule, EstimatorKind};
use draa_core::engine::{estimator_samples, simulate, RunOptions, RunSetup};
use draa_core::model::{sample_round_into, RewardModel, RoundSample};
use draa_core::rng::{CounterRng, Stream};

fn environment(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_round");
    for (name, model) in
        [("bernoulli", RewardModel::Bernoulli), ("scaled_beta", RewardModel::ScaledBeta { concentration: 4.0 })]
    {
        let inst = overlap_instance(model);
        let mut out = RoundSample::zeros(&inst);
        let mut t = 0u64;
        g.bench_function(name, |b| {
            b.iter(|| {
                t += 1;
                sample_round_into(&inst, t, 11, &mut out);
                black_box(&out);
            })
        });
    }
    g.finish();
}

fn agent(c: &mut Criterion) {
    let inst = overlap_instance(RewardModel::Bernoulli);
    let state = AgentState::init_epoch1(&inst, 0);
    let mut rng = CounterRng::new(3, Stream::Agent(0));
    c.bench_function("agent_pull", |b| b.iter(|| black_box(state.pull(&mut rng))));

    let probs: Vec<Vec<f64>> = (0..4).map(|_| vec![0.25; 4]).collect();
    let mut g = c.benchmark_group("epoch");
    g.throughput(Throughput::Elements(1024 * 4));
    g.bench_function("weighted_1024_rounds", |b| {
        b.iter(|| estimator_samples(&inst, &probs, 1024, EstimatorKind::Weighted, 0, 1, 5).unwrap())
    });
    g.finish();
}

fn full_run(c: &mut Criterion) {
    let inst = overlap_instance(RewardModel::Bernoulli);
    let schedule = EpochSchedule::for_instance(&inst, 64.0, 0.05, 100_000).unwrap();
    let options = RunOptions::default();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.throughput(Throughput::Elements(100_000));
    for (name, adversary) in
        [("null", AdversaryKind::Null), ("gap_flip", AdversaryKind::GapFlip { magnitude: 0.5, budget: Some(2000.0) })]
    {
        let setup = RunSetup {
            instance: &inst,
            adversary: &adversary,
            estimator: EstimatorKind::Weighted,
            schedule: &schedule,
        };
        g.bench_function(name, |b| b.iter(|| simulate(&setup, 1, &options).unwrap().summary.total_regret));
    }
    g.finish();
}

criterion_group!(benches, environment, agent, full_run);
criterion_main!(benches);
