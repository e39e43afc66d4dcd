use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mplab::analysis::{evaluate, sweep, EvalOptions};
use mplab::par::Exec;
use mplab::policy::{ActorPolicy, AgentPolicy};
use mplab::trainer::ActorNet;
use mplab::world::{Scenario, ScenarioKind};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_evaluate(c: &mut Criterion) {
    let sc = Scenario::new(ScenarioKind::CoopNav);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let policies: Vec<ActorPolicy> = sc
        .agents()
        .iter()
        .map(|a| {
            let net = ActorNet::new(a.obs_dim, a.physical_dim, a.comm_dim, 64, &mut rng).unwrap();
            ActorPolicy::new(vec![net], 1.0, "bench").unwrap()
        })
        .collect();
    let refs: Vec<&dyn AgentPolicy> = policies.iter().map(|p| p as &dyn AgentPolicy).collect();
    let mut group = c.benchmark_group("evaluate_coop_nav_64_episodes");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate(&sc, &refs, 64, 7, EvalOptions { team_tied: true, exec }).unwrap())
        });
    }
    group.finish();
}

fn bench_prop1_sweep(c: &mut Criterion) {
    let ns: Vec<usize> = (1..=6).collect();
    let mut group = c.benchmark_group("prop1_sweep_1e4_samples");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sweep(&ns, 10_000, 3, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evaluate, bench_prop1_sweep);
criterion_main!(benches);
