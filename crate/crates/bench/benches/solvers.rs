use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfhrl_bench::open_grid;
use mfhrl_core::mdp::{evaluate_policy, value_iteration};
use mfhrl_core::Policy;

fn solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("solvers");
    for side in [5usize, 10] {
        let mdp = open_grid(side).build().unwrap().base();
        let policy = Policy::uniform(mdp.num_states(), mdp.num_actions());
        group.bench_with_input(BenchmarkId::new("value_iteration", side), &mdp, |b, mdp| {
            b.iter(|| value_iteration(mdp))
        });
        group.bench_with_input(BenchmarkId::new("evaluate_policy", side), &mdp, |b, mdp| {
            b.iter(|| evaluate_policy(mdp, &policy).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
