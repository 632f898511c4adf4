use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use calpost::adversary::{eval_lb_pair, make_online_lb};
use calpost::postprocess::PrivacyOnline;
use calpost::{Exec, NoiseMechanism};

// Monte Carlo trials of the online post-processor on the lower-bound pair,
// the workload the parallel executor is meant for.
fn online_trials(c: &mut Criterion) {
    let pair = make_online_lb(100, 0.04, 7).unwrap();
    let pp = PrivacyOnline::new(NoiseMechanism::laplace_for_budget(0.04).unwrap(), pair.seq_q.len()).unwrap();
    let mut group = c.benchmark_group("online_trials");
    group.sample_size(20);
    for trials in [50, 200] {
        for exec in [Exec::Sequential, Exec::Parallel] {
            group.bench_with_input(BenchmarkId::new(format!("{exec:?}"), trials), &trials, |b, &n| {
                b.iter(|| eval_lb_pair(&pair, &pp, black_box(n), 11, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, online_trials);
criterion_main!(benches);
