//! Sequential vs parallel population evaluation and minibatch gradients.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prhea::env::{Environment, Task, TaskId};
use prhea::learner::{LearnConfig, Trainer};
use prhea::nn::Sample;
use prhea::parallel::Execution;
use prhea::planner::{plan, PlanConfig, Priors};
use prhea::rng::seeded;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn planning(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan");
    for (h, ng) in [(20, 5), (50, 50)] {
        let mut env = Task::new(TaskId::LeanWalker);
        env.reset(0);
        for (name, execution) in MODES {
            let config = PlanConfig {
                execution,
                ..PlanConfig::plain(h, ng)
            };
            group.bench_with_input(BenchmarkId::new(name, format!("H{h}_NG{ng}")), &config, |b, cfg| {
                b.iter(|| plan(&env, cfg, Priors::none(), None, &mut seeded(1)).unwrap())
            });
        }
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("gradient_step");
    for (name, execution) in MODES {
        let plan_config = PlanConfig {
            execution,
            ..PlanConfig::default()
        };
        let learn = LearnConfig {
            replay_start: 64,
            ..LearnConfig::default()
        };
        let mut trainer = Trainer::new(Task::new(TaskId::TrapSwimmer), plan_config, learn, 3).unwrap();
        trainer.buffer.push((0..64).map(|i| Sample {
            state: vec![i as f64 * 0.01; 4],
            action: vec![0.1],
            ret: 1.0,
        }));
        group.bench_function(name, |b| b.iter(|| black_box(trainer.gradient_step().unwrap())));
    }
    group.finish();
}

criterion_group!(benches, planning, gradients);
criterion_main!(benches);
