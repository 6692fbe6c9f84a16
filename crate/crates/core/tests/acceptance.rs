//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion failed. Built without the libtest
//! harness so the lines are always shown.
//!
//! The training criteria take several minutes in release-level test builds.

mod common;

use std::time::{Duration, Instant};

use common::ChoiceTree;
use prhea::cmaes::CmaConfig;
use prhea::env::{Environment, LeanWalker, PointMass, Task, TaskId, TrapSwimmer};
use prhea::learner::{evaluate, evaluation_config, write_curve_csv, EvalReport, LearnConfig, Trainer};
use prhea::nn::{GaussianPolicy, ValueNet};
use prhea::parallel::Execution;
use prhea::persistence::Checkpoint;
use prhea::planner::{plan, run_episode, EpisodeOutcome, PlanConfig, Priors};
use prhea::rng::seeded;

/// Steps of training for the prior-benefit and trap-escape criteria.
const TRAINING_BUDGET: u64 = 40_000;
const TRAINING_SEED: u64 = 1;
const EVAL_EPISODES: usize = 10;
const EVAL_SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn report(id: usize, name: &str, started: Instant, verdict: &Verdict) {
    println!(
        "[{}] {id}. {name} ({:.1}s): {}",
        if verdict.pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        verdict.detail
    );
}

fn cma_correctness() -> Verdict {
    let t = Instant::now();
    let config = CmaConfig::new(10, 1.0, 200).with_population(10);
    let (sphere, _) = common::maximize(common::sphere, config, &[3.0; 10], usize::MAX, 0);
    let sphere_time = t.elapsed();
    let t = Instant::now();
    let config = CmaConfig::new(5, 0.5, usize::MAX);
    let (rosen, used) = common::maximize(common::rosenbrock, config, &[0.0; 5], 5000, 0);
    let rosen_time = t.elapsed();
    let limit = Duration::from_secs(5);
    Verdict::new(
        sphere > -1e-6 && rosen > -1e-4 && used <= 5000 && sphere_time < limit && rosen_time < limit,
        format!(
            "sphere D10 best {sphere:.3e} in {:.2}s; Rosenbrock D5 best {rosen:.3e} after {used} evaluations in {:.2}s",
            sphere_time.as_secs_f64(),
            rosen_time.as_secs_f64()
        ),
    )
}

fn gradient_fidelity() -> Verdict {
    let t = Instant::now();
    let checks: Vec<common::GradientCheck> = (0..100).map(common::gradient_check).collect();
    let worst = checks.iter().map(|c| c.worst).fold(0.0, f64::max);
    let compared: usize = checks.iter().map(|c| c.compared).sum();
    let kinks: usize = checks.iter().map(|c| c.kinks).sum();
    Verdict::new(
        worst < 1e-4 && kinks * 20 <= compared && t.elapsed() < Duration::from_secs(30),
        format!("100 instances, {compared} coordinates, worst relative error {worst:.2e} ({kinks} skipped at rectifier kinks)"),
    )
}

fn return_recursion_and_oracle() -> Verdict {
    let mut worst_gap: f64 = 0.0;
    let mut plans = 0;
    for (k, id) in [TaskId::PointMass, TaskId::TrapSwimmer, TaskId::LeanWalker].into_iter().enumerate() {
        let mut env = Task::new(id);
        env.reset(k as u64);
        let spec = env.spec().clone();
        let mut rng = seeded(k as u64);
        let policy = GaussianPolicy::new(spec.state_dim, &[16, 16], spec.action_dim, &mut rng);
        let value = ValueNet::new(spec.state_dim, &[16, 16], &mut rng);
        let config = PlanConfig::default();
        let mut tail: Option<Vec<Vec<f64>>> = None;
        for _ in 0..60 {
            if env.is_terminal() {
                break;
            }
            let result = plan(&env, &config, Priors::new(Some(&policy), Some(&value)), tail.as_deref(), &mut rng).unwrap();
            for t in 0..result.length {
                let next = if t + 1 < result.length { result.returns[t + 1] } else { result.bootstrap };
                worst_gap = worst_gap.max((result.returns[t] - (result.rewards[t] + config.discount * next)).abs());
            }
            plans += 1;
            env.step(&result.actions[0]).unwrap();
            tail = Some(result.tail(1));
        }
    }
    let config = PlanConfig {
        population: Some(48),
        ..PlanConfig::plain(2, 50)
    };
    let mut matched = 0;
    for trial in 0..50 {
        let mut env = ChoiceTree::random(trial);
        env.reset(0);
        let (best, scores) = env.brute_force(config.discount);
        let result = plan(&env, &config, Priors::none(), None, &mut seeded(trial)).unwrap();
        let chosen = ChoiceTree::choice(&result.actions[0]);
        if chosen == best || (scores[chosen].1 - scores[best].1).abs() <= 1e-9 {
            matched += 1;
        }
    }
    Verdict::new(
        worst_gap <= 1e-10 && matched == 50,
        format!("largest recursion gap {worst_gap:.1e} over {plans} plans; oracle matched {matched}/50"),
    )
}

fn pointmass_run(budget: u64, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let learn = LearnConfig {
        step_budget: budget,
        ..LearnConfig::default()
    };
    let mut t = Trainer::new(PointMass::new(), PlanConfig::default(), learn, seed).unwrap();
    let curve = t.train(|_| Ok(()), |_| Ok(())).unwrap();
    let mut csv = Vec::new();
    write_curve_csv(&mut csv, &curve).unwrap();
    (csv, Checkpoint::from_trainer(&t).to_bytes())
}

fn determinism() -> Verdict {
    let (csv_a, ckpt_a) = pointmass_run(5000, 7);
    let (csv_b, ckpt_b) = pointmass_run(5000, 7);
    let repeat = csv_a == csv_b && ckpt_a == ckpt_b;

    let learn = LearnConfig {
        step_budget: 2500,
        ..LearnConfig::default()
    };
    let mut first = Trainer::new(PointMass::new(), PlanConfig::default(), learn, 7).unwrap();
    let mut curve = first.train(|_| Ok(()), |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    Checkpoint::from_trainer(&first).save(&path).unwrap();
    let mut saved = Checkpoint::load_for(&path, &PointMass::new()).unwrap();
    saved.learn.step_budget = 5000;
    let mut second = saved.into_trainer(PointMass::new(), Execution::Sequential).unwrap();
    curve.extend(second.train(|_| Ok(()), |_| Ok(())).unwrap());
    let mut csv_r = Vec::new();
    write_curve_csv(&mut csv_r, &curve).unwrap();
    let resumed = csv_r == csv_a && Checkpoint::from_trainer(&second).to_bytes() == ckpt_a;
    let rows = csv_a.iter().filter(|b| **b == b'\n').count() - 1;
    Verdict::new(
        repeat && resumed,
        format!("repeat identical: {repeat}; resumed at 2500 steps identical: {resumed} ({rows} curve rows, {} checkpoint bytes)", ckpt_a.len()),
    )
}

fn baseline<E: Environment>(env: &E, horizon: usize, episodes: usize, seed: u64) -> EvalReport {
    evaluate(env, &PlanConfig::plain(horizon, horizon), Priors::none(), episodes, seed).unwrap()
}

fn horizon_tradeoff() -> Verdict {
    let t = Instant::now();
    let short = baseline(&LeanWalker::new(), 20, 5, EVAL_SEED);
    let long = baseline(&LeanWalker::new(), 50, 5, EVAL_SEED);
    let ratio = long.mean / short.mean;
    Verdict::new(
        ratio >= 1.5 && t.elapsed() < Duration::from_secs(600),
        format!(
            "LeanWalker H=50/NG=50 {:.1} ± {:.1} vs H=20/NG=20 {:.1} ± {:.1} over 5 seeds (ratio {ratio:.2})",
            long.mean, long.std, short.mean, short.std
        ),
    )
}

struct Trained<E: Environment> {
    trainer: Trainer<E>,
    eval: EvalReport,
    evals_per_step: f64,
}

fn train_and_evaluate<E: Environment>(env: E) -> Trained<E> {
    let learn = LearnConfig {
        step_budget: TRAINING_BUDGET,
        ..LearnConfig::default()
    };
    let mut trainer = Trainer::new(env.clone(), PlanConfig::default(), learn, TRAINING_SEED).unwrap();
    trainer.train(|_| Ok(()), |_| Ok(())).unwrap();
    let config = evaluation_config(&trainer.plan);
    let priors = Priors::new(Some(&trainer.policy), Some(&trainer.value));
    let eval = evaluate(&env, &config, priors, EVAL_EPISODES, EVAL_SEED).unwrap();
    let mut probe = env.clone();
    probe.reset(0);
    let out = run_episode(&mut probe, &config, priors, &mut seeded(0), None).unwrap();
    Trained {
        evals_per_step: out.evaluations as f64 / out.steps as f64,
        trainer,
        eval,
    }
}

fn baseline_evals_per_step<E: Environment>(env: &E) -> f64 {
    let mut probe = env.clone();
    probe.reset(0);
    let out = run_episode(&mut probe, &PlanConfig::plain(50, 50), Priors::none(), &mut seeded(0), Some(20)).unwrap();
    out.evaluations as f64 / out.steps as f64
}

fn prior_benefit(swimmer: &Trained<TrapSwimmer>, walker: &Trained<LeanWalker>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let envs: [(&str, &EvalReport, f64, EvalReport, f64); 2] = [
        (
            "TrapSwimmer",
            &swimmer.eval,
            swimmer.evals_per_step,
            baseline(&TrapSwimmer::new(), 50, EVAL_EPISODES, EVAL_SEED),
            baseline_evals_per_step(&TrapSwimmer::new()),
        ),
        (
            "LeanWalker",
            &walker.eval,
            walker.evals_per_step,
            baseline(&LeanWalker::new(), 50, EVAL_EPISODES, EVAL_SEED),
            baseline_evals_per_step(&LeanWalker::new()),
        ),
    ];
    for (name, ours, our_cost, theirs, their_cost) in envs {
        let ok = ours.mean > theirs.mean && our_cost * 10.0 <= their_cost;
        pass &= ok;
        parts.push(format!(
            "{name} p-RHEA {:.1} ± {:.1} ({our_cost:.0} evaluations/step) vs RHEA H=50 {:.1} ± {:.1} ({their_cost:.0} evaluations/step)",
            ours.mean, ours.std, theirs.mean, theirs.std
        ));
    }
    parts.push(format!("training budget {TRAINING_BUDGET} steps per task"));
    Verdict::new(pass, parts.join("; "))
}

fn gate_behavior() -> Verdict {
    let learn = LearnConfig {
        step_budget: 5600,
        ..LearnConfig::default()
    };
    let mut t = Trainer::new(PointMass::new(), PlanConfig::default(), learn, 3).unwrap();
    t.record_cycles(true);
    t.train(|_| Ok(()), |_| Ok(())).unwrap();
    let (start, nt, mb) = (t.learn.replay_start, t.learn.trains_per_cycle, t.learn.minibatch);
    let mut before = 0;
    let mut after = 0;
    let mut violations = 0;
    for c in t.cycle_log() {
        let size = (c.buffer_before + c.executed).min(t.learn.capacity);
        if c.buffer_before < start && (c.value_used || c.bootstrap != 0.0) {
            violations += 1;
        }
        if size < start {
            before += 1;
            if c.gradient_steps != 0 {
                violations += 1;
            }
        } else {
            after += 1;
            if c.gradient_steps != nt || c.minibatch_sizes.iter().any(|&n| n != mb) {
                violations += 1;
            }
        }
    }
    Verdict::new(
        violations == 0 && before > 0 && after > 0,
        format!("{before} cycles before the gate with no training or bootstrap, {after} after with {nt} steps of {mb}; {violations} violations"),
    )
}

/// Splits a swimmer trajectory at every leg-opening event (opening leaves
/// zero) and counts complete cycles containing a negative reward.
fn stroke_cycles(out: &EpisodeOutcome) -> (usize, usize) {
    let opening = |t: usize| out.states[t][1];
    let starts: Vec<usize> = (0..out.steps).filter(|&t| opening(t) == 0.0 && opening(t + 1) > 0.0).collect();
    let mut with_negative = 0;
    for w in starts.windows(2) {
        if out.rewards[w[0]..w[1]].iter().any(|r| *r < 0.0) {
            with_negative += 1;
        }
    }
    (starts.len().saturating_sub(1), with_negative)
}

fn trap_escape(swimmer: &Trained<TrapSwimmer>) -> Verdict {
    let (ceiling, best_constant) = common::best_constant_return(&mut TrapSwimmer::new());
    let mut env = TrapSwimmer::new();
    env.reset(0);
    let config = evaluation_config(&swimmer.trainer.plan);
    let priors = Priors::new(Some(&swimmer.trainer.policy), Some(&swimmer.trainer.value));
    let out = run_episode(&mut env, &config, priors, &mut seeded(EVAL_SEED), None).unwrap();
    let (cycles, with_negative) = stroke_cycles(&out);
    let short = baseline(&TrapSwimmer::new(), 20, 5, EVAL_SEED);
    let pass = cycles >= 3 && with_negative == cycles && swimmer.eval.mean > 2.0 * ceiling && short.mean < ceiling;
    Verdict::new(
        pass,
        format!(
            "p-RHEA {:.1} vs best constant action ({best_constant:+.2}) {ceiling:.2}; {with_negative}/{cycles} stroke cycles contain a negative reward; RHEA H=20 {:.2} ± {:.2}",
            swimmer.eval.mean, short.mean, short.std
        ),
    )
}

fn main() {
    let mut failed = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        report(id, name, t, &v);
        if !v.pass {
            failed.push(id);
        }
    };
    run(1, "CMA-ES correctness", &mut cma_correctness);
    run(2, "Gradient fidelity", &mut gradient_fidelity);
    run(3, "Return recursion and oracle equivalence", &mut return_recursion_and_oracle);
    run(4, "Determinism", &mut determinism);
    run(5, "Horizon trade-off", &mut horizon_tradeoff);
    let t = Instant::now();
    let swimmer = train_and_evaluate(TrapSwimmer::new());
    let walker = train_and_evaluate(LeanWalker::new());
    println!("       trained both tasks in {:.0}s", t.elapsed().as_secs_f64());
    run(6, "Prior benefit", &mut || prior_benefit(&swimmer, &walker));
    run(7, "Gate behavior", &mut gate_behavior);
    run(8, "Trap escape", &mut || trap_escape(&swimmer));
    if failed.is_empty() {
        println!("acceptance: all 8 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
