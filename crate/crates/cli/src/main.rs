//! Command-line driver: train, evaluate, run plain baselines and trace episodes.

mod config;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use prhea::env::{Environment, Task};
use prhea::learner::{evaluate, evaluation_config, episode_seeds, CurveRow, EvalReport, LearnConfig, Trainer};
use prhea::parallel::Execution;
use prhea::persistence::Checkpoint;
use prhea::planner::{run_episode, PlanConfig, Priors};
use prhea::rng::seeded;

use config::{describe, Overrides};

#[derive(Parser, Debug)]
#[command(name = "prhea", version, about = "Rolling-horizon evolution with learned priors")]
struct Cli {
    /// Worker threads for fitness evaluation; omitted means sequential.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train policy and value networks with the prior-guided planner.
    Train {
        #[arg(long)]
        env: String,
        /// Real environment steps.
        #[arg(long, default_value_t = LearnConfig::default().step_budget)]
        budget: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "PRHEA_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
        /// TOML file with settings; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Continue from a checkpoint instead of fresh networks.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Play real episodes with a trained checkpoint (one action per plan).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 25)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-episode returns; defaults to eval.csv in the out dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PRHEA_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Plain rolling-horizon evolution without priors.
    Baseline {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = PlanConfig::default().horizon)]
        horizon: usize,
        /// Defaults to the horizon.
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to baseline-<env>-h<horizon>.csv in the out dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PRHEA_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Per-step rewards of one episode, with a checkpoint or plain.
    Trace {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to trace.csv in the out dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "PRHEA_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.workers {
        None => run(cli.command, Execution::Sequential),
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => with_workers(n, cli.command),
    }
}

#[cfg(feature = "parallel")]
fn with_workers(n: usize, command: Command) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .context("building worker pool")?;
    pool.install(|| run(command, Execution::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn with_workers(_: usize, command: Command) -> Result<()> {
    eprintln!("warning: built without the parallel feature, running sequentially");
    run(command, Execution::Sequential)
}

fn run(command: Command, execution: Execution) -> Result<()> {
    match command {
        Command::Train {
            env,
            budget,
            seed,
            out_dir,
            config,
            resume,
            overrides,
        } => train(&env, budget, seed, &out_dir, config.as_deref(), resume.as_deref(), overrides, execution),
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            out,
            out_dir,
        } => eval(&checkpoint, &env, episodes, seed, &output(out, &out_dir, "eval.csv")?, execution),
        Command::Baseline {
            env,
            horizon,
            generations,
            episodes,
            seed,
            out,
            out_dir,
        } => {
            let name = format!("baseline-{}-h{horizon}.csv", env.to_ascii_lowercase());
            let path = output(out, &out_dir, &name)?;
            baseline(&env, horizon, generations.unwrap_or(horizon), episodes, seed, &path, execution)
        }
        Command::Trace {
            checkpoint,
            env,
            seed,
            out,
            out_dir,
        } => trace(checkpoint.as_deref(), &env, seed, &output(out, &out_dir, "trace.csv")?, execution),
    }
}

/// Resolves an output path and makes sure its directory exists.
fn output(out: Option<PathBuf>, out_dir: &Path, default: &str) -> Result<PathBuf> {
    let path = out.unwrap_or_else(|| out_dir.join(default));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(path)
}

fn task(id: &str) -> Result<Task> {
    Ok(Task::from_id(id)?)
}

fn load(path: &Path, env: &Task) -> Result<Checkpoint> {
    if !path.is_file() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Checkpoint::load_for(path, env).with_context(|| format!("loading {}", path.display()))
}

/// Priors stored in a checkpoint; the value prior only once it has trained.
fn checkpoint_priors(ckpt: &Checkpoint) -> Priors<'_> {
    Priors::new(
        ckpt.plan.use_policy_prior.then_some(&ckpt.policy),
        (ckpt.plan.use_value_prior && ckpt.value_trained()).then_some(&ckpt.value),
    )
}

#[allow(clippy::too_many_arguments)]
fn train(
    env_id: &str,
    budget: u64,
    seed: u64,
    out_dir: &Path,
    config: Option<&Path>,
    resume: Option<&Path>,
    flags: Overrides,
    execution: Execution,
) -> Result<()> {
    let env = task(env_id)?;
    let overrides = flags.layered(config)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = load(path, &env)?;
            if overrides != Overrides::default() {
                bail!("hyperparameters are fixed by the checkpoint when resuming");
            }
            let mut t = ckpt.into_trainer(env, execution)?;
            t.learn.step_budget = budget;
            t
        }
        None => {
            let plan = overrides.plan(PlanConfig::default(), execution)?;
            let learn = overrides.learn(LearnConfig::default(), budget)?;
            Trainer::new(env, plan, learn, seed)?
        }
    };

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let resolved = format!(
        "env = \"{}\"\nbudget = {}\nseed = {}\n{}",
        trainer.env().id(),
        budget,
        trainer.seed,
        describe(&trainer.plan, Some(&trainer.learn))
    );
    print!("{resolved}");
    fs::write(out_dir.join("config.toml"), &resolved)?;

    let curve_path = out_dir.join("curve.csv");
    let fresh = resume.is_none() || !curve_path.exists();
    let file = if fresh {
        File::create(&curve_path)
    } else {
        OpenOptions::new().append(true).open(&curve_path)
    }
    .with_context(|| format!("opening {}", curve_path.display()))?;
    let mut curve = BufWriter::new(file);
    if fresh {
        writeln!(curve, "{}", CurveRow::CSV_HEADER)?;
    }

    let latest = out_dir.join("checkpoint.ckpt");
    let rows = trainer.train(
        |row| {
            writeln!(curve, "{}", row.csv_line())?;
            Ok(())
        },
        |t| {
            let ckpt = Checkpoint::from_trainer(t);
            ckpt.save(&out_dir.join(format!("checkpoint-ep{:05}.ckpt", t.episodes)))?;
            ckpt.save(&latest)?;
            eprintln!("checkpoint at {} steps, {} episodes", t.steps, t.episodes);
            Ok(())
        },
    )?;
    curve.flush()?;

    let last = rows.last().map_or(String::from("none"), |r| format!("{:.3}", r.ret));
    println!(
        "trained {} episodes ({} steps), last return {last}; wrote {} and {}",
        rows.len(),
        trainer.steps,
        curve_path.display(),
        latest.display()
    );
    Ok(())
}

fn write_returns(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "episode,return")?;
    for (i, r) in report.returns.iter().enumerate() {
        writeln!(out, "{i},{r}")?;
    }
    out.flush()?;
    Ok(())
}

fn eval(path: &Path, env_id: &str, episodes: usize, seed: u64, out: &Path, execution: Execution) -> Result<()> {
    let env = task(env_id)?;
    let ckpt = load(path, &env)?;
    let config = PlanConfig {
        execution,
        ..evaluation_config(&ckpt.plan)
    };
    print!("env = \"{}\"\nepisodes = {episodes}\nseed = {seed}\n{}", env.id(), describe(&config, None));
    let report = evaluate(&env, &config, checkpoint_priors(&ckpt), episodes, seed)?;
    write_returns(out, &report)?;
    println!("return {:.3} ± {:.3} over {episodes} episodes", report.mean, report.std);
    Ok(())
}

fn baseline(
    env_id: &str,
    horizon: usize,
    generations: usize,
    episodes: usize,
    seed: u64,
    out: &Path,
    execution: Execution,
) -> Result<()> {
    let env = task(env_id)?;
    let config = PlanConfig {
        execution,
        ..PlanConfig::plain(horizon, generations)
    };
    config.validate()?;
    print!("env = \"{}\"\nepisodes = {episodes}\nseed = {seed}\n{}", env.id(), describe(&config, None));
    let report = evaluate(&env, &config, Priors::none(), episodes, seed)?;
    write_returns(out, &report)?;
    println!("return {:.3} ± {:.3} over {episodes} episodes", report.mean, report.std);
    Ok(())
}

fn trace(path: Option<&Path>, env_id: &str, seed: u64, out: &Path, execution: Execution) -> Result<()> {
    let mut env = task(env_id)?;
    let ckpt = path.map(|p| load(p, &env)).transpose()?;
    let (config, priors) = match &ckpt {
        Some(c) => (evaluation_config(&c.plan), checkpoint_priors(c)),
        None => {
            let h = PlanConfig::default().horizon;
            (PlanConfig::plain(h, h), Priors::none())
        }
    };
    let config = PlanConfig { execution, ..config };
    print!("env = \"{}\"\nseed = {seed}\n{}", env.id(), describe(&config, None));
    let (reset, planner) = episode_seeds(seed, 0);
    env.reset(reset);
    let outcome = run_episode(&mut env, &config, priors, &mut seeded(planner), None)?;

    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    writeln!(w, "step,reward,cumulative_reward")?;
    let mut total = 0.0;
    for (i, r) in outcome.rewards.iter().enumerate() {
        total += r;
        writeln!(w, "{i},{r},{total}")?;
    }
    w.flush()?;
    println!("{} steps, return {:.3}; wrote {}", outcome.steps, outcome.total_return, out.display());
    Ok(())
}
