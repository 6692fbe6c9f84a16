//! Checkpoint container.
//!
//! Layout: a UTF-8 header of `key value` lines, starting with the magic line
//! and ending with `end_header`, followed by the raw tensors as little-endian
//! `f64` in the order of the header's `tensor` lines. Each tensor line gives
//! a name and its shape (`rows cols` for matrices, stored column-major).
//!
//! ```text
//! PRHEA-CKPT
//! format_version 1
//! env_id pointmass
//! state_dim 4
//! ...
//! tensor policy.0.weight 128 4
//! ...
//! end_header
//! <payload>
//! ```
//!
//! The replay buffer and the generator position are part of the checkpoint,
//! so a resumed run continues exactly where the original left off.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::env::Environment;
use crate::error::{CheckpointError, Error, Result};
use crate::learner::{ExecutionRule, LearnConfig, ReplayBuffer, Trainer};
use crate::nn::{Dense, GaussianPolicy, Mlp, RmsProp, RmsPropConfig, Sample, ValueNet};
use crate::parallel::Execution;
use crate::planner::PlanConfig;
use crate::rng::RngState;

pub const MAGIC: &str = "PRHEA-CKPT";
pub const FORMAT_VERSION: u32 = 1;
const END: &str = "end_header";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub env_id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub seed: u64,
    pub steps: u64,
    pub episodes: u64,
    pub plan: PlanConfig,
    pub learn: LearnConfig,
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub policy_opt: RmsProp,
    pub value_opt: RmsProp,
    pub rng: RngState,
    pub buffer: ReplayBuffer,
}

impl Checkpoint {
    pub fn from_trainer<E: Environment>(t: &Trainer<E>) -> Self {
        let spec = t.env().spec();
        Self {
            env_id: t.env().id().to_string(),
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            seed: t.seed,
            steps: t.steps,
            episodes: t.episodes,
            plan: t.plan.clone(),
            learn: t.learn.clone(),
            policy: t.policy.clone(),
            value: t.value.clone(),
            policy_opt: t.policy_opt.clone(),
            value_opt: t.value_opt.clone(),
            rng: RngState::capture(&t.rng),
            buffer: t.buffer.clone(),
        }
    }

    /// Fails if the checkpoint was written for a different environment.
    pub fn check_env<E: Environment>(&self, env: &E) -> Result<()> {
        let spec = env.spec();
        if self.state_dim != spec.state_dim {
            return Err(CheckpointError::DimensionMismatch {
                what: "state_dim",
                expected: spec.state_dim,
                found: self.state_dim,
            }
            .into());
        }
        if self.action_dim != spec.action_dim {
            return Err(CheckpointError::DimensionMismatch {
                what: "action_dim",
                expected: spec.action_dim,
                found: self.action_dim,
            }
            .into());
        }
        if self.env_id != env.id() {
            return Err(CheckpointError::EnvMismatch {
                expected: env.id().to_string(),
                found: self.env_id.clone(),
            }
            .into());
        }
        Ok(())
    }

    /// Rebuilds the trainer. The execution mode is a runtime choice and is not
    /// stored.
    pub fn into_trainer<E: Environment>(self, env: E, execution: Execution) -> Result<Trainer<E>> {
        self.check_env(&env)?;
        let plan = PlanConfig { execution, ..self.plan };
        Ok(Trainer::from_parts(
            env,
            plan,
            self.learn,
            self.seed,
            self.policy,
            self.value,
            self.policy_opt,
            self.value_opt,
            self.buffer,
            self.rng.restore(),
            self.steps,
            self.episodes,
        ))
    }

    /// Whether the value network had started training when this was written.
    pub fn value_trained(&self) -> bool {
        self.buffer.len() >= self.learn.replay_start && !self.buffer.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = String::new();
        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let p = &self.plan;
        let l = &self.learn;
        let r = &l.rmsprop;
        let hidden = l.hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        let population = p.population.map_or("auto".to_string(), |n| n.to_string());
        let seed_hex: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        let fields: Vec<(&str, String)> = vec![
            ("format_version", FORMAT_VERSION.to_string()),
            ("env_id", self.env_id.clone()),
            ("state_dim", self.state_dim.to_string()),
            ("action_dim", self.action_dim.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("episodes", self.episodes.to_string()),
            ("plan.horizon", p.horizon.to_string()),
            ("plan.generations", p.generations.to_string()),
            ("plan.population", population),
            ("plan.discount", format!("{:?}", p.discount)),
            ("plan.use_policy_prior", p.use_policy_prior.to_string()),
            ("plan.use_value_prior", p.use_value_prior.to_string()),
            ("plan.steps_per_cycle", p.steps_per_cycle.to_string()),
            ("plan.step_size_fraction", format!("{:?}", p.step_size_fraction)),
            ("learn.minibatch", l.minibatch.to_string()),
            ("learn.capacity", l.capacity.to_string()),
            ("learn.replay_start", l.replay_start.to_string()),
            ("learn.trains_per_cycle", l.trains_per_cycle.to_string()),
            ("learn.step_budget", l.step_budget.to_string()),
            ("learn.rule", l.rule.to_string()),
            ("learn.checkpoint_every", l.checkpoint_every.to_string()),
            ("learn.hidden", hidden),
            ("rmsprop.learning_rate", format!("{:?}", r.learning_rate)),
            ("rmsprop.decay", format!("{:?}", r.decay)),
            ("rmsprop.gradient_clip", format!("{:?}", r.gradient_clip)),
            ("rmsprop.epsilon", format!("{:?}", r.epsilon)),
            ("rng.seed", seed_hex),
            ("rng.stream", self.rng.stream.to_string()),
            ("rng.word_pos", self.rng.word_pos.to_string()),
            ("buffer.pushed", self.buffer.pushed().to_string()),
        ];
        h.push_str(MAGIC);
        h.push('\n');
        for (k, v) in fields {
            let _ = writeln!(h, "{k} {v}");
        }

        push_mlp(&mut tensors, "policy", &self.policy.mean_net);
        tensors.push(("policy.log_std".into(), vec![self.policy.log_std.len()], self.policy.log_std.as_slice().to_vec()));
        push_mlp(&mut tensors, "value", &self.value.net);
        tensors.push(("opt.policy".into(), vec![self.policy_opt.accumulators.len()], self.policy_opt.accumulators.clone()));
        tensors.push(("opt.value".into(), vec![self.value_opt.accumulators.len()], self.value_opt.accumulators.clone()));
        let n = self.buffer.len();
        let mut states = Vec::with_capacity(n * self.state_dim);
        let mut actions = Vec::with_capacity(n * self.action_dim);
        let mut returns = Vec::with_capacity(n);
        for s in self.buffer.iter() {
            states.extend_from_slice(&s.state);
            actions.extend_from_slice(&s.action);
            returns.push(s.ret);
        }
        tensors.push(("buffer.states".into(), vec![n, self.state_dim], states));
        tensors.push(("buffer.actions".into(), vec![n, self.action_dim], actions));
        tensors.push(("buffer.returns".into(), vec![n], returns));

        for (name, shape, _) in &tensors {
            let dims = shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(h, "tensor {name} {dims}");
        }
        h.push_str(END);
        h.push('\n');
        let mut out = h.into_bytes();
        for (_, _, data) in &tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: String| Error::from(CheckpointError::Corrupt(m));
        let marker = format!("\n{END}\n");
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| corrupt("header terminator not found".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not UTF-8".into()))?;
        let payload = &bytes[end + marker.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("missing magic line".into()));
        }
        let mut kv: HashMap<&str, &str> = HashMap::new();
        let mut shapes: Vec<(&str, Vec<usize>)> = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| corrupt(format!("bad tensor line `{line}`")))?;
                let dims = parts
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| corrupt(format!("bad tensor shape `{line}`")))?;
                shapes.push((name, dims));
            } else {
                let (k, v) = line.split_once(' ').ok_or_else(|| corrupt(format!("bad header line `{line}`")))?;
                kv.insert(k, v);
            }
        }
        let h = Header { kv };
        let version: u32 = h.get("format_version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            }
            .into());
        }

        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if payload.len() != total * 8 {
            return Err(corrupt(format!(
                "payload holds {} bytes, header declares {}",
                payload.len(),
                total * 8
            )));
        }
        let mut tensors: HashMap<&str, (Vec<usize>, Vec<f64>)> = HashMap::new();
        let mut offset = 0;
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data = payload[offset..offset + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            offset += n * 8;
            tensors.insert(name, (shape, data));
        }
        let mut t = Tensors { map: tensors };

        let state_dim: usize = h.get("state_dim")?;
        let action_dim: usize = h.get("action_dim")?;
        let hidden: Vec<usize> = h
            .raw("learn.hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|w| w.parse().map_err(|_| corrupt(format!("bad hidden widths `{w}`"))))
            .collect::<Result<_>>()?;
        let population = match h.raw("plan.population")? {
            "auto" => None,
            n => Some(n.parse().map_err(|_| corrupt(format!("bad population `{n}`")))?),
        };
        let plan = PlanConfig {
            horizon: h.get("plan.horizon")?,
            generations: h.get("plan.generations")?,
            population,
            discount: h.get("plan.discount")?,
            use_policy_prior: h.get("plan.use_policy_prior")?,
            use_value_prior: h.get("plan.use_value_prior")?,
            steps_per_cycle: h.get("plan.steps_per_cycle")?,
            step_size_fraction: h.get("plan.step_size_fraction")?,
            execution: Execution::default(),
        };
        let rmsprop = RmsPropConfig {
            learning_rate: h.get("rmsprop.learning_rate")?,
            decay: h.get("rmsprop.decay")?,
            gradient_clip: h.get("rmsprop.gradient_clip")?,
            epsilon: h.get("rmsprop.epsilon")?,
        };
        let rule: ExecutionRule = h
            .raw("learn.rule")?
            .parse()
            .map_err(|_| corrupt("bad execution rule".into()))?;
        let learn = LearnConfig {
            minibatch: h.get("learn.minibatch")?,
            capacity: h.get("learn.capacity")?,
            replay_start: h.get("learn.replay_start")?,
            trains_per_cycle: h.get("learn.trains_per_cycle")?,
            step_budget: h.get("learn.step_budget")?,
            rule,
            checkpoint_every: h.get("learn.checkpoint_every")?,
            hidden: hidden.clone(),
            rmsprop,
        };

        let mean_net = t.mlp("policy", state_dim, &hidden, action_dim)?;
        let log_std = DVector::from_vec(t.vector("policy.log_std", action_dim)?);
        let policy = GaussianPolicy::from_parts(mean_net, log_std)?;
        let value = ValueNet::from_mlp(t.mlp("value", state_dim, &hidden, 1)?)?;
        let mut policy_opt = RmsProp::new(rmsprop, policy.param_count());
        policy_opt.accumulators = t.vector("opt.policy", policy.param_count())?;
        let mut value_opt = RmsProp::new(rmsprop, value.param_count());
        value_opt.accumulators = t.vector("opt.value", value.param_count())?;

        let (n, states) = t.rows("buffer.states", state_dim)?;
        let (na, actions) = t.rows("buffer.actions", action_dim)?;
        let returns = t.vector("buffer.returns", n)?;
        if na != n || n > learn.capacity {
            return Err(corrupt("inconsistent replay buffer".into()));
        }
        let samples = (0..n)
            .map(|i| Sample {
                state: states[i * state_dim..(i + 1) * state_dim].to_vec(),
                action: actions[i * action_dim..(i + 1) * action_dim].to_vec(),
                ret: returns[i],
            })
            .collect();
        let buffer = ReplayBuffer::from_parts(learn.capacity, samples, h.get("buffer.pushed")?);

        let seed_hex = h.raw("rng.seed")?;
        if seed_hex.len() != 64 {
            return Err(corrupt("bad generator seed".into()));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16)
                .map_err(|_| corrupt("bad generator seed".into()))?;
        }
        let rng = RngState {
            seed,
            stream: h.get("rng.stream")?,
            word_pos: h.get("rng.word_pos")?,
        };

        Ok(Self {
            env_id: h.raw("env_id")?.to_string(),
            state_dim,
            action_dim,
            seed: h.get("seed")?,
            steps: h.get("steps")?,
            episodes: h.get("episodes")?,
            plan,
            learn,
            policy,
            value,
            policy_opt,
            value_opt,
            rng,
            buffer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads and checks against `env`.
    pub fn load_for<E: Environment>(path: &Path, env: &E) -> Result<Self> {
        let c = Self::load(path)?;
        c.check_env(env)?;
        Ok(c)
    }
}

fn push_mlp(out: &mut Vec<(String, Vec<usize>, Vec<f64>)>, prefix: &str, net: &Mlp) {
    for (i, layer) in net.layers().iter().enumerate() {
        out.push((
            format!("{prefix}.{i}.weight"),
            vec![layer.weight.nrows(), layer.weight.ncols()],
            layer.weight.as_slice().to_vec(),
        ));
        out.push((format!("{prefix}.{i}.bias"), vec![layer.bias.len()], layer.bias.as_slice().to_vec()));
    }
}

struct Header<'a> {
    kv: HashMap<&'a str, &'a str>,
}

impl Header<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.kv
            .get(key)
            .copied()
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing header field `{key}`")).into())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse()
            .map_err(|_| CheckpointError::Corrupt(format!("bad value `{raw}` for `{key}`")).into())
    }
}

struct Tensors<'a> {
    map: HashMap<&'a str, (Vec<usize>, Vec<f64>)>,
}

impl Tensors<'_> {
    fn take(&mut self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        self.map
            .remove(name)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor `{name}`")).into())
    }

    fn vector(&mut self, name: &str, len: usize) -> Result<Vec<f64>> {
        let (shape, data) = self.take(name)?;
        if shape != [len] {
            return Err(shape_error(name, &[len], &shape));
        }
        Ok(data)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (shape, data) = self.take(name)?;
        if shape != [rows, cols] {
            return Err(shape_error(name, &[rows, cols], &shape));
        }
        Ok(DMatrix::from_column_slice(rows, cols, &data))
    }

    /// A row-major `n × width` table with free `n`.
    fn rows(&mut self, name: &str, width: usize) -> Result<(usize, Vec<f64>)> {
        let (shape, data) = self.take(name)?;
        match shape[..] {
            [n, w] if w == width => Ok((n, data)),
            _ => Err(shape_error(name, &[usize::MAX, width], &shape)),
        }
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: &[usize], output: usize) -> Result<Mlp> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                Ok(Dense {
                    weight: self.matrix(&format!("{prefix}.{i}.weight"), w[1], w[0])?,
                    bias: DVector::from_vec(self.vector(&format!("{prefix}.{i}.bias"), w[1])?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }
}

fn shape_error(name: &str, expected: &[usize], found: &[usize]) -> Error {
    let fmt = |s: &[usize]| {
        s.iter()
            .map(|d| if *d == usize::MAX { "n".to_string() } else { d.to_string() })
            .collect::<Vec<_>>()
            .join("x")
    };
    CheckpointError::Corrupt(format!(
        "tensor `{name}` has shape {} but {} was expected",
        fmt(found),
        fmt(expected)
    ))
    .into()
}
