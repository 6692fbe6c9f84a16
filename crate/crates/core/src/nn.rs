//! Feed-forward networks with hand-written backpropagation.
//!
//! Two priors are built on top of [`Mlp`]: a [`GaussianPolicy`] whose mean
//! comes from an MLP and whose log standard deviation is a free,
//! state-independent vector, and a scalar [`ValueNet`]. They share no
//! parameters. [`joint_loss`] evaluates the sum of the policy's negative
//! log-likelihood and half the squared value error over a minibatch, with
//! exact gradients for both networks. [`RmsProp`] applies one clipped update.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];

const LN_2PI: f64 = 1.837_877_066_409_345_5; // ln(2π)

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(output, input, |_, _| rng.random_range(-limit..=limit)),
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Multi-layer perceptron: leaky rectifier on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    slope: f64,
}

/// Activations kept from a batched forward pass for backpropagation.
#[derive(Debug)]
pub struct ForwardCache {
    /// Inputs to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl ForwardCache {
    /// `output_dim × batch`.
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    what: "consecutive layer widths",
                    expected: pair[0].output_dim(),
                    found: pair[1].input_dim(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::ShapeMismatch {
                    what: "layer bias",
                    expected: layer.output_dim(),
                    found: layer.bias.len(),
                });
            }
        }
        Ok(Self {
            layers,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let widths = widths(input, hidden, output);
        let layers = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self {
            layers,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn zeros(input: usize, hidden: &[usize], output: usize) -> Self {
        let widths = widths(input, hidden, output);
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self {
            layers,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::output_dim)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn activate(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.slope * x
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::ShapeMismatch {
                what: "network input",
                expected: self.input_dim(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut x = DVector::from_column_slice(input);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.bias + &layer.weight * &x;
            if k < last {
                z.apply(|v| *v = self.activate(*v));
            }
            x = z;
        }
        Ok(x.as_slice().to_vec())
    }

    /// Forward pass over a batch given as columns (`input_dim × batch`).
    pub fn forward_batch(&self, batch: DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(batch.nrows())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &x;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let next = if k < last {
                z.map(|v| self.activate(v))
            } else {
                z.clone()
            };
            inputs.push(x);
            pre.push(z);
            x = next;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Gradients of a loss given `d loss / d output` (`output_dim × batch`).
    pub fn backward(&self, cache: &ForwardCache, output_grad: DMatrix<f64>) -> MlpGrad {
        let last = self.layers.len() - 1;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                let slope = self.slope;
                delta.zip_apply(&cache.pre[k], |d, z| {
                    if z <= 0.0 {
                        *d *= slope;
                    }
                });
            }
            let weight = &delta * cache.inputs[k].transpose();
            let bias = delta.column_sum();
            if k > 0 {
                delta = self.layers[k].weight.tr_mul(&delta);
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        MlpGrad { layers: grads }
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// Gradient with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<Dense>,
}

impl MlpGrad {
    fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }
}

/// Diagonal Gaussian policy with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub mean_net: MlpGrad,
    pub log_std: DVector<f64>,
}

impl PolicyGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.mean_net.slices();
        s.push(self.log_std.as_slice());
        s
    }
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        Self {
            mean_net: Mlp::new(state_dim, hidden, action_dim, rng),
            log_std: DVector::zeros(action_dim),
        }
    }

    pub fn from_parts(mean_net: Mlp, log_std: DVector<f64>) -> Result<Self> {
        if log_std.len() != mean_net.output_dim() {
            return Err(Error::ShapeMismatch {
                what: "policy log-std",
                expected: mean_net.output_dim(),
                found: log_std.len(),
            });
        }
        Ok(Self { mean_net, log_std })
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.output_dim()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    /// `(mean, std)` of the action distribution at `state`.
    pub fn forward(&self, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.mean_net.forward(state)?, self.std()))
    }

    /// `mean + std ⊙ z` with `z` standard normal. Not clipped.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let (mean, std) = self.forward(state)?;
        Ok(mean
            .iter()
            .zip(&std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::ShapeMismatch {
                what: "action",
                expected: self.action_dim(),
                found: action.len(),
            });
        }
        let mean = self.mean_net.forward(state)?;
        Ok(gaussian_log_prob(&mean, self.log_std.as_slice(), action))
    }

    pub fn param_count(&self) -> usize {
        self.mean_net.param_count() + self.log_std.len()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s = self.mean_net.param_slices_mut();
        s.push(self.log_std.as_mut_slice());
        s
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut s = self.mean_net.param_slices();
        s.push(self.log_std.as_slice());
        s
    }
}

/// Diagonal-Gaussian log density.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    -0.5 * mean
        .iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            z * z + 2.0 * ls + LN_2PI
        })
        .sum::<f64>()
}

/// Scalar state-value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub net: MlpGrad,
}

impl ValueGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.net.slices()
    }
}

impl ValueNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        Self {
            net: Mlp::new(state_dim, hidden, 1, rng),
        }
    }

    pub fn from_mlp(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                what: "value network output",
                expected: 1,
                found: net.output_dim(),
            });
        }
        Ok(Self { net })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn forward(&self, state: &[f64]) -> Result<f64> {
        Ok(self.net.forward(state)?[0])
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.param_slices_mut()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.net.param_slices()
    }
}

/// One training example: a visited state, the planner's action there and the
/// planner's discounted return-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub ret: f64,
}

#[derive(Debug, Clone)]
pub struct JointLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub policy_grad: PolicyGrad,
    pub value_grad: ValueGrad,
}

/// Mean over the batch of `-log p(a*|s) + ½ (R* - V(s))²` with exact
/// gradients for both networks.
pub fn joint_loss(policy: &GaussianPolicy, value: &ValueNet, batch: &[Sample]) -> Result<JointLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("joint loss needs a non-empty batch".into()));
    }
    let sd = policy.state_dim();
    let ad = policy.action_dim();
    if value.state_dim() != sd {
        return Err(Error::ShapeMismatch {
            what: "value network input",
            expected: sd,
            found: value.state_dim(),
        });
    }
    let n = batch.len();
    let mut states = DMatrix::zeros(sd, n);
    let mut actions = DMatrix::zeros(ad, n);
    let mut returns = DVector::zeros(n);
    for (j, sample) in batch.iter().enumerate() {
        if sample.state.len() != sd {
            return Err(Error::ShapeMismatch {
                what: "sample state",
                expected: sd,
                found: sample.state.len(),
            });
        }
        if sample.action.len() != ad {
            return Err(Error::ShapeMismatch {
                what: "sample action",
                expected: ad,
                found: sample.action.len(),
            });
        }
        if sample.state.iter().chain(&sample.action).any(|v| !v.is_finite()) || !sample.ret.is_finite() {
            return Err(Error::NonFinite("training sample"));
        }
        states.set_column(j, &DVector::from_column_slice(&sample.state));
        actions.set_column(j, &DVector::from_column_slice(&sample.action));
        returns[j] = sample.ret;
    }
    let inv_n = 1.0 / n as f64;

    let p_cache = policy.mean_net.forward_batch(states.clone())?;
    let means = p_cache.output();
    let inv_var: Vec<f64> = policy.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut mean_grad = DMatrix::zeros(ad, n);
    let mut log_std_grad = DVector::zeros(ad);
    let mut policy_loss = 0.0;
    for j in 0..n {
        for i in 0..ad {
            let diff = actions[(i, j)] - means[(i, j)];
            let zz = diff * diff * inv_var[i];
            policy_loss += 0.5 * (zz + 2.0 * policy.log_std[i] + LN_2PI);
            mean_grad[(i, j)] = -diff * inv_var[i] * inv_n;
            log_std_grad[i] += (1.0 - zz) * inv_n;
        }
    }
    policy_loss *= inv_n;
    let mean_net_grad = policy.mean_net.backward(&p_cache, mean_grad);

    let v_cache = value.net.forward_batch(states)?;
    let v = v_cache.output();
    let mut v_grad = DMatrix::zeros(1, n);
    let mut value_loss = 0.0;
    for j in 0..n {
        let err = v[(0, j)] - returns[j];
        value_loss += 0.5 * err * err;
        v_grad[(0, j)] = err * inv_n;
    }
    value_loss *= inv_n;
    let value_net_grad = value.net.backward(&v_cache, v_grad);

    Ok(JointLoss {
        loss: policy_loss + value_loss,
        policy_loss,
        value_loss,
        policy_grad: PolicyGrad {
            mean_net: mean_net_grad,
            log_std: log_std_grad,
        },
        value_grad: ValueGrad { net: value_net_grad },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub gradient_clip: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            decay: 0.99,
            gradient_clip: 0.5,
            epsilon: 1e-8,
        }
    }
}

/// RMSProp with clipping of the global gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    /// Running average of squared gradients, flattened in parameter order.
    pub accumulators: Vec<f64>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, param_count: usize) -> Self {
        Self {
            config,
            accumulators: vec![0.0; param_count],
        }
    }

    /// Clips `grads` to the configured global norm, then updates `params`.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<f64> {
        let p_len: usize = params.iter().map(|p| p.len()).sum();
        let g_len: usize = grads.iter().map(|g| g.len()).sum();
        if p_len != g_len || p_len != self.accumulators.len() || params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                what: "optimizer parameters",
                expected: self.accumulators.len(),
                found: g_len,
            });
        }
        if params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::ShapeMismatch {
                what: "parameter block",
                expected: p_len,
                found: g_len,
            });
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = if norm > self.config.gradient_clip {
            self.config.gradient_clip / norm
        } else {
            1.0
        };
        let RmsPropConfig {
            learning_rate,
            decay,
            epsilon,
            ..
        } = self.config;
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (pv, gv) in p.iter_mut().zip(g) {
                let g = gv * scale;
                let acc = &mut self.accumulators[k];
                *acc = decay * *acc + (1.0 - decay) * g * g;
                *pv -= learning_rate * g / (*acc + epsilon).sqrt();
                k += 1;
            }
        }
        Ok(norm)
    }
}

/// Applies one optimizer step to both networks from a [`JointLoss`].
pub fn apply_joint_step(
    policy: &mut GaussianPolicy,
    value: &mut ValueNet,
    loss: &JointLoss,
    policy_opt: &mut RmsProp,
    value_opt: &mut RmsProp,
) -> Result<()> {
    policy_opt.step(policy.param_slices_mut(), loss.policy_grad.slices())?;
    value_opt.step(value.param_slices_mut(), loss.value_grad.slices())?;
    Ok(())
}

/// Averages per-chunk gradients (each already a batch mean) weighted by
/// chunk size. Used when a minibatch is split across workers.
pub fn combine_losses(parts: Vec<(usize, JointLoss)>) -> Option<JointLoss> {
    let total: usize = parts.iter().map(|(n, _)| n).sum();
    let mut iter = parts.into_iter();
    let (n0, mut acc) = iter.next()?;
    let w0 = n0 as f64 / total as f64;
    acc.loss *= w0;
    acc.policy_loss *= w0;
    acc.value_loss *= w0;
    acc.policy_grad.mean_net.scale(w0);
    acc.policy_grad.log_std *= w0;
    acc.value_grad.net.scale(w0);
    for (n, part) in iter {
        let w = n as f64 / total as f64;
        acc.loss += w * part.loss;
        acc.policy_loss += w * part.policy_loss;
        acc.value_loss += w * part.value_loss;
        acc.policy_grad.log_std.axpy(w, &part.policy_grad.log_std, 1.0);
        for (a, b) in acc
            .policy_grad
            .mean_net
            .layers
            .iter_mut()
            .zip(&part.policy_grad.mean_net.layers)
            .chain(acc.value_grad.net.layers.iter_mut().zip(&part.value_grad.net.layers))
        {
            a.weight += &b.weight * w;
            a.bias.axpy(w, &b.bias, 1.0);
        }
    }
    Some(acc)
}

/// `½ ln(2π)`.
pub fn half_ln_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}
