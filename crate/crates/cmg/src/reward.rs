//! Mean-field Bayesian reward network trained on preference labels.
//!
//! The network maps one (observation, action one-hot) step to a scalar
//! reward; a rollout's predicted return is the undiscounted sum over its
//! fragment. Every weight and bias carries an independent Gaussian
//! posterior (mu, softplus(rho)); training maximizes the ELBO with the
//! reparameterization trick — a single shared weight sample per minibatch —
//! against the Shepard-Luce cross-entropy on predicted returns divided by a
//! temperature, plus the analytic Gaussian KL to a zero-mean prior scaled
//! per pair. Updates use Adam with decoupled weight decay applied to the
//! means only, so posterior widths are never decayed toward zero.
//!
//! Backpropagation is hand-rolled: the networks are small dense stacks of
//! tanh layers with a linear scalar head, and an explicit implementation
//! keeps the gradient path auditable against finite differences.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::Action;
use crate::oracle::PreferenceLabel;
use crate::rollouts::{Rollout, RolloutDataset};
use crate::seeding::{stream_rng, Stream};

/// Width of the action one-hot block appended to each observation.
pub const ACTION_ONE_HOT_DIM: usize = crate::env::NUM_ACTIONS;
/// Default hidden widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
/// Default prior standard deviation.
pub const DEFAULT_PRIOR_SIGMA: f64 = 1.0;
/// Initial posterior standard deviation.
pub const INIT_POSTERIOR_SIGMA: f64 = 0.05;
/// Adam moment decay rates and stabilizer.
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Checkpoint schema version.
const CHECKPOINT_VERSION: u32 = 1;

/// Reward-model errors.
#[derive(Debug, Error)]
pub enum RewardError {
    #[error("layer layout {0:?} needs input, at least one hidden layer, and a width-1 output")]
    BadLayout(Vec<usize>),
    #[error("input has {got} features, the network expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("no preference pairs to train on")]
    EmptyDataset,
    #[error("predictive statistics need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("rollout {0} is missing from the feature table")]
    UnknownRollout(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("checkpoint version {got} unsupported (expected {expected})")]
    Version { got: u32, expected: u32 },
    #[error("checkpoint arrays do not match the layout ({0} parameters expected)")]
    CorruptCheckpoint(usize),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub m_samples: usize,
    pub kl_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 3e-3,
            weight_decay: 3e-5,
            batch_size: 8,
            temperature: 1.0,
            epochs: 20,
            m_samples: 10,
            kl_weight: 1.0,
        }
    }
}

/// Where a training pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Answered by the oracle.
    Queried,
    /// Implied by chain transitivity.
    Derived,
    /// Part of the pre-query bootstrap set.
    Initial,
}

/// One labeled training example over two rollout ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub first: u64,
    pub second: u64,
    pub label: PreferenceLabel,
    pub provenance: Provenance,
}

impl PreferencePair {
    pub fn new(first: u64, second: u64, label: PreferenceLabel, provenance: Provenance) -> Self {
        assert_ne!(first, second, "a preference pair needs two distinct rollouts");
        PreferencePair { first, second, label, provenance }
    }

    fn target(&self) -> f64 {
        match self.label {
            PreferenceLabel::FirstPreferred => 1.0,
            PreferenceLabel::SecondPreferred => 0.0,
            PreferenceLabel::Equal => 0.5,
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let t = x.exp();
        t / (1.0 + t)
    }
}

/// One concrete weight vector drawn from (or centered on) the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample(pub Vec<f64>);

/// Per-layer slicing of the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LayerSlice {
    w_off: usize,
    b_off: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Diagonal-Gaussian posterior over a small dense reward network.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesianRewardNet {
    /// Layer widths, input first, scalar output last.
    pub layout: Vec<usize>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub prior_sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    layout: Vec<usize>,
    prior_sigma: f64,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

fn layer_slices(layout: &[usize]) -> Vec<LayerSlice> {
    let mut slices = Vec::with_capacity(layout.len() - 1);
    let mut off = 0;
    for l in 0..layout.len() - 1 {
        let (fan_in, fan_out) = (layout[l], layout[l + 1]);
        slices.push(LayerSlice { w_off: off, b_off: off + fan_in * fan_out, fan_in, fan_out });
        off += fan_in * fan_out + fan_out;
    }
    slices
}

fn param_count(layout: &[usize]) -> usize {
    layout.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl BayesianRewardNet {
    /// Fresh posterior: means small-random scaled by fan-in (biases zero),
    /// every standard deviation at [`INIT_POSTERIOR_SIGMA`].
    pub fn init(layout: &[usize], prior_sigma: f64, seed: u64) -> Result<Self, RewardError> {
        if layout.len() < 3 || *layout.last().unwrap() != 1 || layout.contains(&0) {
            return Err(RewardError::BadLayout(layout.to_vec()));
        }
        let mut rng = stream_rng(seed, Stream::NetInit, 0);
        let n = param_count(layout);
        let mut mu = vec![0.0; n];
        for slice in layer_slices(layout) {
            let scale = 1.0 / (slice.fan_in as f64).sqrt();
            for w in &mut mu[slice.w_off..slice.b_off] {
                *w = rng.gen_range(-scale..scale);
            }
        }
        let rho = vec![softplus_inv(INIT_POSTERIOR_SIGMA); n];
        Ok(BayesianRewardNet { layout: layout.to_vec(), mu, rho, prior_sigma })
    }

    /// Layout for a task: observation width plus the action one-hot block,
    /// the default hidden stack, scalar output.
    pub fn task_layout(observation_dim: usize) -> Vec<usize> {
        let mut layout = vec![observation_dim + ACTION_ONE_HOT_DIM];
        layout.extend(DEFAULT_HIDDEN);
        layout.push(1);
        layout
    }

    pub fn n_params(&self) -> usize {
        self.mu.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layout[0]
    }

    /// Reparameterized draw: θ = mu + softplus(rho) ⊙ ε with ε standard
    /// normal from the caller's stream.
    pub fn sample_weights(&self, rng: &mut impl Rng) -> WeightSample {
        
        let theta = self
            .mu
            .iter()
            .zip(&self.rho)
            .map(|(&m, &r)| m + softplus(r) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        WeightSample(theta)
    }

    /// The posterior mean as a weight vector.
    pub fn mean_weights(&self) -> WeightSample {
        WeightSample(self.mu.clone())
    }

    /// Scores one step input: tanh hidden layers, linear scalar head.
    pub fn forward(&self, theta: &WeightSample, input: &[f64]) -> Result<f64, RewardError> {
        if input.len() != self.input_dim() {
            return Err(RewardError::DimensionMismatch {
                got: input.len(),
                expected: self.input_dim(),
            });
        }
        let slices = layer_slices(&self.layout);
        let mut a = input.to_vec();
        for (l, s) in slices.iter().enumerate() {
            let mut next = Vec::with_capacity(s.fan_out);
            for o in 0..s.fan_out {
                let row = &theta.0[s.w_off + o * s.fan_in..s.w_off + (o + 1) * s.fan_in];
                let z = theta.0[s.b_off + o]
                    + row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
                next.push(if l + 1 == slices.len() { z } else { z.tanh() });
            }
            a = next;
        }
        Ok(a[0])
    }

    /// Predicted return: sum of step scores over the whole fragment.
    pub fn predict_return(
        &self,
        theta: &WeightSample,
        rollout: &Rollout,
    ) -> Result<f64, RewardError> {
        let mut total = 0.0;
        for (_, action, obs) in &rollout.steps {
            total += self.forward(theta, &step_input(obs, *action))?;
        }
        Ok(total)
    }

    /// Analytic KL(posterior ‖ prior) summed over parameters.
    pub fn kl_to_prior(&self) -> f64 {
        let sp2 = self.prior_sigma * self.prior_sigma;
        self.mu
            .iter()
            .zip(&self.rho)
            .map(|(&m, &r)| {
                let sq = softplus(r);
                (self.prior_sigma / sq).ln() + (sq * sq + m * m) / (2.0 * sp2) - 0.5
            })
            .sum()
    }

    /// Writes a versioned text checkpoint; floating-point values round-trip
    /// bit-exactly.
    pub fn save_checkpoint(&self, mut w: impl Write) -> Result<(), RewardError> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            layout: self.layout.clone(),
            prior_sigma: self.prior_sigma,
            mu: self.mu.clone(),
            rho: self.rho.clone(),
        };
        serde_json::to_writer(&mut w, &ckpt)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn load_checkpoint(r: impl BufRead) -> Result<Self, RewardError> {
        let ckpt: Checkpoint = serde_json::from_reader(r)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(RewardError::Version {
                got: ckpt.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let expected = param_count(&ckpt.layout);
        if ckpt.layout.len() < 3 || ckpt.mu.len() != expected || ckpt.rho.len() != expected {
            return Err(RewardError::CorruptCheckpoint(expected));
        }
        Ok(BayesianRewardNet {
            layout: ckpt.layout,
            mu: ckpt.mu,
            rho: ckpt.rho,
            prior_sigma: ckpt.prior_sigma,
        })
    }
}

/// Builds the network input for one step: observation then action one-hot.
pub fn step_input(observation: &[f64], action: Action) -> Vec<f64> {
    let mut x = Vec::with_capacity(observation.len() + ACTION_ONE_HOT_DIM);
    x.extend_from_slice(observation);
    for i in 0..ACTION_ONE_HOT_DIM {
        x.push(if i == action.index() { 1.0 } else { 0.0 });
    }
    x
}

/// Precomputed per-rollout step inputs, so training and scoring never
/// re-encode observations.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    inputs: HashMap<u64, Vec<Vec<f64>>>,
    pub input_dim: usize,
}

impl FeatureTable {
    pub fn build(dataset: &RolloutDataset) -> FeatureTable {
        let input_dim = dataset.task.observation_dim() + ACTION_ONE_HOT_DIM;
        let inputs = dataset
            .rollouts
            .iter()
            .map(|r| {
                let steps = r
                    .steps
                    .iter()
                    .map(|(_, action, obs)| step_input(obs, *action))
                    .collect();
                (r.id, steps)
            })
            .collect();
        FeatureTable { inputs, input_dim }
    }

    /// Synthetic table for fixtures: id → list of step inputs.
    pub fn from_raw(inputs: HashMap<u64, Vec<Vec<f64>>>, input_dim: usize) -> FeatureTable {
        FeatureTable { inputs, input_dim }
    }

    pub fn steps(&self, id: u64) -> Result<&[Vec<f64>], RewardError> {
        self.inputs
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(RewardError::UnknownRollout(id))
    }
}

/// Per-step activations kept for the backward pass; `stages[0]` is the
/// input, later entries are post-nonlinearity (the head stays linear).
struct StepTrace {
    stages: Vec<Vec<f64>>,
}

fn forward_trace(layout: &[usize], slices: &[LayerSlice], theta: &[f64], x: &[f64]) -> StepTrace {
    let mut stages = Vec::with_capacity(layout.len());
    stages.push(x.to_vec());
    for (l, s) in slices.iter().enumerate() {
        let prev = &stages[l];
        let mut next = Vec::with_capacity(s.fan_out);
        for o in 0..s.fan_out {
            let row = &theta[s.w_off + o * s.fan_in..s.w_off + (o + 1) * s.fan_in];
            let z =
                theta[s.b_off + o] + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
            next.push(if l + 1 == slices.len() { z } else { z.tanh() });
        }
        stages.push(next);
    }
    StepTrace { stages }
}

/// Accumulates `scale · ∂(step output)/∂θ` into `grad` for one step trace.
fn backward_step(
    slices: &[LayerSlice],
    theta: &[f64],
    trace: &StepTrace,
    scale: f64,
    grad: &mut [f64],
) {
    let depth = slices.len();
    // Start from the scalar head and walk layers backwards.
    let mut delta = vec![scale];
    for l in (0..depth).rev() {
        let s = slices[l];
        let inputs = &trace.stages[l];
        let mut prev_delta = vec![0.0; s.fan_in];
        for o in 0..s.fan_out {
            let d = delta[o];
            if d == 0.0 {
                continue;
            }
            let w_row = s.w_off + o * s.fan_in;
            grad[s.b_off + o] += d;
            for i in 0..s.fan_in {
                grad[w_row + i] += d * inputs[i];
                prev_delta[i] += d * theta[w_row + i];
            }
        }
        if l > 0 {
            // Hidden activations are tanh: d/dz = 1 − a².
            for (pd, a) in prev_delta.iter_mut().zip(&trace.stages[l]) {
                *pd *= 1.0 - a * a;
            }
        }
        delta = prev_delta;
    }
}

/// ELBO loss and its gradients w.r.t. (mu, rho) for one minibatch under a
/// fixed reparameterization noise vector `eps`. Deterministic in `eps`, so
/// finite differences can audit the analytic gradients.
pub fn elbo_loss_and_grad(
    net: &BayesianRewardNet,
    eps: &[f64],
    batch: &[PreferencePair],
    features: &FeatureTable,
    config: &TrainConfig,
    dataset_size: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), RewardError> {
    assert_eq!(eps.len(), net.n_params());
    let n = net.n_params();
    let slices = layer_slices(&net.layout);
    let sigma: Vec<f64> = net.rho.iter().map(|&r| softplus(r)).collect();
    let theta: Vec<f64> =
        (0..n).map(|i| net.mu[i] + sigma[i] * eps[i]).collect();

    // Forward every distinct rollout once, keeping traces for backprop.
    let ids: BTreeSet<u64> = batch.iter().flat_map(|p| [p.first, p.second]).collect();
    let mut returns: HashMap<u64, f64> = HashMap::with_capacity(ids.len());
    let mut traces: HashMap<u64, Vec<StepTrace>> = HashMap::with_capacity(ids.len());
    for &id in &ids {
        let steps = features.steps(id)?;
        let mut total = 0.0;
        let mut step_traces = Vec::with_capacity(steps.len());
        for x in steps {
            if x.len() != net.input_dim() {
                return Err(RewardError::DimensionMismatch {
                    got: x.len(),
                    expected: net.input_dim(),
                });
            }
            let trace = forward_trace(&net.layout, &slices, &theta, x);
            total += trace.stages.last().unwrap()[0];
            step_traces.push(trace);
        }
        returns.insert(id, total);
        traces.insert(id, step_traces);
    }

    // Cross-entropy on Luce probabilities of tempered return gaps; collect
    // d(loss)/d(return) per rollout so each rollout backprops once.
    let b = batch.len() as f64;
    let mut ce_sum = 0.0;
    let mut return_grad: HashMap<u64, f64> = HashMap::with_capacity(ids.len());
    for pair in batch {
        let z = (returns[&pair.first] - returns[&pair.second]) / config.temperature;
        let y = pair.target();
        ce_sum += y * softplus(-z) + (1.0 - y) * softplus(z);
        let dz = (sigmoid(z) - y) / (config.temperature * b);
        *return_grad.entry(pair.first).or_insert(0.0) += dz;
        *return_grad.entry(pair.second).or_insert(0.0) -= dz;
    }

    let mut dtheta = vec![0.0; n];
    for &id in &ids {
        let g = return_grad[&id];
        if g == 0.0 {
            continue;
        }
        for trace in &traces[&id] {
            backward_step(&slices, &theta, trace, g, &mut dtheta);
        }
    }

    // KL term and gradients; dσ/dρ = sigmoid(ρ).
    let kl_scale = config.kl_weight / dataset_size as f64;
    let sp2 = net.prior_sigma * net.prior_sigma;
    let mut loss = ce_sum / b + kl_scale * net.kl_to_prior();
    let mut dmu = vec![0.0; n];
    let mut drho = vec![0.0; n];
    for i in 0..n {
        dmu[i] = dtheta[i] + kl_scale * net.mu[i] / sp2;
        let dkl_dsigma = -1.0 / sigma[i] + sigma[i] / sp2;
        drho[i] = (dtheta[i] * eps[i] + kl_scale * dkl_dsigma) * sigmoid(net.rho[i]);
    }
    if !loss.is_finite() {
        loss = f64::MAX;
    }
    Ok((loss, dmu, drho))
}

/// Mean ELBO loss of a batch under one fresh weight sample.
pub fn preference_loss(
    net: &BayesianRewardNet,
    batch: &[PreferencePair],
    features: &FeatureTable,
    config: &TrainConfig,
    dataset_size: usize,
    rng: &mut impl Rng,
) -> Result<f64, RewardError> {
    if batch.is_empty() {
        return Err(RewardError::EmptyDataset);
    }
    let eps: Vec<f64> =
        (0..net.n_params()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    elbo_loss_and_grad(net, &eps, batch, features, config, dataset_size).map(|(l, _, _)| l)
}

/// Adam-with-decoupled-weight-decay trainer owning the optimizer moments.
pub struct Trainer {
    pub net: BayesianRewardNet,
    pub config: TrainConfig,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

impl Trainer {
    pub fn new(net: BayesianRewardNet, config: TrainConfig) -> Trainer {
        let n2 = 2 * net.n_params();
        Trainer { net, config, adam_m: vec![0.0; n2], adam_v: vec![0.0; n2], step: 0 }
    }

    /// One shuffled pass over the pairs in minibatches; returns the mean
    /// batch loss. Weight decay acts on the means only.
    pub fn train_epoch(
        &mut self,
        pairs: &[PreferencePair],
        features: &FeatureTable,
        rng: &mut impl Rng,
    ) -> Result<f64, RewardError> {
        if pairs.is_empty() {
            return Err(RewardError::EmptyDataset);
        }
        
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(rng);
        let n = self.net.n_params();
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size.max(1)) {
            let batch: Vec<PreferencePair> = chunk.iter().map(|&i| pairs[i]).collect();
            let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let (loss, dmu, drho) = elbo_loss_and_grad(
                &self.net,
                &eps,
                &batch,
                features,
                &self.config,
                pairs.len(),
            )?;
            loss_sum += loss;
            batches += 1;
            self.step += 1;
            let t = self.step as i32;
            let lr = self.config.learning_rate;
            let bias1 = 1.0 - ADAM_BETA1.powi(t);
            let bias2 = 1.0 - ADAM_BETA2.powi(t);
            for i in 0..n {
                for (slot, grad, param, decay) in [
                    (i, dmu[i], &mut self.net.mu[i], self.config.weight_decay),
                    (n + i, drho[i], &mut self.net.rho[i], 0.0),
                ] {
                    let m = &mut self.adam_m[slot];
                    let v = &mut self.adam_v[slot];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * grad;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * grad * grad;
                    let update = (*m / bias1) / ((*v / bias2).sqrt() + ADAM_EPS);
                    *param -= lr * (update + decay * *param);
                }
            }
        }
        Ok(loss_sum / batches as f64)
    }
}

/// Empirical mean and sample standard deviation of the predicted return
/// over `m_samples` posterior draws.
pub fn predictive_return_stats(
    net: &BayesianRewardNet,
    rollout: &Rollout,
    m_samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64), RewardError> {
    if m_samples < 2 {
        return Err(RewardError::TooFewSamples(m_samples));
    }
    let mut draws = Vec::with_capacity(m_samples);
    for _ in 0..m_samples {
        let theta = net.sample_weights(rng);
        draws.push(net.predict_return(&theta, rollout)?);
    }
    Ok(mean_and_sample_std(&draws))
}

pub(crate) fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Anything that can score rollouts with uncertainty: the trained posterior
/// in production, fixed stubs in tests.
pub trait ReturnPredictor {
    /// Predictive (mean, sample stddev) of one rollout's return.
    fn predict_stats(&mut self, id: u64, m_samples: usize) -> Result<(f64, f64), RewardError>;
    /// Per-sample predicted returns, one shared weight draw per row:
    /// `result[s][k]` scores `ids[k]` under the s-th draw.
    fn predict_samples(
        &mut self,
        ids: &[u64],
        m_samples: usize,
    ) -> Result<Vec<Vec<f64>>, RewardError>;
}

/// The trained posterior as a [`ReturnPredictor`] over a feature table.
pub struct PosteriorPredictor<'a> {
    pub net: &'a BayesianRewardNet,
    pub features: &'a FeatureTable,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> PosteriorPredictor<'a> {
    pub fn new(
        net: &'a BayesianRewardNet,
        features: &'a FeatureTable,
        seed: u64,
    ) -> PosteriorPredictor<'a> {
        PosteriorPredictor { net, features, rng: stream_rng(seed, Stream::NetSample, 0) }
    }

    fn return_of(&self, theta: &WeightSample, id: u64) -> Result<f64, RewardError> {
        let mut total = 0.0;
        for x in self.features.steps(id)? {
            total += self.net.forward(theta, x)?;
        }
        Ok(total)
    }
}

impl ReturnPredictor for PosteriorPredictor<'_> {
    fn predict_stats(&mut self, id: u64, m_samples: usize) -> Result<(f64, f64), RewardError> {
        if m_samples < 2 {
            return Err(RewardError::TooFewSamples(m_samples));
        }
        let mut draws = Vec::with_capacity(m_samples);
        for _ in 0..m_samples {
            let theta = self.net.sample_weights(&mut self.rng);
            draws.push(self.return_of(&theta, id)?);
        }
        Ok(mean_and_sample_std(&draws))
    }

    fn predict_samples(
        &mut self,
        ids: &[u64],
        m_samples: usize,
    ) -> Result<Vec<Vec<f64>>, RewardError> {
        let mut rows = Vec::with_capacity(m_samples);
        for _ in 0..m_samples {
            let theta = self.net.sample_weights(&mut self.rng);
            let row: Result<Vec<f64>, RewardError> =
                ids.iter().map(|&id| self.return_of(&theta, id)).collect();
            rows.push(row?);
        }
        Ok(rows)
    }
}
