//! Clipped-surrogate policy optimization for the controller.

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, forward, sample_batch, ControllerParams, ControllerShape, SampleTrace, Tape, Teacher};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::util::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub baseline_decay: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
    pub entropy_coefficient: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            clip_epsilon: 0.2,
            baseline_decay: 0.95,
            epochs_per_batch: 4,
            batch_size: 8,
            entropy_coefficient: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Parameter(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon)));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Parameter(format!("baseline_decay must lie in [0, 1), got {}", self.baseline_decay)));
        }
        if self.epochs_per_batch == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("epochs_per_batch and batch_size must be positive".into()));
        }
        if !(self.entropy_coefficient >= 0.0 && self.entropy_coefficient.is_finite()) {
            return Err(Error::Parameter("entropy_coefficient must be non-negative".into()));
        }
        Ok(())
    }

    pub fn clip(&self, ratio: f64) -> f64 {
        ratio.clamp(1.0 - self.clip_epsilon, 1.0 + self.clip_epsilon)
    }

    /// `min(r * A, clip(r) * A)`.
    pub fn surrogate(&self, ratio: f64, advantage: f64) -> f64 {
        (ratio * advantage).min(self.clip(ratio) * advantage)
    }
}

/// First and second moment estimates for adaptive gradient ascent.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    /// Moves `values` along `grad` (ascent).
    pub fn ascend(&mut self, values: &mut [f64], grad: &[f64], learning_rate: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((v, g), m), s) in values.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *s = self.beta2 * *s + (1.0 - self.beta2) * g * g;
            *v += learning_rate * (*m / c1) / ((*s / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub mean_reward: f64,
    /// Objective at the start of the last epoch.
    pub objective: f64,
    /// Mean per-step entropy at the start of the last epoch.
    pub entropy: f64,
    /// Share of (trace, step) terms whose clipped branch was active in the last epoch.
    pub clip_fraction: f64,
    pub epochs: usize,
}

struct Evaluation {
    objective: f64,
    grad: Vec<f64>,
    entropy: f64,
    clip_fraction: f64,
}

fn decisions_of(batch: &[SampleTrace]) -> Vec<Vec<usize>> {
    batch.iter().map(|t| t.decisions.clone()).collect()
}

fn objective_terms(
    tape: &Tape,
    batch: &[SampleTrace],
    advantages: &[f64],
    config: &PpoConfig,
) -> (f64, Vec<Array2<f64>>, f64, f64) {
    let scale = 1.0 / batch.len() as f64;
    let mut objective = 0.0;
    let mut entropy_sum = 0.0;
    let mut clipped = 0usize;
    let mut dlogits = Vec::with_capacity(tape.len());
    for t in 0..tape.len() {
        let log_probs = tape.step_log_probs(t);
        let mut d = Array2::<f64>::zeros(log_probs.raw_dim());
        for (b, trace) in batch.iter().enumerate() {
            let row = log_probs.row(b);
            let chosen = tape.decision(b, t);
            let ratio = (row[chosen] - trace.log_probs[t]).exp();
            let a = advantages[b];
            objective += scale * config.surrogate(ratio, a);
            let entropy: f64 = -row.iter().map(|lp| lp.exp() * lp).sum::<f64>();
            objective += scale * config.entropy_coefficient * entropy;
            entropy_sum += entropy;

            let unclipped = ratio * a <= config.clip(ratio) * a;
            let dlogp = if unclipped { scale * ratio * a } else { 0.0 };
            if !unclipped {
                clipped += 1;
            }
            let mut out = d.row_mut(b);
            for (j, (o, &lp)) in out.iter_mut().zip(row.iter()).enumerate() {
                let p = lp.exp();
                let onehot = if j == chosen { 1.0 } else { 0.0 };
                *o = dlogp * (onehot - p) - scale * config.entropy_coefficient * p * (lp + entropy);
            }
        }
        dlogits.push(d);
    }
    let terms = (batch.len() * tape.len()) as f64;
    (objective, dlogits, entropy_sum / terms, clipped as f64 / terms)
}

fn evaluate(
    params: &ControllerParams,
    decisions: &[Vec<usize>],
    batch: &[SampleTrace],
    advantages: &[f64],
    config: &PpoConfig,
    corrupt: bool,
) -> Result<Evaluation> {
    let tape = forward::<ChaCha8Rng>(params, Teacher::Given(decisions))?;
    let (objective, dlogits, entropy, clip_fraction) = objective_terms(&tape, batch, advantages, config);
    let grad = backward(params, &tape, &dlogits, corrupt);
    Ok(Evaluation {
        objective,
        grad,
        entropy,
        clip_fraction,
    })
}

fn advantages(batch: &[SampleTrace], baseline: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| match t.reward {
            Some(r) if r.is_finite() => Ok(r - baseline),
            Some(r) => Err(Error::NonFinite(format!("trace {i} has reward {r}"))),
            None => Err(Error::Parameter(format!("trace {i} carries no reward"))),
        })
        .collect()
}

fn check_batch(params: &ControllerParams, batch: &[SampleTrace]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Parameter("PPO batch is empty".into()));
    }
    let steps = params.shape().steps();
    for (i, t) in batch.iter().enumerate() {
        if t.log_probs.len() != steps {
            return Err(Error::Parameter(format!(
                "trace {i} has {} log-probabilities, expected {steps}",
                t.log_probs.len()
            )));
        }
    }
    Ok(())
}

/// The surrogate objective the update ascends, evaluated at `params`.
pub fn ppo_objective(params: &ControllerParams, batch: &[SampleTrace], baseline: f64, config: &PpoConfig) -> Result<f64> {
    check_batch(params, batch)?;
    let adv = advantages(batch, baseline)?;
    let tape = forward::<ChaCha8Rng>(params, Teacher::Given(&decisions_of(batch)))?;
    Ok(objective_terms(&tape, batch, &adv, config).0)
}

/// Runs `epochs_per_batch` ascent steps on the clipped objective and returns
/// the updated baseline. On a non-finite gradient neither `params` nor
/// `adam` is modified.
pub fn ppo_update(
    params: &mut ControllerParams,
    adam: &mut AdamState,
    batch: &[SampleTrace],
    baseline: f64,
    config: &PpoConfig,
) -> Result<(f64, PpoStats)> {
    config.validate()?;
    check_batch(params, batch)?;
    if adam.first.len() != params.len() {
        return Err(Error::Shape {
            expected: params.len(),
            actual: adam.first.len(),
        });
    }
    let adv = advantages(batch, baseline)?;
    let decisions = decisions_of(batch);

    let mut next = params.clone();
    let mut next_adam = adam.clone();
    let mut stats = PpoStats {
        mean_reward: batch.iter().filter_map(|t| t.reward).sum::<f64>() / batch.len() as f64,
        ..PpoStats::default()
    };
    for epoch in 0..config.epochs_per_batch {
        let eval = evaluate(&next, &decisions, batch, &adv, config, false)?;
        if let Some(i) = eval.grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} in epoch {epoch} (objective {})",
                eval.grad[i], eval.objective
            )));
        }
        next_adam.ascend(next.values_mut(), &eval.grad, config.learning_rate);
        stats.objective = eval.objective;
        stats.entropy = eval.entropy;
        stats.clip_fraction = eval.clip_fraction;
        stats.epochs = epoch + 1;
    }
    if let Some(i) = next.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {i} became non-finite")));
    }
    *params = next;
    *adam = next_adam;
    let new_baseline = config.baseline_decay * baseline + (1.0 - config.baseline_decay) * stats.mean_reward;
    Ok((new_baseline, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheckOptions {
    pub samples: usize,
    pub step: f64,
    /// Denominator floor for relative errors of near-zero gradients.
    pub floor: f64,
    pub seed: u64,
    #[doc(hidden)]
    pub corrupt_lstm_backward: bool,
}

impl Default for GradientCheckOptions {
    fn default() -> Self {
        Self {
            samples: 256,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
            corrupt_lstm_backward: false,
        }
    }
}

/// Compares the analytic objective gradient against central differences on
/// a random subset of parameters.
pub fn gradient_check(
    params: &ControllerParams,
    batch: &[SampleTrace],
    baseline: f64,
    config: &PpoConfig,
    options: &GradientCheckOptions,
) -> Result<GradientCheck> {
    check_batch(params, batch)?;
    let adv = advantages(batch, baseline)?;
    let decisions = decisions_of(batch);
    let analytic = evaluate(params, &decisions, batch, &adv, config, options.corrupt_lstm_backward)?.grad;

    let mut rng = seeded_rng(options.seed);
    let count = options.samples.min(params.len());
    let mut indices = sample_indices(&mut rng, params.len(), count).into_vec();
    indices.sort_unstable();

    let mut probe = params.clone();
    let mut result = GradientCheck {
        max_relative_error: 0.0,
        checked: count,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in indices {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + options.step;
        let up = ppo_objective(&probe, batch, baseline, config)?;
        probe.values_mut()[i] = original - options.step;
        let down = ppo_objective(&probe, batch, baseline, config)?;
        probe.values_mut()[i] = original;
        let numeric = (up - down) / (2.0 * options.step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.floor);
        if err > result.max_relative_error {
            result.max_relative_error = err;
            result.worst_index = i;
            result.worst_analytic = a;
            result.worst_numeric = numeric;
        }
    }
    Ok(result)
}

/// Controller, optimizer and sampling stream bundled for the search loop.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(super) params: ControllerParams,
    pub(super) adam: AdamState,
    pub(super) baseline: Option<f64>,
    pub(super) config: PpoConfig,
    pub(super) rng: ChaCha8Rng,
    pub(super) iteration: u64,
}

impl Trainer {
    pub fn new(shape: ControllerShape, config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let params = ControllerParams::init(shape, &mut rng)?;
        Ok(Self {
            adam: AdamState::new(params.len()),
            params,
            baseline: None,
            config,
            rng,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    /// `None` until the first update, which seeds it with that batch's mean.
    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// Number of policies sampled so far.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn sample(&mut self, count: usize) -> Result<Vec<(Policy, SampleTrace)>> {
        let out = sample_batch(&self.params, count, &mut self.rng)?;
        self.iteration += out.len() as u64;
        Ok(out)
    }

    /// Draws from the controller without advancing the iteration counter or
    /// the training stream.
    pub fn sample_with<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<(Policy, SampleTrace)>> {
        sample_batch(&self.params, count, rng)
    }

    pub fn update(&mut self, batch: &[SampleTrace]) -> Result<PpoStats> {
        let baseline = match self.baseline {
            Some(b) => b,
            None => {
                let rewards = advantages(batch, 0.0)?;
                rewards.iter().sum::<f64>() / rewards.len().max(1) as f64
            }
        };
        let (next, stats) = ppo_update(&mut self.params, &mut self.adam, batch, baseline, &self.config)?;
        self.baseline = Some(next);
        Ok(stats)
    }
}
