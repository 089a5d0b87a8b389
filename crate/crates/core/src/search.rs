//! The policy search loop: sample a batch, score it, update the controller.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{Checkpoint, ControllerShape, PpoConfig, SampleTrace, Trainer};
use crate::error::{Error, Result};
use crate::policy::{parse_policy_with_len, Policy};
use crate::reward::{triplet_reward_with, RewardConfig, Triplet};
use crate::source::FeatureSource;

pub const DEFAULT_ITERATIONS: u64 = 10_000;

/// Stream reserved for drawing the final-controller sample.
const FINAL_SAMPLE_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub seed: u64,
    /// Number of sampled policies.
    pub iterations: u64,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub shape: ControllerShape,
    /// Decay of the smoothed reward written to the run log.
    pub smoothing: f64,
    /// Abort after this many consecutive failed iterations.
    pub max_consecutive_failures: usize,
    /// Save a checkpoint whenever this many further iterations have run.
    pub checkpoint_every: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: DEFAULT_ITERATIONS,
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            shape: ControllerShape::default(),
            smoothing: 0.95,
            max_consecutive_failures: 32,
            checkpoint_every: Some(1000),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.reward.validate()?;
        self.shape.validate()?;
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Parameter(format!("smoothing must lie in [0, 1), got {}", self.smoothing)));
        }
        if self.max_consecutive_failures == 0 {
            return Err(Error::Parameter("max_consecutive_failures must be positive".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Parameter("checkpoint interval must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunRecord {
    Header {
        version: String,
        seed: u64,
        config: SearchConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<serde_json::Value>,
    },
    Iteration {
        iteration: u64,
        reward: f64,
        smoothed: f64,
        policy: String,
    },
    Skipped {
        iteration: u64,
        policy: String,
        reason: String,
    },
    UpdateFailed {
        iteration: u64,
        reason: String,
    },
}

/// Receives run records and may stop the search after each update.
pub trait SearchObserver {
    fn record(&mut self, _record: &RunRecord) -> Result<()> {
        Ok(())
    }

    /// Called after every controller update; returning `false` stops the run.
    fn after_update(&mut self, _trainer: &Trainer) -> bool {
        true
    }
}

impl SearchObserver for () {}

/// Writes records as JSON lines.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl SearchObserver for RunLogWriter {
    fn record(&mut self, record: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a run log back.
pub fn read_run_log(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{} line {}", path.display(), n + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Every sampled policy recorded in a run log, skipped ones included.
pub fn logged_policies(records: &[RunRecord]) -> Result<Vec<Policy>> {
    let slots = records
        .iter()
        .find_map(|r| match r {
            RunRecord::Header { config, .. } => Some(config.shape.slots),
            _ => None,
        })
        .unwrap_or(crate::policy::POLICY_SLOTS);
    records
        .iter()
        .filter_map(|r| match r {
            RunRecord::Iteration { policy, .. } | RunRecord::Skipped { policy, .. } => Some(policy),
            _ => None,
        })
        .map(|p| parse_policy_with_len(p, slots))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Highest-reward policy seen and its reward (first one wins ties).
    pub best: Option<(Policy, f64)>,
    /// One policy drawn from the controller after the last update.
    pub final_sample: Policy,
    pub iterations: u64,
    pub skipped: u64,
    pub last_smoothed: Option<f64>,
    pub trainer: Trainer,
}

/// Where periodic checkpoints go.
#[derive(Clone, Debug, Default)]
pub struct SearchPaths {
    pub checkpoint: Option<PathBuf>,
}

pub fn run_search<S: FeatureSource + ?Sized>(
    source: &S,
    triplets: &[Triplet],
    config: &SearchConfig,
    paths: &SearchPaths,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    config.validate()?;
    let trainer = Trainer::new(config.shape, config.ppo, config.seed)?;
    continue_search(trainer, source, triplets, config, paths, observer, None)
}

/// Resumes from a checkpointed trainer; the header context is optional.
pub fn resume_search<S: FeatureSource + ?Sized>(
    checkpoint: Checkpoint,
    source: &S,
    triplets: &[Triplet],
    config: &SearchConfig,
    paths: &SearchPaths,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    config.validate()?;
    let trainer = checkpoint.into_trainer();
    if *trainer.params().shape() != config.shape || *trainer.config() != config.ppo {
        return Err(Error::Config("checkpoint does not match the search configuration".into()));
    }
    continue_search(trainer, source, triplets, config, paths, observer, None)
}

/// Like [`run_search`], with extra JSON context (paths, profile, ...) in the
/// log header.
pub fn run_search_with_context<S: FeatureSource + ?Sized>(
    source: &S,
    triplets: &[Triplet],
    config: &SearchConfig,
    paths: &SearchPaths,
    observer: &mut dyn SearchObserver,
    context: serde_json::Value,
) -> Result<SearchOutcome> {
    config.validate()?;
    let trainer = Trainer::new(config.shape, config.ppo, config.seed)?;
    continue_search(trainer, source, triplets, config, paths, observer, Some(context))
}

fn reward_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

fn continue_search<S: FeatureSource + ?Sized>(
    mut trainer: Trainer,
    source: &S,
    triplets: &[Triplet],
    config: &SearchConfig,
    paths: &SearchPaths,
    observer: &mut dyn SearchObserver,
    context: Option<serde_json::Value>,
) -> Result<SearchOutcome> {
    if triplets.is_empty() {
        return Err(Error::Parameter("no triplets".into()));
    }
    observer.record(&RunRecord::Header {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        context,
    })?;

    let mut best: Option<(Policy, f64)> = None;
    let mut smoothed: Option<f64> = None;
    let mut skipped = 0u64;
    let mut failures = 0usize;
    let mut next_checkpoint = config.checkpoint_every.map(|n| (trainer.iteration() / n + 1) * n);

    while trainer.iteration() < config.iterations {
        let remaining = config.iterations - trainer.iteration();
        let count = remaining.min(config.ppo.batch_size as u64) as usize;
        let first = trainer.iteration() + 1;
        let samples = trainer.sample(count)?;

        let mut batch: Vec<SampleTrace> = Vec::with_capacity(count);
        for (offset, (policy, mut trace)) in samples.into_iter().enumerate() {
            let iteration = first + offset as u64;
            let mut rng = reward_rng(config.seed, iteration);
            let outcome = triplet_reward_with(&policy, triplets, source, &config.reward, &mut rng);
            let reward = match outcome {
                Ok(r) if r.is_finite() => r,
                Ok(r) => {
                    skip(observer, iteration, &policy, format!("non-finite reward {r}"), &mut skipped, &mut failures, config)?;
                    continue;
                }
                Err(e @ (Error::NonFinite(_) | Error::ZeroNorm)) => {
                    skip(observer, iteration, &policy, e.to_string(), &mut skipped, &mut failures, config)?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            failures = 0;
            let s = match smoothed {
                Some(prev) => config.smoothing * prev + (1.0 - config.smoothing) * reward,
                None => reward,
            };
            smoothed = Some(s);
            observer.record(&RunRecord::Iteration {
                iteration,
                reward,
                smoothed: s,
                policy: policy.to_string(),
            })?;
            if best.as_ref().is_none_or(|(_, b)| reward > *b) {
                best = Some((policy, reward));
            }
            trace.reward = Some(reward);
            batch.push(trace);
        }

        if !batch.is_empty() {
            if let Err(e) = trainer.update(&batch) {
                if !matches!(e, Error::NonFinite(_)) {
                    return Err(e);
                }
                log::warn!("controller update after iteration {} aborted: {e}", trainer.iteration());
                observer.record(&RunRecord::UpdateFailed {
                    iteration: trainer.iteration(),
                    reason: e.to_string(),
                })?;
                failures += 1;
                if failures >= config.max_consecutive_failures {
                    return Err(Error::NonFinite(format!("aborting after {failures} consecutive failures: {e}")));
                }
            }
        }

        if let (Some(at), Some(path), Some(every)) = (next_checkpoint, &paths.checkpoint, config.checkpoint_every) {
            if trainer.iteration() >= at {
                Checkpoint::of(&trainer).save(path)?;
                next_checkpoint = Some((trainer.iteration() / every + 1) * every);
            }
        }
        if !observer.after_update(&trainer) {
            break;
        }
    }

    if let Some(path) = &paths.checkpoint {
        Checkpoint::of(&trainer).save(path)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(FINAL_SAMPLE_STREAM);
    let final_sample = trainer.sample_with(1, &mut rng)?.remove(0).0;
    Ok(SearchOutcome {
        best,
        final_sample,
        iterations: trainer.iteration(),
        skipped,
        last_smoothed: smoothed,
        trainer,
    })
}

fn skip(
    observer: &mut dyn SearchObserver,
    iteration: u64,
    policy: &Policy,
    reason: String,
    skipped: &mut u64,
    failures: &mut usize,
    config: &SearchConfig,
) -> Result<()> {
    log::warn!("iteration {iteration} skipped: {reason}");
    observer.record(&RunRecord::Skipped {
        iteration,
        policy: policy.to_string(),
        reason: reason.clone(),
    })?;
    *skipped += 1;
    *failures += 1;
    if *failures >= config.max_consecutive_failures {
        return Err(Error::NonFinite(format!(
            "aborting after {failures} consecutive failed iterations; last: {reason}"
        )));
    }
    Ok(())
}
