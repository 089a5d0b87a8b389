//! Binary controller checkpoints.
//!
//! Layout (little-endian): magic `TTCK`, u16 version, six u32 shape fields,
//! PPO config, u64 iteration, u8 baseline flag + f64 baseline, Adam step and
//! hyperparameters, sampling stream state (32-byte seed, u64 stream, u128
//! word position), u64 parameter count, then parameters, first moments and
//! second moments as f64.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{AdamState, ControllerParams, ControllerShape, PpoConfig, Trainer};
use crate::error::{Error, Result};
use crate::featcache::write_atomically;

const MAGIC: &[u8; 4] = b"TTCK";
const VERSION: u16 = 1;

/// A saved trainer; restoring it continues the exact sampling stream.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn of(trainer: &Trainer) -> Self {
        Self {
            trainer: trainer.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        self.trainer
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.trainer;
        let s = t.params.shape();
        let mut out = Vec::with_capacity(64 + 24 * t.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [s.hidden, s.embed, s.slots, s.ops, s.magnitudes, s.weights] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let c = &t.config;
        for v in [c.learning_rate, c.clip_epsilon, c.baseline_decay] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(c.epochs_per_batch as u32).to_le_bytes());
        out.extend_from_slice(&(c.batch_size as u32).to_le_bytes());
        out.extend_from_slice(&c.entropy_coefficient.to_le_bytes());
        out.extend_from_slice(&t.iteration.to_le_bytes());
        out.push(u8::from(t.baseline.is_some()));
        out.extend_from_slice(&t.baseline.unwrap_or(0.0).to_le_bytes());
        let a = &t.adam;
        out.extend_from_slice(&a.step.to_le_bytes());
        for v in [a.beta1, a.beta2, a.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&t.rng.get_seed());
        out.extend_from_slice(&t.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&t.rng.get_word_pos().to_le_bytes());
        out.extend_from_slice(&(t.params.len() as u64).to_le_bytes());
        for block in [t.params.values(), &a.first, &a.second] {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = ControllerShape {
            hidden: dims[0],
            embed: dims[1],
            slots: dims[2],
            ops: dims[3],
            magnitudes: dims[4],
            weights: dims[5],
        };
        shape.validate().map_err(|e| bad(e.to_string()))?;
        let config = PpoConfig {
            learning_rate: r.f64()?,
            clip_epsilon: r.f64()?,
            baseline_decay: r.f64()?,
            epochs_per_batch: r.u32()? as usize,
            batch_size: r.u32()? as usize,
            entropy_coefficient: r.f64()?,
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        let iteration = r.u64()?;
        let has_baseline = match r.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(bad(format!("baseline flag {f}"))),
        };
        let baseline = r.f64()?;
        let step = r.u64()?;
        let (beta1, beta2, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
        let seed: [u8; 32] = r.array()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let n = r.u64()? as usize;
        if n != shape.param_count() {
            return Err(bad(format!("parameter count {n} does not match shape ({})", shape.param_count())));
        }
        if r.remaining() != 3 * n * 8 {
            return Err(bad(format!("expected {} payload bytes, found {}", 3 * n * 8, r.remaining())));
        }
        let mut block = || (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>>>();
        let values = block()?;
        let first = block()?;
        let second = block()?;
        if values.iter().chain(&first).chain(&second).any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter or moment"));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            trainer: Trainer {
                params: ControllerParams::from_values(shape, values)?,
                adam: AdamState {
                    beta1,
                    beta2,
                    epsilon,
                    step,
                    first,
                    second,
                },
                baseline: has_baseline.then_some(baseline),
                config,
                rng,
                iteration,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomically(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }
}
