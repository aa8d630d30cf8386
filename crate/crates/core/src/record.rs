//! Homodyne measurement records and seeded noise streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Counter-style seeding: trajectory `k` of a batch seeded with `base` always
/// draws from the stream of seed `base + k`, whatever the batch size.
pub fn trajectory_rng(base_seed: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(k))
}

/// Draws `count` Wiener increments of variance `dt`.
pub fn wiener_increments<R: rand::Rng + ?Sized>(rng: &mut R, dt: f64, count: usize) -> Vec<f64> {
    let sd = dt.sqrt();
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

/// Homodyne increments dy_k on a uniform grid, in units of s^(1/2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub dt: f64,
    pub increments: Vec<f64>,
    pub rng_seed: Option<u64>,
}

impl MeasurementRecord {
    pub fn new(dt: f64, increments: Vec<f64>) -> Self {
        Self {
            dt,
            increments,
            rng_seed: None,
        }
    }

    pub fn empty(dt: f64) -> Self {
        Self::new(dt, Vec::new())
    }

    /// A one-interval record carrying only the integrated current `y` over `t`.
    /// Sufficient whenever the amplitudes are constant over the record.
    pub fn integrated_only(t: f64, y: f64) -> Self {
        Self::new(t, vec![y])
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    /// Integrated photocurrent Y = sum of dy.
    pub fn integrated(&self) -> f64 {
        self.increments.iter().sum()
    }

    pub fn push(&mut self, dy: f64) {
        self.increments.push(dy);
    }

    /// The first `steps` increments.
    pub fn prefix(&self, steps: usize) -> Self {
        Self {
            dt: self.dt,
            increments: self.increments[..steps.min(self.len())].to_vec(),
            rng_seed: self.rng_seed,
        }
    }

    /// Record for `s`-scaled probing: dt -> dt / s^2, dy -> dy / s.
    pub fn rescaled(&self, s: f64) -> Self {
        Self {
            dt: self.dt / (s * s),
            increments: self.increments.iter().map(|dy| dy / s).collect(),
            rng_seed: self.rng_seed,
        }
    }
}
