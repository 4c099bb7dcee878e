//! Reward-generating backends and the task-distribution monitor.

mod monitor;
mod oracle;
mod spec;
mod synthetic;
mod toy_moe;

pub use monitor::{ema, CountMinSketch, MonitorConfig, TaskMonitor};
pub use oracle::{oracle_best, oracle_refined, simplex_grid, OracleResult};
pub use spec::{EnvInstance, EnvSpec, DEFAULT_NOISE_SIGMA};
pub use synthetic::{SyntheticEnv, SyntheticKind};
pub use toy_moe::ToyMoe;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::MergingWeight;

/// Per-task rewards for one merging decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("reward entry {v}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A stand-in for serving a merged expert on a task mix.
///
/// Noiseless evaluations must be pure functions of the weight; observation
/// noise comes only from the caller's rng.
pub trait Environment: Send + Sync {
    fn num_experts(&self) -> usize;

    fn num_tasks(&self) -> usize;

    /// Declared `[min, max]` bounds of every reward entry.
    fn reward_range(&self) -> (f64, f64);

    fn noise_sigma(&self) -> f64;

    /// Noiseless per-task reward at `x`.
    fn expected_reward(&self, x: &MergingWeight) -> Result<RewardVector>;

    /// Expected reward plus Gaussian noise, clamped to the declared range.
    fn sample_reward(&self, x: &MergingWeight, rng: &mut dyn RngCore) -> Result<RewardVector> {
        let mean = self.expected_reward(x)?;
        let (lo, hi) = self.reward_range();
        let sigma = self.noise_sigma();
        let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
        let values = mean
            .0
            .into_iter()
            .map(|m| {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
                (m + n).clamp(lo, hi)
            })
            .collect();
        RewardVector::new(values)
    }
}

pub(crate) fn check_weight(env: &dyn Environment, x: &MergingWeight) -> Result<()> {
    crate::error::check_dim(env.num_experts(), x.len())
}
