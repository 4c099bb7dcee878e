//! JSON environment descriptions: `{kind, K, V, params, noise_sigma, seed}`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Environment, RewardVector, SyntheticEnv, SyntheticKind, ToyMoe};
use crate::error::{Error, Result};
use crate::simplex::MergingWeight;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;
const DEFAULT_BUMP_WIDTH: f64 = 0.3;

fn default_noise() -> f64 {
    DEFAULT_NOISE_SIGMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: String,
    #[serde(rename = "K")]
    pub num_experts: usize,
    #[serde(rename = "V")]
    pub num_tasks: usize,
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LinearParams {
    coefficients: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BumpParams {
    centers: Option<Vec<Vec<f64>>>,
    widths: Option<Vec<f64>>,
    permutation: Option<Vec<usize>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ToyParams {
    m: Option<usize>,
    experts: Option<Vec<Vec<f64>>>,
    targets: Option<Vec<Vec<f64>>>,
    input_scales: Option<Vec<f64>>,
    normalize: Option<bool>,
}

fn parse_params<T: DeserializeOwned>(params: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(params.clone()))
        .map_err(|e| Error::invalid("env.params", e.to_string()))
}

/// A concrete environment built from an [`EnvSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum EnvInstance {
    Synthetic(SyntheticEnv),
    ToyMoe(ToyMoe),
}

impl EnvSpec {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Build the environment; unspecified parameters are drawn from `seed`.
    pub fn build(&self) -> Result<EnvInstance> {
        let (k, v) = (self.num_experts, self.num_tasks);
        if k < 2 {
            return Err(Error::invalid("K", "need at least 2 experts"));
        }
        if v == 0 {
            return Err(Error::invalid("V", "need at least 1 task"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let env = match self.kind.as_str() {
            "linear" => {
                let p: LinearParams = parse_params(&self.params)?;
                let coefficients = p.coefficients.unwrap_or_else(|| {
                    (0..v)
                        .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
                        .collect()
                });
                EnvInstance::Synthetic(SyntheticEnv::new(
                    SyntheticKind::Linear { coefficients },
                    k,
                    self.noise_sigma,
                )?)
            }
            "gaussian-bump" | "piecewise" => {
                let p: BumpParams = parse_params(&self.params)?;
                let centers = p.centers.unwrap_or_else(|| {
                    (0..v)
                        .map(|_| MergingWeight::sample_uniform(k, &mut rng).into())
                        .collect()
                });
                let widths = p.widths.unwrap_or_else(|| vec![DEFAULT_BUMP_WIDTH; v]);
                let kind = if self.kind == "piecewise" {
                    SyntheticKind::Piecewise {
                        centers,
                        widths,
                        permutation: p.permutation.unwrap_or_else(|| (0..k).rev().collect()),
                    }
                } else {
                    if p.permutation.is_some() {
                        return Err(Error::invalid("env.params.permutation", "only valid for piecewise"));
                    }
                    SyntheticKind::GaussianBump { centers, widths }
                };
                EnvInstance::Synthetic(SyntheticEnv::new(kind, k, self.noise_sigma)?)
            }
            "toy-moe" => {
                let p: ToyParams = parse_params(&self.params)?;
                let m = p.m.unwrap_or(4);
                let base = ToyMoe::random(k, v, m, self.noise_sigma, self.seed)?;
                let experts = p.experts.unwrap_or_else(|| base.experts().to_vec());
                let targets = p.targets.unwrap_or_else(|| base.targets().to_vec());
                if experts.len() != k {
                    return Err(Error::invalid("env.params.experts", format!("need {k} experts")));
                }
                if targets.len() != v {
                    return Err(Error::invalid("env.params.targets", format!("need {v} targets")));
                }
                EnvInstance::ToyMoe(ToyMoe::new(
                    m,
                    experts,
                    targets,
                    p.input_scales.unwrap_or_else(|| vec![1.0; v]),
                    self.noise_sigma,
                    p.normalize.unwrap_or(true),
                )?)
            }
            other => {
                return Err(Error::Unknown {
                    what: "environment kind",
                    name: other.to_string(),
                })
            }
        };
        if env.num_tasks() != v {
            return Err(Error::invalid("V", format!("parameters describe {} tasks", env.num_tasks())));
        }
        Ok(env)
    }
}

impl Environment for EnvInstance {
    fn num_experts(&self) -> usize {
        match self {
            EnvInstance::Synthetic(e) => e.num_experts(),
            EnvInstance::ToyMoe(e) => e.num_experts(),
        }
    }

    fn num_tasks(&self) -> usize {
        match self {
            EnvInstance::Synthetic(e) => e.num_tasks(),
            EnvInstance::ToyMoe(e) => e.num_tasks(),
        }
    }

    fn reward_range(&self) -> (f64, f64) {
        match self {
            EnvInstance::Synthetic(e) => e.reward_range(),
            EnvInstance::ToyMoe(e) => e.reward_range(),
        }
    }

    fn noise_sigma(&self) -> f64 {
        match self {
            EnvInstance::Synthetic(e) => e.noise_sigma(),
            EnvInstance::ToyMoe(e) => e.noise_sigma(),
        }
    }

    fn expected_reward(&self, x: &MergingWeight) -> Result<RewardVector> {
        match self {
            EnvInstance::Synthetic(e) => e.expected_reward(x),
            EnvInstance::ToyMoe(e) => e.expected_reward(x),
        }
    }
}
