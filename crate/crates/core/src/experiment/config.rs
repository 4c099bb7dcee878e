//! Experiment configuration: the JSON schema and its resolution into a
//! validated [`ExperimentConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bandit::{BanditConfig, NetShape};
use crate::baselines::PolicyId;
use crate::env::{EnvSpec, MonitorConfig, DEFAULT_NOISE_SIGMA};
use crate::error::{Error, Result};
use crate::net::{NetConfig, TrainConfig};
use crate::simplex::TaskFeature;
use crate::tree::TreeConfig;

const DEFAULT_BUDGET: usize = 8;
const DEFAULT_REQUESTS_PER_SLOT: usize = 200;

/// `env` may be a bare kind name (with `K`, `V`, `env_params`, … at top
/// level) or a full environment object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvField {
    Kind(String),
    Spec(EnvSpec),
}

/// Tree settings; `K` comes from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSection {
    pub smoothness_nu1: f64,
    pub smoothness_rho: f64,
    pub threshold_const: f64,
    pub confidence_delta: f64,
    /// Active-expert budget `B`; defaults to `min(8, K)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_experts: Option<usize>,
}

impl Default for TreeSection {
    fn default() -> Self {
        let d = TreeConfig::default();
        Self {
            smoothness_nu1: d.smoothness_nu1,
            smoothness_rho: d.smoothness_rho,
            threshold_const: d.threshold_const,
            confidence_delta: d.confidence_delta,
            max_experts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NucbSection {
    pub n_candidates: usize,
}

impl Default for NucbSection {
    fn default() -> Self {
        Self { n_candidates: 20 }
    }
}

/// Regret bookkeeping. The lattice resolution defaults to 20 for `K ≤ 4`
/// and `max(8, K)` above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Polish the lattice optimum with a local search.
    pub refine: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            enabled: true,
            resolution: None,
            refine: true,
        }
    }
}

/// How the task feature evolves over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    /// The same `psi` every slot (uniform when omitted).
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<Vec<f64>>,
    },
    /// Linear interpolation from `from` (slot 1) to `to` (slot T).
    Drift {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Vec<f64>>,
    },
    /// Simulated request stream drawn from `from` up to slot `flip_at` and
    /// from `to` afterwards, fed through the sketch-based task monitor.
    Monitor {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requests_per_slot: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flip_at: Option<u64>,
    },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Fixed { psi: None }
    }
}

/// The schema as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub env: EnvField,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub num_experts: Option<usize>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub num_tasks: Option<usize>,
    #[serde(rename = "T")]
    pub horizon: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_params: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<PolicyId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub tree: TreeSection,
    #[serde(default)]
    pub net: NetShape,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default)]
    pub nucb: NucbSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub monitor: MonitorConfig,
}

/// Task-feature schedule with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedSchedule {
    Fixed(TaskFeature),
    Drift {
        from: TaskFeature,
        to: TaskFeature,
    },
    Monitor {
        from: TaskFeature,
        to: TaskFeature,
        requests_per_slot: usize,
        flip_at: u64,
    },
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub horizon: u64,
    pub policies: Vec<PolicyId>,
    pub seeds: Vec<u64>,
    pub schedule: ResolvedSchedule,
    pub output_dir: Option<PathBuf>,
    pub parallel: bool,
    pub tree: TreeConfig,
    pub net: NetShape,
    pub train: TrainConfig,
    pub bandit: BanditConfig,
    pub nucb: NucbSection,
    pub oracle: Option<OracleSettings>,
    pub monitor: MonitorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub resolution: usize,
    pub refine: bool,
}

fn within<T>(prefix: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidConfig { field, reason } => Error::InvalidConfig {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    })
}

fn default_policies() -> Vec<PolicyId> {
    vec![PolicyId::Tanbr, PolicyId::Nucb, PolicyId::Average, PolicyId::Random]
}

/// All mass on `dominant` except `1 − share`, spread evenly.
fn tilted(v: usize, dominant: usize, share: f64) -> TaskFeature {
    if v == 1 {
        return TaskFeature::uniform(1);
    }
    let rest = (1.0 - share) / (v - 1) as f64;
    let masses: Vec<f64> = (0..v).map(|i| if i == dominant { share } else { rest }).collect();
    TaskFeature::from_masses(&masses).expect("positive masses")
}

fn task_feature(field: &str, v: usize, values: &Option<Vec<f64>>, fallback: TaskFeature) -> Result<TaskFeature> {
    match values {
        None => Ok(fallback),
        Some(p) if p.len() != v => Err(Error::invalid(field, format!("needs {v} entries, got {}", p.len()))),
        Some(p) => TaskFeature::new(p.clone()).map_err(|e| Error::invalid(field, e.to_string())),
    }
}

impl RawConfig {
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let env = match self.env {
            EnvField::Kind(kind) => EnvSpec {
                kind,
                num_experts: self.num_experts.ok_or_else(|| Error::invalid("K", "required"))?,
                num_tasks: self.num_tasks.ok_or_else(|| Error::invalid("V", "required"))?,
                params: self.env_params.unwrap_or_default(),
                noise_sigma: self.noise_sigma.unwrap_or(DEFAULT_NOISE_SIGMA),
                seed: self.env_seed.unwrap_or(0),
            },
            EnvField::Spec(spec) => {
                if self.num_experts.is_some_and(|k| k != spec.num_experts) {
                    return Err(Error::invalid("K", "disagrees with env.K"));
                }
                if self.num_tasks.is_some_and(|v| v != spec.num_tasks) {
                    return Err(Error::invalid("V", "disagrees with env.V"));
                }
                if self.env_params.is_some() || self.noise_sigma.is_some() || self.env_seed.is_some() {
                    return Err(Error::invalid(
                        "env",
                        "env_params, noise_sigma and env_seed belong inside an env object",
                    ));
                }
                spec
            }
        };
        if !(env.noise_sigma >= 0.0 && env.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        // Surfaces kind and parameter errors now rather than per replication.
        within("env", env.build().map(|_| ()))?;
        let (k, v) = (env.num_experts, env.num_tasks);

        if self.horizon == 0 {
            return Err(Error::invalid("T", "must be >= 1"));
        }

        let seeds = match (self.seeds, self.replications) {
            (Some(s), Some(r)) if s.len() != r => {
                return Err(Error::invalid("seeds", format!("has {} entries but replications = {r}", s.len())))
            }
            (Some(s), _) => s,
            (None, r) => (0..r.unwrap_or(1) as u64).collect(),
        };
        if seeds.is_empty() {
            return Err(Error::invalid("replications", "must be >= 1"));
        }

        let policies = self.policies.unwrap_or_else(default_policies);
        if policies.is_empty() {
            return Err(Error::invalid("policies", "must list at least one policy"));
        }
        for p in &policies {
            if let PolicyId::Fixed(e) = p {
                if *e == 0 || *e > k {
                    return Err(Error::invalid("policies", format!("fixed:{e} outside 1..={k}")));
                }
            }
        }

        let tree = TreeConfig {
            num_experts: k,
            smoothness_nu1: self.tree.smoothness_nu1,
            smoothness_rho: self.tree.smoothness_rho,
            threshold_const: self.tree.threshold_const,
            confidence_delta: self.tree.confidence_delta,
            max_experts: self.tree.max_experts.unwrap_or(DEFAULT_BUDGET.min(k)),
        };
        within("tree", tree.validate())?;
        within(
            "net",
            NetConfig {
                input_dim: k,
                output_dim: v,
                width: self.net.width,
                depth: self.net.depth,
            }
            .validate(),
        )?;
        within("train", self.train.validate())?;
        within("bandit", self.bandit.validate())?;
        if self.nucb.n_candidates == 0 {
            return Err(Error::invalid("nucb.n_candidates", "must be >= 1"));
        }
        if !(self.monitor.alpha > 0.0 && self.monitor.alpha <= 1.0) {
            return Err(Error::invalid("monitor.alpha", "must lie in (0, 1]"));
        }
        if self.monitor.cms_width == 0 || self.monitor.cms_depth == 0 {
            return Err(Error::invalid("monitor", "sketch width and depth must be >= 1"));
        }

        let oracle = if self.oracle.enabled {
            let resolution = self
                .oracle
                .resolution
                .unwrap_or(if k <= 4 { 20 } else { k.max(8) });
            if resolution < k {
                return Err(Error::invalid("oracle.resolution", format!("must be >= K = {k}")));
            }
            Some(OracleSettings {
                resolution,
                refine: self.oracle.refine,
            })
        } else {
            None
        };

        let schedule = match &self.schedule {
            Schedule::Fixed { psi } => {
                ResolvedSchedule::Fixed(task_feature("schedule.psi", v, psi, TaskFeature::uniform(v))?)
            }
            Schedule::Drift { from, to } => ResolvedSchedule::Drift {
                from: task_feature("schedule.from", v, from, TaskFeature::one_hot(0, v))?,
                to: task_feature("schedule.to", v, to, TaskFeature::one_hot(v - 1, v))?,
            },
            Schedule::Monitor {
                from,
                to,
                requests_per_slot,
                flip_at,
            } => {
                let requests_per_slot = requests_per_slot.unwrap_or(DEFAULT_REQUESTS_PER_SLOT);
                if requests_per_slot == 0 {
                    return Err(Error::invalid("schedule.requests_per_slot", "must be >= 1"));
                }
                ResolvedSchedule::Monitor {
                    from: task_feature("schedule.from", v, from, tilted(v, 0, 0.8))?,
                    to: task_feature("schedule.to", v, to, tilted(v, v - 1, 0.8))?,
                    requests_per_slot,
                    flip_at: flip_at.unwrap_or(self.horizon / 2),
                }
            }
        };

        Ok(ExperimentConfig {
            env,
            horizon: self.horizon,
            policies,
            seeds,
            schedule,
            output_dir: self.output_dir,
            parallel: self.parallel,
            tree,
            net: self.net,
            train: self.train,
            bandit: self.bandit,
            nucb: self.nucb,
            oracle,
            monitor: self.monitor,
        })
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        raw.resolve()
    }

    pub fn num_experts(&self) -> usize {
        self.env.num_experts
    }

    pub fn num_tasks(&self) -> usize {
        self.env.num_tasks
    }

    pub fn budget(&self) -> usize {
        self.tree.max_experts
    }

    /// The equivalent on-disk form with every default spelled out; resolving
    /// it again yields `self`.
    pub fn to_raw(&self) -> RawConfig {
        let schedule = match &self.schedule {
            ResolvedSchedule::Fixed(psi) => Schedule::Fixed {
                psi: Some(psi.as_slice().to_vec()),
            },
            ResolvedSchedule::Drift { from, to } => Schedule::Drift {
                from: Some(from.as_slice().to_vec()),
                to: Some(to.as_slice().to_vec()),
            },
            ResolvedSchedule::Monitor {
                from,
                to,
                requests_per_slot,
                flip_at,
            } => Schedule::Monitor {
                from: Some(from.as_slice().to_vec()),
                to: Some(to.as_slice().to_vec()),
                requests_per_slot: Some(*requests_per_slot),
                flip_at: Some(*flip_at),
            },
        };
        RawConfig {
            env: EnvField::Spec(self.env.clone()),
            num_experts: None,
            num_tasks: None,
            horizon: self.horizon,
            env_params: None,
            noise_sigma: None,
            env_seed: None,
            policies: Some(self.policies.clone()),
            replications: Some(self.seeds.len()),
            seeds: Some(self.seeds.clone()),
            schedule,
            output_dir: self.output_dir.clone(),
            parallel: self.parallel,
            tree: TreeSection {
                smoothness_nu1: self.tree.smoothness_nu1,
                smoothness_rho: self.tree.smoothness_rho,
                threshold_const: self.tree.threshold_const,
                confidence_delta: self.tree.confidence_delta,
                max_experts: Some(self.tree.max_experts),
            },
            net: self.net.clone(),
            train: self.train,
            bandit: self.bandit,
            nucb: self.nucb,
            oracle: match self.oracle {
                Some(o) => OracleSection {
                    enabled: true,
                    resolution: Some(o.resolution),
                    refine: o.refine,
                },
                None => OracleSection {
                    enabled: false,
                    ..OracleSection::default()
                },
            },
            monitor: self.monitor,
        }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_raw())?)
    }
}

/// Read, parse and validate an experiment file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}
