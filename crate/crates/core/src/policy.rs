//! The decision interface shared by the router and its baselines, and the
//! single-round driver built on it.

use rand::RngCore;
use serde::Serialize;

use crate::env::{Environment, RewardVector};
use crate::error::Result;
use crate::simplex::{MergingWeight, TaskFeature};
use crate::tree::NodeId;

/// What a policy played in one round, plus bookkeeping it wants back in
/// [`Policy::observe`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub weight: MergingWeight,
    pub node: Option<NodeId>,
    pub depth: Option<u32>,
    pub index: Option<u64>,
    pub n_candidates: usize,
    pub gamma: Option<f64>,
    /// Scalarized network gradient at the chosen weight, reused for the
    /// confidence update.
    pub gradient: Option<Vec<f64>>,
}

impl Decision {
    pub fn fixed(weight: MergingWeight) -> Self {
        Self {
            weight,
            node: None,
            depth: None,
            index: None,
            n_candidates: 1,
            gamma: None,
            gradient: None,
        }
    }
}

pub trait Policy: Send {
    fn name(&self) -> String;

    fn decide(&mut self, psi: &TaskFeature, rng: &mut dyn RngCore) -> Result<Decision>;

    fn observe(
        &mut self,
        decision: &Decision,
        reward: &RewardVector,
        psi: &TaskFeature,
        rng: &mut dyn RngCore,
    ) -> Result<()>;

    /// Current tree depth, for tree-based policies.
    fn tree_depth(&self) -> Option<u32> {
        None
    }

    fn active_leaf_count(&self) -> Option<usize> {
        None
    }
}

/// One row of a run's trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub t: u64,
    pub chosen_depth: Option<u32>,
    pub chosen_index: Option<u64>,
    pub weight: Vec<f64>,
    /// `ψᵀ r` of the observed (noisy) reward.
    pub scalar_reward: f64,
    pub task_rewards: Vec<f64>,
    /// Oracle value minus the noiseless value of the played weight.
    pub regret: Option<f64>,
    pub n_candidates: usize,
    pub tree_max_depth: Option<u32>,
    pub gamma: Option<f64>,
}

/// Decide, query the environment, learn, and report.
///
/// `oracle_value` is the best achievable `ψᵀ r` for this round's `psi`; when
/// absent the record carries no regret.
pub fn run_round(
    policy: &mut dyn Policy,
    t: u64,
    psi: &TaskFeature,
    env: &dyn Environment,
    oracle_value: Option<f64>,
    env_rng: &mut dyn RngCore,
    policy_rng: &mut dyn RngCore,
) -> Result<RoundRecord> {
    let decision = policy.decide(psi, policy_rng)?;
    let reward = env.sample_reward(&decision.weight, env_rng)?;
    let regret = match oracle_value {
        Some(best) => {
            let mean = env.expected_reward(&decision.weight)?;
            Some(best - psi.dot(mean.as_slice()))
        }
        None => None,
    };
    policy.observe(&decision, &reward, psi, policy_rng)?;
    Ok(RoundRecord {
        t,
        chosen_depth: decision.depth,
        chosen_index: decision.index,
        weight: decision.weight.as_slice().to_vec(),
        scalar_reward: psi.dot(reward.as_slice()),
        task_rewards: reward.0,
        regret,
        n_candidates: decision.n_candidates,
        tree_max_depth: policy.tree_depth(),
        gamma: decision.gamma,
    })
}
