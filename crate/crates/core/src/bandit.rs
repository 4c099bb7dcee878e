//! Tree-structured neural UCB router.
//!
//! Each round scores the candidate weight of every active leaf with
//!
//! ```text
//! U = ψᵀ f(x, θ_{t−1}) + ν₁ ρ^h + γ_{t−1} √(gᵀ Z_{t−1}⁻¹ g / w)
//! ```
//!
//! plays the maximizer, counts the pull (possibly splitting the leaf), adds
//! `g gᵀ / w` to `Z`, and refits the network on the observed rewards.

use std::collections::VecDeque;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, RewardVector};
use crate::error::{check_dim, Error, Result};
use crate::linalg::ConfidenceMatrix;
use crate::net::{NetConfig, RewardNet, TrainConfig};
use crate::policy::{run_round, Decision, Policy, RoundRecord};
use crate::simplex::{MergingWeight, TaskFeature};
use crate::tree::{Candidate, ExpansionReport, PartitionTree, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `υ √(log det(Z)/det(λI) − 2 log δ) + √λ S`.
    Practical,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub regularization: f64,
    pub exploration_nu: f64,
    pub norm_param: f64,
    pub confidence_delta: f64,
    pub gamma_mode: GammaMode,
    pub gamma_constant: f64,
    /// Re-invert `Z` directly every this many updates.
    pub refresh_interval: Option<usize>,
    /// Keep only `diag(Z)`.
    pub diagonal: bool,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            regularization: 1.0,
            exploration_nu: 1.0,
            norm_param: 1.0,
            confidence_delta: 1.0,
            gamma_mode: GammaMode::Practical,
            gamma_constant: 1.0,
            refresh_interval: Some(500),
            diagonal: false,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.regularization) {
            return Err(Error::invalid("regularization", "must be > 0"));
        }
        if !positive(self.exploration_nu) {
            return Err(Error::invalid("exploration_nu", "must be > 0"));
        }
        if !positive(self.norm_param) {
            return Err(Error::invalid("norm_param", "must be > 0"));
        }
        if !(self.confidence_delta > 0.0 && self.confidence_delta <= 1.0) {
            return Err(Error::invalid("confidence_delta", "must lie in (0, 1]"));
        }
        if self.gamma_mode == GammaMode::Constant && !positive(self.gamma_constant) {
            return Err(Error::invalid("gamma_constant", "must be > 0"));
        }
        Ok(())
    }
}

/// UCB decomposed into its three terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub mean: f64,
    pub tree_bonus: f64,
    pub exploration: f64,
    pub total: f64,
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub weight: MergingWeight,
    pub reward: RewardVector,
    pub psi: TaskFeature,
}

/// Network, confidence matrix and history shared by every neural UCB policy.
#[derive(Debug, Clone)]
pub struct BanditState {
    net: RewardNet,
    theta0: Vec<f64>,
    confidence: ConfidenceMatrix,
    round: u64,
    history: VecDeque<Observation>,
    train: TrainConfig,
    config: BanditConfig,
    step_reductions: u32,
}

const MAX_STEP_REDUCTIONS: u32 = 30;

impl BanditState {
    pub fn new(net: RewardNet, train: TrainConfig, config: BanditConfig) -> Result<Self> {
        train.validate()?;
        config.validate()?;
        let p = net.param_count();
        let confidence = if config.diagonal {
            ConfidenceMatrix::diagonal(p, config.regularization)?
        } else {
            ConfidenceMatrix::full(p, config.regularization, config.refresh_interval)?
        };
        Ok(Self {
            theta0: net.params().to_vec(),
            net,
            confidence,
            round: 0,
            history: VecDeque::new(),
            train,
            config,
            step_reductions: 0,
        })
    }

    pub fn net(&self) -> &RewardNet {
        &self.net
    }

    pub fn confidence(&self) -> &ConfidenceMatrix {
        &self.confidence
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn history(&self) -> &VecDeque<Observation> {
        &self.history
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    /// Step size currently in use (halved after each detected divergence).
    pub fn step_size(&self) -> f64 {
        self.train.step_size
    }

    pub fn step_reductions(&self) -> u32 {
        self.step_reductions
    }

    /// Confidence scaling `γ_t` for the current round counter.
    pub fn gamma(&self) -> f64 {
        let c = &self.config;
        match c.gamma_mode {
            GammaMode::Constant => c.gamma_constant,
            GammaMode::Practical => {
                let radicand = self.confidence.log_det_ratio() - 2.0 * c.confidence_delta.ln();
                c.exploration_nu * radicand.max(0.0).sqrt() + c.regularization.sqrt() * c.norm_param
            }
        }
    }

    /// UCB of weight `x` under context `psi`; `tree_bonus` is `ν₁ρ^h` for tree
    /// candidates and zero otherwise.
    pub fn ucb_score(&self, x: &MergingWeight, psi: &TaskFeature, tree_bonus: f64) -> Result<Score> {
        let (f, g) = self.net.forward_and_gradient(x.as_slice(), psi.as_slice())?;
        let mean = psi.dot(&f);
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("network output {mean}")));
        }
        let w = self.net.config().width as f64;
        let q = self.confidence.quad_form(&g)?.max(0.0);
        let exploration = self.gamma() * (q / w).sqrt();
        let total = mean + tree_bonus + exploration;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("UCB score {total}")));
        }
        Ok(Score {
            mean,
            tree_bonus,
            exploration,
            total,
            gradient: g,
        })
    }

    /// Index and score of the highest UCB. Candidates are `(weight, bonus)`
    /// pairs; ties keep the earliest entry.
    pub fn select<'a, I>(&self, candidates: I, psi: &TaskFeature) -> Result<(usize, Score)>
    where
        I: IntoIterator<Item = (&'a MergingWeight, f64)>,
    {
        let mut best: Option<(usize, Score)> = None;
        for (i, (x, bonus)) in candidates.into_iter().enumerate() {
            let s = self.ucb_score(x, psi, bonus)?;
            if best.as_ref().is_none_or(|(_, b)| s.total > b.total) {
                best = Some((i, s));
            }
        }
        best.ok_or_else(|| Error::contract("cannot select from an empty candidate set"))
    }

    /// Confidence update with the gradient used for scoring, then refit.
    pub fn learn(
        &mut self,
        weight: &MergingWeight,
        gradient: &[f64],
        reward: &RewardVector,
        psi: &TaskFeature,
    ) -> Result<()> {
        check_dim(self.net.config().output_dim, reward.len())?;
        check_dim(self.net.param_count(), gradient.len())?;
        if let Some(r) = reward.as_slice().iter().find(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        let w = self.net.config().width as f64;
        self.confidence.rank_one_update(gradient, 1.0 / w)?;

        self.history.push_back(Observation {
            weight: weight.clone(),
            reward: reward.clone(),
            psi: psi.clone(),
        });
        if let Some(cap) = self.train.history_cap {
            while self.history.len() > cap {
                self.history.pop_front();
            }
        }
        let samples: Vec<(&[f64], &[f64])> = self
            .history
            .iter()
            .map(|o| (o.weight.as_slice(), o.reward.as_slice()))
            .collect();
        loop {
            match self.net.sgd_update(&samples, &self.train, &self.theta0) {
                Ok(net) => {
                    self.net = net;
                    break;
                }
                Err(Error::Diverged(_)) if self.step_reductions < MAX_STEP_REDUCTIONS => {
                    self.train.step_size *= 0.5;
                    self.step_reductions += 1;
                }
                Err(e) => return Err(e),
            }
        }
        self.round += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetShape {
    pub width: usize,
    pub depth: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self { width: 64, depth: 2 }
    }
}

/// The tree router: a [`PartitionTree`] supplying candidates to a
/// [`BanditState`].
#[derive(Debug, Clone)]
pub struct Tanbr {
    tree: PartitionTree,
    state: BanditState,
}

/// Chosen candidate with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub candidate: Candidate,
    pub score: Score,
    pub n_candidates: usize,
}

impl Tanbr {
    pub fn new(
        tree: TreeConfig,
        shape: &NetShape,
        num_tasks: usize,
        train: TrainConfig,
        bandit: BanditConfig,
        seed: u64,
    ) -> Result<Self> {
        let net_config = NetConfig {
            input_dim: tree.num_experts,
            output_dim: num_tasks,
            width: shape.width,
            depth: shape.depth,
        };
        let net = RewardNet::init(net_config, seed)?;
        Ok(Self {
            tree: PartitionTree::new(tree)?,
            state: BanditState::new(net, train, bandit)?,
        })
    }

    pub fn from_parts(tree: PartitionTree, state: BanditState) -> Result<Self> {
        check_dim(tree.config().num_experts, state.net().config().input_dim)?;
        Ok(Self { tree, state })
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn state(&self) -> &BanditState {
        &self.state
    }

    /// Score one tree candidate.
    pub fn ucb_score(&self, candidate: &Candidate, psi: &TaskFeature) -> Result<Score> {
        let bonus = self.tree.config().smoothness_bonus(candidate.depth);
        self.state.ucb_score(&candidate.weight, psi, bonus)
    }

    /// Arg-max over `candidates`, which must be ordered by `(depth, index)`
    /// so that ties resolve to the shallowest, lowest-index leaf.
    pub fn select_arm(&self, candidates: &[Candidate], psi: &TaskFeature) -> Result<Selection> {
        let cfg = self.tree.config();
        let (i, score) = self.state.select(
            candidates
                .iter()
                .map(|c| (&c.weight, cfg.smoothness_bonus(c.depth))),
            psi,
        )?;
        Ok(Selection {
            candidate: candidates[i].clone(),
            score,
            n_candidates: candidates.len(),
        })
    }

    pub fn select(&self, psi: &TaskFeature) -> Result<Selection> {
        self.select_arm(&self.tree.active_leaves(), psi)
    }

    /// Count the pull, maybe split the leaf, update `Z` and refit.
    pub fn observe_and_update(
        &mut self,
        selection: &Selection,
        reward: &RewardVector,
        psi: &TaskFeature,
        rng: &mut dyn RngCore,
    ) -> Result<ExpansionReport> {
        if let Some(r) = reward.as_slice().iter().find(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        let node = selection.candidate.node;
        let t = self.state.round + 1;
        self.tree.record_pull(node)?;
        let report = self.tree.maybe_expand(node, t, rng)?;
        self.state
            .learn(&selection.candidate.weight, &selection.score.gradient, reward, psi)?;
        Ok(report)
    }

    /// One full round against `env`.
    pub fn run_round(
        &mut self,
        psi: &TaskFeature,
        env: &dyn Environment,
        oracle_value: Option<f64>,
        env_rng: &mut dyn RngCore,
        rng: &mut dyn RngCore,
    ) -> Result<RoundRecord> {
        let t = self.state.round + 1;
        run_round(self, t, psi, env, oracle_value, env_rng, rng)
    }
}

impl Policy for Tanbr {
    fn name(&self) -> String {
        "tanbr".into()
    }

    fn decide(&mut self, psi: &TaskFeature, _rng: &mut dyn RngCore) -> Result<Decision> {
        let gamma = self.state.gamma();
        let sel = self.select(psi)?;
        Ok(Decision {
            weight: sel.candidate.weight.clone(),
            node: Some(sel.candidate.node),
            depth: Some(sel.candidate.depth),
            index: Some(sel.candidate.index),
            n_candidates: sel.n_candidates,
            gamma: Some(gamma),
            gradient: Some(sel.score.gradient),
        })
    }

    fn observe(
        &mut self,
        decision: &Decision,
        reward: &RewardVector,
        psi: &TaskFeature,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        let node = decision
            .node
            .ok_or_else(|| Error::contract("tree decision without a node"))?;
        let gradient = match &decision.gradient {
            Some(g) => g.clone(),
            None => self.state.net.gradient(decision.weight.as_slice(), psi.as_slice())?,
        };
        let n = self.tree.node(node);
        let selection = Selection {
            candidate: Candidate {
                node,
                depth: n.depth,
                index: n.index,
                weight: decision.weight.clone(),
            },
            score: Score {
                mean: 0.0,
                tree_bonus: 0.0,
                exploration: 0.0,
                total: 0.0,
                gradient,
            },
            n_candidates: decision.n_candidates,
        };
        self.observe_and_update(&selection, reward, psi, rng)?;
        Ok(())
    }

    fn tree_depth(&self) -> Option<u32> {
        Some(self.tree.max_depth())
    }

    fn active_leaf_count(&self) -> Option<usize> {
        Some(self.tree.active_leaf_count())
    }
}
