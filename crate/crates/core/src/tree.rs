//! Adaptive binary cover tree over the merging-weight cube `[0,1]^K`.
//!
//! Every node owns an axis-aligned box. A leaf whose box touches the simplex
//! is *active* and contributes one candidate weight; leaves that miss the
//! simplex are kept for inspection but never scored or split. Leaves are
//! bisected at the midpoint of a randomly chosen dimension once their pull
//! count clears a depth-dependent threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{top_b_project, MergingWeight};

/// Tree hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub num_experts: usize,
    pub smoothness_nu1: f64,
    pub smoothness_rho: f64,
    pub threshold_const: f64,
    pub confidence_delta: f64,
    pub max_experts: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            num_experts: 8,
            smoothness_nu1: 1.0,
            smoothness_rho: 0.5,
            threshold_const: 1.0,
            confidence_delta: 1.0,
            max_experts: 8,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts < 2 {
            return Err(Error::invalid("num_experts", "need at least 2 experts"));
        }
        if !(self.smoothness_nu1 > 0.0 && self.smoothness_nu1.is_finite()) {
            return Err(Error::invalid("smoothness_nu1", "must be > 0"));
        }
        if !(self.smoothness_rho > 0.0 && self.smoothness_rho < 1.0) {
            return Err(Error::invalid("smoothness_rho", "must lie in (0, 1)"));
        }
        if !(self.threshold_const > 0.0 && self.threshold_const.is_finite()) {
            return Err(Error::invalid("threshold_const", "must be > 0"));
        }
        if !(self.confidence_delta > 0.0 && self.confidence_delta.is_finite()) {
            return Err(Error::invalid("confidence_delta", "must be > 0"));
        }
        if self.max_experts == 0 || self.max_experts > self.num_experts {
            return Err(Error::invalid(
                "max_experts",
                format!("must lie in 1..={}", self.num_experts),
            ));
        }
        Ok(())
    }

    /// Smoothness bonus `ν₁ ρ^h` of a node at depth `h`.
    pub fn smoothness_bonus(&self, depth: u32) -> f64 {
        self.smoothness_nu1 * self.smoothness_rho.powi(depth as i32)
    }
}

/// Axis-aligned box `[lower, upper] ⊆ [0,1]^K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::contract("region bounds must have equal nonzero length"));
        }
        let ok = lower
            .iter()
            .zip(&upper)
            .all(|(l, u)| 0.0 <= *l && l <= u && *u <= 1.0);
        if !ok {
            return Err(Error::contract("region must satisfy 0 <= lower <= upper <= 1"));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Whether the box meets the simplex: `Σ lower ≤ 1 ≤ Σ upper`.
    pub fn is_feasible(&self) -> bool {
        let lo: f64 = self.lower.iter().sum();
        let hi: f64 = self.upper.iter().sum();
        lo <= 1.0 && 1.0 <= hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Deterministic feasible point: start at `lower` and raise coordinates
    /// in index order toward `upper` until the total reaches one.
    pub fn representative_point(&self) -> Result<MergingWeight> {
        if !self.is_feasible() {
            return Err(Error::contract("representative point of an infeasible region"));
        }
        let mut x = self.lower.clone();
        let mut deficit = 1.0 - self.lower.iter().sum::<f64>();
        for (xk, uk) in x.iter_mut().zip(&self.upper) {
            if deficit <= 0.0 {
                break;
            }
            let raise = (uk - *xk).min(deficit);
            *xk += raise;
            deficit -= raise;
        }
        MergingWeight::new(x)
    }

    /// Split at the midpoint of `dim`; the halves share the cut coordinate.
    pub fn bisect(&self, dim: usize) -> (Region, Region) {
        let mid = 0.5 * (self.lower[dim] + self.upper[dim]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[dim] = mid;
        right.lower[dim] = mid;
        (left, right)
    }
}

/// Handle into the tree's node arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionNode {
    pub depth: u32,
    /// One-based position at this depth; children of `i` are `2i-1` and `2i`.
    pub index: u64,
    pub region: Region,
    pub pull_count: u64,
    pub active: bool,
    pub children: Option<(NodeId, NodeId)>,
    pub split_dim: Option<usize>,
    candidate: Option<MergingWeight>,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Candidate weight of an active node (fixed at creation).
    pub fn candidate(&self) -> Option<&MergingWeight> {
        self.candidate.as_ref()
    }
}

/// One scoring candidate drawn from an active leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub node: NodeId,
    pub depth: u32,
    pub index: u64,
    pub weight: MergingWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionReport {
    pub expanded: bool,
    pub split_dim: Option<usize>,
    pub children: Option<(NodeId, NodeId)>,
}

/// `τ_h(t) = C² log(t/δ) ρ^(−2h) / ν₁²`, floored at one.
pub fn expansion_threshold(t: u64, depth: u32, config: &TreeConfig) -> f64 {
    let c2 = config.threshold_const * config.threshold_const;
    let nu2 = config.smoothness_nu1 * config.smoothness_nu1;
    let log_term = (t as f64 / config.confidence_delta).ln();
    let tau = c2 * log_term / nu2 * config.smoothness_rho.powi(-2 * depth as i32);
    if tau.is_nan() {
        1.0
    } else {
        tau.max(1.0)
    }
}

/// Upper bound on the number of candidates over a horizon of `horizon` rounds:
/// `2^(1/(1−ρ)) T ν₁² / (C² log(T/δ))`. Requires `T > δ`.
pub fn candidate_count_bound(horizon: u64, config: &TreeConfig) -> f64 {
    let rho = config.smoothness_rho;
    let c2 = config.threshold_const * config.threshold_const;
    let nu2 = config.smoothness_nu1 * config.smoothness_nu1;
    let t = horizon as f64;
    2f64.powf(1.0 / (1.0 - rho)) * t * nu2 / (c2 * (t / config.confidence_delta).ln())
}

/// Upper bound on the tree depth over `horizon` rounds:
/// `log(T ν₁² / (C² log(T/δ))) / (1−ρ)`. Requires `T > δ`.
pub fn depth_bound(horizon: u64, config: &TreeConfig) -> f64 {
    let rho = config.smoothness_rho;
    let c2 = config.threshold_const * config.threshold_const;
    let nu2 = config.smoothness_nu1 * config.smoothness_nu1;
    let t = horizon as f64;
    (t * nu2 / (c2 * (t / config.confidence_delta).ln())).ln() / (1.0 - rho)
}

/// The partition tree. Nodes live in an arena indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    config: TreeConfig,
    nodes: Vec<PartitionNode>,
    max_depth: u32,
    active_leaf_count: usize,
}

impl PartitionTree {
    pub fn new(config: TreeConfig) -> Result<Self> {
        config.validate()?;
        let mut tree = Self {
            nodes: Vec::new(),
            max_depth: 0,
            active_leaf_count: 0,
            config,
        };
        let region = Region::unit(tree.config.num_experts);
        tree.push_node(0, 1, region)?;
        Ok(tree)
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &PartitionNode {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[PartitionNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn active_leaf_count(&self) -> usize {
        self.active_leaf_count
    }

    fn push_node(&mut self, depth: u32, index: u64, region: Region) -> Result<NodeId> {
        let active = region.is_feasible();
        let candidate = if active {
            let point = region.representative_point()?;
            Some(top_b_project(&point, self.config.max_experts)?)
        } else {
            None
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(PartitionNode {
            depth,
            index,
            region,
            pull_count: 0,
            active,
            children: None,
            split_dim: None,
            candidate,
        });
        self.max_depth = self.max_depth.max(depth);
        if active {
            self.active_leaf_count += 1;
        }
        Ok(id)
    }

    fn check_active_leaf(&self, id: NodeId) -> Result<&PartitionNode> {
        let node = self
            .nodes
            .get(id.0)
            .ok_or_else(|| Error::contract(format!("unknown node {}", id.0)))?;
        if !node.is_leaf() {
            return Err(Error::contract(format!(
                "node ({}, {}) is not a leaf",
                node.depth, node.index
            )));
        }
        if !node.active {
            return Err(Error::contract(format!(
                "node ({}, {}) is inactive",
                node.depth, node.index
            )));
        }
        Ok(node)
    }

    /// Count one more selection of an active leaf.
    pub fn record_pull(&mut self, id: NodeId) -> Result<()> {
        self.check_active_leaf(id)?;
        self.nodes[id.0].pull_count += 1;
        Ok(())
    }

    /// Split `id` if its pull count has reached `τ_h(t)`.
    pub fn maybe_expand<R: Rng + ?Sized>(
        &mut self,
        id: NodeId,
        t: u64,
        rng: &mut R,
    ) -> Result<ExpansionReport> {
        let node = self.check_active_leaf(id)?;
        let tau = expansion_threshold(t, node.depth, &self.config);
        if (node.pull_count as f64) < tau {
            return Ok(ExpansionReport {
                expanded: false,
                split_dim: None,
                children: None,
            });
        }
        let dim = rng.random_range(0..self.config.num_experts);
        self.split(id, dim)
    }

    /// Bisect an active leaf along `dim` regardless of its pull count.
    pub fn split(&mut self, id: NodeId, dim: usize) -> Result<ExpansionReport> {
        let node = self.check_active_leaf(id)?;
        if dim >= self.config.num_experts {
            return Err(Error::contract(format!("split dimension {dim} out of range")));
        }
        let depth = node.depth + 1;
        let index = node
            .index
            .checked_mul(2)
            .ok_or_else(|| Error::contract("node index overflow"))?;
        let (left, right) = node.region.bisect(dim);
        let a = self.push_node(depth, index - 1, left)?;
        let b = self.push_node(depth, index, right)?;
        let parent = &mut self.nodes[id.0];
        parent.children = Some((a, b));
        parent.split_dim = Some(dim);
        self.active_leaf_count -= 1;
        Ok(ExpansionReport {
            expanded: true,
            split_dim: Some(dim),
            children: Some((a, b)),
        })
    }

    /// Candidates of every active leaf, ordered by `(depth, index)`.
    pub fn active_leaves(&self) -> Vec<Candidate> {
        let mut out: Vec<Candidate> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf() && n.active)
            .map(|(i, n)| Candidate {
                node: NodeId(i),
                depth: n.depth,
                index: n.index,
                weight: n.candidate.clone().expect("active nodes carry a candidate"),
            })
            .collect();
        out.sort_by_key(|c| (c.depth, c.index));
        out
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSnapshot {
                    depth: n.depth,
                    index: n.index,
                    lower: n.region.lower.clone(),
                    upper: n.region.upper.clone(),
                    pull_count: n.pull_count,
                    active: n.active,
                    split_dim: n.split_dim,
                })
                .collect(),
        }
    }
}

/// JSON export of a tree for debugging and fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub depth: u32,
    pub index: u64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub pull_count: u64,
    pub active: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_dim: Option<usize>,
}
