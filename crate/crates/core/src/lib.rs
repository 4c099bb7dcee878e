//! Context-aware expert merging via a tree-structured neural UCB bandit.
//!
//! A [`tree::PartitionTree`] adaptively covers the merging simplex, a small
//! [`net::RewardNet`] predicts per-task rewards, and [`bandit::Tanbr`] picks
//! the leaf candidate with the highest upper confidence bound each round.

pub mod bandit;
pub mod baselines;
pub mod env;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod net;
pub mod policy;
pub mod simplex;
pub mod tree;

pub use bandit::{BanditConfig, BanditState, GammaMode, NetShape, Tanbr};
pub use baselines::{AveragePolicy, FixedExpertPolicy, Nucb, PolicyId, RandomPolicy};
pub use env::{EnvInstance, EnvSpec, Environment, RewardVector};
pub use error::{Error, Result};
pub use net::{NetConfig, RewardNet, TrainConfig};
pub use policy::{Decision, Policy, RoundRecord};
pub use simplex::{top_b_project, MergingWeight, TaskFeature};
pub use tree::{PartitionTree, TreeConfig};
