//! Comparator policies sharing the router's decision interface.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bandit::{BanditConfig, BanditState, NetShape};
use crate::env::RewardVector;
use crate::error::{Error, Result};
use crate::net::{NetConfig, RewardNet, TrainConfig};
use crate::policy::{Decision, Policy};
use crate::simplex::{top_b_project, MergingWeight, TaskFeature};

/// Neural UCB over a fresh random candidate set each round (no tree, so no
/// smoothness bonus).
#[derive(Debug, Clone)]
pub struct Nucb {
    state: BanditState,
    n_candidates: usize,
    budget: usize,
    num_experts: usize,
}

impl Nucb {
    pub fn new(
        num_experts: usize,
        num_tasks: usize,
        budget: usize,
        shape: &NetShape,
        train: TrainConfig,
        bandit: BanditConfig,
        n_candidates: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_candidates == 0 {
            return Err(Error::invalid("n_candidates", "must be >= 1"));
        }
        if budget == 0 || budget > num_experts {
            return Err(Error::invalid("max_experts", format!("must lie in 1..={num_experts}")));
        }
        let net = RewardNet::init(
            NetConfig {
                input_dim: num_experts,
                output_dim: num_tasks,
                width: shape.width,
                depth: shape.depth,
            },
            seed,
        )?;
        Ok(Self {
            state: BanditState::new(net, train, bandit)?,
            n_candidates,
            budget,
            num_experts,
        })
    }

    pub fn state(&self) -> &BanditState {
        &self.state
    }

    /// The round's candidate set: uniform simplex draws, top-B projected.
    pub fn sample_candidates(&self, rng: &mut dyn RngCore) -> Result<Vec<MergingWeight>> {
        (0..self.n_candidates)
            .map(|_| top_b_project(&MergingWeight::sample_uniform(self.num_experts, rng), self.budget))
            .collect()
    }

    /// Highest-UCB weight among `candidates`, scored without a tree term.
    pub fn select_from(&self, candidates: &[MergingWeight], psi: &TaskFeature) -> Result<(usize, Vec<f64>)> {
        let (i, score) = self.state.select(candidates.iter().map(|x| (x, 0.0)), psi)?;
        Ok((i, score.gradient))
    }
}

impl Policy for Nucb {
    fn name(&self) -> String {
        "nucb".into()
    }

    fn decide(&mut self, psi: &TaskFeature, rng: &mut dyn RngCore) -> Result<Decision> {
        let gamma = self.state.gamma();
        let candidates = self.sample_candidates(rng)?;
        let (i, gradient) = self.select_from(&candidates, psi)?;
        Ok(Decision {
            weight: candidates[i].clone(),
            node: None,
            depth: None,
            index: None,
            n_candidates: candidates.len(),
            gamma: Some(gamma),
            gradient: Some(gradient),
        })
    }

    fn observe(
        &mut self,
        decision: &Decision,
        reward: &RewardVector,
        psi: &TaskFeature,
        _rng: &mut dyn RngCore,
    ) -> Result<()> {
        let gradient = match &decision.gradient {
            Some(g) => g.clone(),
            None => self.state.net().gradient(decision.weight.as_slice(), psi.as_slice())?,
        };
        self.state.learn(&decision.weight, &gradient, reward, psi)
    }
}

/// Always plays the uniform weight (after the expert budget is applied).
#[derive(Debug, Clone)]
pub struct AveragePolicy {
    weight: MergingWeight,
}

impl AveragePolicy {
    pub fn new(num_experts: usize, budget: usize) -> Result<Self> {
        if num_experts < 2 {
            return Err(Error::invalid("K", "need at least 2 experts"));
        }
        Ok(Self {
            weight: top_b_project(&MergingWeight::uniform(num_experts), budget)?,
        })
    }

    pub fn weight(&self) -> &MergingWeight {
        &self.weight
    }
}

impl Policy for AveragePolicy {
    fn name(&self) -> String {
        "average".into()
    }

    fn decide(&mut self, _psi: &TaskFeature, _rng: &mut dyn RngCore) -> Result<Decision> {
        Ok(Decision::fixed(self.weight.clone()))
    }

    fn observe(&mut self, _: &Decision, _: &RewardVector, _: &TaskFeature, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }
}

/// Always routes everything to one expert `e_k` (one-based `k`).
#[derive(Debug, Clone)]
pub struct FixedExpertPolicy {
    expert: usize,
    weight: MergingWeight,
}

impl FixedExpertPolicy {
    pub fn new(expert: usize, num_experts: usize) -> Result<Self> {
        if expert == 0 || expert > num_experts {
            return Err(Error::invalid("policies", format!("fixed expert {expert} outside 1..={num_experts}")));
        }
        Ok(Self {
            expert,
            weight: MergingWeight::vertex(expert - 1, num_experts),
        })
    }
}

impl Policy for FixedExpertPolicy {
    fn name(&self) -> String {
        format!("fixed:{}", self.expert)
    }

    fn decide(&mut self, _psi: &TaskFeature, _rng: &mut dyn RngCore) -> Result<Decision> {
        Ok(Decision::fixed(self.weight.clone()))
    }

    fn observe(&mut self, _: &Decision, _: &RewardVector, _: &TaskFeature, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }
}

/// Uniform simplex draw each round, top-B projected.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    num_experts: usize,
    budget: usize,
}

impl RandomPolicy {
    pub fn new(num_experts: usize, budget: usize) -> Result<Self> {
        if budget == 0 || budget > num_experts {
            return Err(Error::invalid("max_experts", format!("must lie in 1..={num_experts}")));
        }
        Ok(Self { num_experts, budget })
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _psi: &TaskFeature, rng: &mut dyn RngCore) -> Result<Decision> {
        let x = MergingWeight::sample_uniform(self.num_experts, rng);
        Ok(Decision::fixed(top_b_project(&x, self.budget)?))
    }

    fn observe(&mut self, _: &Decision, _: &RewardVector, _: &TaskFeature, _: &mut dyn RngCore) -> Result<()> {
        Ok(())
    }
}

/// Policy names as written in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyId {
    Tanbr,
    Nucb,
    Average,
    /// One-based expert index.
    Fixed(usize),
    Random,
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::Unknown {
            what: "policy",
            name: s.to_string(),
        };
        Ok(match s {
            "tanbr" => PolicyId::Tanbr,
            "nucb" => PolicyId::Nucb,
            "average" => PolicyId::Average,
            "random" => PolicyId::Random,
            _ => {
                let k = s.strip_prefix("fixed:").ok_or_else(unknown)?;
                PolicyId::Fixed(k.parse().map_err(|_| unknown())?)
            }
        })
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyId::Tanbr => f.write_str("tanbr"),
            PolicyId::Nucb => f.write_str("nucb"),
            PolicyId::Average => f.write_str("average"),
            PolicyId::Fixed(k) => write!(f, "fixed:{k}"),
            PolicyId::Random => f.write_str("random"),
        }
    }
}

impl TryFrom<String> for PolicyId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyId> for String {
    fn from(id: PolicyId) -> String {
        id.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nucb(n: usize, seed: u64) -> Nucb {
        Nucb::new(
            3,
            2,
            3,
            &NetShape { width: 8, depth: 2 },
            TrainConfig {
                sgd_steps_per_round: 3,
                ..TrainConfig::default()
            },
            BanditConfig::default(),
            n,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn nucb_with_one_candidate_plays_it() {
        let mut p = nucb(1, 0);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let expect = p.sample_candidates(&mut a).unwrap();
        let d = p.decide(&TaskFeature::uniform(2), &mut b).unwrap();
        assert_eq!(d.weight, expect[0]);
        assert_eq!(d.n_candidates, 1);
    }

    #[test]
    fn nucb_candidate_streams_are_seeded() {
        let p = nucb(20, 0);
        let q = nucb(20, 0);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            assert_eq!(p.sample_candidates(&mut a).unwrap(), q.sample_candidates(&mut b).unwrap());
        }
        assert!(Nucb::new(3, 2, 3, &NetShape::default(), TrainConfig::default(), BanditConfig::default(), 0, 0).is_err());
    }

    #[test]
    fn average_and_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let psi = TaskFeature::uniform(1);
        let mut avg = AveragePolicy::new(4, 4).unwrap();
        assert_eq!(avg.decide(&psi, &mut rng).unwrap().weight.as_slice(), &[0.25; 4]);
        let avg = AveragePolicy::new(4, 2).unwrap();
        assert_eq!(avg.weight().as_slice(), &[0.5, 0.5, 0.0, 0.0]);

        let mut fixed = FixedExpertPolicy::new(1, 3).unwrap();
        let d = fixed.decide(&psi, &mut rng).unwrap();
        assert_eq!(d.weight.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(d.weight.support(), 1);
        assert!(FixedExpertPolicy::new(0, 3).is_err());
        assert!(FixedExpertPolicy::new(4, 3).is_err());
    }

    #[test]
    fn random_policy_is_seeded_and_feasible() {
        let psi = TaskFeature::uniform(1);
        let mut p = RandomPolicy::new(5, 2).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = p.decide(&psi, &mut a).unwrap().weight;
            let y = p.decide(&psi, &mut b).unwrap().weight;
            assert_eq!(x, y);
            assert!(x.support() <= 2);
            assert!((x.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn policy_ids_round_trip() {
        for s in ["tanbr", "nucb", "average", "fixed:3", "random"] {
            let id: PolicyId = s.parse().unwrap();
            assert_eq!(id.to_string(), s);
        }
        for bad in ["", "ucb", "fixed:", "fixed:x", "Fixed:1"] {
            assert!(bad.parse::<PolicyId>().is_err(), "{bad}");
        }
        let ids: Vec<PolicyId> = serde_json::from_str(r#"["tanbr", "fixed:2"]"#).unwrap();
        assert_eq!(ids, vec![PolicyId::Tanbr, PolicyId::Fixed(2)]);
    }
}
