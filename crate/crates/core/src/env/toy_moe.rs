//! A linear mixture of `K` square experts merged as `W = Σ x_k W_k`.
//!
//! Task `v` feeds inputs `u ~ N(0, s_v I)` and wants `T_v u`; its expected
//! squared error is `‖W − T_v‖_F² · trace(Σ_v)/m = s_v ‖W − T_v‖_F²`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_weight, Environment, RewardVector};
use crate::error::{Error, Result};
use crate::simplex::MergingWeight;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMoe {
    dim: usize,
    experts: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    input_scales: Vec<f64>,
    noise_sigma: f64,
    normalize: bool,
    /// Worst per-task loss over the simplex (attained at a vertex).
    loss_max: Vec<f64>,
}

impl ToyMoe {
    /// `experts` and `targets` are row-major `m × m` matrices. With
    /// `normalize`, rewards are `1 − l_v / l_v^max ∈ [0,1]`; otherwise `−l_v`.
    pub fn new(
        dim: usize,
        experts: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        input_scales: Vec<f64>,
        noise_sigma: f64,
        normalize: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("m", "must be >= 1"));
        }
        if experts.len() < 2 {
            return Err(Error::invalid("experts", "need at least 2 experts"));
        }
        if targets.is_empty() {
            return Err(Error::invalid("targets", "need at least one task"));
        }
        let sq = dim * dim;
        if experts.iter().chain(&targets).any(|m| m.len() != sq) {
            return Err(Error::invalid("experts", format!("matrices must have {sq} entries")));
        }
        if experts.iter().chain(&targets).flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("experts", "entries must be finite"));
        }
        if input_scales.len() != targets.len() || input_scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("input_scales", "need one positive scale per task"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        let mut env = Self {
            dim,
            experts,
            targets,
            input_scales,
            noise_sigma,
            normalize,
            loss_max: Vec::new(),
        };
        let k = env.experts.len();
        env.loss_max = (0..env.targets.len())
            .map(|v| {
                let worst = (0..k)
                    .map(|e| env.loss_at(&MergingWeight::vertex(e, k), v))
                    .fold(0.0, f64::max);
                if worst > 0.0 {
                    worst
                } else {
                    1.0
                }
            })
            .collect();
        Ok(env)
    }

    /// Random experts `W_k ~ N(0, 1/m)` entrywise, and targets that are
    /// random convex combinations of the experts plus a small perturbation.
    pub fn random(k: usize, v: usize, dim: usize, noise_sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entry = Normal::new(0.0, (1.0 / dim as f64).sqrt()).expect("finite std");
        let jitter = Normal::new(0.0, 0.05 / (dim as f64).sqrt()).expect("finite std");
        let experts: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim * dim).map(|_| entry.sample(&mut rng)).collect())
            .collect();
        let targets = (0..v)
            .map(|_| {
                let mix = MergingWeight::sample_uniform(k, &mut rng);
                (0..dim * dim)
                    .map(|i| {
                        let merged: f64 = mix
                            .as_slice()
                            .iter()
                            .zip(&experts)
                            .map(|(c, e)| c * e[i])
                            .sum();
                        merged + jitter.sample(&mut rng)
                    })
                    .collect()
            })
            .collect();
        Self::new(dim, experts, targets, vec![1.0; v], noise_sigma, true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn experts(&self) -> &[Vec<f64>] {
        &self.experts
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn input_scales(&self) -> &[f64] {
        &self.input_scales
    }

    /// `W = Σ x_k W_k`, row-major.
    pub fn merged(&self, x: &MergingWeight) -> Vec<f64> {
        let mut w = vec![0.0; self.dim * self.dim];
        for (xk, wk) in x.as_slice().iter().zip(&self.experts) {
            if *xk == 0.0 {
                continue;
            }
            for (a, b) in w.iter_mut().zip(wk) {
                *a += xk * b;
            }
        }
        w
    }

    fn loss_of(&self, merged: &[f64], task: usize) -> f64 {
        let frob: f64 = merged
            .iter()
            .zip(&self.targets[task])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        // trace(s I_m) / m = s
        frob * self.input_scales[task]
    }

    fn loss_at(&self, x: &MergingWeight, task: usize) -> f64 {
        self.loss_of(&self.merged(x), task)
    }

    /// Closed-form expected loss `E‖Wu − T_v u‖²` per task.
    pub fn expected_loss(&self, x: &MergingWeight) -> Result<Vec<f64>> {
        check_weight(self, x)?;
        let merged = self.merged(x);
        Ok((0..self.targets.len()).map(|v| self.loss_of(&merged, v)).collect())
    }
}

impl Environment for ToyMoe {
    fn num_experts(&self) -> usize {
        self.experts.len()
    }

    fn num_tasks(&self) -> usize {
        self.targets.len()
    }

    fn reward_range(&self) -> (f64, f64) {
        if self.normalize {
            (0.0, 1.0)
        } else {
            (-self.loss_max.iter().copied().fold(0.0, f64::max), 0.0)
        }
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn expected_reward(&self, x: &MergingWeight) -> Result<RewardVector> {
        let losses = self.expected_loss(x)?;
        let values = losses
            .iter()
            .zip(&self.loss_max)
            .map(|(l, max)| {
                if self.normalize {
                    (1.0 - l / max).clamp(0.0, 1.0)
                } else {
                    -l
                }
            })
            .collect();
        RewardVector::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(m: usize, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            out[i * m + i] = s;
        }
        out
    }

    fn half() -> MergingWeight {
        MergingWeight::new(vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn vertex_matching_target_has_zero_loss() {
        let env = ToyMoe::new(
            2,
            vec![identity(2, 1.0), identity(2, 3.0)],
            vec![identity(2, 3.0)],
            vec![1.0],
            0.0,
            true,
        )
        .unwrap();
        let x = MergingWeight::vertex(1, 2);
        assert_eq!(env.expected_loss(&x).unwrap(), vec![0.0]);
        assert_eq!(env.expected_reward(&x).unwrap().0, vec![1.0]);
    }

    #[test]
    fn opposite_experts_cancel() {
        let t = vec![1.0, 2.0, 3.0, 4.0];
        let env = ToyMoe::new(
            2,
            vec![identity(2, 1.0), identity(2, -1.0)],
            vec![t.clone()],
            vec![1.0],
            0.0,
            false,
        )
        .unwrap();
        let frob: f64 = t.iter().map(|v| v * v).sum();
        assert_eq!(env.merged(&half()), vec![0.0; 4]);
        assert!((env.expected_loss(&half()).unwrap()[0] - frob).abs() < 1e-12);
        assert!((env.expected_reward(&half()).unwrap().0[0] + frob).abs() < 1e-12);
    }

    #[test]
    fn interpolation_hits_target() {
        let env = ToyMoe::new(
            2,
            vec![identity(2, 1.0), identity(2, 2.0)],
            vec![identity(2, 1.5)],
            vec![1.0],
            0.0,
            true,
        )
        .unwrap();
        assert_eq!(env.expected_loss(&half()).unwrap(), vec![0.0]);
    }

    #[test]
    fn raw_range_covers_worst_vertex() {
        let env = ToyMoe::random(3, 2, 4, 0.0, 8).unwrap();
        let raw = ToyMoe::new(
            4,
            env.experts().to_vec(),
            env.targets().to_vec(),
            vec![1.0, 1.0],
            0.0,
            false,
        )
        .unwrap();
        let (lo, hi) = raw.reward_range();
        for k in 0..3 {
            for r in raw.expected_reward(&MergingWeight::vertex(k, 3)).unwrap().0 {
                assert!(lo <= r && r <= hi);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ToyMoe::new(2, vec![identity(2, 1.0)], vec![identity(2, 1.0)], vec![1.0], 0.0, true).is_err());
        assert!(ToyMoe::new(2, vec![identity(2, 1.0), vec![1.0]], vec![identity(2, 1.0)], vec![1.0], 0.0, true).is_err());
    }
}
