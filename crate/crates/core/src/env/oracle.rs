//! Brute-force optimum of `ψᵀ r(x)` over a simplex lattice.

use serde::Serialize;

use super::Environment;
use crate::error::{Error, Result};
use crate::simplex::{top_b_project, MergingWeight, TaskFeature};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub weight: MergingWeight,
    pub value: f64,
}

/// All points `n / G` with `n ∈ ℕ^K`, `Σ n = G`, in descending lexicographic order of `n`
/// (the first point is `e_1`).
pub fn simplex_grid(k: usize, resolution: usize) -> Vec<MergingWeight> {
    fn rec(k: usize, left: usize, g: usize, prefix: &mut Vec<usize>, out: &mut Vec<MergingWeight>) {
        if prefix.len() == k - 1 {
            prefix.push(left);
            out.push(MergingWeight::from_raw(
                prefix.iter().map(|n| *n as f64 / g as f64).collect(),
            ));
            prefix.pop();
            return;
        }
        for n in (0..=left).rev() {
            prefix.push(n);
            rec(k, left - n, g, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 && resolution > 0 {
        rec(k, resolution, resolution, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn scalar_value(env: &dyn Environment, psi: &TaskFeature, x: &MergingWeight) -> Result<f64> {
    Ok(psi.dot(env.expected_reward(x)?.as_slice()))
}

/// Maximize `ψᵀ r(x)` over the lattice of resolution `G`, projecting every
/// lattice point onto the `budget` largest experts first. Ties keep the first
/// point in enumeration order (vertices `e_1, e_2, …` come early).
pub fn oracle_best(
    env: &dyn Environment,
    psi: &TaskFeature,
    resolution: usize,
    budget: usize,
) -> Result<OracleResult> {
    let k = env.num_experts();
    if resolution < k {
        return Err(Error::invalid(
            "grid_resolution",
            format!("resolution {resolution} is below K = {k}"),
        ));
    }
    crate::error::check_dim(env.num_tasks(), psi.len())?;
    let mut best: Option<OracleResult> = None;
    for point in simplex_grid(k, resolution) {
        let x = top_b_project(&point, budget)?;
        let value = scalar_value(env, psi, &x)?;
        if best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(OracleResult { weight: x, value });
        }
    }
    best.ok_or_else(|| Error::contract("empty simplex grid"))
}

/// Grid optimum polished by a pairwise mass-transfer compass search.
///
/// The polish only accepts strict improvements, so the value never drops
/// below [`oracle_best`]; it removes most of the `O(1/G)` lattice error on
/// smooth surfaces.
pub fn oracle_refined(
    env: &dyn Environment,
    psi: &TaskFeature,
    resolution: usize,
    budget: usize,
) -> Result<OracleResult> {
    let mut best = oracle_best(env, psi, resolution, budget)?;
    let k = env.num_experts();
    let mut step = 0.5 / resolution as f64;
    while step > 1e-10 {
        let mut improved = false;
        for from in 0..k {
            for to in 0..k {
                if from == to {
                    continue;
                }
                let cur = best.weight.as_slice();
                let moved = step.min(cur[from]);
                if moved <= 0.0 {
                    continue;
                }
                let mut trial = cur.to_vec();
                trial[from] -= moved;
                trial[to] += moved;
                let s: f64 = trial.iter().sum();
                trial.iter_mut().for_each(|v| *v /= s);
                let x = top_b_project(&MergingWeight::from_raw(trial), budget)?;
                let value = scalar_value(env, psi, &x)?;
                if value > best.value {
                    best = OracleResult { weight: x, value };
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{SyntheticEnv, SyntheticKind, ToyMoe};

    #[test]
    fn grid_size_is_binomial() {
        // C(G + K − 1, K − 1)
        assert_eq!(simplex_grid(4, 20).len(), 1771);
        assert_eq!(simplex_grid(8, 8).len(), 6435);
        assert!(simplex_grid(3, 5)
            .iter()
            .all(|x| (x.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn linear_optimum_is_vertex() {
        let env = SyntheticEnv::new(
            SyntheticKind::Linear {
                coefficients: vec![vec![0.0, 0.0, 1.0, 0.0]; 2],
            },
            4,
            0.0,
        )
        .unwrap();
        let r = oracle_best(&env, &TaskFeature::uniform(2), 20, 4).unwrap();
        assert_eq!(r.weight, MergingWeight::vertex(2, 4));
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn bump_on_grid_point() {
        let c = vec![0.2, 0.3, 0.5];
        let env = SyntheticEnv::new(
            SyntheticKind::GaussianBump {
                centers: vec![c.clone(), c.clone()],
                widths: vec![0.3, 0.6],
            },
            3,
            0.0,
        )
        .unwrap();
        let r = oracle_best(&env, &TaskFeature::uniform(2), 10, 3).unwrap();
        for (a, b) in r.weight.as_slice().iter().zip(&c) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_moe_interpolation_optimum() {
        let eye = |s: f64| vec![s, 0.0, 0.0, s];
        let env = ToyMoe::new(2, vec![eye(1.0), eye(2.0)], vec![eye(1.5)], vec![1.0], 0.0, true).unwrap();
        let r = oracle_best(&env, &TaskFeature::uniform(1), 10, 2).unwrap();
        assert_eq!(r.weight.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn coarse_grid_rejected() {
        let env = ToyMoe::random(4, 1, 2, 0.0, 0).unwrap();
        assert!(oracle_best(&env, &TaskFeature::uniform(1), 3, 4).is_err());
    }

    #[test]
    fn refinement_never_loses() {
        let env = SyntheticEnv::new(
            SyntheticKind::GaussianBump {
                centers: vec![vec![0.37, 0.41, 0.22], vec![0.13, 0.29, 0.58]],
                widths: vec![0.25, 0.4],
            },
            3,
            0.0,
        )
        .unwrap();
        let psi = TaskFeature::new(vec![0.7, 0.3]).unwrap();
        let grid = oracle_best(&env, &psi, 10, 3).unwrap();
        let polished = oracle_refined(&env, &psi, 10, 3).unwrap();
        assert!(polished.value >= grid.value);
        let fine = oracle_best(&env, &psi, 400, 3).unwrap();
        assert!(polished.value >= fine.value - 1e-9);
    }

    #[test]
    fn budget_applied_to_grid() {
        let env = SyntheticEnv::new(
            SyntheticKind::GaussianBump {
                centers: vec![vec![0.25; 4]],
                widths: vec![0.3],
            },
            4,
            0.0,
        )
        .unwrap();
        let r = oracle_refined(&env, &TaskFeature::uniform(1), 8, 2).unwrap();
        assert!(r.weight.support() <= 2);
    }
}
