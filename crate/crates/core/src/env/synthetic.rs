use serde::{Deserialize, Serialize};

use super::{check_weight, Environment, RewardVector};
use crate::error::{Error, Result};
use crate::simplex::MergingWeight;

/// Closed-form reward surfaces over the simplex, one per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// `r_v = a_vᵀ x` with `a_v ∈ [0,1]^K`.
    Linear { coefficients: Vec<Vec<f64>> },
    /// `r_v = exp(−‖x − c_v‖² / (2σ_v²))`.
    GaussianBump {
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
    },
    /// Gaussian bump evaluated at `x` when `x_0 ≥ 1/2` and at the permuted
    /// point `(x_{π(0)}, …, x_{π(K−1)})` otherwise.
    Piecewise {
        centers: Vec<Vec<f64>>,
        widths: Vec<f64>,
        permutation: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnv {
    kind: SyntheticKind,
    num_experts: usize,
    num_tasks: usize,
    noise_sigma: f64,
}

fn check_rows(rows: &[Vec<f64>], k: usize, what: &str) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::invalid(what, "need at least one task"));
    }
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::invalid(what, format!("every row must have length {k}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(what, "entries must be finite"));
    }
    Ok(rows.len())
}

impl SyntheticEnv {
    pub fn new(kind: SyntheticKind, num_experts: usize, noise_sigma: f64) -> Result<Self> {
        if num_experts < 2 {
            return Err(Error::invalid("K", "need at least 2 experts"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma", "must be >= 0"));
        }
        let k = num_experts;
        let num_tasks = match &kind {
            SyntheticKind::Linear { coefficients } => {
                let v = check_rows(coefficients, k, "coefficients")?;
                if coefficients.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(Error::invalid("coefficients", "entries must lie in [0, 1]"));
                }
                v
            }
            SyntheticKind::GaussianBump { centers, widths }
            | SyntheticKind::Piecewise { centers, widths, .. } => {
                let v = check_rows(centers, k, "centers")?;
                if widths.len() != v || widths.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::invalid("widths", format!("need {v} positive widths")));
                }
                v
            }
        };
        if let SyntheticKind::Piecewise { permutation, .. } = &kind {
            let mut seen = vec![false; k];
            let valid = permutation.len() == k
                && permutation.iter().all(|&p| p < k && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(Error::invalid("permutation", format!("must permute 0..{k}")));
            }
        }
        Ok(Self {
            kind,
            num_experts,
            num_tasks,
            noise_sigma,
        })
    }

    pub fn kind(&self) -> &SyntheticKind {
        &self.kind
    }
}

fn bump(x: &[f64], center: &[f64], width: f64) -> f64 {
    let d2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

impl Environment for SyntheticEnv {
    fn num_experts(&self) -> usize {
        self.num_experts
    }

    fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    fn reward_range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn expected_reward(&self, x: &MergingWeight) -> Result<RewardVector> {
        check_weight(self, x)?;
        let x = x.as_slice();
        let values = match &self.kind {
            SyntheticKind::Linear { coefficients } => coefficients
                .iter()
                .map(|a| a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>().clamp(0.0, 1.0))
                .collect(),
            SyntheticKind::GaussianBump { centers, widths } => centers
                .iter()
                .zip(widths)
                .map(|(c, s)| bump(x, c, *s))
                .collect(),
            SyntheticKind::Piecewise {
                centers,
                widths,
                permutation,
            } => {
                let point: Vec<f64> = if x[0] >= 0.5 {
                    x.to_vec()
                } else {
                    permutation.iter().map(|&p| x[p]).collect()
                };
                centers
                    .iter()
                    .zip(widths)
                    .map(|(c, s)| bump(&point, c, *s))
                    .collect()
            }
        };
        RewardVector::new(values)
    }
}
