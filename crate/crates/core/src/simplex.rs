//! Vectors that live on the probability simplex: merging weights (the
//! router's action) and task features (its context).

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `Σ x = 1` for simplex members.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract(format!("{what} must be nonempty")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::contract(format!("{what} has invalid entry {v}")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::contract(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// A length-K nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MergingWeight(Vec<f64>);

impl MergingWeight {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values, "merging weight")?;
        Ok(Self(values))
    }

    /// The uniform weight `(1/K, ..., 1/K)`.
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// The vertex `e_k` (zero-based `k`).
    pub fn vertex(k: usize, dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        Self(v)
    }

    /// Uniform draw from the simplex via normalized exponentials.
    pub fn sample_uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut v: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s <= 0.0 {
            return Self::uniform(dim);
        }
        v.iter_mut().for_each(|x| *x /= s);
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of strictly positive entries.
    pub fn support(&self) -> usize {
        self.0.iter().filter(|v| **v > 0.0).count()
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl TryFrom<Vec<f64>> for MergingWeight {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MergingWeight> for Vec<f64> {
    fn from(w: MergingWeight) -> Self {
        w.0
    }
}

/// Keep the `b` largest entries, renormalize them and zero the rest.
///
/// Ties are resolved in favour of the lower index. A weight that already has
/// at most `b` positive entries is returned unchanged, which makes the
/// projection exactly idempotent.
pub fn top_b_project(x: &MergingWeight, b: usize) -> Result<MergingWeight> {
    let k = x.len();
    if b == 0 || b > k {
        return Err(Error::contract(format!("budget {b} outside 1..={k}")));
    }
    if x.support() <= b {
        return Ok(x.clone());
    }
    let mut order: Vec<usize> = (0..k).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&i, &j| x.0[j].total_cmp(&x.0[i]));
    let kept = &order[..b];
    let mass: f64 = kept.iter().map(|&i| x.0[i]).sum();
    if mass <= 0.0 {
        return Err(Error::contract("cannot project an all-zero weight"));
    }
    let mut out = vec![0.0; k];
    for &i in kept {
        out[i] = x.0[i] / mass;
    }
    Ok(MergingWeight(out))
}

/// Task-type proportions `ψ_t` for one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TaskFeature(Vec<f64>);

impl TaskFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values, "task feature")?;
        Ok(Self(values))
    }

    pub fn uniform(v: usize) -> Self {
        Self(vec![1.0 / v as f64; v])
    }

    pub fn one_hot(v: usize, dim: usize) -> Self {
        let mut out = vec![0.0; dim];
        out[v] = 1.0;
        Self(out)
    }

    /// Normalize nonnegative masses; `None` when they are all zero.
    pub fn from_masses(masses: &[f64]) -> Option<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || masses.iter().any(|m| *m < 0.0 || !m.is_finite()) {
            return None;
        }
        Some(Self(masses.iter().map(|m| m / total).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for TaskFeature {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TaskFeature> for Vec<f64> {
    fn from(t: TaskFeature) -> Self {
        t.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn w(v: &[f64]) -> MergingWeight {
        MergingWeight::new(v.to_vec()).unwrap()
    }

    #[test]
    fn top_b_keeps_largest() {
        let out = top_b_project(&w(&[0.4, 0.3, 0.2, 0.1]), 2).unwrap();
        let expect = [0.4 / 0.7, 0.3 / 0.7, 0.0, 0.0];
        for (a, b) in out.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn top_b_full_budget_is_identity() {
        let x = w(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(top_b_project(&x, 4).unwrap(), x);
    }

    #[test]
    fn top_b_tie_prefers_lower_index() {
        let out = top_b_project(&w(&[0.5, 0.5, 0.0, 0.0]), 1).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(top_b_project(&out, 1).unwrap(), out);

        let uniform = MergingWeight::uniform(4);
        let out = top_b_project(&uniform, 2).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn top_b_rejects_bad_budget() {
        assert!(top_b_project(&w(&[0.5, 0.5]), 0).is_err());
        assert!(top_b_project(&w(&[0.5, 0.5]), 3).is_err());
    }

    #[test]
    fn rejects_off_simplex() {
        assert!(MergingWeight::new(vec![0.5, 0.6]).is_err());
        assert!(MergingWeight::new(vec![1.5, -0.5]).is_err());
        assert!(TaskFeature::new(vec![]).is_err());
    }

    #[test]
    fn uniform_samples_average_to_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let x = MergingWeight::sample_uniform(4, &mut rng);
            assert!((x.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (m, v) in mean.iter_mut().zip(x.as_slice()) {
                *m += v / n as f64;
            }
        }
        for m in mean {
            assert!((m - 0.25).abs() / 0.25 < 0.01, "{m}");
        }
    }

    proptest! {
        #[test]
        fn top_b_idempotent_and_feasible(raw in prop::collection::vec(0.0f64..1.0, 2..9), b_seed in 0usize..100) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-6);
            let x = MergingWeight::from_raw(raw.iter().map(|v| v / s).collect());
            let b = 1 + b_seed % x.len();
            let once = top_b_project(&x, b).unwrap();
            let twice = top_b_project(&once, b).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.support() <= b);
            prop_assert!((once.as_slice().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(once.as_slice().iter().all(|v| *v >= 0.0));
        }
    }
}
