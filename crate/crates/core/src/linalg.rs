//! The regularized gradient Gram matrix `Z_t = λI + Σ g gᵀ / w`, kept
//! together with its inverse and `log(det Z_t / det λI)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Full {
        z: Vec<f64>,
        z_inv: Vec<f64>,
    },
    /// Only `diag(Z)`; an approximation for large parameter counts.
    Diagonal { diag: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    dim: usize,
    lambda: f64,
    storage: Storage,
    log_det_ratio: f64,
    refresh_interval: Option<usize>,
    since_refresh: usize,
}

impl ConfidenceMatrix {
    /// Dense `Z₀ = λI` maintained by Sherman–Morrison, with a direct
    /// re-inversion every `refresh_interval` updates (`None` never refreshes).
    pub fn full(dim: usize, lambda: f64, refresh_interval: Option<usize>) -> Result<Self> {
        Self::check_lambda(lambda)?;
        let mut z = vec![0.0; dim * dim];
        let mut z_inv = vec![0.0; dim * dim];
        for i in 0..dim {
            z[i * dim + i] = lambda;
            z_inv[i * dim + i] = 1.0 / lambda;
        }
        Ok(Self {
            dim,
            lambda,
            storage: Storage::Full { z, z_inv },
            log_det_ratio: 0.0,
            refresh_interval: refresh_interval.filter(|n| *n > 0),
            since_refresh: 0,
        })
    }

    pub fn diagonal(dim: usize, lambda: f64) -> Result<Self> {
        Self::check_lambda(lambda)?;
        Ok(Self {
            dim,
            lambda,
            storage: Storage::Diagonal {
                diag: vec![lambda; dim],
            },
            log_det_ratio: 0.0,
            refresh_interval: None,
            since_refresh: 0,
        })
    }

    fn check_lambda(lambda: f64) -> Result<()> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("regularization", "must be > 0"))
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.storage, Storage::Diagonal { .. })
    }

    pub fn log_det_ratio(&self) -> f64 {
        self.log_det_ratio
    }

    /// Row-major `Z` (dense mode only).
    pub fn z(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Full { z, .. } => Some(z),
            Storage::Diagonal { .. } => None,
        }
    }

    /// Row-major maintained `Z⁻¹` (dense mode only).
    pub fn z_inverse(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Full { z_inv, .. } => Some(z_inv),
            Storage::Diagonal { .. } => None,
        }
    }

    /// `gᵀ Z⁻¹ g`.
    pub fn quad_form(&self, g: &[f64]) -> Result<f64> {
        check_dim(self.dim, g.len())?;
        let n = self.dim;
        Ok(match &self.storage {
            Storage::Full { z_inv, .. } => {
                let mut total = 0.0;
                for (i, gi) in g.iter().enumerate() {
                    if *gi == 0.0 {
                        continue;
                    }
                    let row = &z_inv[i * n..(i + 1) * n];
                    let r: f64 = row.iter().zip(g).map(|(a, b)| a * b).sum();
                    total += gi * r;
                }
                total
            }
            Storage::Diagonal { diag } => g.iter().zip(diag).map(|(a, d)| a * a / d).sum(),
        })
    }

    /// `Z ← Z + scale · g gᵀ`, updating the inverse and the log-det ratio.
    pub fn rank_one_update(&mut self, g: &[f64], scale: f64) -> Result<()> {
        check_dim(self.dim, g.len())?;
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::contract("rank-one scale must be positive"));
        }
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {v}")));
        }
        if g.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        let n = self.dim;
        match &mut self.storage {
            Storage::Diagonal { diag } => {
                for (d, gi) in diag.iter_mut().zip(g) {
                    let next = *d + scale * gi * gi;
                    self.log_det_ratio += (next / *d).ln();
                    *d = next;
                }
                Ok(())
            }
            Storage::Full { z, z_inv } => {
                symmetric_rank_one(z, n, g, scale);
                let u: Vec<f64> = (0..n)
                    .map(|i| z_inv[i * n..(i + 1) * n].iter().zip(g).map(|(a, b)| a * b).sum())
                    .collect();
                let q: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
                let denom = 1.0 + scale * q;
                self.since_refresh += 1;
                let due = self.refresh_interval.is_some_and(|k| self.since_refresh >= k);
                if !(denom > 0.0 && denom.is_finite() && q >= 0.0) || due {
                    return self.refresh();
                }
                symmetric_rank_one(z_inv, n, &u, -scale / denom);
                self.log_det_ratio += denom.ln();
                Ok(())
            }
        }
    }

    /// Recompute `Z⁻¹` and the log-det ratio directly from `Z`.
    pub fn refresh(&mut self) -> Result<()> {
        let n = self.dim;
        let lambda = self.lambda;
        let Storage::Full { z, z_inv } = &mut self.storage else {
            return Ok(());
        };
        let (inv, log_det) = direct_inverse_log_det(z, n)?;
        *z_inv = inv;
        self.log_det_ratio = log_det - n as f64 * lambda.ln();
        self.since_refresh = 0;
        Ok(())
    }
}

/// Row-major inverse and log-determinant of a symmetric positive-definite
/// matrix via Cholesky.
pub fn direct_inverse_log_det(m: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    check_dim(n * n, m.len())?;
    let mat = DMatrix::from_row_slice(n, n, m);
    let chol = mat
        .cholesky()
        .ok_or_else(|| Error::NonFinite("matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = chol.inverse();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    // exact symmetry
    for i in 0..n {
        for j in i + 1..n {
            out[j * n + i] = out[i * n + j];
        }
    }
    Ok((out, log_det))
}

/// `m ← m + c · v vᵀ` keeping `m` exactly symmetric.
fn symmetric_rank_one(m: &mut [f64], n: usize, v: &[f64], c: f64) {
    for i in 0..n {
        let ci = c * v[i];
        if ci == 0.0 {
            continue;
        }
        for j in i..n {
            m[i * n + j] += ci * v[j];
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            m[j * n + i] = m[i * n + j];
        }
    }
}
