//! Fully-connected reward predictor `f(x, θ) = √w θ_L σ(θ_{L−1} σ(… σ(θ_1 x)))`
//! with rectifier activations, its parameter gradient, and full-batch
//! gradient descent on the regularized squared loss.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub width: usize,
    pub depth: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be >= 1"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim", "must be >= 1"));
        }
        if self.width == 0 {
            return Err(Error::invalid("width", "must be >= 1"));
        }
        if self.depth < 2 {
            return Err(Error::invalid("depth", "must be >= 2"));
        }
        Ok(())
    }

    /// `(rows, cols)` of each weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth);
        shapes.push((self.width, self.input_dim));
        for _ in 0..self.depth - 2 {
            shapes.push((self.width, self.width));
        }
        shapes.push((self.output_dim, self.width));
        shapes
    }

    /// `p = wK + w²(L−2) + wV`.
    pub fn param_count(&self) -> usize {
        self.width * self.input_dim
            + self.width * self.width * (self.depth - 2)
            + self.width * self.output_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub regularization: f64,
    pub sgd_steps_per_round: usize,
    /// Keep only the most recent samples in the loss; `None` keeps all.
    pub history_cap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            regularization: 1.0,
            sgd_steps_per_round: 50,
            history_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size", "must be > 0"));
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::invalid("regularization", "must be > 0"));
        }
        if self.sgd_steps_per_round == 0 {
            return Err(Error::invalid("sgd_steps_per_round", "must be >= 1"));
        }
        if self.history_cap == Some(0) {
            return Err(Error::invalid("history_cap", "must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Network parameters stored as one flat vector, layer by layer, each layer
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    config: NetConfig,
    seed: u64,
    theta: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(config: &NetConfig) -> Vec<usize> {
    let mut offsets = vec![0];
    for (r, c) in config.layer_shapes() {
        offsets.push(offsets.last().unwrap() + r * c);
    }
    offsets
}

impl RewardNet {
    /// Gaussian initialization: `N(0, 4/w)` for hidden layers and `N(0, 2/w)`
    /// for the output layer.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width as f64;
        let hidden = Normal::new(0.0, (4.0 / w).sqrt()).expect("finite std");
        let output = Normal::new(0.0, (2.0 / w).sqrt()).expect("finite std");
        let offsets = layer_offsets(&config);
        let p = config.param_count();
        let out_start = offsets[config.depth - 1];
        let theta = (0..p)
            .map(|i| {
                if i < out_start {
                    hidden.sample(&mut rng)
                } else {
                    output.sample(&mut rng)
                }
            })
            .collect();
        Ok(Self {
            config,
            seed,
            theta,
            offsets,
        })
    }

    pub fn from_params(config: NetConfig, seed: u64, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        check_dim(config.param_count(), theta.len())?;
        Ok(Self {
            offsets: layer_offsets(&config),
            config,
            seed,
            theta,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Weight matrix of layer `l` (zero-based) as a row-major slice.
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.theta[self.offsets[l]..self.offsets[l + 1]]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[l], self.offsets[l + 1]);
        &mut self.theta[a..b]
    }

    /// Split a flat vector into per-layer matrices.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.theta.len(), flat.len())?;
        Ok(self
            .offsets
            .windows(2)
            .map(|w| flat[w[0]..w[1]].to_vec())
            .collect())
    }

    pub fn flatten(layers: &[Vec<f64>]) -> Vec<f64> {
        layers.iter().flatten().copied().collect()
    }

    fn scale(&self) -> f64 {
        (self.config.width as f64).sqrt()
    }

    /// Hidden pre-activations and activations for every hidden layer.
    fn hidden_pass(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let shapes = self.config.layer_shapes();
        let mut pre = Vec::with_capacity(shapes.len() - 1);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(shapes.len() - 1);
        for (l, &(rows, cols)) in shapes[..shapes.len() - 1].iter().enumerate() {
            let input = if l == 0 { x } else { &act[l - 1] };
            let m = self.layer(l);
            let z: Vec<f64> = (0..rows)
                .map(|r| dot(&m[r * cols..(r + 1) * cols], input))
                .collect();
            act.push(z.iter().map(|v| v.max(0.0)).collect());
            pre.push(z);
        }
        (pre, act)
    }

    fn output_from(&self, last: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.config.output_dim, self.config.width);
        let m = self.layer(self.config.depth - 1);
        let s = self.scale();
        (0..rows)
            .map(|r| s * dot(&m[r * cols..(r + 1) * cols], last))
            .collect()
    }

    /// Predicted per-task rewards, length `V`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.config.input_dim, x.len())?;
        let (_, act) = self.hidden_pass(x);
        Ok(self.output_from(act.last().expect("depth >= 2")))
    }

    /// `∇_θ (directionᵀ f(x, θ))`.
    pub fn gradient(&self, x: &[f64], direction: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_and_gradient(x, direction)?.1)
    }

    /// Forward output together with `∇_θ (directionᵀ f(x, θ))`, sharing one pass.
    pub fn forward_and_gradient(&self, x: &[f64], direction: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.config.input_dim, x.len())?;
        check_dim(self.config.output_dim, direction.len())?;
        let (pre, act) = self.hidden_pass(x);
        let out = self.output_from(act.last().expect("depth >= 2"));
        let mut grad = vec![0.0; self.theta.len()];
        self.backward(x, &pre, &act, direction, 1.0, &mut grad);
        Ok((out, grad))
    }

    /// Accumulate `weight · ∇_θ (directionᵀ f)` into `grad`.
    fn backward(
        &self,
        x: &[f64],
        pre: &[Vec<f64>],
        act: &[Vec<f64>],
        direction: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) {
        let shapes = self.config.layer_shapes();
        let last = shapes.len() - 1;
        let s = self.scale() * weight;
        let delta_out: Vec<f64> = direction.iter().map(|d| s * d).collect();

        // output layer
        let (rows, cols) = shapes[last];
        let base = self.offsets[last];
        let h = &act[last - 1];
        for r in 0..rows {
            if delta_out[r] == 0.0 {
                continue;
            }
            let g = &mut grad[base + r * cols..base + (r + 1) * cols];
            for (gi, hi) in g.iter_mut().zip(h) {
                *gi += delta_out[r] * hi;
            }
        }

        // back-propagate into the hidden stack
        let mut upstream = transpose_mul(self.layer(last), rows, cols, &delta_out);
        for l in (0..last).rev() {
            let (rows, cols) = shapes[l];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(&pre[l])
                .map(|(u, z)| if *z > 0.0 { *u } else { 0.0 })
                .collect();
            let input: &[f64] = if l == 0 { x } else { &act[l - 1] };
            let base = self.offsets[l];
            for r in 0..rows {
                if dz[r] == 0.0 {
                    continue;
                }
                let g = &mut grad[base + r * cols..base + (r + 1) * cols];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += dz[r] * xi;
                }
            }
            if l > 0 {
                upstream = transpose_mul(self.layer(l), rows, cols, &dz);
            }
        }
    }

    /// `Σ_s ½‖f(x_s, θ) − r_s‖² + (λ/2)‖θ − θ₀‖²`.
    pub fn loss(&self, samples: &[(&[f64], &[f64])], regularization: f64, theta0: &[f64]) -> Result<f64> {
        check_dim(self.theta.len(), theta0.len())?;
        let mut total = 0.0;
        for (x, r) in samples {
            check_dim(self.config.output_dim, r.len())?;
            let f = self.forward(x)?;
            total += 0.5 * f.iter().zip(*r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let reg: f64 = self
            .theta
            .iter()
            .zip(theta0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(total + 0.5 * regularization * reg)
    }

    /// Loss value and its gradient at the current parameters.
    pub fn loss_and_gradient(
        &self,
        samples: &[(&[f64], &[f64])],
        regularization: f64,
        theta0: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        check_dim(self.theta.len(), theta0.len())?;
        let mut grad: Vec<f64> = self
            .theta
            .iter()
            .zip(theta0)
            .map(|(a, b)| regularization * (a - b))
            .collect();
        let mut loss = 0.5 * regularization * self
            .theta
            .iter()
            .zip(theta0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        for (x, r) in samples {
            check_dim(self.config.input_dim, x.len())?;
            check_dim(self.config.output_dim, r.len())?;
            let (pre, act) = self.hidden_pass(x);
            let f = self.output_from(act.last().expect("depth >= 2"));
            let residual: Vec<f64> = f.iter().zip(*r).map(|(a, b)| a - b).collect();
            loss += 0.5 * residual.iter().map(|e| e * e).sum::<f64>();
            self.backward(x, &pre, &act, &residual, 1.0, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Run `sgd_steps_per_round` full-batch gradient steps on the regularized
    /// loss over `history` and return the updated network.
    ///
    /// Fails with [`Error::Diverged`] when the loss or parameters become
    /// non-finite, or when the final loss exceeds the starting loss.
    pub fn sgd_update(
        &self,
        history: &[(&[f64], &[f64])],
        config: &TrainConfig,
        theta0: &[f64],
    ) -> Result<RewardNet> {
        if history.is_empty() {
            return Err(Error::contract("sgd_update needs a nonempty history"));
        }
        let mut net = self.clone();
        let mut start_loss = None;
        for _ in 0..config.sgd_steps_per_round {
            let (loss, grad) = net.loss_and_gradient(history, config.regularization, theta0)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss became {loss}")));
            }
            start_loss.get_or_insert(loss);
            for (t, g) in net.theta.iter_mut().zip(&grad) {
                *t -= config.step_size * g;
            }
        }
        if net.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged("parameters became non-finite".into()));
        }
        let end_loss = net.loss(history, config.regularization, theta0)?;
        let start = start_loss.expect("at least one step");
        if !end_loss.is_finite() || end_loss > start {
            return Err(Error::Diverged(format!(
                "loss grew from {start} to {end_loss} at step size {}",
                config.step_size
            )));
        }
        Ok(net)
    }

    /// Write a one-line JSON header `{K, V, w, L, seed}` followed by the flat
    /// parameters as little-endian `f64`s.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let header = ParamHeader {
            k: self.config.input_dim,
            v: self.config.output_dim,
            w: self.config.width,
            l: self.config.depth,
            seed: self.seed,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for t in &self.theta {
            out.write_all(&t.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let split = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::contract("missing parameter header"))?;
        let header: ParamHeader = serde_json::from_slice(&bytes[..split])?;
        let config = NetConfig {
            input_dim: header.k,
            output_dim: header.v,
            width: header.w,
            depth: header.l,
        };
        config.validate()?;
        let body = &bytes[split + 1..];
        if body.len() != config.param_count() * 8 {
            return Err(Error::Dimension {
                expected: config.param_count() * 8,
                got: body.len(),
            });
        }
        let theta = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_params(config, header.seed, theta)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "V")]
    v: usize,
    w: usize,
    #[serde(rename = "L")]
    l: usize,
    seed: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Mᵀ v` for a row-major `rows × cols` matrix.
fn transpose_mul(m: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        if v[r] == 0.0 {
            continue;
        }
        for (o, mi) in out.iter_mut().zip(&m[r * cols..(r + 1) * cols]) {
            *o += v[r] * mi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, v: usize, w: usize, l: usize) -> NetConfig {
        NetConfig {
            input_dim: k,
            output_dim: v,
            width: w,
            depth: l,
        }
    }

    #[test]
    fn param_count_follows_layer_stack() {
        // two layers: θ_1 is 64×8, θ_L is 8×64
        assert_eq!(cfg(8, 8, 64, 2).param_count(), 1024);
        assert_eq!(cfg(8, 8, 64, 3).param_count(), 1024 + 64 * 64);
        let net = RewardNet::init(cfg(8, 8, 64, 2), 0).unwrap();
        assert_eq!(net.param_count(), 1024);
    }

    #[test]
    fn init_is_seeded() {
        let a = RewardNet::init(cfg(4, 2, 16, 3), 9).unwrap();
        let b = RewardNet::init(cfg(4, 2, 16, 3), 9).unwrap();
        let c = RewardNet::init(cfg(4, 2, 16, 3), 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_variance_matches_width() {
        // 64 × 1563 ≈ 10^5 draws in the input layer
        let w = 64;
        let net = RewardNet::init(cfg(1563, 1, w, 2), 3).unwrap();
        let l0 = net.layer(0);
        let n = l0.len() as f64;
        let mean = l0.iter().sum::<f64>() / n;
        let var = l0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 4.0 / w as f64).abs() / (4.0 / w as f64) < 0.05, "{var}");
    }

    #[test]
    fn zero_output_layer_gives_zero_output_and_hidden_gradient() {
        let mut net = RewardNet::init(cfg(3, 2, 5, 3), 1).unwrap();
        net.layer_mut(2).iter_mut().for_each(|v| *v = 0.0);
        let x = [0.2, 0.3, 0.5];
        assert_eq!(net.forward(&x).unwrap(), vec![0.0, 0.0]);
        let g = net.gradient(&x, &[0.4, 0.6]).unwrap();
        let out_start = net.offsets[2];
        assert!(g[..out_start].iter().all(|v| *v == 0.0));
        assert!(g[out_start..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn zero_direction_gives_zero_gradient() {
        let net = RewardNet::init(cfg(3, 2, 5, 3), 1).unwrap();
        let g = net.gradient(&[0.2, 0.3, 0.5], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_evaluated_scalar_net() {
        let net = RewardNet::from_params(cfg(1, 1, 1, 2), 0, vec![2.0, 3.0]).unwrap();
        assert_eq!(net.forward(&[0.5]).unwrap(), vec![3.0]);
        assert_eq!(net.forward(&[-0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = RewardNet::init(cfg(3, 2, 4, 2), 0).unwrap();
        assert!(matches!(net.forward(&[0.5, 0.5]), Err(Error::Dimension { .. })));
        assert!(net.gradient(&[0.2, 0.3, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn forward_does_not_mutate() {
        let net = RewardNet::init(cfg(3, 2, 4, 3), 0).unwrap();
        let before = net.clone();
        let a = net.forward(&[0.2, 0.3, 0.5]).unwrap();
        let b = net.forward(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
    }

    #[test]
    fn flatten_round_trip() {
        let net = RewardNet::init(cfg(3, 2, 4, 4), 5).unwrap();
        let layers = net.unflatten(net.params()).unwrap();
        assert_eq!(layers.len(), 4);
        assert_eq!(RewardNet::flatten(&layers), net.params());
    }

    #[test]
    fn stationary_point_is_unchanged() {
        let net = RewardNet::init(cfg(2, 1, 4, 2), 2).unwrap();
        let x = vec![0.3, 0.7];
        let r = net.forward(&x).unwrap();
        let theta0 = net.params().to_vec();
        let hist = [(&x[..], &r[..])];
        let cfg = TrainConfig::default();
        let out = net.sgd_update(&hist, &cfg, &theta0).unwrap();
        assert_eq!(out.params(), net.params());
    }

    #[test]
    fn regularizer_has_no_pull_at_anchor() {
        let net = RewardNet::init(cfg(2, 1, 4, 2), 2).unwrap();
        let x = vec![0.3, 0.7];
        let r = [net.forward(&x).unwrap()[0] + 1.0];
        let theta0 = net.params().to_vec();
        let hist = [(&x[..], &r[..])];
        let (_, small) = net.loss_and_gradient(&hist, 1e-3, &theta0).unwrap();
        let (_, large) = net.loss_and_gradient(&hist, 1e6, &theta0).unwrap();
        assert_eq!(small, large);
    }

    #[test]
    fn loss_decreases_monotonically_on_fixture() {
        let net = RewardNet::init(cfg(3, 2, 8, 2), 42).unwrap();
        let x = [0.2, 0.5, 0.3];
        let r = [0.9, 0.1];
        let theta0 = net.params().to_vec();
        let hist = [(&x[..], &r[..])];
        let one_step = TrainConfig {
            step_size: 1e-3,
            sgd_steps_per_round: 1,
            ..TrainConfig::default()
        };
        let mut cur = net;
        let mut prev = cur.loss(&hist, 1.0, &theta0).unwrap();
        let first = prev;
        for _ in 0..100 {
            cur = cur.sgd_update(&hist, &one_step, &theta0).unwrap();
            let l = cur.loss(&hist, 1.0, &theta0).unwrap();
            assert!(l < prev, "loss rose: {prev} -> {l}");
            prev = l;
        }
        assert!(prev < first);
    }

    #[test]
    fn oversized_step_reports_divergence() {
        let net = RewardNet::init(cfg(3, 2, 8, 2), 42).unwrap();
        let x = [0.2, 0.5, 0.3];
        let r = [0.9, 0.1];
        let theta0 = net.params().to_vec();
        let hist = vec![(&x[..], &r[..]); 50];
        let cfg = TrainConfig {
            step_size: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(net.sgd_update(&hist, &cfg, &theta0), Err(Error::Diverged(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let net = RewardNet::init(cfg(4, 3, 6, 3), 77).unwrap();
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        let header_end = buf.iter().position(|b| *b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..header_end]).unwrap();
        assert_eq!(header["K"], 4);
        assert_eq!(header["seed"], 77);
        assert_eq!(buf.len() - header_end - 1, net.param_count() * 8);
        let back = RewardNet::load(&buf[..]).unwrap();
        assert_eq!(back, net);
        assert!(RewardNet::load(&buf[..buf.len() - 1]).is_err());
    }
}
