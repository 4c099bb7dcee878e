//! Task-distribution monitor: per-slot Count-Min Sketch counts smoothed by
//! an exponential moving average.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::simplex::TaskFeature;

/// `(1 − α) prev + α q` where `q` normalizes `counts`. All-zero counts
/// return `prev` unchanged.
pub fn ema(prev: &TaskFeature, counts: &[u64], alpha: f64) -> Result<TaskFeature> {
    check_dim(prev.len(), counts.len())?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1]"));
    }
    let masses: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
    let Some(q) = TaskFeature::from_masses(&masses) else {
        return Ok(prev.clone());
    };
    if alpha == 1.0 {
        return Ok(q);
    }
    let mixed: Vec<f64> = prev
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(p, q)| (1.0 - alpha) * p + alpha * q)
        .collect();
    Ok(TaskFeature::from_masses(&mixed).expect("convex mix of simplex points"))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Count-Min Sketch over `u64` item ids. Never undercounts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMinSketch {
    width: usize,
    depth: usize,
    counters: Vec<u64>,
    seeds: Vec<u64>,
}

impl CountMinSketch {
    pub fn new(width: usize, depth: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("cms_width", "must be >= 1"));
        }
        if depth == 0 {
            return Err(Error::invalid("cms_depth", "must be >= 1"));
        }
        let mut state = seed;
        let seeds = (0..depth)
            .map(|_| {
                state = splitmix64(state);
                state
            })
            .collect();
        Ok(Self {
            width,
            depth,
            counters: vec![0; width * depth],
            seeds,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn column(&self, row: usize, id: u64) -> usize {
        (splitmix64(id ^ self.seeds[row]) % self.width as u64) as usize
    }

    pub fn insert(&mut self, id: u64) {
        for row in 0..self.depth {
            let c = self.column(row, id);
            self.counters[row * self.width + c] += 1;
        }
    }

    pub fn estimate(&self, id: u64) -> u64 {
        (0..self.depth)
            .map(|row| self.counters[row * self.width + self.column(row, id)])
            .min()
            .unwrap_or(0)
    }

    pub fn clear(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = 0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub alpha: f64,
    pub cms_width: usize,
    pub cms_depth: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            cms_width: 64,
            cms_depth: 4,
        }
    }
}

/// Turns each slot's stream of task ids into a task feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMonitor {
    alpha: f64,
    sketch: CountMinSketch,
    current: TaskFeature,
}

impl TaskMonitor {
    pub fn new(num_tasks: usize, config: MonitorConfig, seed: u64) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::invalid("V", "must be >= 1"));
        }
        if !(config.alpha > 0.0 && config.alpha <= 1.0) {
            return Err(Error::invalid("alpha", "must lie in (0, 1]"));
        }
        Ok(Self {
            alpha: config.alpha,
            sketch: CountMinSketch::new(config.cms_width, config.cms_depth, seed)?,
            current: TaskFeature::uniform(num_tasks),
        })
    }

    pub fn current(&self) -> &TaskFeature {
        &self.current
    }

    /// Sketch one slot's stream, normalize the per-type estimates and blend
    /// them into the running feature. An empty stream keeps the previous one.
    pub fn slot_feature(&mut self, stream: &[usize]) -> Result<TaskFeature> {
        let v = self.current.len();
        if let Some(bad) = stream.iter().find(|id| **id >= v) {
            return Err(Error::contract(format!("task id {bad} out of range 0..{v}")));
        }
        if stream.is_empty() {
            return Ok(self.current.clone());
        }
        self.sketch.clear();
        for id in stream {
            self.sketch.insert(*id as u64);
        }
        let counts: Vec<u64> = (0..v as u64).map(|id| self.sketch.estimate(id)).collect();
        self.current = ema(&self.current, &counts, self.alpha)?;
        Ok(self.current.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tf(v: &[f64]) -> TaskFeature {
        TaskFeature::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ema_cases() {
        let prev = tf(&[0.2, 0.8]);
        assert_eq!(ema(&prev, &[3, 1], 1.0).unwrap(), tf(&[0.75, 0.25]));
        let same = ema(&prev, &[1, 4], 0.4).unwrap();
        for (a, b) in same.as_slice().iter().zip(prev.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let out = ema(&tf(&[1.0, 0.0]), &[0, 5], 0.25).unwrap();
        assert!((out.as_slice()[0] - 0.75).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.25).abs() < 1e-15);
        assert_eq!(ema(&prev, &[0, 0], 0.5).unwrap(), prev);
        assert!(ema(&prev, &[1, 1], 0.0).is_err());
    }

    #[test]
    fn cms_basics() {
        let mut cms = CountMinSketch::new(64, 4, 1).unwrap();
        assert_eq!(cms.estimate(42), 0);
        cms.insert(42);
        assert!(cms.estimate(42) >= 1);
    }

    #[test]
    fn cms_never_undercounts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cms = CountMinSketch::new(16, 3, 9).unwrap();
        let mut truth = vec![0u64; 200];
        for _ in 0..20_000 {
            let id = rng.random_range(0..200u64);
            cms.insert(id);
            truth[id as usize] += 1;
            let probe = rng.random_range(0..200u64);
            assert!(cms.estimate(probe) >= truth[probe as usize]);
        }
    }

    #[test]
    fn single_type_slot_is_one_hot() {
        let mut m = TaskMonitor::new(
            3,
            MonitorConfig {
                alpha: 1.0,
                ..MonitorConfig::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(m.slot_feature(&[2; 50]).unwrap(), TaskFeature::one_hot(2, 3));
    }

    #[test]
    fn uniform_stream_gives_near_uniform_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = 8;
        let stream: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..v)).collect();
        let mut m = TaskMonitor::new(
            v,
            MonitorConfig {
                alpha: 1.0,
                ..MonitorConfig::default()
            },
            5,
        )
        .unwrap();
        // per-entry sampling std is about 0.0033 here
        let psi = m.slot_feature(&stream).unwrap();
        for p in psi.as_slice() {
            assert!((p - 1.0 / v as f64).abs() < 0.02, "{p}");
        }

        let round_robin: Vec<usize> = (0..10_000).map(|i| i % v).collect();
        let psi = m.slot_feature(&round_robin).unwrap();
        for p in psi.as_slice() {
            assert!((p - 1.0 / v as f64).abs() / (1.0 / v as f64) < 0.02, "{p}");
        }
    }

    #[test]
    fn repeated_slot_is_a_fixed_point() {
        let mut m = TaskMonitor::new(2, MonitorConfig { alpha: 1.0, ..MonitorConfig::default() }, 0).unwrap();
        let stream = [0, 0, 1, 0, 1, 1, 1];
        let a = m.slot_feature(&stream).unwrap();
        let b = m.slot_feature(&stream).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.slot_feature(&[]).unwrap(), b);
        assert!(m.slot_feature(&[5]).is_err());
    }
}
