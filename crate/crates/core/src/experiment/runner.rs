//! Seeded replications: one fresh environment and policy per `(policy, seed)`.

use std::collections::HashMap;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ResolvedSchedule};
use crate::bandit::Tanbr;
use crate::baselines::{AveragePolicy, FixedExpertPolicy, Nucb, PolicyId, RandomPolicy};
use crate::env::{oracle_best, oracle_refined, EnvInstance, Environment, OracleResult, TaskMonitor};
use crate::error::{Error, Result};
use crate::policy::{run_round, Policy, RoundRecord};
use crate::simplex::TaskFeature;

const ENV_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const SCHEDULE_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything recorded for one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub policy: PolicyId,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub psi: Vec<TaskFeature>,
    /// `R_t` for `t = 1..=T`; `None` without an oracle.
    pub cumulative_regret: Option<Vec<f64>>,
    /// Mean observed reward per task over the last tenth of the horizon.
    pub final_task_reward: Vec<f64>,
    /// Seconds spent per round.
    pub wall_clock: Vec<f64>,
    pub tree_depth: Vec<Option<u32>>,
    pub active_leaves: Vec<Option<usize>>,
}

impl RunSummary {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.cumulative_regret.as_ref().and_then(|r| r.last().copied())
    }
}

/// Outcome of one `(policy, seed)` job; a failed round aborts only its own
/// replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub policy: PolicyId,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Seed-level inputs shared read-only by every policy run under that seed.
#[derive(Debug, Clone)]
struct SeedInputs {
    psi: Vec<TaskFeature>,
    oracle: Option<Vec<f64>>,
}

/// Task feature for every slot `t = 1..=T`.
pub fn psi_series(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TaskFeature>> {
    let t_max = cfg.horizon;
    match &cfg.schedule {
        ResolvedSchedule::Fixed(psi) => Ok(vec![psi.clone(); t_max as usize]),
        ResolvedSchedule::Drift { from, to } => Ok((1..=t_max)
            .map(|t| {
                let s = if t_max == 1 { 0.0 } else { (t - 1) as f64 / (t_max - 1) as f64 };
                let mix: Vec<f64> = from
                    .as_slice()
                    .iter()
                    .zip(to.as_slice())
                    .map(|(a, b)| (1.0 - s) * a + s * b)
                    .collect();
                TaskFeature::from_masses(&mix).expect("convex mix of simplex points")
            })
            .collect()),
        ResolvedSchedule::Monitor {
            from,
            to,
            requests_per_slot,
            flip_at,
        } => {
            let mut rng = stream(seed, SCHEDULE_STREAM);
            let mut monitor = TaskMonitor::new(cfg.num_tasks(), cfg.monitor, seed)?;
            let before = WeightedIndex::new(from.as_slice())
                .map_err(|e| Error::invalid("schedule.from", e.to_string()))?;
            let after = WeightedIndex::new(to.as_slice())
                .map_err(|e| Error::invalid("schedule.to", e.to_string()))?;
            let mut out = Vec::with_capacity(t_max as usize);
            for t in 1..=t_max {
                let dist = if t <= *flip_at { &before } else { &after };
                let ids: Vec<usize> = (0..*requests_per_slot).map(|_| dist.sample(&mut rng)).collect();
                out.push(monitor.slot_feature(&ids)?);
            }
            Ok(out)
        }
    }
}

/// The regret oracle configured for `cfg`.
pub fn oracle_for(cfg: &ExperimentConfig, env: &dyn Environment, psi: &TaskFeature) -> Result<Option<OracleResult>> {
    let Some(o) = cfg.oracle else {
        return Ok(None);
    };
    let r = if o.refine {
        oracle_refined(env, psi, o.resolution, cfg.budget())?
    } else {
        oracle_best(env, psi, o.resolution, cfg.budget())?
    };
    Ok(Some(r))
}

fn seed_inputs(cfg: &ExperimentConfig, env: &EnvInstance, seed: u64) -> Result<SeedInputs> {
    let psi = psi_series(cfg, seed)?;
    let oracle = if cfg.oracle.is_some() {
        let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
        let mut values = Vec::with_capacity(psi.len());
        for p in &psi {
            let key: Vec<u64> = p.as_slice().iter().map(|v| v.to_bits()).collect();
            let value = match cache.get(&key) {
                Some(v) => *v,
                None => {
                    let v = oracle_for(cfg, env, p)?.expect("oracle enabled").value;
                    cache.insert(key, v);
                    v
                }
            };
            values.push(value);
        }
        Some(values)
    } else {
        None
    };
    Ok(SeedInputs { psi, oracle })
}

/// Fresh policy for one replication; network initialization is keyed by the
/// replication seed, so neural policies under the same seed start alike.
pub fn build_policy(id: PolicyId, cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn Policy>> {
    let (k, v, b) = (cfg.num_experts(), cfg.num_tasks(), cfg.budget());
    Ok(match id {
        PolicyId::Tanbr => Box::new(Tanbr::new(cfg.tree.clone(), &cfg.net, v, cfg.train, cfg.bandit, seed)?),
        PolicyId::Nucb => Box::new(Nucb::new(
            k,
            v,
            b,
            &cfg.net,
            cfg.train,
            cfg.bandit,
            cfg.nucb.n_candidates,
            seed,
        )?),
        PolicyId::Average => Box::new(AveragePolicy::new(k, b)?),
        PolicyId::Fixed(e) => Box::new(FixedExpertPolicy::new(e, k)?),
        PolicyId::Random => Box::new(RandomPolicy::new(k, b)?),
    })
}

fn run_one(cfg: &ExperimentConfig, id: PolicyId, seed: u64, inputs: &SeedInputs) -> Result<RunSummary> {
    let env = cfg.env.build()?;
    let mut policy = build_policy(id, cfg, seed)?;
    let mut env_rng = stream(seed, ENV_STREAM);
    let mut policy_rng = stream(seed, POLICY_STREAM);
    let n = cfg.horizon as usize;
    let mut records = Vec::with_capacity(n);
    let mut wall_clock = Vec::with_capacity(n);
    let mut tree_depth = Vec::with_capacity(n);
    let mut active_leaves = Vec::with_capacity(n);
    for (i, psi) in inputs.psi.iter().enumerate() {
        let start = Instant::now();
        let oracle = inputs.oracle.as_ref().map(|o| o[i]);
        let rec = run_round(
            policy.as_mut(),
            i as u64 + 1,
            psi,
            &env,
            oracle,
            &mut env_rng,
            &mut policy_rng,
        )?;
        wall_clock.push(start.elapsed().as_secs_f64());
        tree_depth.push(rec.tree_max_depth);
        active_leaves.push(policy.active_leaf_count());
        records.push(rec);
    }
    let cumulative_regret = inputs.oracle.as_ref().map(|_| {
        let mut acc = 0.0;
        records
            .iter()
            .map(|r| {
                acc += r.regret.unwrap_or(0.0);
                acc
            })
            .collect()
    });
    let tail = (n / 10).max(1);
    let v = cfg.num_tasks();
    let mut final_task_reward = vec![0.0; v];
    for r in &records[n - tail..] {
        for (acc, x) in final_task_reward.iter_mut().zip(&r.task_rewards) {
            *acc += x / tail as f64;
        }
    }
    Ok(RunSummary {
        policy: id,
        seed,
        records,
        psi: inputs.psi.clone(),
        cumulative_regret,
        final_task_reward,
        wall_clock,
        tree_depth,
        active_leaves,
    })
}

/// Run every `(policy, seed)` pair. Results come back in config order
/// (policy-major) whether or not replications ran in parallel; a seed whose
/// schedule or oracle cannot be built fails all of its replications.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Replication>> {
    let env = cfg.env.build()?;
    let per_seed = |seed: &u64| seed_inputs(cfg, &env, *seed).map_err(|e| e.to_string());
    let inputs: Vec<std::result::Result<SeedInputs, String>> = if cfg.parallel {
        cfg.seeds.par_iter().map(per_seed).collect()
    } else {
        cfg.seeds.iter().map(per_seed).collect()
    };
    let jobs: Vec<(PolicyId, usize)> = cfg
        .policies
        .iter()
        .flat_map(|p| (0..cfg.seeds.len()).map(move |s| (*p, s)))
        .collect();
    let job = |&(policy, s): &(PolicyId, usize)| {
        let seed = cfg.seeds[s];
        let outcome = match &inputs[s] {
            Ok(inp) => run_one(cfg, policy, seed, inp).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        Replication { policy, seed, outcome }
    };
    Ok(if cfg.parallel {
        jobs.par_iter().map(job).collect()
    } else {
        jobs.iter().map(job).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"env": "gaussian-bump", "K": 3, "V": 2, "T": 30, "seeds": [1, 2],
                "net": {{"width": 8}}, "train": {{"sgd_steps_per_round": 2, "history_cap": 16}},
                "oracle": {{"resolution": 6}} {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn replications_are_order_insensitive() {
        let c = cfg("");
        let all = run_experiment(&c).unwrap();
        assert_eq!(all.len(), 8);
        let mut reversed = c.clone();
        reversed.seeds.reverse();
        let back = run_experiment(&reversed).unwrap();
        for r in &all {
            let twin = back.iter().find(|b| b.policy == r.policy && b.seed == r.seed).unwrap();
            assert_eq!(twin.outcome.as_ref().unwrap().records, r.outcome.as_ref().unwrap().records);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let c = cfg("");
        let mut p = c.clone();
        p.parallel = true;
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.policy, y.policy);
            assert_eq!(x.outcome.as_ref().unwrap().records, y.outcome.as_ref().unwrap().records);
        }
    }

    #[test]
    fn fixed_schedule_is_constant() {
        let c = cfg(r#", "schedule": {"kind": "fixed", "psi": [0.3, 0.7]}"#);
        let s = psi_series(&c, 1).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.iter().all(|p| p.as_slice() == [0.3, 0.7]));
    }

    #[test]
    fn monitor_schedule_tracks_the_flip() {
        let c = cfg(r#", "schedule": {"kind": "monitor"}"#);
        let s = psi_series(&c, 1).unwrap();
        assert!(s.windows(2).any(|w| w[0] != w[1]));
        for p in &s {
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.as_slice().iter().all(|v| *v >= 0.0));
        }
        assert!(s[14].as_slice()[0] > s[14].as_slice()[1]);
        assert!(s[29].as_slice()[1] > s[29].as_slice()[0]);
        assert_eq!(s, psi_series(&c, 1).unwrap());
    }

    #[test]
    fn drift_schedule_interpolates() {
        let c = cfg(r#", "schedule": {"kind": "drift"}"#);
        let s = psi_series(&c, 0).unwrap();
        assert_eq!(s[0].as_slice(), [1.0, 0.0]);
        assert_eq!(s[29].as_slice(), [0.0, 1.0]);
    }

    #[test]
    fn summary_series_have_horizon_length() {
        let c = cfg("");
        for r in run_experiment(&c).unwrap() {
            let s = r.outcome.unwrap();
            assert_eq!(s.horizon(), 30);
            let reg = s.cumulative_regret.as_ref().unwrap();
            assert_eq!(reg.len(), 30);
            assert!(reg.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", s.policy);
            assert_eq!(s.wall_clock.len(), 30);
            assert_eq!(s.tree_depth.len(), 30);
            assert_eq!(s.tree_depth[0].is_some(), s.policy == PolicyId::Tanbr);
            assert_eq!(s.active_leaves[29].is_some(), s.policy == PolicyId::Tanbr);
        }
    }
}
