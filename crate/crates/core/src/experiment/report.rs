//! Cross-replication tables and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{Replication, RunSummary};
use crate::baselines::PolicyId;
use crate::error::{Error, Result};
use crate::policy::RoundRecord;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub policy: String,
    pub t: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRewardRow {
    pub policy: String,
    pub task: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tables {
    pub regret: Vec<RegretRow>,
    pub task_reward: Vec<TaskRewardRow>,
}

/// `T/10, T/4, T/2, T`, at least 1 and without repeats.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [horizon / 10, horizon / 4, horizon / 2, horizon]
        .into_iter()
        .map(|t| t.max(1))
        .collect();
    out.dedup();
    out
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-policy regret at the checkpoints and final per-task reward, in order
/// of first appearance.
pub fn aggregate(summaries: &[RunSummary]) -> Result<Tables> {
    let Some(first) = summaries.first() else {
        return Ok(Tables::default());
    };
    let horizon = first.horizon();
    if let Some(bad) = summaries.iter().find(|s| s.horizon() != horizon) {
        return Err(Error::contract(format!(
            "cannot aggregate horizons {horizon} and {}",
            bad.horizon()
        )));
    }
    let mut order: Vec<PolicyId> = Vec::new();
    for s in summaries {
        if !order.contains(&s.policy) {
            order.push(s.policy);
        }
    }
    let mut tables = Tables::default();
    for policy in order {
        let group: Vec<&RunSummary> = summaries.iter().filter(|s| s.policy == policy).collect();
        let regret: Vec<&Vec<f64>> = group.iter().filter_map(|s| s.cumulative_regret.as_ref()).collect();
        if regret.len() == group.len() {
            for t in checkpoints(horizon) {
                let at: Vec<f64> = regret.iter().map(|r| r[t - 1]).collect();
                let (mean, std) = mean_std(&at);
                tables.regret.push(RegretRow {
                    policy: policy.to_string(),
                    t,
                    mean,
                    std,
                    n: at.len(),
                });
            }
        }
        let tasks = group[0].final_task_reward.len();
        for task in 0..tasks {
            let xs: Vec<f64> = group.iter().map(|s| s.final_task_reward[task]).collect();
            let (mean, std) = mean_std(&xs);
            tables.task_reward.push(TaskRewardRow {
                policy: policy.to_string(),
                task,
                mean,
                std,
                n: xs.len(),
            });
        }
    }
    Ok(tables)
}

/// Column names of a per-round trace.
pub fn record_header(num_experts: usize, with_regret: bool) -> Vec<String> {
    let mut h = vec!["t".to_string(), "chosen_depth".into(), "chosen_index".into()];
    h.extend((0..num_experts).map(|k| format!("weight_{k}")));
    h.push("scalar_reward".into());
    if with_regret {
        h.push("regret".into());
    }
    h.extend(["n_candidates", "tree_max_depth", "gamma"].map(String::from));
    h
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Write a trace as CSV. Wall-clock time is left out so identical runs give
/// identical bytes.
pub fn write_records<W: Write>(out: W, num_experts: usize, records: &[RoundRecord]) -> Result<()> {
    let with_regret = records.first().is_some_and(|r| r.regret.is_some());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(record_header(num_experts, with_regret))?;
    for r in records {
        let mut row = vec![r.t.to_string(), opt(r.chosen_depth), opt(r.chosen_index)];
        row.extend(r.weight.iter().map(f64::to_string));
        row.push(r.scalar_reward.to_string());
        if with_regret {
            row.push(opt(r.regret));
        }
        row.push(r.n_candidates.to_string());
        row.push(opt(r.tree_max_depth));
        row.push(opt(r.gamma));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// File name of one replication's trace, e.g. `fixed-2_seed7.csv`.
pub fn trace_file_name(policy: PolicyId, seed: u64) -> String {
    format!("{}_seed{seed}.csv", policy.to_string().replace(':', "-"))
}

/// Write traces, summary tables, failures (if any) and the resolved config
/// into `dir`. Returns the paths written.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, reps: &[Replication]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in reps {
        match &r.outcome {
            Ok(s) => {
                let path = dir.join(trace_file_name(r.policy, r.seed));
                write_records(fs::File::create(&path)?, cfg.num_experts(), &s.records)?;
                written.push(path);
                ok.push(s.clone());
            }
            Err(e) => failures.push((r.policy.to_string(), r.seed, e.clone())),
        }
    }
    let tables = aggregate(&ok)?;
    let regret = dir.join("regret_summary.csv");
    write_rows(&regret, &tables.regret)?;
    let reward = dir.join("task_reward_summary.csv");
    write_rows(&reward, &tables.task_reward)?;
    written.extend([regret, reward]);
    if !failures.is_empty() {
        let path = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["policy", "seed", "error"])?;
        for (p, s, e) in &failures {
            w.write_record([p.as_str(), &s.to_string(), e.as_str()])?;
        }
        w.flush()?;
        written.push(path);
    }
    let sidecar = dir.join("config.resolved.json");
    fs::write(&sidecar, cfg.to_json_pretty()? + "\n")?;
    written.push(sidecar);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::TaskFeature;

    fn summary(policy: PolicyId, seed: u64, regret: &[f64]) -> RunSummary {
        let records: Vec<RoundRecord> = regret
            .iter()
            .enumerate()
            .map(|(i, _)| RoundRecord {
                t: i as u64 + 1,
                chosen_depth: None,
                chosen_index: None,
                weight: vec![0.5, 0.5],
                scalar_reward: 0.0,
                task_rewards: vec![0.1, 0.2],
                regret: Some(0.0),
                n_candidates: 1,
                tree_max_depth: None,
                gamma: None,
            })
            .collect();
        let n = records.len();
        RunSummary {
            policy,
            seed,
            records,
            psi: vec![TaskFeature::uniform(2); n],
            cumulative_regret: Some(regret.to_vec()),
            final_task_reward: vec![0.1, 0.2 + seed as f64],
            wall_clock: vec![0.0; n],
            tree_depth: vec![None; n],
            active_leaves: vec![None; n],
        }
    }

    #[test]
    fn checkpoint_positions() {
        assert_eq!(checkpoints(1000), vec![100, 250, 500, 1000]);
        assert_eq!(checkpoints(3), vec![1, 3]);
        assert_eq!(checkpoints(1), vec![1]);
    }

    #[test]
    fn single_replication_has_zero_std() {
        let reg: Vec<f64> = (1..=20).map(f64::from).collect();
        let t = aggregate(&[summary(PolicyId::Average, 0, &reg)]).unwrap();
        assert_eq!(t.regret.len(), 4);
        assert!(t.regret.iter().all(|r| r.std == 0.0 && r.n == 1));
        assert_eq!(t.regret[3].mean, 20.0);
        assert_eq!(t.regret[2].mean, 10.0);
        assert!(t.task_reward.iter().all(|r| r.std == 0.0));
    }

    #[test]
    fn identical_replications_agree() {
        let reg: Vec<f64> = (1..=20).map(|t| (t as f64).sqrt()).collect();
        let s = summary(PolicyId::Random, 3, &reg);
        let t = aggregate(&[s.clone(), s]).unwrap();
        assert!(t.regret.iter().all(|r| r.std == 0.0 && r.n == 2));
        assert!(t.regret.windows(2).all(|w| w[1].mean >= w[0].mean));
    }

    #[test]
    fn population_std_across_seeds() {
        let a = summary(PolicyId::Nucb, 0, &[1.0, 2.0]);
        let b = summary(PolicyId::Nucb, 1, &[3.0, 4.0]);
        let t = aggregate(&[a, b]).unwrap();
        let last = t.regret.last().unwrap();
        assert_eq!((last.mean, last.std), (3.0, 1.0));
        assert!((t.task_reward[1].mean - 0.7).abs() < 1e-12);
        assert!((t.task_reward[1].std - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_horizons_rejected() {
        let a = summary(PolicyId::Nucb, 0, &[1.0, 2.0]);
        let b = summary(PolicyId::Nucb, 1, &[1.0, 2.0, 3.0]);
        assert!(aggregate(&[a, b]).is_err());
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            record_header(2, true).join(","),
            "t,chosen_depth,chosen_index,weight_0,weight_1,scalar_reward,regret,n_candidates,tree_max_depth,gamma"
        );
        assert!(!record_header(2, false).contains(&"regret".to_string()));
        assert_eq!(trace_file_name(PolicyId::Fixed(2), 7), "fixed-2_seed7.csv");
    }

    #[test]
    fn records_serialize_blank_optionals() {
        let s = summary(PolicyId::Average, 0, &[0.0]);
        let mut buf = Vec::new();
        write_records(&mut buf, 2, &s.records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "1,,,0.5,0.5,0,0,1,,");
    }
}
