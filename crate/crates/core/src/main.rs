use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use tanbr::env::Environment;
use tanbr::experiment::{
    aggregate, load_config, oracle_for, run_experiment, write_outputs, ExperimentConfig, ResolvedSchedule,
    RunSummary, DEMO_CONFIG,
};

#[derive(Parser)]
#[command(name = "tanbr", version, about = "Tree-structured neural UCB router for expert merging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-replication CSVs plus summaries.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the seed list with n, n+1, … (same replication count).
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Print the oracle-optimal merging weight and its value.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the bundled K=4 showcase.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn print_table(summaries: &[RunSummary]) -> anyhow::Result<()> {
    let tables = aggregate(summaries)?;
    if !tables.regret.is_empty() {
        println!("{:<10} {:>8} {:>12} {:>10}", "policy", "t", "regret", "std");
        for r in &tables.regret {
            println!("{:<10} {:>8} {:>12.4} {:>10.4}", r.policy, r.t, r.mean, r.std);
        }
    }
    println!("{:<10} {:>8} {:>12} {:>10}", "policy", "task", "reward", "std");
    for r in &tables.task_reward {
        println!("{:<10} {:>8} {:>12.4} {:>10.4}", r.policy, r.task, r.mean, r.std);
    }
    Ok(())
}

fn execute(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let reps = run_experiment(cfg)?;
    let files = write_outputs(out, cfg, &reps)?;
    let mut ok = Vec::new();
    for r in reps {
        match r.outcome {
            Ok(s) => ok.push(s),
            Err(e) => eprintln!("warning: {} seed {} failed: {e}", r.policy, r.seed),
        }
    }
    print_table(&ok)?;
    println!("wrote {} files to {}", files.len(), out.display());
    if ok.is_empty() {
        bail!("every replication failed");
    }
    Ok(())
}

fn main_inner(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed_override,
        } => {
            let mut cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(n) = seed_override {
                let r = cfg.seeds.len() as u64;
                cfg.seeds = (n..n + r).collect();
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            execute(&cfg, &out)
        }
        Command::Oracle { config } => {
            let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            let psi = match &cfg.schedule {
                ResolvedSchedule::Fixed(p) => p.clone(),
                ResolvedSchedule::Drift { from, .. } | ResolvedSchedule::Monitor { from, .. } => from.clone(),
            };
            let env = cfg.env.build()?;
            let Some(best) = oracle_for(&cfg, &env, &psi)? else {
                bail!("oracle is disabled in this config");
            };
            println!("psi = {}", fmt_vec(psi.as_slice()));
            println!("x* = {}", fmt_vec(best.weight.as_slice()));
            println!("value = {}", best.value);
            let r = env.expected_reward(&best.weight)?;
            println!("task rewards = {}", fmt_vec(r.as_slice()));
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
            println!(
                "ok: {} on K={} V={} T={} with {} policies x {} seeds",
                cfg.env.kind,
                cfg.num_experts(),
                cfg.num_tasks(),
                cfg.horizon,
                cfg.policies.len(),
                cfg.seeds.len()
            );
            Ok(())
        }
        Command::Demo { out } => {
            let cfg = ExperimentConfig::from_json(DEMO_CONFIG).context("bundled demo config")?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("demo-out"));
            execute(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
