//! Config loading, seeded replications, aggregation and CSV output.

mod config;
mod report;
mod runner;

pub use config::{
    load_config, EnvField, ExperimentConfig, NucbSection, OracleSection, OracleSettings, RawConfig,
    ResolvedSchedule, Schedule, TreeSection,
};
pub use report::{
    aggregate, checkpoints, record_header, trace_file_name, write_outputs, write_records, RegretRow, Tables,
    TaskRewardRow,
};
pub use runner::{build_policy, oracle_for, psi_series, run_experiment, Replication, RunSummary};

/// The bundled showcase configuration.
pub const DEMO_CONFIG: &str = include_str!("../../configs/demo.json");
