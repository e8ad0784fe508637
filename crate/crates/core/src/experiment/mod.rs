//! End-to-end experiments driven by a configuration file.

mod config;
mod run;

pub use config::{
    load_config, parse_config, validate_config, ContractSection, Diagnostic, ExperimentConfig, FleetSection, HorizonSection,
    NetworkSection, OccurrenceSection, OutputSection, Plan, SamplingSection, SeveritySection,
};
pub use run::{
    config_hash, run_experiment, sample_cells, theta_grid, with_threads, write_library, CellReport, CellSamples, Prepared, RiskReport,
    TrafficSummary,
};
