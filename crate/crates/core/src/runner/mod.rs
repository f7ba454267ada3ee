//! Scenario runner: config, deterministic execution, monitors, and output files.

pub mod config;
pub mod scenario;
pub mod sink;

pub use config::{
    load_dataset, preset, presets, ConstantSettings, DataSource, KktSettings, LoadedConfig, MonitorSettings, Optimizer,
    RatesSettings, RunConfig, SvmSettings, Tolerances,
};
pub use scenario::{
    run_seed, FinalState, GdReport, HatReport, HatRow, MonitorResult, RatesReport, RunSummary, SeedRun, SvmReport,
    TrajectoryRecord,
};
pub use sink::{
    emit_plot_data, read_trajectory, run_scenario, write_artifacts, PlotData, RunOutcome, TrajectoryHeader,
};
