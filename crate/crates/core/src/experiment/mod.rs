//! Declarative experiments: a TOML configuration expands into sweep points,
//! each point is trained and attacked for several repeats, and the metric rows
//! are written alongside summaries and plot data.

pub mod config;
pub mod report;
pub mod run;

pub use config::{load_config, ExperimentConfig, LogMode, Regularizers, SweepAxes, SweepPoint};
pub use report::{format_summary, write_report};
pub use run::{run_experiment, run_sweep, Methods, RepeatSeeds, SweepOutput};
