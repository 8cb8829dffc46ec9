//! Experiment orchestration: configuration, the online loop and its
//! baselines, sweeps and CSV output.

pub mod config;
pub mod output;
pub mod runner;
pub mod sweep;

pub use config::{Behavior, ExperimentConfig, PosteriorLoss, Strategy};
pub use output::{fmt_g9, write_run_dir, write_run_summary};
pub use runner::{
    pretrain, run, run_baseline, run_from, run_mf_hrl_igm, Pretrained, RunResult, SelectorLogRow,
};
pub use sweep::{
    report, run_sweep, write_sweep, AggregateRow, RegretRow, RunSummary, SweepCell, SweepOptions,
};
