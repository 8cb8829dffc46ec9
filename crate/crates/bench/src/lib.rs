//! Shared fixtures for the criterion benchmarks.

use mfhrl_core::experiment::ExperimentConfig;
use mfhrl_core::fidelity::{build_family, FidelityFamily};
use mfhrl_core::GridSpec;

/// The default four-level family on the default grid.
pub fn desk_family() -> FidelityFamily {
    let cfg = ExperimentConfig::default();
    build_family(&cfg.env.build().expect("grid"), &cfg.factors, &cfg.costs).expect("family")
}

/// A square open grid with `side * side` states.
pub fn open_grid(side: usize) -> GridSpec {
    GridSpec {
        rows: side,
        cols: side,
        goal: (side - 1, side - 1),
        pits: Vec::new(),
        ..GridSpec::default()
    }
}
