//! Shared fixtures for the benchmarks.

use aflow_core::flow::{make_initial_data, Family, FlowState, Formulation, PerturbationSpec};
use aflow_core::torus::TorusGrid;

/// Generic perturbation of the flat state on an n = 3 grid over `{x1, y1}`.
pub fn fixture(resolution: usize) -> FlowState {
    let grid = TorusGrid::new(3, resolution, &[0, 1]).expect("valid grid");
    let spec = PerturbationSpec {
        family: Family::Generic,
        amplitude: 0.05,
        seed: 1,
        max_mode: 2,
    };
    make_initial_data(&grid, &spec, Formulation::Rescaled).expect("positive data")
}
