//! Fixtures shared by the benchmarks.

use pempc::problem::{build_spring_damper_benchmark, InterconnectedSpec, Weights};
use pempc::store::BuildOptions;
use pempc::{Controller, ControllerConfig, MapStore, Result, StackedProblem, Vector};

/// Chain benchmark with precomputed maps.
pub fn controller(i_bar: usize, horizon: usize, mbar: usize) -> Result<Controller> {
    let p = build_spring_damper_benchmark(&InterconnectedSpec::chain(i_bar), &Weights::default(), horizon)?;
    let sp = StackedProblem::new(&p)?;
    let store = MapStore::build(&sp, &BuildOptions::default())?;
    Controller::new(sp, store, ControllerConfig { mbar, ..Default::default() })
}

/// Small displacement of every trolley; feasible for all chain sizes.
pub fn start_state(i_bar: usize) -> Vector {
    Vector::from_fn(2 * i_bar, |i, _| if i % 2 == 0 { 0.3 } else { 0.0 })
}
