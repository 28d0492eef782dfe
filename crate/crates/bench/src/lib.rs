//! Benchmark fixtures shared by the criterion targets.

use shsprop::{Scenario, ScenarioSpec};

/// Built-in scenario at a chosen resolution.
pub fn scenario_at(name: &str, n: usize) -> Scenario {
    let mut spec = ScenarioSpec::builtin(name).expect("built-in scenario");
    if spec.is_torus() {
        spec.set_grid_torus(n, n);
    } else {
        spec.set_grid_1d(n);
    }
    spec.build().expect("valid scenario")
}
