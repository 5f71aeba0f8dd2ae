//! Shared fixtures for the benchmarks.

use polling_core::scenario::presets;
use polling_core::ScenarioConfig;

/// Slow-mode scenario shrunk to capacity `x` (lattice `x + 4`).
pub fn slow_mode(x: usize) -> ScenarioConfig {
    presets::slow_mode().with_capacity(x, x).with_lattice(x + 4, x + 4)
}

pub fn asymmetric_variance(x: usize) -> ScenarioConfig {
    presets::asymmetric_variance().with_capacity(x, x).with_lattice(x + 4, x + 4)
}
