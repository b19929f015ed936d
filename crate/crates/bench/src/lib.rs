//! Shared fixtures for the benchmarks.

use netcast_core::synthgen::{generate, Scenario, ScenarioConfig};
use netcast_core::trainer::{FitConfig, FoldData};
use netcast_core::{DerivedFeatures, GraphInput};

/// The default 50-district, 40-week scenario with a network effect.
pub fn scenario() -> Scenario {
    generate(&ScenarioConfig {
        network_strength: 1.0,
        seed: 2,
        ..Default::default()
    })
    .expect("default scenario")
}

/// The first default backtest fold of `s`.
pub fn fold(s: &Scenario, config: &FitConfig) -> FoldData {
    let features = DerivedFeatures::from_networks(&s.networks).expect("features");
    let graph = GraphInput::from_networks(&s.districts, &s.networks).expect("graph");
    FoldData::new(&s.panel, &features, graph, &config.design, 30, 31).expect("fold")
}
