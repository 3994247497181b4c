//! Shipped scenario files.

use crate::engine::config::ScenarioConfig;
use crate::experiments::Topologies;

pub const REFERENCE: &str = include_str!("../scenarios/reference.json");
pub const WORMHOLE: &str = include_str!("../scenarios/wormhole.json");
pub const REFERENCE_EXTRA_ROUTERS: &str = include_str!("../scenarios/mitigation1.json");
pub const WORMHOLE_EXTRA_ROUTERS: &str = include_str!("../scenarios/wormhole_mitigation1.json");

fn load(text: &str) -> ScenarioConfig {
    ScenarioConfig::from_json(text).expect("shipped scenario is valid")
}

pub fn reference() -> ScenarioConfig {
    load(REFERENCE)
}

pub fn wormhole() -> ScenarioConfig {
    load(WORMHOLE)
}

pub fn topologies() -> Topologies {
    Topologies { reference: reference(), wormhole: wormhole() }
}

/// The two topologies with three extra routers each.
pub fn extra_routers() -> Topologies {
    Topologies { reference: load(REFERENCE_EXTRA_ROUTERS), wormhole: load(WORMHOLE_EXTRA_ROUTERS) }
}
