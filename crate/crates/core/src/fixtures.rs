//! The bundled running-example graph with its allocation and scenario.

use crate::graph::MadfGraph;
use crate::sim::Scenario;
use crate::transition::Allocation;

pub const G1_JSON: &str = include_str!("../../../fixtures/g1.json");
pub const ALLOC_3PE_JSON: &str = include_str!("../../../fixtures/alloc3pe.json");
pub const SCENARIO_TWO_MCR_JSON: &str = include_str!("../../../fixtures/scenario_two_mcr.json");

/// Five-actor example graph with modes `SI1` and `SI2`.
pub fn g1() -> MadfGraph {
    MadfGraph::from_json(G1_JSON).expect("bundled graph parses")
}

/// Three PEs: `{A1, A3, A4, A5}`, `{A2}` and an empty one, under EDF.
pub fn alloc_3pe() -> Allocation {
    serde_json::from_str(ALLOC_3PE_JSON).expect("bundled allocation parses")
}

/// Start in `SI2`, switch to `SI1` at 1 and back to `SI2` at 23.
pub fn scenario_two_mcr() -> Scenario {
    serde_json::from_str(SCENARIO_TWO_MCR_JSON).expect("bundled scenario parses")
}
