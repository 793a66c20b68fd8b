//! Deterministic multi-node simulation of Space Race style workloads over
//! `got-core`, with latency metrics and a version census.

pub mod cost;
pub mod metrics;
pub mod net;
pub mod scenario;
pub mod schema;

pub use cost::CostModel;
pub use metrics::{CensusSample, LatencySample, MetricsLog, Operation, Role};
pub use net::{SimNet, SimTransport};
pub use scenario::{
    run_scenario, run_version_census, ConflictMode, Scenario, SimError, Simulation, Workload, SERVER,
};
