//! The off-chain edge of the platform: network configuration, the scenario
//! runner with its requirements report, the explorer / write-gateway HTTP
//! API, and the live single-validator node behind `trellis node run`.

pub mod config;
pub mod http;
pub mod live;
pub mod report;
pub mod scenario;
pub mod service;

pub use config::NetworkConfig;
pub use report::{run_scenario, Report, ScenarioArtifacts};
pub use scenario::ScenarioFile;
pub use service::{GatewayOutcome, GatewayService};
