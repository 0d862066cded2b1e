//! Deterministic discrete-event simulator for the rollout/training
//! harness: scenario files describe a deployment (policies, trainers,
//! rollout instances, hooks, links, autoscaling), the engine replays it
//! in simulated time, and metrics/balance reports land in an output
//! directory. A threaded live mode drives the same component state
//! machines against a scaled wall clock.

pub mod engine;
pub mod error;
pub mod live;
pub mod maintain;
pub mod metrics;
pub mod raas;
pub mod scenario;
pub mod trainer;
pub mod workload;

pub use engine::{run_scenario, RunSummary};
pub use error::SimError;
pub use live::run_live;
pub use scenario::{load_scenario, parse_scenario, Scenario};
