//! Error type shared by the simulator crates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Dataflow(#[from] rollflow_core::dataflow::DataflowError),
    #[error(transparent)]
    Weights(#[from] rollflow_core::weights::WeightError),
    #[error(transparent)]
    Scale(#[from] rollflow_core::scale::ScaleError),
    #[error(transparent)]
    Model(#[from] rollflow_core::model::ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulation exceeded max_sim_seconds at t={at:.3} while dispatching {event}")]
    Timeout { at: f64, event: String },
    #[error("worker thread panicked: {0}")]
    WorkerPanic(String),
}
