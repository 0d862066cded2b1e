//! Core library for a dataflow-oriented reinforcement-learning training
//! harness.
//!
//! The pieces fit together like this: rollout services pull [`model::RolloutTask`]s
//! from the [`dataflow::DataflowLayer`], push finished [`model::RolloutGroup`]s
//! back through it, and refresh their weights from a [`weights::WeightStore`];
//! trainers drain [`model::TrainingBatch`]es out of the same layer and publish
//! new weight versions into the store. Data-selection behavior (which prompts
//! to roll out, which groups to keep, how batches mix fresh and replayed
//! trajectories) is pluggable through the [`hooks`] traits. The [`scale`]
//! module holds the three-zone pool-sizing rule and [`report`] renders the
//! balance report the scaler reads.
//!
//! Everything here is deterministic given explicit seeds; the companion
//! `rollflow-sim` crate drives it from a discrete-event clock.

pub mod dataflow;
pub mod hooks;
pub mod model;
pub mod report;
pub mod scale;
pub mod seeds;
pub mod weights;
