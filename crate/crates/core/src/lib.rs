//! Simulation, selection, fingerprinting and countermeasure evaluation for
//! GPU performance-counter side channels.
//!
//! Traces are 1 Hz multi-metric series ([`traces::TraceSet`]). The usual flow
//! is [`simulator`] → [`selection`] → [`features`] → [`models`], with
//! [`stepcount`] for participant counting and [`defense`] for noise
//! injection and profiler-access detection.

pub mod catalog;
pub mod defense;
pub mod features;
pub mod fixtures;
pub mod models;
pub mod pipeline;
pub mod selection;
pub mod simulator;
pub mod stats;
pub mod stepcount;
pub mod traces;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] catalog::CatalogError),
    #[error(transparent)]
    Trace(#[from] traces::TraceError),
    #[error(transparent)]
    Simulation(#[from] simulator::SimError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Selection(#[from] selection::SelectionError),
    #[error(transparent)]
    Feature(#[from] features::FeatureError),
    #[error(transparent)]
    Model(#[from] models::ModelError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Step(#[from] stepcount::StepError),
    #[error(transparent)]
    Defense(#[from] defense::DefenseError),
}
