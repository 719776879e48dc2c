//! Detection of production-phase start and end events in furnace sensor
//! streams.
//!
//! The pipeline ingests timestamped sensor CSVs, resamples them onto a
//! uniform grid, derives triangular regression labels from known charge
//! timestamps, trains a small 1D convolutional regressor on sliding
//! windows, and recovers event timestamps from the prediction curve via
//! thresholded local extrema. A synthetic generator produces furnace-like
//! streams with exact ground truth so the whole loop is testable without
//! plant data.

pub mod eval;
pub mod ingest;
pub mod label;
pub mod model;
pub mod nn;
pub mod peaks;
pub mod pipeline;
pub mod synth;
pub mod window;
