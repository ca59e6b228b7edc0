//! Grey-box process-control mining.
//!
//! Sensor traces of PI-controlled recipe steps follow a damped, linearly
//! driven harmonic oscillator. This crate fits the oscillator's seven
//! parameters (the *shape signature*) lot by lot under an empirical-Bayes
//! prior, scores wafers against a frozen normal model and attributes anomaly
//! scores to individual parameters through the score gradient.
//!
//! Modules:
//! - [`oscillator`]: the parametric model and its derivatives
//! - [`control_map`]: PI controller <-> ODE <-> signature algebra
//! - [`simulate`]: RK4 closed-loop simulator and synthetic datasets
//! - [`fit`]: lot-wise MAP fitting by block coordinate descent
//! - [`anomaly`]: normal model, anomaly score, gradients and detectors
//! - [`pipeline`]: CSV ingestion, batch runs, tables and heatmaps

pub mod anomaly;
pub mod control_map;
pub mod error;
pub mod fit;
pub mod oscillator;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
pub use oscillator::{Param, ShapeSignature, TraceSeries, TripleKey};
