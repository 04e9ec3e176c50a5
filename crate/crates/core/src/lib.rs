//! Remote photoplethysmography (rPPG) analysis engine.
//!
//! Turns per-frame skin-region RGB means (plus optional head-pose angles)
//! into a blood-volume-pulse waveform, timed heart beats, heart rate and
//! heart-rate-variability metrics. Also hosts the evaluation harness, the
//! ground-truth annotation session model and a synthetic trace generator
//! used as a test oracle.

pub mod beat_analysis;
pub mod error;
pub mod evaluation;
pub mod ground_truth_cleaning;
pub mod hrv_metrics;
pub mod pipeline;
pub mod pulse_extraction;
pub mod spectral_filtering;
pub mod stats;
pub mod synth;
pub mod trace_io;

pub use error::{Error, ErrorKind, Result};
