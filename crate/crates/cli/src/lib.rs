//! Experiment orchestration: validated configs, the end-to-end pipeline
//! (instances, circuit sampling, network training, chains, diagnostics),
//! and report generation over the produced artifacts.

pub mod config;
pub mod pipeline;
pub mod report;
