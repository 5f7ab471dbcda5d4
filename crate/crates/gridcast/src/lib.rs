//! Trace-driven execution-time forecasting and probabilistic deadline
//! scheduling for cluster workloads.
//!
//! The pipeline: accounting traces are parsed into job records ([`trace`]),
//! partitioned into statistically coherent classes by submitter meta-data
//! ([`classing`]), and each class is replayed through an ensemble of
//! one-step-ahead forecasters ([`forecast`], [`ensemble`]) with online
//! anomaly and mode-change detection ([`anomaly`]). A discrete-event
//! scheduler simulation ([`sim`]) admits jobs against deadlines using the
//! forecast plus an empirical safety margin. [`synth`] generates synthetic
//! workloads for validation and [`pipeline`] / [`report`] orchestrate runs
//! and emit plot-ready artifacts.

pub mod anomaly;
pub mod classing;
pub mod ensemble;
pub mod forecast;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod synth;
pub mod trace;
