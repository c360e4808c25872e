//! Slotted simulator for stream-processing applications sharing a cluster.

pub mod error;
pub mod ids;
pub mod queueing;
pub mod topology;
pub mod placement;
pub mod scheduler;
pub mod workload;
pub mod prediction;
pub mod engine;
pub mod analysis;
pub mod config;
