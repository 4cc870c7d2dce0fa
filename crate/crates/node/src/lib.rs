//! File formats and operator commands around the `poi-core` simulator.

pub mod chain_file;
pub mod commands;
pub mod error;
pub mod genesis_file;
pub mod metrics_io;
pub mod scenario;
