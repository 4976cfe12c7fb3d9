//! Accrual failure detection for clustered systems.
//!
//! Each detector turns heartbeat inter-arrival times into a continuous
//! suspicion level, shares threshold crossings with a few random peers of its
//! cluster, and answers suspicion queries from other clusters only on
//! request. A deterministic simulator drives detectors through crashes,
//! overload, link failures and partitions, and [`metrics`] scores the outcome.
//!
//! ```
//! use clusterfd::{scenario, simnet, metrics};
//!
//! let s = scenario::bundled("crash").unwrap();
//! let trace = simnet::run(&s);
//! let report = metrics::QosReport::compute(&s, &trace);
//! assert!(report.completeness.holds);
//! ```

pub mod accrual;
pub mod cli;
pub mod cluster;
pub mod detector;
pub mod gossip;
pub mod metrics;
pub mod model;
pub mod predictors;
pub mod report;
pub mod scenario;
pub mod simnet;

pub use model::{ClusterId, DetectorId, NodeId, ProcessId, SimTime};
