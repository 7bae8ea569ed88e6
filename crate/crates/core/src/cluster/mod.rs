//! Virtual cluster: topology, in-memory collectives, traffic ledger and the
//! bandwidth-limited step-time model.

mod collectives;
mod ledger;
mod simulator;
mod topology;

pub use collectives::{grad_reduce_scatter, synchronize, SyncResult, GRAD_ELEMENT_BYTES};
pub use ledger::{LedgerSummary, StepTraffic, TrafficLedger};
pub use simulator::{Simulator, StepOutcome};
pub use topology::{step_time, ClusterMode, ClusterTopology, LinkModel, Rank};

#[cfg(test)]
mod tests;
