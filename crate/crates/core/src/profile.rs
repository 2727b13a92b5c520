//! The profile document: one JSON object per run with every kernel launch,
//! its cycles and events, and the runtime's compile counters.

use kforge_runtime::Counters;
use kforge_vm::{Events, ExecutionReport, LaunchConfig, TrapReport};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationProfile {
    /// `launch`, `broadcast` or `reduce`.
    pub op: String,
    pub kernel: String,
    pub launch: LaunchConfig,
    pub cycles: u64,
    pub events: Events,
    pub trap: Option<TrapReport>,
}

impl OperationProfile {
    pub fn new(op: &str, kernel: &str, report: &ExecutionReport) -> Self {
        OperationProfile {
            op: op.to_string(),
            kernel: kernel.to_string(),
            launch: report.launch.clone(),
            cycles: report.cycles,
            events: report.events,
            trap: report.trap.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileDocument {
    pub command: String,
    pub warp_size: u32,
    pub operations: Vec<OperationProfile>,
    pub total_cycles: u64,
    pub counters: Counters,
}

impl ProfileDocument {
    pub fn new(command: &str, warp_size: u32, operations: Vec<OperationProfile>, counters: Counters) -> Self {
        let total_cycles = operations.iter().map(|o| o.cycles).sum();
        ProfileDocument { command: command.to_string(), warp_size, operations, total_cycles, counters }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}
