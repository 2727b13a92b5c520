//! A deterministic SIMT virtual GPU for kernel LIR.
//!
//! Blocks run one after another in row-major order. Inside a block, warps
//! take turns executing one instruction each; lanes of a warp share a program
//! counter and diverge under an active mask with a reconvergence stack.

mod cost;
mod exec;
mod kernel;
pub mod memory;
mod value;

use kforge_compiler::lir::Space;
use serde::Serialize;
use thiserror::Error;

pub use cost::CostTable;
pub use kernel::{Kernel, ParamKind, ParamSlot};
pub use memory::GlobalMemory;
pub use value::{decode, encode, Val};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("invalid launch: {0}")]
    InvalidLaunch(String),
    #[error("param memory holds {got} bytes, kernel expects {want}")]
    ParamSize { want: u64, got: u64 },
    #[error("unsupported kernel: {0}")]
    Unsupported(String),
    #[error("out of device memory: requested {requested} bytes, capacity {capacity}")]
    OutOfMemory { requested: u64, capacity: u64 },
    #[error("region already freed: {addr:#x}")]
    DoubleFree { addr: u64 },
    #[error("no region starts at {addr:#x}")]
    InvalidFree { addr: u64 },
    #[error("host access of {len} bytes at {addr:#x} is outside every live region")]
    HostAccess { addr: u64, len: u64 },
    #[error("memory fault in block {block} thread {thread}: {len}-byte {} at {addr:#x} through a {space} pointer", if *.write { "store" } else { "load" })]
    Fault { block: u64, thread: u64, space: Space, addr: u64, len: u64, write: bool },
    #[error("barrier divergence in block {block}: {detail}")]
    BarrierDivergence { block: u64, detail: String },
    #[error("shuffle delta {delta} out of range for warp size {warp_size}")]
    ShuffleDelta { delta: i64, warp_size: u32 },
    #[error("reconvergence stack exceeded {0} entries")]
    StackOverflow(usize),
    #[error("executed unreachable code in block {block} thread {thread}")]
    Unreachable { block: u64, thread: u64 },
    #[error("step limit of {0} warp instructions exceeded")]
    StepLimit(u64),
    #[error("malformed kernel: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmConfig {
    pub warp_size: u32,
    pub costs: CostTable,
    pub max_shared_bytes: u64,
    pub max_block_threads: u64,
    pub global_capacity: u64,
    pub max_stack_depth: usize,
    pub step_limit: u64,
    /// Record every memory access in `DeviceState::access_log`.
    pub log_accesses: bool,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            warp_size: 32,
            costs: CostTable::default(),
            max_shared_bytes: 48 * 1024,
            max_block_threads: 1024,
            global_capacity: 1 << 30,
            max_stack_depth: 1024,
            step_limit: 200_000_000,
            log_accesses: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LaunchConfig {
    pub grid: [u32; 3],
    pub block: [u32; 3],
    /// Shared bytes per block on top of the kernel's static allocations.
    pub shared_bytes: u64,
}

impl LaunchConfig {
    pub fn linear(grid: u32, block: u32) -> Self {
        LaunchConfig { grid: [grid, 1, 1], block: [block, 1, 1], shared_bytes: 0 }
    }

    pub fn block_threads(&self) -> u64 {
        self.block.iter().map(|d| *d as u64).product()
    }

    pub fn blocks(&self) -> u64 {
        self.grid.iter().map(|d| *d as u64).product()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SpaceCounts {
    pub generic: u64,
    pub global: u64,
    pub shared: u64,
    pub param: u64,
    pub local: u64,
}

impl SpaceCounts {
    pub fn get(&self, s: Space) -> u64 {
        match s {
            Space::Generic => self.generic,
            Space::Global => self.global,
            Space::Shared => self.shared,
            Space::Param => self.param,
            Space::Local => self.local,
        }
    }

    pub(crate) fn bump(&mut self, s: Space) {
        match s {
            Space::Generic => self.generic += 1,
            Space::Global => self.global += 1,
            Space::Shared => self.shared += 1,
            Space::Param => self.param += 1,
            Space::Local => self.local += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.generic + self.global + self.shared + self.param + self.local
    }
}

/// Event counters. Memory events are per lane and keyed by the space tag of
/// the instruction; shuffle words and barriers are per warp.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Events {
    pub loads: SpaceCounts,
    pub stores: SpaceCounts,
    pub shuffles: u64,
    pub barriers: u64,
    pub traps: u64,
    pub lane_instructions: u64,
    pub warp_instructions: u64,
}

impl Events {
    pub fn memory_ops(&self) -> u64 {
        self.loads.total() + self.stores.total()
    }

    pub fn generic_ops(&self) -> u64 {
        self.loads.generic + self.stores.generic
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrapReport {
    /// Linear block index, zero-based.
    pub block: u64,
    /// Linear thread index within the block, zero-based.
    pub thread: u64,
    pub code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionReport {
    pub cycles: u64,
    pub events: Events,
    pub trap: Option<TrapReport>,
    pub launch: LaunchConfig,
    pub warp_size: u32,
}

impl ExecutionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Access {
    pub block: u64,
    pub thread: u64,
    pub write: bool,
    pub tag: String,
    pub space: String,
    pub addr: u64,
    pub len: u64,
}

/// Memories and configuration of one virtual device.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub config: VmConfig,
    pub global: GlobalMemory,
    pub access_log: Vec<Access>,
}

impl DeviceState {
    pub fn new(config: VmConfig) -> Self {
        let global = GlobalMemory::new(config.global_capacity);
        DeviceState { config, global, access_log: Vec::new() }
    }

    /// Run `kernel` over the launch grid. Global memory changes persist.
    pub fn launch(&mut self, kernel: &Kernel, launch: &LaunchConfig, params: &[u8]) -> Result<ExecutionReport, VmError> {
        exec::launch(self, kernel, launch, params)
    }
}

impl Default for DeviceState {
    fn default() -> Self {
        DeviceState::new(VmConfig::default())
    }
}
