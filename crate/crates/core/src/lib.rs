//! KernelForge: a compiler for the KSL kernel language, a retargetable device
//! backend, a deterministic SIMT simulator, a host runtime with a kernel cache
//! and array abstractions built on top of them.
//!
//! The member crates are re-exported under short names. This crate adds the
//! host compilation pipeline, a per-thread reference executor, the script host
//! used by `kernelforge run` and the command-line driver.

pub use kforge_arrays as arrays;
pub use kforge_compiler as compiler;
pub use kforge_device as device;
pub use kforge_runtime as runtime;
pub use kforge_vm as vm;

pub mod argspec;
pub mod cli;
pub mod host;
pub mod oracle;
pub mod profile;
pub mod script;

pub use host::{compile_host, HostCompiled, HostError};
pub use oracle::run_per_thread;
pub use profile::{OperationProfile, ProfileDocument};
pub use script::{run_script, ScriptError, ScriptOutcome};
