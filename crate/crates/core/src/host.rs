//! The host pipeline: inference without device hooks, default lowering and the
//! default pass pipeline.

use std::sync::Arc;

use kforge_compiler::frontend::{MethodTable, Type};
use kforge_compiler::hir::{specialize, HirFunction, InferError, InferenceParams, NoHooks};
use kforge_compiler::lir::{lower_hir, passes, run_passes, CodegenError, CodegenParams, LirModule, NoCodegenHooks, PassError, PassOptions};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HostError {
    #[error(transparent)]
    Inference(#[from] InferError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Pass(#[from] PassError),
}

/// Every stage of one host compilation.
#[derive(Debug, Clone)]
pub struct HostCompiled {
    pub hir: Arc<HirFunction>,
    pub lir: LirModule,
    pub optimized: LirModule,
}

pub fn compile_host(table: &MethodTable, name: &str, args: &[Type]) -> Result<HostCompiled, HostError> {
    let hir = specialize(table, name, args, &InferenceParams::default(), Arc::new(NoHooks))?;
    let lir = lower_hir(&hir, &CodegenParams::default(), &NoCodegenHooks)?;
    let optimized = run_passes(lir.clone(), passes::DEFAULT_PIPELINE, &PassOptions::default())?;
    Ok(HostCompiled { hir, lir, optimized })
}
