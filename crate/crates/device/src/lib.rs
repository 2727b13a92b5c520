//! Device target for KSL kernels.
//!
//! Configures the host compiler through its parameter and hook interfaces to
//! produce self-contained kernel LIR for the SIMT VM.

mod intrinsics;
mod stdlib;
mod validate;

use std::sync::Arc;

use kforge_compiler::frontend::{MethodId, MethodTable, Type};
use kforge_compiler::hir::{InferError, InferenceParams, Specializer};
use kforge_compiler::lir::{
    infer_address_spaces, lower_hir, rewrite_kernel_abi, run_passes, verify_module, AbiError, AllocationPolicy,
    CodegenError, CodegenParams, ExceptionPolicy, Inst, IrError, LirFunction, LirModule, PassError, PassOptions,
    Space,
};
use kforge_compiler::Span;
use thiserror::Error;

pub use intrinsics::{is_device_intrinsic, is_index_intrinsic, shuffle_words, DeviceHooks, MATH};
pub use stdlib::{device_stdlib, source as stdlib_source};
pub use validate::{validate_device, Violation};

pub const DEFAULT_WARP_SIZE: u32 = 32;

/// The pass pipeline used for kernels.
pub const DEVICE_PIPELINE: [&str; 5] = ["inline", "promote", "fold", "promote", "dce"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceTargetConfig {
    pub inference: InferenceParams,
    pub codegen: CodegenParams,
    pub warp_size: u32,
    /// Pass immutable aggregates by value in Param space through a wrapper.
    pub abi_rewrite: bool,
    pub address_space_inference: bool,
    pub pipeline: Vec<String>,
    pub max_inline_depth: u32,
}

impl Default for DeviceTargetConfig {
    fn default() -> Self {
        DeviceTargetConfig {
            inference: InferenceParams { allow_any: false, ..InferenceParams::default() },
            codegen: CodegenParams {
                exception_policy: ExceptionPolicy::Trap,
                allocation_policy: AllocationPolicy::Forbid,
                emit_bounds_checks: true,
                array_base_space: Space::Global,
            },
            warp_size: DEFAULT_WARP_SIZE,
            abi_rewrite: true,
            address_space_inference: true,
            pipeline: DEVICE_PIPELINE.iter().map(|s| s.to_string()).collect(),
            max_inline_depth: 64,
        }
    }
}

impl DeviceTargetConfig {
    pub fn with_warp_size(mut self, w: u32) -> Self {
        self.warp_size = w;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompileStats {
    pub inferences: u64,
    pub lowerings: u64,
    pub functions_lowered: usize,
    pub insts_before: usize,
    pub insts_after: usize,
}

/// A validated kernel ready to launch.
#[derive(Debug, Clone)]
pub struct CompiledKernel {
    pub name: String,
    pub arg_types: Vec<Type>,
    /// Module whose first function is the launch entry.
    pub module: LirModule,
    /// Methods the kernel depends on, with their ages at compile time.
    pub callees: Vec<(MethodId, u64)>,
    pub name_deps: Vec<(String, u64)>,
    pub warp_size: u32,
    pub stats: CompileStats,
}

impl CompiledKernel {
    pub fn entry(&self) -> &LirFunction {
        &self.module.functions[0]
    }

    pub fn dump(&self) -> String {
        self.module.dump()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("argument {index} of type {ty} cannot be passed to a kernel")]
    Unrepresentable { index: usize, ty: Type },
    #[error(transparent)]
    Inference(#[from] InferError),
    #[error("{span}: device allocation forbidden")]
    AllocationForbidden { span: Span },
    #[error(transparent)]
    Codegen(CodegenError),
    #[error(transparent)]
    Abi(#[from] AbiError),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("device validation failed:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Violation>),
}

impl From<CodegenError> for DeviceError {
    fn from(e: CodegenError) -> Self {
        match e {
            CodegenError::ForbiddenAlloc { span } => DeviceError::AllocationForbidden { span },
            e => DeviceError::Codegen(e),
        }
    }
}

fn representable(t: &Type) -> bool {
    match t {
        Type::Scalar(_) => true,
        Type::Record(r) => !r.mutable,
        Type::Array(e) => e.is_storable(),
        _ => false,
    }
}

/// Intermediate forms reported by [`compile_kernel_traced`], in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Hir,
    Lir,
    LirOpt,
    DevLir,
}

/// Specialize, lower, rewrite the kernel ABI, optimize, recover state spaces
/// and validate `name` at `args`.
pub fn compile_kernel(
    table: &MethodTable,
    name: &str,
    args: &[Type],
    config: &DeviceTargetConfig,
) -> Result<CompiledKernel, DeviceError> {
    compile_kernel_traced(table, name, args, config, None)
}

/// [`compile_kernel`], handing the text dump of each stage to `trace`.
pub fn compile_kernel_traced(
    table: &MethodTable,
    name: &str,
    args: &[Type],
    config: &DeviceTargetConfig,
    mut trace: Option<&mut dyn FnMut(Stage, String)>,
) -> Result<CompiledKernel, DeviceError> {
    let mut emit = |stage: Stage, dump: &dyn Fn() -> String| {
        if let Some(t) = trace.as_mut() {
            t(stage, dump());
        }
    };
    if let Some((index, ty)) = args.iter().enumerate().find(|(_, t)| !representable(t)) {
        return Err(DeviceError::Unrepresentable { index, ty: ty.clone() });
    }
    let hooks = Arc::new(DeviceHooks { warp_size: config.warp_size });
    let spec = Specializer::new(config.inference.clone(), hooks.clone());
    let h = spec.specialize(table, name, args)?;
    if h.recursive {
        return Err(DeviceError::Unsupported(format!("recursion in {}", h.signature())));
    }
    emit(Stage::Hir, &|| h.dump());
    let mut m = lower_hir(&h, &config.codegen, hooks.as_ref())?;
    emit(Stage::Lir, &|| m.dump());
    let functions_lowered = m.functions.len();
    let insts_before = m.functions.iter().map(|f| f.total_insts()).sum();
    let entry = m.functions[0].name.clone();
    if config.abi_rewrite {
        rewrite_kernel_abi(&mut m, &entry)?;
    } else {
        m.functions[0].attrs.kernel = true;
    }
    let pipeline: Vec<&str> = config.pipeline.iter().map(|s| s.as_str()).collect();
    let mut m = run_passes(m, &pipeline, &PassOptions { max_inline_depth: config.max_inline_depth })?;
    if config.address_space_inference {
        for f in &mut m.functions {
            infer_address_spaces(f);
        }
        verify_module(&m)?;
    }
    emit(Stage::LirOpt, &|| m.dump());
    let leftover = m.functions[0].placed().find_map(|(_, v)| match m.functions[0].inst(v) {
        Some(Inst::Call { callee, .. }) => Some(callee.clone()),
        _ => None,
    });
    if let Some(callee) = leftover {
        return Err(DeviceError::Unsupported(format!("call to `{callee}` could not be inlined")));
    }
    m.functions.truncate(1);
    let violations = validate_device(&m);
    if !violations.is_empty() {
        return Err(DeviceError::Validation(violations));
    }
    emit(Stage::DevLir, &|| m.dump());
    let insts_after = m.functions[0].total_insts();
    Ok(CompiledKernel {
        name: name.to_string(),
        arg_types: args.to_vec(),
        module: m,
        callees: h.callees.clone(),
        name_deps: h.name_deps.clone(),
        warp_size: config.warp_size,
        stats: CompileStats {
            inferences: spec.stats().inferences(),
            lowerings: spec.stats().lowerings(),
            functions_lowered,
            insts_before,
            insts_after,
        },
    })
}
