use std::sync::Arc;

use kforge_compiler::frontend::{parse, MethodTable, Type};
use kforge_compiler::hir::{specialize, Lattice};
use kforge_device::DeviceHooks;
use kforge_runtime::{is_element_type, ContextId, DeviceArray, KernelArg, Runtime};
use kforge_vm::{ExecutionReport, LaunchConfig};

use crate::{apply, is_identifier, name_word, ArrayError, BLOCK_SIZE};

/// A fused element-wise kernel ready to launch.
#[derive(Debug, Clone)]
pub struct BroadcastPlan {
    /// Generated kernel method.
    pub kernel: String,
    pub element_fn: String,
    pub inputs: Vec<DeviceArray>,
    pub output: DeviceArray,
    pub launch: LaunchConfig,
}

#[derive(Debug, Clone)]
pub struct BroadcastRun {
    pub output: DeviceArray,
    /// `None` for empty inputs, which launch nothing.
    pub report: Option<ExecutionReport>,
}

fn kernel_source(kernel: &str, f: &str, arity: usize) -> String {
    let params: Vec<String> = (1..=arity).map(|k| format!("x{k}")).collect();
    let elems: Vec<String> = params.iter().map(|p| format!("{p}[i]")).collect();
    format!(
        "function {kernel}(out, {})\n  i = (blockIdx().x-1) * blockDim().x + threadIdx().x\n  if i <= length(out)\n    out[i] = {}\n  end\nend\n",
        params.join(", "),
        apply(f, &elems)
    )
}

pub(crate) fn define_once(table: &mut MethodTable, name: &str, src: &str) -> Result<(), ArrayError> {
    if table.has_methods(name) {
        return Ok(());
    }
    let ast = parse(src).map_err(|d| ArrayError::Generated(format!("{d:?}")))?;
    table.load(&ast)?;
    Ok(())
}

/// Allocate the output and define the kernel applying `f` element-wise.
pub fn plan_broadcast(
    rt: &mut Runtime,
    ctx: ContextId,
    table: &mut MethodTable,
    f: &str,
    inputs: &[DeviceArray],
) -> Result<BroadcastPlan, ArrayError> {
    let first = inputs.first().ok_or(ArrayError::NoInputs)?;
    let n = first.len();
    for (index, a) in inputs.iter().enumerate() {
        if a.len() != n {
            return Err(ArrayError::LengthMismatch { index, expected: n, got: a.len() });
        }
    }
    let word = name_word(f).ok_or_else(|| ArrayError::BadName { name: f.to_string() })?;
    let elems: Vec<Type> = inputs.iter().map(|a| a.elem().clone()).collect();
    let target = &rt.config().target;
    let hooks = Arc::new(DeviceHooks { warp_size: target.warp_size });
    let h = specialize(table, f, &elems, &target.inference, hooks)?;
    let out_ty = match &h.return_type {
        Lattice::Concrete(t) if is_element_type(t) => t.clone(),
        other => return Err(ArrayError::ElementType { name: f.to_string(), ty: format!("{other:?}") }),
    };
    let kernel = format!("__broadcast_{word}_{}", inputs.len());
    define_once(table, &kernel, &kernel_source(&kernel, f, inputs.len()))?;
    let output = rt.alloc(ctx, out_ty, n)?;
    let block = (n as u32).clamp(1, BLOCK_SIZE);
    let grid = (n as u32).div_ceil(block).max(1);
    Ok(BroadcastPlan { kernel, element_fn: f.to_string(), inputs: inputs.to_vec(), output, launch: LaunchConfig::linear(grid, block) })
}

impl BroadcastPlan {
    pub fn run(&self, rt: &mut Runtime, ctx: ContextId, table: &MethodTable) -> Result<BroadcastRun, ArrayError> {
        if self.output.is_empty() {
            return Ok(BroadcastRun { output: self.output.clone(), report: None });
        }
        let mut args: Vec<KernelArg> = vec![(&self.output).into()];
        args.extend(self.inputs.iter().map(KernelArg::from));
        let report = rt.cuda_launch(ctx, table, &self.kernel, &args, &self.launch)?;
        Ok(BroadcastRun { output: self.output.clone(), report: Some(report) })
    }
}

/// Apply the method `f` element-wise over equally long inputs in one kernel.
pub fn broadcast_apply(
    rt: &mut Runtime,
    ctx: ContextId,
    table: &mut MethodTable,
    f: &str,
    inputs: &[DeviceArray],
) -> Result<BroadcastRun, ArrayError> {
    let plan = plan_broadcast(rt, ctx, table, f, inputs)?;
    plan.run(rt, ctx, table)
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fuse a whole element-wise expression over named inputs, e.g.
/// `f(2*x^2 + 6*x^3 - sqrt(x))`, into one element method and one kernel.
pub fn broadcast_expr(
    rt: &mut Runtime,
    ctx: ContextId,
    table: &mut MethodTable,
    expr: &str,
    vars: &[(&str, &DeviceArray)],
) -> Result<BroadcastRun, ArrayError> {
    let names: Vec<&str> = vars.iter().map(|(n, _)| *n).collect();
    if let Some(bad) = names.iter().find(|n| !is_identifier(n)) {
        return Err(ArrayError::BadName { name: bad.to_string() });
    }
    let key = format!("{}|{expr}", names.join(","));
    let f = format!("__fused_{:016x}", fnv(&key));
    define_once(table, &f, &format!("function {f}({})\n  return {expr}\nend\n", names.join(", ")))?;
    let inputs: Vec<DeviceArray> = vars.iter().map(|(_, a)| (*a).clone()).collect();
    broadcast_apply(rt, ctx, table, &f, &inputs)
}
