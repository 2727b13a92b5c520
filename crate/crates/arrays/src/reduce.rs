use kforge_compiler::frontend::{MethodTable, Value};
use kforge_runtime::{ContextId, DeviceArray, KernelArg, Runtime};
use kforge_vm::{ExecutionReport, LaunchConfig};

use crate::broadcast::define_once;
use crate::{apply, name_word, ArrayError};

/// Threads per block of the reduction kernel.
pub const REDUCE_BLOCK: u32 = 256;

/// A reduction of one array to a single value.
#[derive(Debug, Clone)]
pub struct ReducePlan {
    pub kernel: String,
    pub op: String,
    pub neutral: Value,
    pub input: DeviceArray,
    pub warp_size: u32,
}

#[derive(Debug, Clone)]
pub struct ReduceRun {
    pub value: Value,
    /// One report per kernel launch, first pass first.
    pub reports: Vec<ExecutionReport>,
}

fn warp_reduce(op: &str, var: &str, ws: u32, indent: &str) -> String {
    let mut s = String::new();
    let mut offset = ws / 2;
    while offset >= 1 {
        let call = apply(op, &[var.to_string(), format!("shfl_down({var}, {offset})")]);
        s.push_str(&format!("{indent}{var} = {call}\n"));
        offset /= 2;
    }
    s
}

/// KSL source of the block-level reduction kernel for `op` at warp size `ws`.
///
/// Each block folds up to 256 elements: a shuffle reduction per warp, warp
/// results staged in shared memory, then a second shuffle reduction in the
/// first warp. Thread 1 writes the block's partial result.
pub fn reduce_source(kernel: &str, op: &str, ws: u32) -> String {
    let nwarps = REDUCE_BLOCK / ws;
    let fold = apply(op, &["w".into(), "shared[j]".into()]);
    format!(
        "function {kernel}(input, partials, neutral)
  tid = threadIdx().x
  i = (blockIdx().x-1) * blockDim().x + tid
  v = neutral
  if i <= length(input)
    v = input[i]
  end
{}  lane = (tid - 1) % {ws} + 1
  wid = (tid - 1) / {ws} + 1
  shared = shared_like(neutral, {nwarps})
  if lane == 1
    shared[wid] = v
  end
  sync_threads()
  if wid == 1
    w = neutral
    j = tid
    while j <= {nwarps}
      w = {fold}
      j = j + {ws}
    end
{}    if tid == 1
      partials[blockIdx().x] = w
    end
  end
end
",
        warp_reduce(op, "v", ws, "  "),
        warp_reduce(op, "w", ws, "    "),
    )
}

impl ReducePlan {
    pub fn new(rt: &Runtime, table: &mut MethodTable, op: &str, neutral: Value, input: &DeviceArray) -> Result<ReducePlan, ArrayError> {
        if neutral.ty() != *input.elem() {
            return Err(ArrayError::NeutralType { neutral: neutral.ty(), elem: input.elem().clone() });
        }
        let ws = rt.config().target.warp_size;
        if !ws.is_power_of_two() || REDUCE_BLOCK % ws != 0 || ws != rt.config().vm.warp_size {
            return Err(ArrayError::WarpSize(ws));
        }
        let word = name_word(op).ok_or_else(|| ArrayError::BadName { name: op.to_string() })?;
        let kernel = format!("__reduce_{word}_w{ws}");
        define_once(table, &kernel, &reduce_source(&kernel, op, ws))?;
        Ok(ReducePlan { kernel, op: op.to_string(), neutral, input: input.clone(), warp_size: ws })
    }

    /// Launch passes until a single value remains. Empty input yields the
    /// neutral element without launching.
    pub fn run(&self, rt: &mut Runtime, ctx: ContextId, table: &MethodTable) -> Result<ReduceRun, ArrayError> {
        let mut reports = Vec::new();
        if self.input.is_empty() {
            return Ok(ReduceRun { value: self.neutral.clone(), reports });
        }
        let mut current = self.input.clone();
        let mut owned = false;
        loop {
            let blocks = current.len().div_ceil(REDUCE_BLOCK as u64);
            let partials = rt.alloc(ctx, current.elem().clone(), blocks)?;
            let args: Vec<KernelArg> = vec![(&current).into(), (&partials).into(), self.neutral.clone().into()];
            let launched = rt.cuda_launch(ctx, table, &self.kernel, &args, &LaunchConfig::linear(blocks as u32, REDUCE_BLOCK));
            if owned {
                rt.free(ctx, &current)?;
            }
            reports.push(launched?);
            current = partials;
            owned = true;
            if blocks == 1 {
                break;
            }
        }
        let host = rt.download(ctx, &current)?;
        rt.free(ctx, &current)?;
        let value = host.get(0).expect("one partial");
        Ok(ReduceRun { value, reports })
    }
}

/// Fold `input` with the binary method `op` starting from `neutral`.
pub fn reduce(rt: &mut Runtime, ctx: ContextId, table: &mut MethodTable, op: &str, neutral: Value, input: &DeviceArray) -> Result<Value, ArrayError> {
    Ok(reduce_profiled(rt, ctx, table, op, neutral, input)?.value)
}

pub fn reduce_profiled(
    rt: &mut Runtime,
    ctx: ContextId,
    table: &mut MethodTable,
    op: &str,
    neutral: Value,
    input: &DeviceArray,
) -> Result<ReduceRun, ArrayError> {
    let plan = ReducePlan::new(rt, table, op, neutral, input)?;
    plan.run(rt, ctx, table)
}
