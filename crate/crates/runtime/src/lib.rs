//! Host runtime: device contexts, device arrays and cached kernel launches.

mod cache;
mod marshal;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use kforge_compiler::frontend::{MethodTable, TableError, Type, Value};
use kforge_compiler::lir::eval::Imm;
use kforge_device::{compile_kernel, DeviceError, DeviceTargetConfig};
use kforge_vm::{encode, DeviceState, ExecutionReport, Kernel, LaunchConfig, ParamKind, TrapReport, Val, VmConfig, VmError};
use serde::Serialize;
use thiserror::Error;

pub use cache::{mix, CachedKernel, Dependencies, KernelCache, KernelCacheKey};
pub use marshal::{decode_value, encode_value, is_element_type, scalar_type, HostArray};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ContextId(pub u32);

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ctx{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("no live context {0}")]
    NoContext(ContextId),
    #[error("handle belongs to {handle}, used in {used}")]
    WrongContext { handle: ContextId, used: ContextId },
    #[error("use of freed region {region}")]
    UseAfterFree { region: u64 },
    #[error("region already freed")]
    DoubleFree { region: u64 },
    #[error("unknown region {region}")]
    UnknownRegion { region: u64 },
    #[error("value {value} does not have type {ty}")]
    ValueType { value: String, ty: Type },
    #[error("{0} cannot be stored in a device array")]
    ElementType(Type),
    #[error("array file: {0}")]
    ArrayFile(String),
    #[error("argument {index}: {message}")]
    Argument { index: usize, message: String },
    #[error("no kernel method: {0}")]
    Dispatch(#[from] TableError),
    #[error(transparent)]
    Compile(#[from] DeviceError),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("kernel trapped in block {} thread {} with code {}{}", .trap.block, .trap.thread, .trap.code, code_name(.trap.code))]
    Trap { trap: TrapReport, report: Box<ExecutionReport> },
}

fn code_name(code: i32) -> &'static str {
    match code {
        -1 => " (bounds error)",
        -2 => " (division by zero)",
        _ => "",
    }
}

/// Counters over the lifetime of a runtime, across all contexts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub compiles: u64,
    pub inferences: u64,
    pub lowerings: u64,
    pub launches: u64,
    pub cache_hits: u64,
    /// Host arguments converted to kernel parameters.
    pub arg_conversions: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RuntimeConfig {
    pub vm: VmConfig,
    pub target: DeviceTargetConfig,
    /// Compile on every launch and never consult or fill the cache.
    pub bypass_cache: bool,
}

/// Handle to an array in some context's global memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceArray {
    ctx: ContextId,
    region: u64,
    elem: Type,
    len: u64,
}

impl DeviceArray {
    pub fn context(&self) -> ContextId {
        self.ctx
    }

    pub fn region(&self) -> u64 {
        self.region
    }

    pub fn elem(&self) -> &Type {
        &self.elem
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ty(&self) -> Type {
        Type::array(self.elem.clone())
    }
}

/// One kernel argument: a device array or a scalar/immutable record value.
#[derive(Debug, Clone)]
pub enum KernelArg {
    Array(DeviceArray),
    Value(Value),
}

impl From<&DeviceArray> for KernelArg {
    fn from(a: &DeviceArray) -> Self {
        KernelArg::Array(a.clone())
    }
}

impl From<Value> for KernelArg {
    fn from(v: Value) -> Self {
        KernelArg::Value(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Region {
    addr: u64,
    bytes: u64,
    live: bool,
}

/// A device: its memory, the regions allocated in it and its kernel cache.
#[derive(Debug)]
pub struct DeviceContext {
    id: ContextId,
    state: DeviceState,
    cache: KernelCache,
    regions: BTreeMap<u64, Region>,
    next_region: u64,
}

impl DeviceContext {
    pub fn id(&self) -> ContextId {
        self.id
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn cache(&self) -> &KernelCache {
        &self.cache
    }

    pub fn live_regions(&self) -> usize {
        self.regions.values().filter(|r| r.live).count()
    }

    fn region(&self, a: &DeviceArray) -> Result<&Region, RuntimeError> {
        if a.ctx != self.id {
            return Err(RuntimeError::WrongContext { handle: a.ctx, used: self.id });
        }
        match self.regions.get(&a.region) {
            Some(r) if r.live => Ok(r),
            Some(_) => Err(RuntimeError::UseAfterFree { region: a.region }),
            None => Err(RuntimeError::UnknownRegion { region: a.region }),
        }
    }

    fn alloc(&mut self, elem: Type, len: u64) -> Result<DeviceArray, RuntimeError> {
        let bytes = len * elem.size();
        let addr = self.state.global.alloc(bytes)?;
        let region = self.next_region;
        self.next_region += 1;
        self.regions.insert(region, Region { addr, bytes, live: true });
        Ok(DeviceArray { ctx: self.id, region, elem, len })
    }
}

/// Entry point for host programs: owns the contexts and the launch counters.
#[derive(Debug)]
pub struct Runtime {
    config: RuntimeConfig,
    contexts: BTreeMap<ContextId, DeviceContext>,
    next_context: u32,
    current: ContextId,
    counters: Counters,
}

impl Default for Runtime {
    fn default() -> Self {
        Runtime::new(RuntimeConfig::default())
    }
}

impl Runtime {
    /// A runtime with one default context, which is current.
    pub fn new(config: RuntimeConfig) -> Self {
        let mut rt = Runtime { config, contexts: BTreeMap::new(), next_context: 0, current: ContextId(0), counters: Counters::default() };
        rt.current = rt.create_context();
        rt
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    /// Replace the device target configuration. Cached kernels were built for
    /// the previous one and are dropped.
    pub fn set_target(&mut self, target: DeviceTargetConfig) {
        self.config.target = target;
        for c in self.contexts.values_mut() {
            c.cache.clear();
        }
    }

    pub fn set_bypass_cache(&mut self, bypass: bool) {
        self.config.bypass_cache = bypass;
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn create_context(&mut self) -> ContextId {
        let id = ContextId(self.next_context);
        self.next_context += 1;
        let state = DeviceState::new(self.config.vm.clone());
        self.contexts.insert(id, DeviceContext { id, state, cache: KernelCache::default(), regions: BTreeMap::new(), next_region: 1 });
        id
    }

    /// Drop a context with all its regions and cached kernels.
    pub fn destroy_context(&mut self, id: ContextId) -> Result<(), RuntimeError> {
        self.contexts.remove(&id).map(|_| ()).ok_or(RuntimeError::NoContext(id))
    }

    pub fn current(&self) -> ContextId {
        self.current
    }

    pub fn set_current(&mut self, id: ContextId) -> Result<(), RuntimeError> {
        self.context(id)?;
        self.current = id;
        Ok(())
    }

    pub fn context(&self, id: ContextId) -> Result<&DeviceContext, RuntimeError> {
        self.contexts.get(&id).ok_or(RuntimeError::NoContext(id))
    }

    fn context_mut(&mut self, id: ContextId) -> Result<&mut DeviceContext, RuntimeError> {
        self.contexts.get_mut(&id).ok_or(RuntimeError::NoContext(id))
    }

    pub fn upload(&mut self, ctx: ContextId, host: &HostArray) -> Result<DeviceArray, RuntimeError> {
        let c = self.context_mut(ctx)?;
        let a = c.alloc(host.elem().clone(), host.len())?;
        let addr = c.regions[&a.region].addr;
        if !host.is_empty() {
            c.state.global.write(addr, host.bytes())?;
        }
        Ok(a)
    }

    pub fn download(&self, ctx: ContextId, a: &DeviceArray) -> Result<HostArray, RuntimeError> {
        let c = self.context(ctx)?;
        let r = c.region(a)?;
        let bytes = if r.bytes == 0 { Vec::new() } else { c.state.global.read(r.addr, r.bytes)?.to_vec() };
        HostArray::from_bytes(a.elem.clone(), bytes)
    }

    /// A zero-filled array with the shape and element type of `a`.
    pub fn similar(&mut self, ctx: ContextId, a: &DeviceArray) -> Result<DeviceArray, RuntimeError> {
        self.alloc(ctx, a.elem.clone(), a.len)
    }

    /// A zero-filled array of `len` elements.
    pub fn alloc(&mut self, ctx: ContextId, elem: Type, len: u64) -> Result<DeviceArray, RuntimeError> {
        if !is_element_type(&elem) {
            return Err(RuntimeError::ElementType(elem));
        }
        self.context_mut(ctx)?.alloc(elem, len)
    }

    pub fn free(&mut self, ctx: ContextId, a: &DeviceArray) -> Result<(), RuntimeError> {
        let c = self.context_mut(ctx)?;
        if a.ctx != ctx {
            return Err(RuntimeError::WrongContext { handle: a.ctx, used: ctx });
        }
        let r = c.regions.get_mut(&a.region).ok_or(RuntimeError::UnknownRegion { region: a.region })?;
        if !r.live {
            return Err(RuntimeError::DoubleFree { region: a.region });
        }
        r.live = false;
        let addr = r.addr;
        c.state.global.free(addr)?;
        Ok(())
    }

    /// Fetch the kernel for `name` at these argument types, compiling it on a
    /// cache miss.
    pub fn compile(&mut self, ctx: ContextId, table: &MethodTable, name: &str, arg_types: &[Type]) -> Result<Arc<CachedKernel>, RuntimeError> {
        let method = table.dispatch(name, arg_types)?;
        let bypass = self.config.bypass_cache;
        let c = self.contexts.get(&ctx).ok_or(RuntimeError::NoContext(ctx))?;
        if !bypass {
            if let Some(hit) = c.cache.lookup(table, method.id, arg_types) {
                self.counters.cache_hits += 1;
                return Ok(Arc::new(hit.clone()));
            }
        }
        let compiled = compile_kernel(table, name, arg_types, &self.config.target)?;
        self.counters.compiles += 1;
        self.counters.inferences += compiled.stats.inferences;
        self.counters.lowerings += compiled.stats.lowerings;
        let kernel = Kernel::new(compiled.entry())?;
        let deps = Dependencies::of(&compiled);
        let key = KernelCacheKey { method: method.id, arg_types: arg_types.to_vec(), fingerprint: deps.fingerprint(table), context: ctx };
        let entry = CachedKernel { key, deps, compiled: Arc::new(compiled), kernel: Arc::new(kernel) };
        if !bypass {
            self.context_mut(ctx)?.cache.insert(entry.clone());
        }
        Ok(Arc::new(entry))
    }

    /// Convert arguments, find or compile the kernel, marshal parameters and
    /// run it on the context's device.
    pub fn cuda_launch(
        &mut self,
        ctx: ContextId,
        table: &MethodTable,
        name: &str,
        args: &[KernelArg],
        launch: &LaunchConfig,
    ) -> Result<ExecutionReport, RuntimeError> {
        self.context(ctx)?;
        let types: Vec<Type> = args
            .iter()
            .map(|a| match a {
                KernelArg::Array(d) => d.ty(),
                KernelArg::Value(v) => v.ty(),
            })
            .collect();
        let k = self.compile(ctx, table, name, &types)?;
        self.launch_compiled(ctx, &k.kernel, args, launch)
    }

    /// Launch an already compiled kernel.
    pub fn launch_compiled(&mut self, ctx: ContextId, kernel: &Kernel, args: &[KernelArg], launch: &LaunchConfig) -> Result<ExecutionReport, RuntimeError> {
        self.counters.launches += 1;
        self.counters.arg_conversions += args.len() as u64;
        let slots = kernel.params();
        if slots.len() != args.len() {
            return Err(RuntimeError::Argument {
                index: args.len().min(slots.len()),
                message: format!("kernel takes {} parameters, {} given", slots.len(), args.len()),
            });
        }
        let c = self.context_mut(ctx)?;
        let mut params = vec![0u8; kernel.param_size() as usize];
        let mut staged = Vec::new();
        let result = (|| {
            for (index, (slot, arg)) in slots.iter().zip(args).enumerate() {
                let mut image = vec![0u8; slot.ty.size() as usize];
                match arg {
                    KernelArg::Array(a) => {
                        let r = c.region(a)?;
                        let desc = Val::Agg(vec![Val::Ptr(r.addr), Val::Scalar(Imm::I64(a.len as i64))].into());
                        if slot.ty.size() != 16 {
                            return Err(RuntimeError::Argument { index, message: format!("array passed for a {} parameter", slot.ty) });
                        }
                        encode(&slot.ty, &desc, &mut image);
                    }
                    KernelArg::Value(v) => {
                        let mut bytes = Vec::new();
                        encode_value(v, &v.ty(), &mut bytes)?;
                        if bytes.len() != image.len() {
                            return Err(RuntimeError::Argument { index, message: format!("{v} does not fit a {} parameter", slot.ty) });
                        }
                        image = bytes;
                    }
                }
                let dst = &mut params[slot.offset as usize..(slot.offset + slot.size) as usize];
                match slot.kind {
                    ParamKind::Scalar | ParamKind::ByValue => dst.copy_from_slice(&image),
                    ParamKind::ByReference => {
                        let addr = c.state.global.alloc(image.len() as u64)?;
                        staged.push(addr);
                        c.state.global.write(addr, &image)?;
                        dst.copy_from_slice(&addr.to_le_bytes());
                    }
                }
            }
            Ok(c.state.launch(kernel, launch, &params)?)
        })();
        for addr in staged {
            c.state.global.free(addr)?;
        }
        let report = result?;
        match &report.trap {
            Some(t) => Err(RuntimeError::Trap { trap: t.clone(), report: Box::new(report) }),
            None => Ok(report),
        }
    }
}
