//! Host scripts: top-level KSL statements run by the reference interpreter,
//! with device operations provided as host builtins.
//!
//! | builtin | effect |
//! |---|---|
//! | `upload(a)` | copy a host array to the device, returning a handle |
//! | `download(d)` | copy a device array back |
//! | `free(d)` | release a device array |
//! | `broadcast(f, d...)` | element-wise `f` over device arrays |
//! | `reduce(op, neutral, d)` | fold a device array |
//! | `launch(k, grid, block, args...)` | launch kernel `k` |
//! | `rand(T, n)` | seeded random host array |
//! | `fill(x, n)` | host array of `n` copies of `x` |
//! | `println(xs...)` | append a line to the script output |

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::rc::Rc;

use kforge_arrays::{plan_broadcast, ArrayError, ReducePlan};
use kforge_compiler::frontend::ast::{Item, Stmt};
use kforge_compiler::frontend::interp::{ExternValue, HostBuiltins, Interpreter, RuntimeErrorKind, TableRef};
use kforge_compiler::frontend::{parse, MethodTable, RuntimeError as HostRuntimeError, TypePattern, Value};
use kforge_compiler::{Diagnostic, Span};
use kforge_runtime::{DeviceArray, HostArray, KernelArg, Runtime, RuntimeConfig, RuntimeError};
use kforge_vm::LaunchConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::argspec::{host_array, ArraySource};
use crate::profile::{OperationProfile, ProfileDocument};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScriptError {
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Parse(Vec<Diagnostic>),
    #[error("{0}")]
    Load(String),
    #[error("{span}: {message}")]
    Compile { span: Span, message: String },
    #[error("{span}: {message}")]
    Trap { span: Span, message: String },
    #[error(transparent)]
    Runtime(HostRuntimeError),
}

impl ScriptError {
    /// Process exit code: 1 for errors found while compiling, 2 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScriptError::Parse(_) | ScriptError::Load(_) | ScriptError::Compile { .. } => 1,
            ScriptError::Trap { .. } | ScriptError::Runtime(_) => 2,
        }
    }

    fn from_array(e: ArrayError, span: Span) -> ScriptError {
        let message = e.to_string();
        match e {
            ArrayError::Runtime(RuntimeError::Trap { .. } | RuntimeError::Vm(_)) => ScriptError::Trap { span, message },
            ArrayError::Inference(_) | ArrayError::Table(_) | ArrayError::Generated(_) | ArrayError::ElementType { .. } => {
                ScriptError::Compile { span, message }
            }
            ArrayError::Runtime(e) => ScriptError::from_runtime(e, span),
            _ => ScriptError::Trap { span, message },
        }
    }

    fn from_runtime(e: RuntimeError, span: Span) -> ScriptError {
        let message = e.to_string();
        match e {
            RuntimeError::Compile(_) | RuntimeError::Dispatch(_) => ScriptError::Compile { span, message },
            _ => ScriptError::Trap { span, message },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptOutcome {
    /// Everything the script printed.
    pub output: String,
    pub profile: ProfileDocument,
    pub error: Option<ScriptError>,
}

struct State {
    rt: Runtime,
    table: Rc<RefCell<MethodTable>>,
    arrays: BTreeMap<u64, DeviceArray>,
    next: u64,
    rng: ChaCha8Rng,
    ops: Vec<OperationProfile>,
    output: String,
    failure: Option<ScriptError>,
}

struct Host(Rc<RefCell<State>>);

const DEVICE: &str = "device array";

fn usage(span: Span, message: String) -> HostRuntimeError {
    HostRuntimeError { span, kind: RuntimeErrorKind::Type(message) }
}

impl State {
    fn handle(&mut self, a: DeviceArray) -> Value {
        self.next += 1;
        let ty = a.ty();
        self.arrays.insert(self.next, a);
        Value::Extern(ExternValue { kind: DEVICE, id: self.next, ty })
    }

    fn array(&self, v: &Value, span: Span) -> Result<DeviceArray, HostRuntimeError> {
        match v {
            Value::Extern(e) if e.kind == DEVICE => {
                self.arrays.get(&e.id).cloned().ok_or_else(|| usage(span, format!("device array #{} was freed", e.id)))
            }
            other => Err(usage(span, format!("expected a device array, got {}", other.ty()))),
        }
    }

    /// Record `e` as the script's failure and turn it into an interpreter error.
    fn fail(&mut self, e: ScriptError, span: Span) -> HostRuntimeError {
        let message = e.to_string();
        self.failure = Some(e);
        HostRuntimeError { span, kind: RuntimeErrorKind::Unsupported(message) }
    }

    fn call(&mut self, name: &str, args: &[Value], span: Span) -> Result<Value, HostRuntimeError> {
        let ctx = self.rt.current();
        match (name, args) {
            ("upload", [a]) => {
                let host = HostArray::from_value(a).map_err(|e| usage(span, e.to_string()))?;
                let d = self.rt.upload(ctx, &host).map_err(|e| usage(span, e.to_string()))?;
                Ok(self.handle(d))
            }
            ("download", [d]) => {
                let d = self.array(d, span)?;
                Ok(self.rt.download(ctx, &d).map_err(|e| usage(span, e.to_string()))?.to_value())
            }
            ("free", [Value::Extern(e)]) => {
                let d = self.array(&Value::Extern(e.clone()), span)?;
                self.rt.free(ctx, &d).map_err(|e| usage(span, e.to_string()))?;
                self.arrays.remove(&e.id);
                Ok(Value::Nothing)
            }
            ("broadcast", [Value::Func(f), rest @ ..]) => {
                let inputs = rest.iter().map(|v| self.array(v, span)).collect::<Result<Vec<_>, _>>()?;
                let table = self.table.clone();
                let mut table = table.borrow_mut();
                let run = plan_broadcast(&mut self.rt, ctx, &mut table, f, &inputs)
                    .and_then(|plan| Ok((plan.run(&mut self.rt, ctx, &table)?, plan.kernel)))
                    .map_err(|e| ScriptError::from_array(e, span))
                    .map_err(|e| self.fail(e, span))?;
                let (run, kernel) = run;
                if let Some(r) = &run.report {
                    self.ops.push(OperationProfile::new("broadcast", &kernel, r));
                }
                Ok(self.handle(run.output))
            }
            ("reduce", [Value::Func(op), neutral, d]) => {
                let d = self.array(d, span)?;
                let table = self.table.clone();
                let mut table = table.borrow_mut();
                let run = ReducePlan::new(&self.rt, &mut table, op, neutral.clone(), &d)
                    .and_then(|plan| Ok((plan.run(&mut self.rt, ctx, &table)?, plan.kernel)))
                    .map_err(|e| ScriptError::from_array(e, span))
                    .map_err(|e| self.fail(e, span))?;
                let (run, kernel) = run;
                for r in &run.reports {
                    self.ops.push(OperationProfile::new("reduce", &kernel, r));
                }
                Ok(run.value)
            }
            ("launch", [Value::Func(k), grid, block, rest @ ..]) => {
                let dim = |v: &Value| match v {
                    Value::I64(n) if *n > 0 && *n <= u32::MAX as i64 => Ok(*n as u32),
                    other => Err(usage(span, format!("launch dimensions must be positive Int64, got {other}"))),
                };
                let launch = LaunchConfig::linear(dim(grid)?, dim(block)?);
                let mut kargs = Vec::new();
                for v in rest {
                    kargs.push(match v {
                        Value::Extern(_) => KernelArg::Array(self.array(v, span)?),
                        other => KernelArg::Value(other.clone()),
                    });
                }
                let table = self.table.clone();
                let report = self
                    .rt
                    .cuda_launch(ctx, &table.borrow(), k, &kargs, &launch)
                    .map_err(|e| ScriptError::from_runtime(e, span))
                    .map_err(|e| self.fail(e, span))?;
                self.ops.push(OperationProfile::new("launch", k, &report));
                Ok(Value::Nothing)
            }
            ("rand", [Value::Type(TypePattern::Exact(t)), Value::I64(n)]) if *n >= 0 => {
                let host = host_array(t, &ArraySource::Random(*n as u64), &mut self.rng).map_err(|e| usage(span, e.to_string()))?;
                Ok(host.to_value())
            }
            ("fill", [x, Value::I64(n)]) if *n >= 0 => Ok(Value::array(x.ty(), vec![x.clone(); *n as usize])),
            ("println", vals) => {
                let line: Vec<String> = vals.iter().map(|v| self.show(v)).collect();
                let _ = writeln!(self.output, "{}", line.join(" "));
                Ok(Value::Nothing)
            }
            _ => Err(usage(span, format!("bad arguments to `{name}`"))),
        }
    }

    fn show(&self, v: &Value) -> String {
        match v {
            Value::Extern(e) if e.kind == DEVICE => match self.arrays.get(&e.id) {
                Some(a) => format!("DeviceArray{{{}}}({})", a.elem(), a.len()),
                None => "DeviceArray(freed)".to_string(),
            },
            Value::Array(a) => {
                let a = a.borrow();
                let items: Vec<String> = a.data.iter().map(|x| self.show(x)).collect();
                format!("[{}]", items.join(", "))
            }
            other => other.to_string(),
        }
    }
}

const BUILTINS: &[&str] = &["upload", "download", "free", "broadcast", "reduce", "launch", "rand", "fill", "println"];

impl HostBuiltins for Host {
    fn call(&mut self, _table: &TableRef, name: &str, args: &[Value], span: Span) -> Option<Result<Value, HostRuntimeError>> {
        BUILTINS.contains(&name).then(|| self.0.borrow_mut().call(name, args, span))
    }
}

/// Load the definitions of `source`, then run its top-level statements.
pub fn run_script(source: &str, config: RuntimeConfig, seed: u64) -> ScriptOutcome {
    let warp_size = config.vm.warp_size;
    let state = Rc::new(RefCell::new(State {
        rt: Runtime::new(config),
        table: Rc::new(RefCell::new(MethodTable::new())),
        arrays: BTreeMap::new(),
        next: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        ops: Vec::new(),
        output: String::new(),
        failure: None,
    }));
    let error = execute(source, &state).err();
    let s = state.borrow();
    ScriptOutcome {
        output: s.output.clone(),
        profile: ProfileDocument::new("run", warp_size, s.ops.clone(), s.rt.counters()),
        error,
    }
}

fn execute(source: &str, state: &Rc<RefCell<State>>) -> Result<(), ScriptError> {
    let ast = parse(source).map_err(ScriptError::Parse)?;
    let table = state.borrow().table.clone();
    table.borrow_mut().load(&ast).map_err(|e| ScriptError::Load(e.to_string()))?;
    let stmts: Vec<Stmt> = ast
        .items
        .iter()
        .filter_map(|i| match i {
            Item::Stmt(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let mut interp = Interpreter::new(TableRef::Shared(table)).with_host(Box::new(Host(state.clone())));
    match interp.run_script(&stmts) {
        Ok(_) => Ok(()),
        Err(e) => Err(state.borrow_mut().failure.take().unwrap_or(ScriptError::Runtime(e))),
    }
}
