//! Sequential big-step reference interpreter: the oracle for device results.
//!
//! Evaluation is strict and left-to-right. Kernels can be run per thread by
//! supplying a [`ThreadContext`]; warp-collective operations are rejected.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use super::ast::*;
use super::builtins::{codes, index_intrinsic, Builtin};
use super::table::{MethodTable, TableError};
use super::types::{RecordType, Scalar, Type, TypePattern};
use crate::span::Span;

#[derive(Debug)]
pub struct ArrayData {
    pub elem: Type,
    pub data: Vec<Value>,
}

pub type ArrayRef = Rc<RefCell<ArrayData>>;

/// Opaque host object (e.g. a device array handle) flowing through scripts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternValue {
    pub kind: &'static str,
    pub id: u64,
    pub ty: Type,
}

#[derive(Debug, Clone)]
pub enum Value {
    Nothing,
    Bool(bool),
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    Record(Arc<RecordType>, Arc<[Value]>),
    MutRecord(Arc<RecordType>, Rc<RefCell<Vec<Value>>>),
    Array(ArrayRef),
    Func(Arc<str>),
    Type(TypePattern),
    Extern(ExternValue),
}

impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        use Value::*;
        match (self, other) {
            (Nothing, Nothing) => true,
            (Bool(a), Bool(b)) => a == b,
            (I32(a), I32(b)) => a == b,
            (I64(a), I64(b)) => a == b,
            (F32(a), F32(b)) => a.to_bits() == b.to_bits() || a == b,
            (F64(a), F64(b)) => a.to_bits() == b.to_bits() || a == b,
            (Record(ta, a), Record(tb, b)) => ta == tb && a == b,
            (MutRecord(_, a), MutRecord(_, b)) => Rc::ptr_eq(a, b) || *a.borrow() == *b.borrow(),
            (Array(a), Array(b)) => {
                Rc::ptr_eq(a, b) || {
                    let (a, b) = (a.borrow(), b.borrow());
                    a.elem == b.elem && a.data == b.data
                }
            }
            (Func(a), Func(b)) => a == b,
            (Type(a), Type(b)) => a == b,
            (Extern(a), Extern(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nothing => f.write_str("nothing"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
            Value::F32(v) => write!(f, "{v:?}f0"),
            Value::F64(v) => write!(f, "{v:?}"),
            Value::Record(t, fields) => write_record(f, &t.name, fields),
            Value::MutRecord(t, fields) => write_record(f, &t.name, &fields.borrow()),
            Value::Array(a) => {
                let a = a.borrow();
                f.write_str("[")?;
                for (i, v) in a.data.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Func(n) => write!(f, "{n}"),
            Value::Type(t) => write!(f, "{t}"),
            Value::Extern(e) => write!(f, "<{} #{}>", e.kind, e.id),
        }
    }
}

fn write_record(f: &mut fmt::Formatter<'_>, name: &str, fields: &[Value]) -> fmt::Result {
    write!(f, "{name}(")?;
    for (i, v) in fields.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{v}")?;
    }
    f.write_str(")")
}

impl Value {
    pub fn array(elem: Type, data: Vec<Value>) -> Value {
        Value::Array(Rc::new(RefCell::new(ArrayData { elem, data })))
    }

    pub fn ty(&self) -> Type {
        match self {
            Value::Nothing => Type::Nothing,
            Value::Bool(_) => Type::BOOL,
            Value::I32(_) => Type::I32,
            Value::I64(_) => Type::I64,
            Value::F32(_) => Type::F32,
            Value::F64(_) => Type::F64,
            Value::Record(t, _) | Value::MutRecord(t, _) => Type::Record(t.clone()),
            Value::Array(a) => Type::array(a.borrow().elem.clone()),
            Value::Func(n) => Type::Func(n.clone()),
            Value::Type(_) => Type::Nothing,
            Value::Extern(e) => e.ty.clone(),
        }
    }

    pub fn scalar(&self) -> Option<Scalar> {
        self.ty().as_scalar()
    }

    /// All-zero value of a storable type.
    pub fn zero(ty: &Type) -> Option<Value> {
        Some(match ty {
            Type::Scalar(s) => convert_scalar(&Value::I64(0), *s),
            Type::Record(r) if !r.mutable => {
                let fields: Vec<Value> = r.fields.iter().map(|(_, s)| convert_scalar(&Value::I64(0), *s)).collect();
                Value::Record(r.clone(), fields.into())
            }
            _ => return None,
        })
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::I32(v) => Some(*v as i64),
            Value::I64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::F32(v) => Some(*v as f64),
            Value::F64(v) => Some(*v),
            Value::I32(v) => Some(*v as f64),
            Value::I64(v) => Some(*v as f64),
            _ => None,
        }
    }
}

/// Numeric conversion with `as` semantics (wrapping ints, saturating float-to-int).
pub fn convert_scalar(v: &Value, to: Scalar) -> Value {
    let (i, f, is_float) = match v {
        Value::Bool(b) => (*b as i64, *b as i64 as f64, false),
        Value::I32(x) => (*x as i64, *x as f64, false),
        Value::I64(x) => (*x, *x as f64, false),
        Value::F32(x) => (*x as i64, *x as f64, true),
        Value::F64(x) => (*x as i64, *x, true),
        _ => panic!("convert_scalar on non-scalar {v:?}"),
    };
    match to {
        Scalar::Bool => Value::Bool(if is_float { f != 0.0 } else { i != 0 }),
        Scalar::Int32 => Value::I32(match v {
            Value::F32(x) => *x as i32,
            Value::F64(x) => *x as i32,
            _ => i as i32,
        }),
        Scalar::Int64 => Value::I64(i),
        Scalar::Float32 => Value::F32(match v {
            Value::F64(x) => *x as f32,
            Value::F32(x) => *x,
            _ => i as f32,
        }),
        Scalar::Float64 => Value::F64(f),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeErrorKind {
    #[error("index {index} out of bounds for array of length {len}")]
    Bounds { index: i64, len: i64 },
    #[error("integer division by zero")]
    DivideByZero,
    #[error("thrown error code {0}")]
    Throw(i32),
    #[error("{0}")]
    Dispatch(#[from] TableError),
    #[error("type error: {0}")]
    Type(String),
    #[error("undefined variable `{0}`")]
    Undefined(String),
    #[error("unsupported in the sequential interpreter: {0}")]
    Unsupported(String),
    #[error("call depth limit exceeded")]
    StackOverflow,
    #[error("step limit exceeded")]
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{span}: {kind}")]
pub struct RuntimeError {
    pub span: Span,
    pub kind: RuntimeErrorKind,
}

impl RuntimeError {
    /// Error code the device would report for the same failure, if any.
    pub fn trap_code(&self) -> Option<i32> {
        match self.kind {
            RuntimeErrorKind::Bounds { .. } => Some(codes::BOUNDS),
            RuntimeErrorKind::DivideByZero => Some(codes::DIVIDE_BY_ZERO),
            RuntimeErrorKind::Throw(c) => Some(c),
            _ => None,
        }
    }
}

type RResult<T> = Result<T, RuntimeError>;

fn err<T>(span: Span, kind: RuntimeErrorKind) -> RResult<T> {
    Err(RuntimeError { span, kind })
}

fn type_err<T>(span: Span, msg: impl Into<String>) -> RResult<T> {
    err(span, RuntimeErrorKind::Type(msg.into()))
}

/// Thread coordinates (1-based indices) for running kernel bodies sequentially.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadContext {
    pub thread_idx: [i64; 3],
    pub block_idx: [i64; 3],
    pub block_dim: [i64; 3],
    pub grid_dim: [i64; 3],
    pub warp_size: i64,
}

impl ThreadContext {
    /// Linear 1-D context: thread `t` of block `b` (both 1-based).
    pub fn linear(b: i64, t: i64, block_dim: i64, grid_dim: i64, warp_size: i64) -> Self {
        ThreadContext {
            thread_idx: [t, 1, 1],
            block_idx: [b, 1, 1],
            block_dim: [block_dim, 1, 1],
            grid_dim: [grid_dim, 1, 1],
            warp_size,
        }
    }
}

/// Extension point for host-only operations in scripts (device arrays etc.).
pub trait HostBuiltins {
    /// Return `None` if `name` is not handled.
    fn call(&mut self, table: &TableRef, name: &str, args: &[Value], span: Span) -> Option<RResult<Value>>;
}

/// Read access to a method table, either borrowed or shared with a host.
#[derive(Clone)]
pub enum TableRef<'t> {
    Borrowed(&'t MethodTable),
    Shared(Rc<RefCell<MethodTable>>),
}

impl TableRef<'_> {
    pub fn with<R>(&self, f: impl FnOnce(&MethodTable) -> R) -> R {
        match self {
            TableRef::Borrowed(t) => f(t),
            TableRef::Shared(t) => f(&t.borrow()),
        }
    }
}

enum Flow {
    Normal,
    Return(Value),
}

pub struct Interpreter<'t> {
    table: TableRef<'t>,
    thread: Option<ThreadContext>,
    host: Option<Box<dyn HostBuiltins + 't>>,
    frames: Vec<HashMap<String, Value>>,
    pub max_depth: usize,
    pub step_limit: u64,
    steps: u64,
    /// When set, every variable assignment is recorded as (name, type).
    pub trace: Option<Vec<(String, Type)>>,
}

/// Call `entry` with `args` and evaluate sequentially.
pub fn interpret_reference(table: &MethodTable, entry: &str, args: &[Value]) -> Result<Value, RuntimeError> {
    Interpreter::new(TableRef::Borrowed(table)).call(entry, args, Span::default())
}

impl<'t> Interpreter<'t> {
    pub fn new(table: TableRef<'t>) -> Self {
        Interpreter {
            table,
            thread: None,
            host: None,
            frames: vec![HashMap::new()],
            max_depth: 64,
            step_limit: 200_000_000,
            steps: 0,
            trace: None,
        }
    }

    pub fn with_thread(mut self, ctx: ThreadContext) -> Self {
        self.thread = Some(ctx);
        self
    }

    pub fn set_thread(&mut self, ctx: Option<ThreadContext>) {
        self.thread = ctx;
    }

    pub fn with_host(mut self, host: Box<dyn HostBuiltins + 't>) -> Self {
        self.host = Some(host);
        self
    }

    pub fn global(&self, name: &str) -> Option<&Value> {
        self.frames[0].get(name)
    }

    /// Execute top-level statements in the global frame.
    pub fn run_script(&mut self, stmts: &[Stmt]) -> RResult<Option<Value>> {
        match self.exec_block(stmts)? {
            Flow::Return(v) => Ok(Some(v)),
            Flow::Normal => Ok(None),
        }
    }

    /// Call a function by name (method dispatch, record construction or builtin).
    pub fn call(&mut self, name: &str, args: &[Value], span: Span) -> RResult<Value> {
        self.call_named(name, args.to_vec(), span)
    }

    fn tick(&mut self, span: Span) -> RResult<()> {
        self.steps += 1;
        if self.steps > self.step_limit {
            return err(span, RuntimeErrorKind::StepLimit);
        }
        Ok(())
    }

    fn exec_block(&mut self, stmts: &[Stmt]) -> RResult<Flow> {
        for s in stmts {
            if let Flow::Return(v) = self.exec(s)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn exec(&mut self, s: &Stmt) -> RResult<Flow> {
        self.tick(s.span)?;
        match &s.kind {
            StmtKind::Expr(e) => {
                self.eval(e)?;
            }
            StmtKind::Assign { target, value } => self.assign(target, value)?,
            StmtKind::Return(None) => return Ok(Flow::Return(Value::Nothing)),
            StmtKind::Return(Some(e)) => return Ok(Flow::Return(self.eval(e)?)),
            StmtKind::If { cond, then_body, else_body } => {
                let c = self.eval_bool(cond)?;
                return self.exec_block(if c { then_body } else { else_body });
            }
            StmtKind::While { cond, body } => {
                while self.eval_bool(cond)? {
                    if let Flow::Return(v) = self.exec_block(body)? {
                        return Ok(Flow::Return(v));
                    }
                    self.tick(s.span)?;
                }
            }
            StmtKind::For { var, start, stop, body } => {
                let a = self.eval(start)?;
                let b = self.eval(stop)?;
                if !(a.scalar().is_some_and(Scalar::is_int) && b.scalar().is_some_and(Scalar::is_int)) {
                    return type_err(s.span, "for-loop bounds must be integers");
                }
                self.set_var(var, a);
                loop {
                    let cur = self.get_var(var, s.span)?;
                    if !truthy(&binary_scalar(BinOp::Le, &cur, &b, s.span)?) {
                        break;
                    }
                    if let Flow::Return(v) = self.exec_block(body)? {
                        return Ok(Flow::Return(v));
                    }
                    let cur = self.get_var(var, s.span)?;
                    let Some(ty) = cur.scalar().filter(|t| t.is_int()) else {
                        return type_err(s.span, "for-loop variable must stay an integer");
                    };
                    let next = binary_scalar(BinOp::Add, &cur, &convert_scalar(&Value::I64(1), ty), s.span)?;
                    self.set_var(var, next);
                    self.tick(s.span)?;
                }
            }
        }
        Ok(Flow::Normal)
    }

    fn assign(&mut self, target: &Expr, value: &Expr) -> RResult<()> {
        match &target.kind {
            ExprKind::Var(name) => {
                let v = self.eval(value)?;
                self.set_var(name, v);
            }
            ExprKind::Index { base, index } => {
                let arr = self.eval(base)?;
                let idx = self.eval(index)?;
                let v = self.eval(value)?;
                self.set_index(&arr, &idx, v, target.span)?;
            }
            ExprKind::Field { base, name } => {
                let obj = self.eval(base)?;
                let v = self.eval(value)?;
                match obj {
                    Value::MutRecord(t, fields) => {
                        let Some(i) = t.field_index(name) else {
                            return type_err(target.span, format!("{} has no field `{name}`", t.name));
                        };
                        let v = coerce_to(&v, &Type::Scalar(t.fields[i].1), target.span)?;
                        fields.borrow_mut()[i] = v;
                    }
                    Value::Record(t, _) => {
                        return type_err(target.span, format!("cannot assign field of immutable record {}", t.name))
                    }
                    other => return type_err(target.span, format!("cannot assign field of {}", other.ty())),
                }
            }
            _ => return type_err(target.span, "invalid assignment target"),
        }
        Ok(())
    }

    fn set_var(&mut self, name: &str, v: Value) {
        if let Some(t) = &mut self.trace {
            t.push((name.to_string(), v.ty()));
        }
        self.frames.last_mut().unwrap().insert(name.to_string(), v);
    }

    fn get_var(&self, name: &str, span: Span) -> RResult<Value> {
        match self.frames.last().unwrap().get(name) {
            Some(v) => Ok(v.clone()),
            None => err(span, RuntimeErrorKind::Undefined(name.to_string())),
        }
    }

    fn eval_bool(&mut self, e: &Expr) -> RResult<bool> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            other => type_err(e.span, format!("condition must be Bool, got {}", other.ty())),
        }
    }

    fn eval(&mut self, e: &Expr) -> RResult<Value> {
        Ok(match &e.kind {
            ExprKind::Int(v) => Value::I64(*v),
            ExprKind::Int32(v) => Value::I32(*v),
            ExprKind::Float(v) => Value::F64(*v),
            ExprKind::Float32(v) => Value::F32(*v),
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::OpRef(op) => Value::Func(Arc::from(op.symbol())),
            ExprKind::Var(name) => match self.frames.last().unwrap().get(name) {
                Some(v) => v.clone(),
                None => match self.name_as_value(name) {
                    Some(v) => v,
                    None => return err(e.span, RuntimeErrorKind::Undefined(name.clone())),
                },
            },
            ExprKind::Binary(BinOp::And, a, b) => {
                let l = self.eval_bool(a)?;
                Value::Bool(l && self.eval_bool(b)?)
            }
            ExprKind::Binary(BinOp::Or, a, b) => {
                let l = self.eval_bool(a)?;
                Value::Bool(l || self.eval_bool(b)?)
            }
            ExprKind::Binary(op, a, b) => {
                let l = self.eval(a)?;
                let r = self.eval(b)?;
                if l.scalar().is_some() && r.scalar().is_some() {
                    binary_scalar(*op, &l, &r, e.span)?
                } else {
                    self.call_named(op.symbol(), vec![l, r], e.span)?
                }
            }
            ExprKind::Unary(op, a) => {
                let v = self.eval(a)?;
                unary_scalar(*op, &v, e.span)?
            }
            ExprKind::Field { base, name } => {
                if let ExprKind::Call { callee, args } = &base.kind {
                    if args.is_empty() {
                        if let Some(intr) = index_intrinsic(callee, name) {
                            return self.call_named(&intr, vec![], e.span);
                        }
                    }
                }
                let obj = self.eval(base)?;
                get_field(&obj, name, e.span)?
            }
            ExprKind::Index { base, index } => {
                let arr = self.eval(base)?;
                let idx = self.eval(index)?;
                get_index(&arr, &idx, e.span)?
            }
            ExprKind::Call { callee, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                // A local holding a function value calls that function.
                if let Some(Value::Func(f)) = self.frames.last().unwrap().get(callee) {
                    let f = f.clone();
                    return self.call_named(&f, vals, e.span);
                }
                self.call_named(callee, vals, e.span)?
            }
        })
    }

    /// Identifiers that are not variables: type names and function names.
    fn name_as_value(&self, name: &str) -> Option<Value> {
        if let Some(s) = Scalar::from_name(name) {
            return Some(Value::Type(TypePattern::Exact(Type::Scalar(s))));
        }
        if name == "Array" {
            return Some(Value::Type(TypePattern::ArrayOf(Box::new(TypePattern::Any))));
        }
        self.table.with(|t| {
            if let Some(r) = t.record(name) {
                Some(Value::Type(TypePattern::RecordName(r.name.clone())))
            } else if t.has_methods(name) || Builtin::lookup(name).is_some() {
                Some(Value::Func(Arc::from(name)))
            } else {
                None
            }
        })
    }

    fn call_named(&mut self, name: &str, args: Vec<Value>, span: Span) -> RResult<Value> {
        self.tick(span)?;
        let types: Vec<Type> = args.iter().map(Value::ty).collect();
        let dispatched = self.table.with(|t| {
            if t.has_methods(name) {
                Some(t.dispatch(name, &types))
            } else {
                None
            }
        });
        match dispatched {
            Some(Ok(method)) => return self.invoke(&method.body, &method.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>(), args, span),
            Some(Err(e @ TableError::Ambiguous { .. })) => return err(span, e.into()),
            Some(Err(e)) => {
                if Builtin::lookup(name).is_none() && !self.is_record(name) {
                    return err(span, e.into());
                }
            }
            None => {}
        }
        if self.is_record(name) {
            return self.construct(name, args, span);
        }
        if let Some(b) = Builtin::lookup(name) {
            return self.builtin(b, name, args, span);
        }
        if let Some(v) = self.intrinsic(name, &args, span) {
            return v;
        }
        if let Some(mut host) = self.host.take() {
            let r = host.call(&self.table, name, &args, span);
            self.host = Some(host);
            if let Some(r) = r {
                return r;
            }
        }
        err(span, RuntimeErrorKind::Dispatch(TableError::NoMethod { name: name.to_string(), args: types }))
    }

    fn is_record(&self, name: &str) -> bool {
        self.table.with(|t| t.record(name).is_some())
    }

    fn invoke(&mut self, body: &FunctionDef, params: &[String], args: Vec<Value>, span: Span) -> RResult<Value> {
        if self.frames.len() > self.max_depth {
            return err(span, RuntimeErrorKind::StackOverflow);
        }
        let frame: HashMap<String, Value> = params.iter().cloned().zip(args).collect();
        self.frames.push(frame);
        let r = self.exec_block(&body.body);
        self.frames.pop();
        match r? {
            Flow::Return(v) => Ok(v),
            Flow::Normal => Ok(Value::Nothing),
        }
    }

    fn construct(&mut self, name: &str, args: Vec<Value>, span: Span) -> RResult<Value> {
        let types: Vec<Type> = args.iter().map(Value::ty).collect();
        let rt = self
            .table
            .with(|t| t.instantiate_record(name, &types))
            .map_err(|e| RuntimeError { span, kind: e.into() })?;
        let fields: Vec<Value> = args
            .iter()
            .zip(&rt.fields)
            .map(|(v, (_, s))| convert_scalar(v, *s))
            .collect();
        Ok(if rt.mutable {
            Value::MutRecord(rt, Rc::new(RefCell::new(fields)))
        } else {
            Value::Record(rt, fields.into())
        })
    }

    fn builtin(&mut self, b: Builtin, name: &str, args: Vec<Value>, span: Span) -> RResult<Value> {
        let arity = |n: usize| -> RResult<()> {
            if args.len() == n {
                Ok(())
            } else {
                type_err(span, format!("{name} expects {n} argument(s), got {}", args.len()))
            }
        };
        match b {
            Builtin::Length => {
                arity(1)?;
                match &args[0] {
                    Value::Array(a) => Ok(Value::I64(a.borrow().data.len() as i64)),
                    other => type_err(span, format!("length of {}", other.ty())),
                }
            }
            Builtin::Zeros => {
                arity(2)?;
                let ty = match &args[0] {
                    Value::Type(p) => p.concrete(),
                    _ => None,
                };
                let n = args[1].as_i64();
                match (ty, n) {
                    (Some(ty), Some(n)) if n >= 0 => match Value::zero(&ty) {
                        Some(z) => Ok(Value::array(ty, vec![z; n as usize])),
                        None => type_err(span, format!("cannot allocate array of {ty}")),
                    },
                    _ => type_err(span, "zeros(T, n) expects a concrete type and a length"),
                }
            }
            Builtin::Throw => {
                arity(1)?;
                match args[0].as_i64() {
                    Some(c) => err(span, RuntimeErrorKind::Throw(c as i32)),
                    None => type_err(span, "throw expects an integer code"),
                }
            }
            Builtin::Isa => {
                arity(2)?;
                match &args[1] {
                    Value::Type(p) => Ok(Value::Bool(p.matches(&args[0].ty()))),
                    _ => type_err(span, "isa expects a type as second argument"),
                }
            }
            Builtin::Sqrt => {
                arity(1)?;
                match &args[0] {
                    Value::F32(x) => Ok(Value::F32(x.sqrt())),
                    Value::F64(x) => Ok(Value::F64(x.sqrt())),
                    Value::I32(_) | Value::I64(_) => Ok(Value::F64(args[0].as_f64().unwrap().sqrt())),
                    other => type_err(span, format!("sqrt of {}", other.ty())),
                }
            }
            Builtin::Abs => {
                arity(1)?;
                match &args[0] {
                    Value::I32(x) => Ok(Value::I32(x.wrapping_abs())),
                    Value::I64(x) => Ok(Value::I64(x.wrapping_abs())),
                    Value::F32(x) => Ok(Value::F32(x.abs())),
                    Value::F64(x) => Ok(Value::F64(x.abs())),
                    other => type_err(span, format!("abs of {}", other.ty())),
                }
            }
            Builtin::Pow => {
                arity(2)?;
                binary_scalar(BinOp::Pow, &args[0], &args[1], span)
            }
            Builtin::Min | Builtin::Max => {
                arity(2)?;
                let op = if b == Builtin::Min { BinOp::Lt } else { BinOp::Gt };
                let (a, c) = promote_pair(&args[0], &args[1], span)?;
                Ok(if truthy(&binary_scalar(op, &c, &a, span)?) { c } else { a })
            }
            Builtin::Convert(s) => {
                arity(1)?;
                if args[0].scalar().is_none() {
                    return type_err(span, format!("cannot convert {} to {s}", args[0].ty()));
                }
                Ok(convert_scalar(&args[0], s))
            }
        }
    }

    fn intrinsic(&mut self, name: &str, args: &[Value], span: Span) -> Option<RResult<Value>> {
        let dim = |v: [i64; 3], c: &str| -> i64 {
            match c {
                "x" => v[0],
                "y" => v[1],
                _ => v[2],
            }
        };
        for (prefix, pick) in [
            ("thread_idx_", 0usize),
            ("block_idx_", 1),
            ("block_dim_", 2),
            ("grid_dim_", 3),
        ] {
            if let Some(c) = name.strip_prefix(prefix) {
                if !matches!(c, "x" | "y" | "z") || !args.is_empty() {
                    return None;
                }
                let Some(ctx) = self.thread else {
                    return Some(err(span, RuntimeErrorKind::Unsupported(format!("{name} outside a thread context"))));
                };
                let v = [ctx.thread_idx, ctx.block_idx, ctx.block_dim, ctx.grid_dim][pick];
                return Some(Ok(Value::I64(dim(v, c))));
            }
        }
        let one = |want: Scalar| -> Result<&Value, RuntimeError> {
            match args {
                [v] if v.scalar() == Some(want) => Ok(v),
                _ => Err(RuntimeError {
                    span,
                    kind: RuntimeErrorKind::Type(format!("{name} expects one {want}")),
                }),
            }
        };
        let r = match name {
            "warpsize" => match self.thread {
                Some(ctx) => Ok(Value::I64(ctx.warp_size)),
                None => err(span, RuntimeErrorKind::Unsupported("warpsize outside a thread context".into())),
            },
            "abs_i32" => one(Scalar::Int32).map(|v| match v {
                Value::I32(x) => Value::I32(x.wrapping_abs()),
                _ => unreachable!(),
            }),
            "abs_i64" => one(Scalar::Int64).map(|v| match v {
                Value::I64(x) => Value::I64(x.wrapping_abs()),
                _ => unreachable!(),
            }),
            "fabs_f32" | "sqrt_f32" => one(Scalar::Float32).map(|v| match v {
                Value::F32(x) if name == "fabs_f32" => Value::F32(x.abs()),
                Value::F32(x) => Value::F32(x.sqrt()),
                _ => unreachable!(),
            }),
            "fabs_f64" | "sqrt_f64" => one(Scalar::Float64).map(|v| match v {
                Value::F64(x) if name == "fabs_f64" => Value::F64(x.abs()),
                Value::F64(x) => Value::F64(x.sqrt()),
                _ => unreachable!(),
            }),
            "pow_f32" => match args {
                [Value::F32(a), Value::F32(b)] => Ok(Value::F32(a.powf(*b))),
                _ => type_err(span, "pow_f32 expects two Float32"),
            },
            "pow_f64" => match args {
                [Value::F64(a), Value::F64(b)] => Ok(Value::F64(a.powf(*b))),
                _ => type_err(span, "pow_f64 expects two Float64"),
            },
            "sync_threads" | "shfl_down" | "shared_array" | "shared_like" => err(
                span,
                RuntimeErrorKind::Unsupported(format!("`{name}` requires a warp or block")),
            ),
            _ => return None,
        };
        Some(r)
    }
}

fn truthy(v: &Value) -> bool {
    matches!(v, Value::Bool(true))
}

fn get_field(obj: &Value, name: &str, span: Span) -> RResult<Value> {
    let (t, fields): (&Arc<RecordType>, Vec<Value>) = match obj {
        Value::Record(t, f) => (t, f.to_vec()),
        Value::MutRecord(t, f) => (t, f.borrow().clone()),
        other => return type_err(span, format!("field access `.{name}` on {}", other.ty())),
    };
    match t.field_index(name) {
        Some(i) => Ok(fields[i].clone()),
        None => type_err(span, format!("{} has no field `{name}`", t.name)),
    }
}

fn checked_index(arr: &ArrayData, idx: &Value, span: Span) -> RResult<usize> {
    let Some(i) = idx.as_i64() else {
        return type_err(span, format!("array index must be an integer, got {}", idx.ty()));
    };
    let len = arr.data.len() as i64;
    if i < 1 || i > len {
        return err(span, RuntimeErrorKind::Bounds { index: i, len });
    }
    Ok((i - 1) as usize)
}

fn get_index(arr: &Value, idx: &Value, span: Span) -> RResult<Value> {
    match arr {
        Value::Array(a) => {
            let a = a.borrow();
            let i = checked_index(&a, idx, span)?;
            Ok(a.data[i].clone())
        }
        other => type_err(span, format!("cannot index {}", other.ty())),
    }
}

impl Interpreter<'_> {
    fn set_index(&mut self, arr: &Value, idx: &Value, v: Value, span: Span) -> RResult<()> {
        match arr {
            Value::Array(a) => {
                let mut a = a.borrow_mut();
                let i = checked_index(&a, idx, span)?;
                let v = coerce_to(&v, &a.elem, span)?;
                a.data[i] = v;
                Ok(())
            }
            other => type_err(span, format!("cannot index {}", other.ty())),
        }
    }
}

/// Convert `v` for storage in a location of type `ty`.
pub fn coerce_to(v: &Value, ty: &Type, span: Span) -> RResult<Value> {
    match (ty, v.scalar()) {
        (Type::Scalar(s), Some(vs)) if vs.is_numeric() == s.is_numeric() => Ok(convert_scalar(v, *s)),
        _ if v.ty() == *ty => Ok(v.clone()),
        _ => type_err(span, format!("cannot store {} into a location of type {ty}", v.ty())),
    }
}

fn promote_pair(a: &Value, b: &Value, span: Span) -> RResult<(Value, Value)> {
    let (Some(x), Some(y)) = (a.scalar(), b.scalar()) else {
        return type_err(span, format!("no arithmetic between {} and {}", a.ty(), b.ty()));
    };
    match Scalar::promote(x, y) {
        Some(s) => Ok((convert_scalar(a, s), convert_scalar(b, s))),
        None => type_err(span, format!("no arithmetic between {x} and {y}")),
    }
}

/// Integer power with wrapping multiplication; negative exponents truncate toward zero.
pub fn ipow_i64(base: i64, exp: i64) -> i64 {
    if exp < 0 {
        return match base {
            1 => 1,
            -1 => if exp % 2 == 0 { 1 } else { -1 },
            _ => 0,
        };
    }
    let (mut result, mut b, mut e) = (1i64, base, exp as u64);
    while e > 0 {
        if e & 1 == 1 {
            result = result.wrapping_mul(b);
        }
        b = b.wrapping_mul(b);
        e >>= 1;
    }
    result
}

fn binary_scalar(op: BinOp, a: &Value, b: &Value, span: Span) -> RResult<Value> {
    if let (Value::Bool(x), Value::Bool(y)) = (a, b) {
        return match op {
            BinOp::Eq => Ok(Value::Bool(x == y)),
            BinOp::Ne => Ok(Value::Bool(x != y)),
            _ => type_err(span, format!("operator {} not defined for Bool", op.symbol())),
        };
    }
    let (a, b) = promote_pair(a, b, span)?;
    macro_rules! cmp {
        ($x:expr, $y:expr) => {
            Value::Bool(match op {
                BinOp::Eq => $x == $y,
                BinOp::Ne => $x != $y,
                BinOp::Lt => $x < $y,
                BinOp::Le => $x <= $y,
                BinOp::Gt => $x > $y,
                BinOp::Ge => $x >= $y,
                _ => unreachable!(),
            })
        };
    }
    if op.is_comparison() {
        return Ok(match (&a, &b) {
            (Value::I32(x), Value::I32(y)) => cmp!(x, y),
            (Value::I64(x), Value::I64(y)) => cmp!(x, y),
            (Value::F32(x), Value::F32(y)) => cmp!(x, y),
            (Value::F64(x), Value::F64(y)) => cmp!(x, y),
            _ => unreachable!(),
        });
    }
    macro_rules! int_op {
        ($x:expr, $y:expr, $ctor:path, $pow:expr) => {{
            let (x, y) = ($x, $y);
            $ctor(match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Div | BinOp::Rem if y == 0 => return err(span, RuntimeErrorKind::DivideByZero),
                BinOp::Div => x.wrapping_div(y),
                BinOp::Rem => x.wrapping_rem(y),
                BinOp::Pow => $pow(x, y),
                _ => return type_err(span, format!("operator {} not defined for integers", op.symbol())),
            })
        }};
    }
    macro_rules! float_op {
        ($x:expr, $y:expr, $ctor:path) => {{
            let (x, y) = ($x, $y);
            $ctor(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Rem => x % y,
                BinOp::Pow => x.powf(y),
                _ => return type_err(span, format!("operator {} not defined for floats", op.symbol())),
            })
        }};
    }
    Ok(match (a, b) {
        (Value::I32(x), Value::I32(y)) => {
            int_op!(x, y, Value::I32, |x: i32, y: i32| ipow_i64(x as i64, y as i64) as i32)
        }
        (Value::I64(x), Value::I64(y)) => int_op!(x, y, Value::I64, ipow_i64),
        (Value::F32(x), Value::F32(y)) => float_op!(x, y, Value::F32),
        (Value::F64(x), Value::F64(y)) => float_op!(x, y, Value::F64),
        _ => unreachable!(),
    })
}

fn unary_scalar(op: UnOp, v: &Value, span: Span) -> RResult<Value> {
    Ok(match (op, v) {
        (UnOp::Neg, Value::I32(x)) => Value::I32(x.wrapping_neg()),
        (UnOp::Neg, Value::I64(x)) => Value::I64(x.wrapping_neg()),
        (UnOp::Neg, Value::F32(x)) => Value::F32(-x),
        (UnOp::Neg, Value::F64(x)) => Value::F64(-x),
        (UnOp::Not, Value::Bool(b)) => Value::Bool(!b),
        _ => return type_err(span, format!("unary operator not defined for {}", v.ty())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::parse;

    fn table(src: &str) -> MethodTable {
        let mut t = MethodTable::new();
        t.load(&parse(src).unwrap()).unwrap();
        t
    }

    const F: &str = "function f(x) return 3*x^2 + 5*x + 2 end";

    #[test]
    fn polynomial_at_zero() {
        let t = table(F);
        assert_eq!(interpret_reference(&t, "f", &[Value::F64(0.0)]).unwrap(), Value::F64(2.0));
        assert_eq!(interpret_reference(&t, "f", &[Value::I64(2)]).unwrap(), Value::I64(24));
        assert_eq!(interpret_reference(&t, "f", &[Value::F32(1.0)]).unwrap(), Value::F32(10.0));
    }

    const VADD: &str = "function vadd(a, b, c)\n\
        i = (blockIdx().x-1) * blockDim().x + threadIdx().x\n\
        c[i] = a[i] + b[i]\n\
        return\n\
        end\n\
        function vadd_all(a, b, c)\n\
        for i = 1:length(a)\n  c[i] = a[i] + b[i]\n end\n\
        return\n\
        end";

    #[test]
    fn vadd_elementwise() {
        let t = table(VADD);
        let a: Vec<Value> = (0..100).map(|i| Value::F32(i as f32 * 0.5)).collect();
        let b: Vec<Value> = (0..100).map(|i| Value::F32(1.0 - i as f32)).collect();
        let av = Value::array(Type::F32, a.clone());
        let bv = Value::array(Type::F32, b.clone());
        let cv = Value::array(Type::F32, vec![Value::F32(0.0); 100]);
        interpret_reference(&t, "vadd_all", &[av.clone(), bv.clone(), cv.clone()]).unwrap();
        let Value::Array(c) = &cv else { panic!() };
        for i in 0..100 {
            let (Value::F32(x), Value::F32(y)) = (&a[i], &b[i]) else { panic!() };
            assert_eq!(c.borrow().data[i], Value::F32(x + y));
        }
        // Per-thread execution with a thread context matches.
        let cv2 = Value::array(Type::F32, vec![Value::F32(0.0); 100]);
        for tid in 1..=100 {
            Interpreter::new(TableRef::Borrowed(&t))
                .with_thread(ThreadContext::linear(1, tid, 100, 1, 32))
                .call("vadd", &[av.clone(), bv.clone(), cv2.clone()], Span::default())
                .unwrap();
        }
        assert_eq!(cv, cv2);
    }

    #[test]
    fn out_of_bounds_read_is_reported_with_span() {
        let t = table("function g(a)\n  return a[101]\nend");
        let a = Value::array(Type::F32, vec![Value::F32(0.0); 100]);
        let e = interpret_reference(&t, "g", &[a]).unwrap_err();
        assert_eq!(e.kind, RuntimeErrorKind::Bounds { index: 101, len: 100 });
        assert_eq!(e.span.line, 2);
        assert_eq!(e.trap_code(), Some(codes::BOUNDS));
    }

    #[test]
    fn dispatch_failures_and_type_errors() {
        let t = table("function h(x::Int64) return x end");
        let e = interpret_reference(&t, "h", &[Value::F64(1.0)]).unwrap_err();
        assert!(matches!(e.kind, RuntimeErrorKind::Dispatch(TableError::NoMethod { .. })));
        let t = table("function k(x) return x + true end");
        let e = interpret_reference(&t, "k", &[Value::I64(1)]).unwrap_err();
        assert!(matches!(e.kind, RuntimeErrorKind::Type(_)));
    }

    #[test]
    fn records_and_operator_methods() {
        let t = table(
            "record Point x; y end\n\
             function +(a::Point, b::Point) return Point(a.x+b.x, a.y+b.y) end\n\
             function go() return Point(1, 2) + Point(3, 4) end",
        );
        let v = interpret_reference(&t, "go", &[]).unwrap();
        assert_eq!(v.to_string(), "Point(4, 6)");
    }

    #[test]
    fn throw_and_division() {
        let t = table("function t(x) if x > 0 throw(7) end; return 10 / x end");
        assert_eq!(interpret_reference(&t, "t", &[Value::I64(1)]).unwrap_err().kind, RuntimeErrorKind::Throw(7));
        assert_eq!(interpret_reference(&t, "t", &[Value::I64(0)]).unwrap_err().kind, RuntimeErrorKind::DivideByZero);
        assert_eq!(interpret_reference(&t, "t", &[Value::I64(-3)]).unwrap(), Value::I64(-3));
    }

    #[test]
    fn integer_power() {
        assert_eq!(ipow_i64(3, 4), 81);
        assert_eq!(ipow_i64(2, -1), 0);
        assert_eq!(ipow_i64(-1, -3), -1);
    }

    #[test]
    fn deep_recursion_is_diagnosed() {
        let t = table("function r(n) return r(n + 1) end");
        let e = interpret_reference(&t, "r", &[Value::I64(0)]).unwrap_err();
        assert_eq!(e.kind, RuntimeErrorKind::StackOverflow);
    }
}
