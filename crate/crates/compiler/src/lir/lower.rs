//! Typed HIR to LIR code generation.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::*;
use crate::frontend::ast::{BinOp, UnOp};
use crate::frontend::builtins::Builtin;
use crate::frontend::types::{RecordType, Scalar, Type};
use crate::hir::{Callee, Const, HirFunction, Lattice, Operand, Rvalue, Stmt, StmtKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExceptionPolicy {
    /// Call into the host runtime, which unwinds.
    RuntimeCall,
    /// Abort the executing thread with the error code.
    Trap,
    /// Explicit `throw` is a compile error; implicit failures still trap.
    Forbid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocationPolicy {
    RuntimeCall,
    Forbid,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodegenParams {
    pub exception_policy: ExceptionPolicy,
    pub allocation_policy: AllocationPolicy,
    pub emit_bounds_checks: bool,
    /// State space that array descriptors point into.
    pub array_base_space: Space,
}

impl Default for CodegenParams {
    fn default() -> Self {
        CodegenParams {
            exception_policy: ExceptionPolicy::RuntimeCall,
            allocation_policy: AllocationPolicy::RuntimeCall,
            emit_bounds_checks: true,
            array_base_space: Space::Generic,
        }
    }
}

/// A call that inference resolved to an intrinsic.
pub struct IntrinsicCall<'a> {
    pub name: &'a str,
    /// Lowered arguments; `None` for arguments without a run-time value.
    pub args: &'a [Option<ValueId>],
    pub arg_types: &'a [Type],
    pub operands: &'a [Operand],
    pub ret: &'a Type,
    pub span: Span,
    pub params: &'a CodegenParams,
}

/// Target callbacks. Returning `None` selects the default lowering.
pub trait CodegenHooks: Send + Sync {
    fn lower_throw(&self, _b: &mut IrBuilder, _code: ValueId, _span: Span) -> Option<Result<(), String>> {
        None
    }

    /// Produce a generic pointer to `bytes` zeroed bytes.
    fn lower_alloc(&self, _b: &mut IrBuilder, _bytes: ValueId, _span: Span) -> Option<Result<ValueId, String>> {
        None
    }

    fn lower_intrinsic(&self, _b: &mut IrBuilder, _call: &IntrinsicCall) -> Option<Result<Option<ValueId>, String>> {
        None
    }
}

pub struct NoCodegenHooks;

impl CodegenHooks for NoCodegenHooks {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodegenError {
    #[error("{span}: `{slot}` in `{function}` has no concrete type")]
    Untyped { function: String, slot: String, span: Span },
    #[error("{span}: call in `{function}` cannot be resolved statically")]
    Dynamic { function: String, span: Span },
    #[error("{span}: exceptions are not allowed in this context")]
    ForbiddenThrow { span: Span },
    #[error("{span}: dynamic allocation is not allowed in this context")]
    ForbiddenAlloc { span: Span },
    #[error("{span}: {message}")]
    Hook { span: Span, message: String },
    #[error("{span}: {message}")]
    Unsupported { span: Span, message: String },
    #[error(transparent)]
    Ir(#[from] IrError),
}

enum GenError {
    /// The statement consumes a value of type Union{}: control never gets here.
    Dead,
    Fail(CodegenError),
}

impl From<CodegenError> for GenError {
    fn from(e: CodegenError) -> Self {
        GenError::Fail(e)
    }
}

impl From<IrError> for GenError {
    fn from(e: IrError) -> Self {
        GenError::Fail(CodegenError::Ir(e))
    }
}

type GResult<T> = Result<T, GenError>;

pub fn scalar_type(s: Scalar) -> LirType {
    match s {
        Scalar::Bool => LirType::I1,
        Scalar::Int32 => LirType::I32,
        Scalar::Int64 => LirType::I64,
        Scalar::Float32 => LirType::F32,
        Scalar::Float64 => LirType::F64,
    }
}

/// LIR representation of a source type.
pub fn lir_type(t: &Type, params: &CodegenParams) -> LirType {
    match t {
        Type::Scalar(s) => scalar_type(*s),
        Type::Nothing | Type::Func(_) => LirType::Void,
        Type::Array(_) => LirType::structure(vec![LirType::Ptr(params.array_base_space), LirType::I64]),
        Type::SharedArray(_) => LirType::structure(vec![LirType::Ptr(Space::Shared), LirType::I64]),
        Type::Record(r) if r.mutable => LirType::Ptr(Space::Generic),
        Type::Record(r) => LirType::structure(r.fields.iter().map(|(_, s)| scalar_type(*s)).collect()),
    }
}

fn type_code(t: &Type) -> String {
    match t {
        Type::Scalar(Scalar::Bool) => "b".into(),
        Type::Scalar(s) => scalar_type(*s).to_string(),
        Type::Nothing => "n".into(),
        Type::Array(e) => format!("A{}", type_code(e)),
        Type::SharedArray(e) => format!("S{}", type_code(e)),
        Type::Record(r) => {
            let fs: Vec<String> = r.fields.iter().map(|(_, s)| type_code(&Type::Scalar(*s))).collect();
            format!("{}[{}]", r.name, fs.join(","))
        }
        Type::Func(n) => format!("F{n}"),
    }
}

fn op_word(name: &str) -> String {
    let word = match name {
        "+" => "add",
        "-" => "sub",
        "*" => "mul",
        "/" => "div",
        "%" => "rem",
        "^" => "pow",
        "==" => "eq",
        "!=" => "ne",
        "<" => "lt",
        "<=" => "le",
        ">" => "gt",
        ">=" => "ge",
        other => other,
    };
    word.to_string()
}

/// Symbol name of a specialization.
pub fn mangle(h: &HirFunction) -> String {
    let mut s = op_word(&h.name);
    for t in &h.key.arg_types {
        s.push('_');
        s.push_str(&type_code(t));
    }
    s
}

/// Lower a typed specialization and every method it calls. The entry comes first.
pub fn lower_hir(hir: &HirFunction, params: &CodegenParams, hooks: &dyn CodegenHooks) -> Result<LirModule, CodegenError> {
    let mut module = LirModule::default();
    let mut queue: Vec<Arc<HirFunction>> = Vec::new();
    let mut done: HashMap<String, ()> = HashMap::new();
    let entry = lower_function(hir, params, hooks, &mut queue)?;
    done.insert(entry.name.clone(), ());
    module.functions.push(entry);
    while let Some(h) = queue.pop() {
        let name = mangle(&h);
        if done.contains_key(&name) {
            continue;
        }
        done.insert(name, ());
        module.functions.push(lower_function(&h, params, hooks, &mut queue)?);
    }
    Ok(module)
}

fn concrete(l: &Lattice) -> Option<&Type> {
    l.concrete()
}

fn lower_function(
    h: &HirFunction,
    params: &CodegenParams,
    hooks: &dyn CodegenHooks,
    queue: &mut Vec<Arc<HirFunction>>,
) -> Result<LirFunction, CodegenError> {
    for s in h.live_slots() {
        if *h.slot_type(s) == Lattice::Any {
            let info = h.slot(s);
            return Err(CodegenError::Untyped { function: h.name.clone(), slot: info.name.clone(), span: info.span });
        }
    }
    if h.return_type == Lattice::Any {
        return Err(CodegenError::Untyped { function: h.name.clone(), slot: "return".into(), span: h.span });
    }
    let ret = concrete(&h.return_type).map(|t| lir_type(t, params)).unwrap_or(LirType::Void);
    let mut f = LirFunction::new(mangle(h), ret);
    let mut param_values = Vec::new();
    for p in &h.params {
        let Some(t) = concrete(h.slot_type(*p)) else {
            param_values.push(None);
            continue;
        };
        let lt = lir_type(t, params);
        if lt == LirType::Void {
            param_values.push(None);
            continue;
        }
        let name = h.slot(*p).name.clone();
        if t.is_immutable_aggregate() {
            let v = f.add_param(name, LirType::Ptr(Space::Generic));
            let last = f.params.last_mut().unwrap();
            last.by_ref = Some(lt);
            last.source_type = Some(t.clone());
            param_values.push(Some(v));
        } else {
            let v = f.add_param(name, lt);
            f.params.last_mut().unwrap().source_type = Some(t.clone());
            param_values.push(Some(v));
        }
    }
    let mut b = IrBuilder::new(&mut f);
    b.set_span(Some(h.span));
    let mut slots = vec![None; h.slots.len()];
    for s in h.live_slots() {
        if let Some(t) = concrete(h.slot_type(s)) {
            let lt = lir_type(t, params);
            if lt != LirType::Void {
                slots[s.0 as usize] = Some((b.alloc_local(lt.clone())?, lt));
            }
        }
    }
    for (p, v) in h.params.iter().zip(param_values) {
        let (Some(v), Some((slot, lt))) = (v, slots[p.0 as usize].clone()) else { continue };
        let val = if b.function().params.iter().any(|q| q.value == v && q.by_ref.is_some()) {
            b.load(Space::Generic, lt, v)?
        } else {
            v
        };
        b.store(Space::Local, slot, val)?;
    }
    let mut g = Gen { h, params, hooks, b, slots, queue };
    g.block(&h.body)?;
    if !g.b.is_terminated() {
        g.b.unreachable()?;
    }
    drop(g);
    cfg::remove_unreachable(&mut f);
    verify_function(&f)?;
    Ok(f)
}

struct Gen<'a, 'f> {
    h: &'a HirFunction,
    params: &'a CodegenParams,
    hooks: &'a dyn CodegenHooks,
    b: IrBuilder<'f>,
    slots: Vec<Option<(ValueId, LirType)>>,
    queue: &'a mut Vec<Arc<HirFunction>>,
}

impl Gen<'_, '_> {
    fn fresh_block_if_terminated(&mut self) {
        if self.b.is_terminated() {
            let nb = self.b.new_block();
            self.b.switch_to(nb);
        }
    }

    fn block(&mut self, body: &[Stmt]) -> Result<(), CodegenError> {
        for s in body {
            self.fresh_block_if_terminated();
            self.b.set_span(Some(s.span));
            match self.stmt(s) {
                Ok(()) => {}
                Err(GenError::Dead) => {
                    self.fresh_block_if_terminated();
                    self.b.unreachable()?;
                }
                Err(GenError::Fail(e)) => return Err(e),
            }
        }
        Ok(())
    }

    fn op_type(&self, op: &Operand) -> GResult<Type> {
        match self.h.operand_type(op) {
            Lattice::Concrete(t) => Ok(t),
            Lattice::Bottom => Err(GenError::Dead),
            Lattice::Any => Err(GenError::Fail(CodegenError::Dynamic { function: self.h.name.clone(), span: self.span() })),
        }
    }

    fn span(&self) -> Span {
        self.b.function().values.last().and_then(|v| v.span).unwrap_or(self.h.span)
    }

    fn operand(&mut self, op: &Operand) -> GResult<Option<ValueId>> {
        Ok(match op {
            Operand::Slot(s) => {
                self.op_type(op)?;
                match self.slots[s.0 as usize].clone() {
                    Some((p, t)) => Some(self.b.load(Space::Local, t, p)?),
                    None => None,
                }
            }
            Operand::Const(c) => match c {
                Const::Nothing => None,
                Const::Bool(x) => Some(self.b.bool(*x)?),
                Const::I32(x) => Some(self.b.i32(*x)?),
                Const::I64(x) => Some(self.b.i64(*x)?),
                Const::F32(x) => Some(self.b.f32(*x)?),
                Const::F64(x) => Some(self.b.f64(*x)?),
            },
            Operand::Type(_) | Operand::Func(_) => None,
        })
    }

    fn value(&mut self, op: &Operand) -> GResult<ValueId> {
        self.operand(op)?.ok_or_else(|| {
            GenError::Fail(CodegenError::Unsupported { span: self.span(), message: "value of a type without run-time representation".into() })
        })
    }

    fn scalar_of(&self, op: &Operand) -> GResult<Scalar> {
        let t = self.op_type(op)?;
        t.as_scalar().ok_or_else(|| GenError::Fail(CodegenError::Unsupported { span: self.span(), message: format!("expected a scalar, got {t}") }))
    }

    fn stmt(&mut self, s: &Stmt) -> GResult<()> {
        match &s.kind {
            StmtKind::Assign { dest, value } => {
                let v = self.rvalue(value, s.span)?;
                if let (Some(v), Some((p, t))) = (v, self.slots[dest.0 as usize].clone()) {
                    let v = self.coerce(v, &t)?;
                    self.b.store(Space::Local, p, v)?;
                }
                Ok(())
            }
            StmtKind::Eval(r) => self.rvalue(r, s.span).map(|_| ()),
            StmtKind::SetIndex { array, index, value } => {
                let at = self.op_type(array)?;
                let elem = at.element().cloned().expect("inferred array type");
                let p = self.element_address(array, index, &elem, s.span)?;
                let v = self.value(value)?;
                let v = self.convert_to(v, &self.op_type(value)?, &elem)?;
                self.b.store(Space::Generic, p, v)?;
                Ok(())
            }
            StmtKind::SetField { object, field, value } => {
                let Type::Record(r) = self.op_type(object)? else { unreachable!("inferred record type") };
                let k = r.field_index(field).unwrap();
                let obj = self.value(object)?;
                let agg = lir_type(&Type::Record(Arc::new(RecordType { mutable: false, ..(*r).clone() })), self.params);
                let p = self.b.fieldaddr(agg, obj, k as u32)?;
                let v = self.value(value)?;
                let v = self.convert_to(v, &self.op_type(value)?, &Type::Scalar(r.fields[k].1))?;
                self.b.store(Space::Generic, p, v)?;
                Ok(())
            }
            StmtKind::If { cond, then_body, else_body } => {
                let c = self.value(cond)?;
                let (tb, eb, join) = (self.b.new_block(), self.b.new_block(), self.b.new_block());
                self.b.cond_br(c, tb, eb)?;
                self.b.switch_to(tb);
                self.block(then_body)?;
                if !self.b.is_terminated() {
                    self.b.br(join)?;
                }
                self.b.switch_to(eb);
                self.block(else_body)?;
                if !self.b.is_terminated() {
                    self.b.br(join)?;
                }
                self.b.switch_to(join);
                Ok(())
            }
            StmtKind::Loop { header, cond, body } => {
                let (hb, bb, exit) = (self.b.new_block(), self.b.new_block(), self.b.new_block());
                self.b.br(hb)?;
                self.b.switch_to(hb);
                self.block(header)?;
                self.fresh_block_if_terminated();
                match self.value(cond) {
                    Ok(c) => self.b.cond_br(c, bb, exit)?,
                    Err(GenError::Dead) => self.b.unreachable()?,
                    Err(e) => return Err(e),
                }
                self.b.switch_to(bb);
                self.block(body)?;
                if !self.b.is_terminated() {
                    self.b.br(hb)?;
                }
                self.b.switch_to(exit);
                Ok(())
            }
            StmtKind::Return(v) => {
                let want = self.b.function().ret.clone();
                let v = match v {
                    Some(op) => self.operand(op)?,
                    None => None,
                };
                match (v, want == LirType::Void) {
                    (Some(v), false) => {
                        let v = self.coerce(v, &want)?;
                        self.b.ret(Some(v))?
                    }
                    (_, true) => self.b.ret(None)?,
                    (None, false) => self.b.unreachable()?,
                }
                Ok(())
            }
        }
    }

    /// Identity unless the representations differ, which inference rules out.
    fn coerce(&mut self, v: ValueId, want: &LirType) -> GResult<ValueId> {
        if self.b.ty(v) == want {
            Ok(v)
        } else {
            Err(GenError::Fail(CodegenError::Unsupported {
                span: self.span(),
                message: format!("value of type {} where {want} is expected", self.b.ty(v)),
            }))
        }
    }

    fn convert_to(&mut self, v: ValueId, from: &Type, to: &Type) -> GResult<ValueId> {
        match (from.as_scalar(), to.as_scalar()) {
            (Some(a), Some(c)) => self.convert(v, a, c),
            _ => Ok(v),
        }
    }

    /// Numeric conversion with the interpreter's `as` semantics.
    fn convert(&mut self, v: ValueId, from: Scalar, to: Scalar) -> GResult<ValueId> {
        use Scalar::*;
        if from == to {
            return Ok(v);
        }
        let t = scalar_type(to);
        Ok(match (from, to) {
            (Bool, Int32 | Int64) => self.b.cast(CastKind::Zext, v, t)?,
            (Bool, Float32 | Float64) => self.b.cast(CastKind::UiToFp, v, t)?,
            (Int32 | Int64, Bool) => {
                let z = self.b.zero(scalar_type(from))?;
                self.b.cmp(CmpPred::Ne, v, z)?
            }
            (Float32 | Float64, Bool) => {
                let z = self.b.zero(scalar_type(from))?;
                self.b.cmp(CmpPred::FNe, v, z)?
            }
            (Int32, Int64) => self.b.cast(CastKind::Sext, v, t)?,
            (Int64, Int32) => self.b.cast(CastKind::Trunc, v, t)?,
            (Int32 | Int64, Float32 | Float64) => self.b.cast(CastKind::SiToFp, v, t)?,
            (Float32 | Float64, Int32 | Int64) => self.b.cast(CastKind::FpToSi, v, t)?,
            (Float32, Float64) => self.b.cast(CastKind::FpExt, v, t)?,
            (Float64, Float32) => self.b.cast(CastKind::FpTrunc, v, t)?,
            _ => unreachable!(),
        })
    }

    fn to_i64(&mut self, op: &Operand) -> GResult<ValueId> {
        let s = self.scalar_of(op)?;
        let v = self.value(op)?;
        self.convert(v, s, Scalar::Int64)
    }

    /// Bounds-checked generic address of `array[index]`.
    fn element_address(&mut self, array: &Operand, index: &Operand, elem: &Type, span: Span) -> GResult<ValueId> {
        let desc = self.value(array)?;
        let idx = self.to_i64(index)?;
        let len = self.b.extract(desc, 1)?;
        let one = self.b.i64(1)?;
        let zb = self.b.bin(BinKind::Sub, idx, one)?;
        if self.params.emit_bounds_checks {
            let ok = self.b.cmp(CmpPred::Ult, zb, len)?;
            let (cont, fail) = (self.b.new_block(), self.b.new_block());
            self.b.cond_br(ok, cont, fail)?;
            self.b.switch_to(fail);
            self.bounds_failure(idx, len, span)?;
            self.b.switch_to(cont);
        }
        let base = self.b.extract(desc, 0)?;
        let base = match self.b.ty(base) {
            LirType::Ptr(Space::Generic) => base,
            _ => self.b.addrcast(base, Space::Generic)?,
        };
        let et = lir_type(elem, self.params);
        Ok(self.b.elemaddr(et, base, zb)?)
    }

    fn bounds_failure(&mut self, idx: ValueId, len: ValueId, span: Span) -> GResult<()> {
        if self.params.exception_policy == ExceptionPolicy::RuntimeCall {
            self.b.rtcall("ksl_bounds_error", vec![idx, len], LirType::Void)?;
            self.b.unreachable()?;
            return Ok(());
        }
        let code = self.b.i32(crate::frontend::builtins::codes::BOUNDS)?;
        self.throw(code, span, false)
    }

    fn throw(&mut self, code: ValueId, span: Span, explicit: bool) -> GResult<()> {
        if let Some(r) = self.hooks.lower_throw(&mut self.b, code, span) {
            r.map_err(|message| CodegenError::Hook { span, message })?;
            if !self.b.is_terminated() {
                self.b.unreachable()?;
            }
            return Ok(());
        }
        match self.params.exception_policy {
            ExceptionPolicy::RuntimeCall => {
                self.b.rtcall("ksl_throw", vec![code], LirType::Void)?;
                self.b.unreachable()?;
            }
            ExceptionPolicy::Trap => self.b.trap(code)?,
            ExceptionPolicy::Forbid if explicit => return Err(CodegenError::ForbiddenThrow { span }.into()),
            ExceptionPolicy::Forbid => self.b.trap(code)?,
        }
        Ok(())
    }

    fn alloc(&mut self, bytes: ValueId, span: Span) -> GResult<ValueId> {
        if let Some(r) = self.hooks.lower_alloc(&mut self.b, bytes, span) {
            return Ok(r.map_err(|message| CodegenError::Hook { span, message })?);
        }
        match self.params.allocation_policy {
            AllocationPolicy::RuntimeCall => Ok(self.b.rtcall("ksl_alloc", vec![bytes], LirType::Ptr(Space::Generic))?),
            AllocationPolicy::Forbid => Err(CodegenError::ForbiddenAlloc { span }.into()),
        }
    }

    fn rvalue(&mut self, rv: &Rvalue, span: Span) -> GResult<Option<ValueId>> {
        match rv {
            Rvalue::Use(op) => {
                self.op_type(op)?;
                self.operand(op)
            }
            Rvalue::Unary(op, a) => {
                let s = self.scalar_of(a)?;
                let v = self.value(a)?;
                let k = match (op, s.is_float()) {
                    (UnOp::Neg, false) => UnKind::Neg,
                    (UnOp::Neg, true) => UnKind::FNeg,
                    (UnOp::Not, _) => UnKind::Not,
                };
                Ok(Some(self.b.un(k, v)?))
            }
            Rvalue::Increment(a) => {
                let s = self.scalar_of(a)?;
                let v = self.value(a)?;
                let one = match s {
                    Scalar::Int32 => self.b.i32(1)?,
                    _ => self.b.i64(1)?,
                };
                Ok(Some(self.b.bin(BinKind::Add, v, one)?))
            }
            Rvalue::Index(a, i) => {
                let elem = self.op_type(a)?.element().cloned().expect("inferred array type");
                let p = self.element_address(a, i, &elem, span)?;
                let et = lir_type(&elem, self.params);
                Ok(Some(self.b.load(Space::Generic, et, p)?))
            }
            Rvalue::Field(a, name) => {
                let Type::Record(r) = self.op_type(a)? else { unreachable!("inferred record type") };
                let k = r.field_index(name).unwrap() as u32;
                let v = self.value(a)?;
                if r.mutable {
                    let agg = lir_type(&Type::Record(Arc::new(RecordType { mutable: false, ..(*r).clone() })), self.params);
                    let p = self.b.fieldaddr(agg, v, k)?;
                    let ft = scalar_type(r.fields[k as usize].1);
                    Ok(Some(self.b.load(Space::Generic, ft, p)?))
                } else {
                    Ok(Some(self.b.extract(v, k)?))
                }
            }
            Rvalue::Call { site, args, .. } => {
                let callee = self.h.site(*site).callee.clone();
                self.call(&callee, args, span)
            }
        }
    }

    fn call(&mut self, callee: &Callee, args: &[Operand], span: Span) -> GResult<Option<ValueId>> {
        match callee {
            Callee::Unresolved => Err(GenError::Dead),
            Callee::Dynamic => Err(CodegenError::Dynamic { function: self.h.name.clone(), span }.into()),
            Callee::Prim { op, operand } => self.prim(*op, *operand, &args[0], &args[1]).map(Some),
            Callee::Method(h) => {
                let mut vals = Vec::new();
                for a in args {
                    let t = self.op_type(a)?;
                    let Some(v) = self.operand(a)? else { continue };
                    if t.is_immutable_aggregate() {
                        let lt = self.b.ty(v).clone();
                        let slot = self.b.alloc_local(lt)?;
                        self.b.store(Space::Local, slot, v)?;
                        vals.push(self.b.addrcast(slot, Space::Generic)?);
                    } else {
                        vals.push(v);
                    }
                }
                let ret = concrete(&h.return_type).map(|t| lir_type(t, self.params)).unwrap_or(LirType::Void);
                let target = mangle(h);
                self.queue.push(h.clone());
                let r = self.b.call(&target, vals, ret.clone())?;
                if h.return_type == Lattice::Bottom {
                    self.b.unreachable()?;
                    return Err(GenError::Dead);
                }
                Ok((ret != LirType::Void).then_some(r))
            }
            Callee::Builtin { builtin, arg_types } => self.builtin(*builtin, arg_types, args, span),
            Callee::Construct(r) => {
                let mut vals = Vec::new();
                for (a, (_, s)) in args.iter().zip(&r.fields) {
                    let from = self.scalar_of(a)?;
                    let v = self.value(a)?;
                    vals.push(self.convert(v, from, *s)?);
                }
                let agg = lir_type(&Type::Record(Arc::new(RecordType { mutable: false, ..(**r).clone() })), self.params);
                if r.mutable {
                    let bytes = self.b.i64(agg.size() as i64)?;
                    let p = self.alloc(bytes, span)?;
                    for (k, v) in vals.into_iter().enumerate() {
                        let fp = self.b.fieldaddr(agg.clone(), p, k as u32)?;
                        self.b.store(Space::Generic, fp, v)?;
                    }
                    Ok(Some(p))
                } else {
                    Ok(Some(self.b.make_struct(agg, vals)?))
                }
            }
            Callee::Intrinsic { name: iname, arg_types, ret } => {
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.operand(a)?);
                }
                let call = IntrinsicCall {
                    name: iname,
                    args: &vals,
                    arg_types,
                    operands: args,
                    ret,
                    span,
                    params: self.params,
                };
                if let Some(r) = self.hooks.lower_intrinsic(&mut self.b, &call) {
                    return Ok(r.map_err(|message| CodegenError::Hook { span, message })?);
                }
                let lt = lir_type(ret, self.params);
                let r = self.b.intrinsic(iname, vals.into_iter().flatten().collect(), lt.clone())?;
                Ok((lt != LirType::Void).then_some(r))
            }
        }
    }

    fn prim(&mut self, op: BinOp, s: Scalar, a: &Operand, c: &Operand) -> GResult<ValueId> {
        let (sa, sc) = (self.scalar_of(a)?, self.scalar_of(c)?);
        let x = self.value(a)?;
        let x = self.convert(x, sa, s)?;
        let y = self.value(c)?;
        let y = self.convert(y, sc, s)?;
        let f = s.is_float();
        if op.is_comparison() {
            let p = match (op, f) {
                (BinOp::Eq, false) => CmpPred::Eq,
                (BinOp::Ne, false) => CmpPred::Ne,
                (BinOp::Lt, false) => CmpPred::Slt,
                (BinOp::Le, false) => CmpPred::Sle,
                (BinOp::Gt, false) => CmpPred::Sgt,
                (BinOp::Ge, false) => CmpPred::Sge,
                (BinOp::Eq, true) => CmpPred::FEq,
                (BinOp::Ne, true) => CmpPred::FNe,
                (BinOp::Lt, true) => CmpPred::FLt,
                (BinOp::Le, true) => CmpPred::FLe,
                (BinOp::Gt, true) => CmpPred::FGt,
                (BinOp::Ge, true) => CmpPred::FGe,
                _ => unreachable!(),
            };
            return Ok(self.b.cmp(p, x, y)?);
        }
        let k = match (op, f) {
            (BinOp::Add, false) => BinKind::Add,
            (BinOp::Sub, false) => BinKind::Sub,
            (BinOp::Mul, false) => BinKind::Mul,
            (BinOp::Div, false) => BinKind::SDiv,
            (BinOp::Rem, false) => BinKind::SRem,
            (BinOp::Pow, false) => BinKind::IPow,
            (BinOp::Add, true) => BinKind::FAdd,
            (BinOp::Sub, true) => BinKind::FSub,
            (BinOp::Mul, true) => BinKind::FMul,
            (BinOp::Div, true) => BinKind::FDiv,
            (BinOp::Rem, true) => BinKind::FRem,
            (BinOp::Pow, true) => BinKind::FPow,
            (BinOp::And, _) => BinKind::And,
            (BinOp::Or, _) => BinKind::Or,
            _ => unreachable!(),
        };
        Ok(self.b.bin(k, x, y)?)
    }

    fn builtin(&mut self, bi: Builtin, types: &[Type], args: &[Operand], span: Span) -> GResult<Option<ValueId>> {
        let sc = |i: usize| types[i].as_scalar().unwrap_or(Scalar::Int64);
        match bi {
            Builtin::Length => {
                let d = self.value(&args[0])?;
                Ok(Some(self.b.extract(d, 1)?))
            }
            Builtin::Zeros => {
                let Operand::Type(p) = &args[0] else { unreachable!() };
                let elem = p.concrete().expect("inferred element type");
                let n = self.to_i64(&args[1])?;
                let es = self.b.i64(elem.size() as i64)?;
                let bytes = self.b.bin(BinKind::Mul, n, es)?;
                let ptr = self.alloc(bytes, span)?;
                let ptr = match self.params.array_base_space {
                    Space::Generic => ptr,
                    s => self.b.addrcast(ptr, s)?,
                };
                let ty = lir_type(&Type::array(elem), self.params);
                Ok(Some(self.b.make_struct(ty, vec![ptr, n])?))
            }
            Builtin::Throw => {
                let code = self.value(&args[0])?;
                let code = self.convert(code, sc(0), Scalar::Int32)?;
                self.throw(code, span, true)?;
                Err(GenError::Dead)
            }
            Builtin::Isa => {
                let Operand::Type(p) = &args[1] else { unreachable!() };
                let t = self.op_type(&args[0])?;
                Ok(Some(self.b.bool(p.matches(&t))?))
            }
            Builtin::Sqrt => {
                let s = sc(0);
                let v = self.value(&args[0])?;
                let (v, s) = if s.is_int() { (self.convert(v, s, Scalar::Float64)?, Scalar::Float64) } else { (v, s) };
                let name = if s == Scalar::Float32 { "sqrt_f32" } else { "sqrt_f64" };
                Ok(Some(self.b.intrinsic(name, vec![v], scalar_type(s))?))
            }
            Builtin::Abs => {
                let s = sc(0);
                let v = self.value(&args[0])?;
                let name = match s {
                    Scalar::Int32 => "abs_i32",
                    Scalar::Int64 => "abs_i64",
                    Scalar::Float32 => "fabs_f32",
                    _ => "fabs_f64",
                };
                Ok(Some(self.b.intrinsic(name, vec![v], scalar_type(s))?))
            }
            Builtin::Pow => {
                let s = Scalar::promote(sc(0), sc(1)).unwrap();
                Ok(Some(self.prim(BinOp::Pow, s, &args[0], &args[1])?))
            }
            Builtin::Min | Builtin::Max => {
                let s = Scalar::promote(sc(0), sc(1)).unwrap();
                let x = self.value(&args[0])?;
                let x = self.convert(x, sc(0), s)?;
                let y = self.value(&args[1])?;
                let y = self.convert(y, sc(1), s)?;
                let p = match (bi == Builtin::Min, s.is_float()) {
                    (true, false) => CmpPred::Slt,
                    (true, true) => CmpPred::FLt,
                    (false, false) => CmpPred::Sgt,
                    (false, true) => CmpPred::FGt,
                };
                let c = self.b.cmp(p, y, x)?;
                Ok(Some(self.b.select(c, y, x)?))
            }
            Builtin::Convert(to) => {
                let v = self.value(&args[0])?;
                Ok(Some(self.convert(v, sc(0), to)?))
            }
        }
    }
}
