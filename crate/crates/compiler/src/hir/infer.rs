//! Abstract-interpretation type inference and memoized specialization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use super::lower::{lower_ast, LowerError};
use super::*;
use crate::frontend::table::{Method, MethodTable, TableError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceParams {
    /// Permit `Any`-typed slots; when false, instability is an error.
    pub allow_any: bool,
    /// Inlining budget consumed by the LIR inliner.
    pub max_inline_depth: u32,
    pub specialization_cache_enabled: bool,
}

impl Default for InferenceParams {
    fn default() -> Self {
        InferenceParams {
            allow_any: true,
            max_inline_depth: 8,
            specialization_cache_enabled: true,
        }
    }
}

/// Interception points a target can use to steer inference.
pub trait InferenceHooks: Send + Sync {
    /// Override dispatch for `name` at `args`. The returned method must be applicable.
    fn resolve_call(&self, _name: &str, _args: &[Type]) -> Option<Arc<Method>> {
        None
    }

    /// Called once per slot that ends up `Any`.
    fn on_unstable(&self, _function: &str, _slot: &str) {}

    /// Result type of a target intrinsic; `None` if `name` is not one.
    fn intrinsic_type(&self, _name: &str, _args: &[Type], _operands: &[Operand]) -> Option<Result<Type, String>> {
        None
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoHooks;

impl InferenceHooks for NoHooks {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("{span}: {source}")]
    Dispatch { span: Span, source: TableError },
    #[error("{span}: type error: {message}")]
    Type { span: Span, message: String },
    #[error("{span}: type instability in {function}: `{slot}` is inferred as Any")]
    Unstable { function: String, slot: String, span: Span },
    #[error("{span}: unbounded recursion in {function}")]
    Recursion { function: String, span: Span },
    #[error("inference hook violated its contract for `{name}`: {message}")]
    HookContract { name: String, message: String },
}

/// Counters for observing how much inference work was done.
#[derive(Debug, Default)]
pub struct InferenceStats {
    pub lowerings: AtomicU64,
    pub inferences: AtomicU64,
    pub memo_hits: AtomicU64,
}

impl InferenceStats {
    pub fn inferences(&self) -> u64 {
        self.inferences.load(Ordering::Relaxed)
    }

    pub fn lowerings(&self) -> u64 {
        self.lowerings.load(Ordering::Relaxed)
    }

    pub fn memo_hits(&self) -> u64 {
        self.memo_hits.load(Ordering::Relaxed)
    }
}

/// Memoizing composition of dispatch, lowering and inference.
pub struct Specializer {
    params: InferenceParams,
    hooks: Arc<dyn InferenceHooks>,
    memo: RwLock<HashMap<SpecKey, Arc<HirFunction>>>,
    stats: InferenceStats,
}

/// State for one top-level request: the active call stack and a local memo so
/// repeated fixpoint passes do not redo callee work even with the cache off.
struct Run<'t> {
    table: &'t MethodTable,
    stack: Vec<SpecKey>,
    local: HashMap<SpecKey, Arc<HirFunction>>,
}

enum Specialized {
    Done(Arc<HirFunction>),
    /// Second re-entry of a key already being inferred.
    Cutoff,
}

#[derive(Default)]
struct Deps {
    callees: BTreeSet<(MethodId, u64)>,
    names: BTreeMap<String, u64>,
    recursive: bool,
}

impl Deps {
    fn absorb(&mut self, h: &HirFunction) {
        self.callees.extend(h.callees.iter().copied());
        for (n, g) in &h.name_deps {
            self.names.insert(n.clone(), *g);
        }
        self.recursive |= h.recursive;
    }
}

/// Whether every dependency recorded in `h` still has the recorded age.
pub(crate) fn deps_current(table: &MethodTable, h: &HirFunction) -> bool {
    h.callees.iter().all(|(id, age)| table.method_age(*id).is_none_or(|a| a == *age))
        && h.name_deps.iter().all(|(n, g)| table.generation(n) == *g)
}

impl Specializer {
    pub fn new(params: InferenceParams, hooks: Arc<dyn InferenceHooks>) -> Self {
        Specializer {
            params,
            hooks,
            memo: RwLock::new(HashMap::new()),
            stats: InferenceStats::default(),
        }
    }

    pub fn params(&self) -> &InferenceParams {
        &self.params
    }

    pub fn hooks(&self) -> &Arc<dyn InferenceHooks> {
        &self.hooks
    }

    pub fn stats(&self) -> &InferenceStats {
        &self.stats
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().unwrap().len()
    }

    /// Drop memo entries whose dependencies changed age.
    pub fn prune(&self, table: &MethodTable) {
        self.memo.write().unwrap().retain(|_, h| deps_current(table, h));
    }

    /// Resolve `name` the way a call would, then specialize the chosen method.
    pub fn specialize(&self, table: &MethodTable, name: &str, args: &[Type]) -> Result<Arc<HirFunction>, InferError> {
        let method = self.resolve_entry(table, name, args)?;
        self.specialize_method(table, &method, args)
    }

    fn resolve_entry(&self, table: &MethodTable, name: &str, args: &[Type]) -> Result<Arc<Method>, InferError> {
        if let Some(m) = self.hooks.resolve_call(name, args) {
            check_hook(name, &m, args)?;
            return Ok(m);
        }
        table.dispatch(name, args).map_err(|source| InferError::Dispatch { span: Span::default(), source })
    }

    pub fn specialize_method(
        &self,
        table: &MethodTable,
        method: &Arc<Method>,
        args: &[Type],
    ) -> Result<Arc<HirFunction>, InferError> {
        let mut run = Run { table, stack: Vec::new(), local: HashMap::new() };
        match self.spec(&mut run, method, args, method.body.span)? {
            Specialized::Done(h) => Ok(h),
            Specialized::Cutoff => unreachable!("empty stack cannot cut off"),
        }
    }

    /// Re-run inference over an already lowered function.
    pub fn infer(&self, table: &MethodTable, hir: HirFunction) -> Result<HirFunction, InferError> {
        let mut run = Run { table, stack: vec![hir.key.clone()], local: HashMap::new() };
        self.infer_fn(&mut run, hir)
    }

    fn spec(&self, run: &mut Run, method: &Arc<Method>, args: &[Type], span: Span) -> Result<Specialized, InferError> {
        let key = SpecKey { method: method.id, arg_types: args.to_vec() };
        let depth = run.stack.iter().filter(|k| **k == key).count();
        if depth >= 2 {
            return Ok(Specialized::Cutoff);
        }
        if depth == 0 {
            if let Some(h) = run.local.get(&key) {
                return Ok(Specialized::Done(h.clone()));
            }
            if self.params.specialization_cache_enabled {
                let memo = self.memo.read().unwrap();
                if let Some(h) = memo.get(&key) {
                    if h.age == method.age && deps_current(run.table, h) {
                        self.stats.memo_hits.fetch_add(1, Ordering::Relaxed);
                        return Ok(Specialized::Done(h.clone()));
                    }
                }
            }
        }
        self.stats.lowerings.fetch_add(1, Ordering::Relaxed);
        let hir = lower_ast(run.table, method, args)?;
        run.stack.push(key.clone());
        let r = self.infer_fn(run, hir);
        run.stack.pop();
        let h = Arc::new(r.map_err(|e| match e {
            InferError::Dispatch { span: s, source } if s == Span::default() => InferError::Dispatch { span, source },
            e => e,
        })?);
        if depth == 0 && !h.recursive {
            run.local.insert(key.clone(), h.clone());
            if self.params.specialization_cache_enabled {
                self.memo.write().unwrap().insert(key, h.clone());
            }
        }
        Ok(Specialized::Done(h))
    }

    fn infer_fn(&self, run: &mut Run, mut h: HirFunction) -> Result<HirFunction, InferError> {
        self.stats.inferences.fetch_add(1, Ordering::Relaxed);
        let mut deps = Deps::default();
        loop {
            let mut changed = false;
            let body = std::mem::take(&mut h.body);
            let r = self.walk(run, &mut h, &body, &mut deps, &mut changed, false);
            h.body = body;
            r?;
            if !changed {
                break;
            }
        }
        let mut deps = Deps::default();
        deps.callees.insert((h.key.method, h.age));
        let body = std::mem::take(&mut h.body);
        let mut changed = false;
        let r = self.walk(run, &mut h, &body, &mut deps, &mut changed, true);
        h.body = body;
        r?;
        debug_assert!(!changed, "final pass must be at the fixpoint");

        h.callees = deps.callees.into_iter().collect();
        h.name_deps = deps.names.into_iter().collect();
        h.recursive = deps.recursive;
        h.typed = true;

        let mut unstable = Vec::new();
        for s in h.live_slots() {
            if *h.slot_type(s) == Lattice::Any {
                unstable.push(s);
            }
        }
        for s in &unstable {
            self.hooks.on_unstable(&h.name, &h.slot(*s).name);
        }
        if h.return_type == Lattice::Any {
            self.hooks.on_unstable(&h.name, "return");
        }
        if !self.params.allow_any {
            if h.recursive {
                return Err(InferError::Recursion { function: h.signature(), span: h.span });
            }
            if let Some(s) = unstable.first() {
                let info = h.slot(*s);
                return Err(InferError::Unstable {
                    function: h.signature(),
                    slot: info.name.clone(),
                    span: info.span,
                });
            }
            if h.return_type == Lattice::Any {
                return Err(InferError::Unstable {
                    function: h.signature(),
                    slot: "return".into(),
                    span: h.span,
                });
            }
        }
        Ok(h)
    }

    fn walk(
        &self,
        run: &mut Run,
        h: &mut HirFunction,
        body: &[Stmt],
        deps: &mut Deps,
        changed: &mut bool,
        fin: bool,
    ) -> Result<(), InferError> {
        for s in body {
            let span = s.span;
            match &s.kind {
                StmtKind::Assign { dest, value } => {
                    let t = self.rvalue(run, h, value, span, deps, fin)?;
                    let slot = &mut h.slot_types[dest.0 as usize];
                    let j = slot.join(&t);
                    if j != *slot {
                        *slot = j;
                        *changed = true;
                    }
                }
                StmtKind::Eval(value) => {
                    self.rvalue(run, h, value, span, deps, fin)?;
                }
                StmtKind::SetIndex { array, index, value } => {
                    if fin {
                        let (a, i, v) = (h.operand_type(array), h.operand_type(index), h.operand_type(value));
                        if let (Some(a), Some(i), Some(v)) = (a.concrete(), i.concrete(), v.concrete()) {
                            let Some(elem) = a.element() else {
                                return type_err(span, format!("cannot index {a}"));
                            };
                            if !i.as_scalar().is_some_and(|s| s.is_int()) {
                                return type_err(span, format!("array index must be an integer, got {i}"));
                            }
                            if !storable_into(v, elem) {
                                return type_err(span, format!("cannot store {v} into an array of {elem}"));
                            }
                        }
                    }
                }
                StmtKind::SetField { object, field, value } => {
                    if fin {
                        let (o, v) = (h.operand_type(object), h.operand_type(value));
                        if let (Some(o), Some(v)) = (o.concrete(), v.concrete()) {
                            let Type::Record(r) = o else {
                                return type_err(span, format!("cannot assign field of {o}"));
                            };
                            if !r.mutable {
                                return type_err(span, format!("cannot assign field of immutable record {}", r.name));
                            }
                            let Some(k) = r.field_index(field) else {
                                return type_err(span, format!("{} has no field `{field}`", r.name));
                            };
                            if !storable_into(v, &Type::Scalar(r.fields[k].1)) {
                                return type_err(span, format!("cannot store {v} into field `{field}`"));
                            }
                        }
                    }
                }
                StmtKind::If { cond, then_body, else_body } => {
                    if fin {
                        check_bool(h, cond, span)?;
                    }
                    self.walk(run, h, then_body, deps, changed, fin)?;
                    self.walk(run, h, else_body, deps, changed, fin)?;
                }
                StmtKind::Loop { header, cond, body } => {
                    self.walk(run, h, header, deps, changed, fin)?;
                    if fin {
                        check_bool(h, cond, span)?;
                    }
                    self.walk(run, h, body, deps, changed, fin)?;
                }
                StmtKind::Return(v) => {
                    let t = match v {
                        Some(op) => h.operand_type(op),
                        None => Lattice::Concrete(Type::Nothing),
                    };
                    let j = h.return_type.join(&t);
                    if j != h.return_type {
                        h.return_type = j;
                        *changed = true;
                    }
                }
            }
        }
        Ok(())
    }

    /// Type of an rvalue. Outside the final pass, errors read as Bottom so a
    /// value that only becomes well-typed at the fixpoint is not rejected early.
    fn rvalue(
        &self,
        run: &mut Run,
        h: &mut HirFunction,
        rv: &Rvalue,
        span: Span,
        deps: &mut Deps,
        fin: bool,
    ) -> Result<Lattice, InferError> {
        match self.rvalue_inner(run, h, rv, span, deps) {
            Ok(t) => Ok(t),
            Err(e) if fin => Err(e),
            Err(_) => Ok(Lattice::Bottom),
        }
    }

    fn rvalue_inner(
        &self,
        run: &mut Run,
        h: &mut HirFunction,
        rv: &Rvalue,
        span: Span,
        deps: &mut Deps,
    ) -> Result<Lattice, InferError> {
        let lift = |t: Lattice, f: &dyn Fn(&Type) -> Result<Type, String>| -> Result<Lattice, InferError> {
            match t {
                Lattice::Concrete(t) => f(&t).map(Lattice::Concrete).map_err(|message| InferError::Type { span, message }),
                other => Ok(other),
            }
        };
        match rv {
            Rvalue::Use(op) => Ok(h.operand_type(op)),
            Rvalue::Unary(op, a) => lift(h.operand_type(a), &|t| match (op, t.as_scalar()) {
                (UnOp::Neg, Some(s)) if s.is_numeric() => Ok(t.clone()),
                (UnOp::Not, Some(Scalar::Bool)) => Ok(Type::BOOL),
                _ => Err(format!("unary operator not defined for {t}")),
            }),
            Rvalue::Increment(a) => lift(h.operand_type(a), &|t| match t.as_scalar() {
                Some(s) if s.is_int() => Ok(t.clone()),
                _ => Err(format!("for-loop bounds must be integers, got {t}")),
            }),
            Rvalue::Field(a, name) => lift(h.operand_type(a), &|t| match t {
                Type::Record(r) => match r.field_index(name) {
                    Some(k) => Ok(Type::Scalar(r.fields[k].1)),
                    None => Err(format!("{} has no field `{name}`", r.name)),
                },
                _ => Err(format!("field access `.{name}` on {t}")),
            }),
            Rvalue::Index(a, i) => {
                let (a, i) = (h.operand_type(a), h.operand_type(i));
                match (a, i) {
                    (Lattice::Bottom, _) | (_, Lattice::Bottom) => Ok(Lattice::Bottom),
                    (Lattice::Concrete(a), Lattice::Concrete(i)) => {
                        let Some(e) = a.element() else {
                            return type_err(span, format!("cannot index {a}"));
                        };
                        if !i.as_scalar().is_some_and(|s| s.is_int()) {
                            return type_err(span, format!("array index must be an integer, got {i}"));
                        }
                        Ok(Lattice::Concrete(e.clone()))
                    }
                    (Lattice::Concrete(a), Lattice::Any) => match a.element() {
                        Some(e) => Ok(Lattice::Concrete(e.clone())),
                        None => type_err(span, format!("cannot index {a}")),
                    },
                    _ => Ok(Lattice::Any),
                }
            }
            Rvalue::Call { site, name, args } => {
                let (callee, t) = self.call(run, h, name, args, span, deps)?;
                h.sites[site.0 as usize].callee = callee;
                Ok(t)
            }
        }
    }

    fn call(
        &self,
        run: &mut Run,
        h: &HirFunction,
        name: &CallName,
        args: &[Operand],
        span: Span,
        deps: &mut Deps,
    ) -> Result<(Callee, Lattice), InferError> {
        let fname: Arc<str> = match name {
            CallName::Named(n) => n.clone(),
            CallName::Op(op) => Arc::from(op.symbol()),
            CallName::Slot(s) => match h.slot_type(*s) {
                Lattice::Bottom => return Ok((Callee::Unresolved, Lattice::Bottom)),
                Lattice::Any => return Ok((Callee::Dynamic, Lattice::Any)),
                Lattice::Concrete(Type::Func(f)) => f.clone(),
                Lattice::Concrete(t) => return type_err(span, format!("value of type {t} is not callable")),
            },
        };
        let lat: Vec<Lattice> = args.iter().map(|a| h.operand_type(a)).collect();
        if lat.contains(&Lattice::Bottom) {
            return Ok((Callee::Unresolved, Lattice::Bottom));
        }
        if lat.contains(&Lattice::Any) {
            return Ok((Callee::Dynamic, Lattice::Any));
        }
        let types: Vec<Type> = lat.into_iter().map(|l| l.concrete().unwrap().clone()).collect();

        if let Some(r) = prim(&fname, &types) {
            return Ok(r);
        }
        if let Some(m) = self.hooks.resolve_call(&fname, &types) {
            check_hook(&fname, &m, &types)?;
            return self.method_call(run, &m, &types, span, deps);
        }
        let table = run.table;
        deps.names.insert(fname.to_string(), table.generation(&fname));
        if table.has_methods(&fname) {
            match table.dispatch(&fname, &types) {
                Ok(m) => return self.method_call(run, &m, &types, span, deps),
                Err(e @ TableError::Ambiguous { .. }) => return Err(InferError::Dispatch { span, source: e }),
                Err(e) => {
                    let fallback = table.record(&fname).is_some() || Builtin::lookup(&fname).is_some();
                    if !fallback {
                        return Err(InferError::Dispatch { span, source: e });
                    }
                }
            }
        }
        if table.record(&fname).is_some() {
            let rt = table
                .instantiate_record(&fname, &types)
                .map_err(|source| InferError::Dispatch { span, source })?;
            return Ok((Callee::Construct(rt.clone()), Lattice::Concrete(Type::Record(rt))));
        }
        if let Some(b) = Builtin::lookup(&fname) {
            let t = builtin_type(b, &types, args).map_err(|message| InferError::Type { span, message })?;
            return Ok((Callee::Builtin { builtin: b, arg_types: types }, Lattice::Concrete(t)));
        }
        if let Some(r) = self.hooks.intrinsic_type(&fname, &types, args) {
            let t = r.map_err(|message| InferError::Type { span, message })?;
            return Ok((Callee::Intrinsic { name: fname, arg_types: types, ret: t.clone() }, Lattice::Concrete(t)));
        }
        Err(InferError::Dispatch {
            span,
            source: TableError::NoMethod { name: fname.to_string(), args: types },
        })
    }

    fn method_call(
        &self,
        run: &mut Run,
        m: &Arc<Method>,
        types: &[Type],
        span: Span,
        deps: &mut Deps,
    ) -> Result<(Callee, Lattice), InferError> {
        match self.spec(run, m, types, span)? {
            Specialized::Cutoff => {
                deps.recursive = true;
                deps.callees.insert((m.id, m.age));
                Ok((Callee::Dynamic, Lattice::Any))
            }
            Specialized::Done(callee) => {
                deps.absorb(&callee);
                let ret = callee.return_type.clone();
                Ok((Callee::Method(callee), ret))
            }
        }
    }
}

fn check_hook(name: &str, m: &Method, args: &[Type]) -> Result<(), InferError> {
    if m.applicable(args) {
        Ok(())
    } else {
        Err(InferError::HookContract {
            name: name.to_string(),
            message: format!("{} is not applicable to the argument types", m.signature()),
        })
    }
}

fn type_err<T>(span: Span, message: String) -> Result<T, InferError> {
    Err(InferError::Type { span, message })
}

fn check_bool(h: &HirFunction, cond: &Operand, span: Span) -> Result<(), InferError> {
    match h.operand_type(cond) {
        Lattice::Concrete(t) if t != Type::BOOL => type_err(span, format!("condition must be Bool, got {t}")),
        _ => Ok(()),
    }
}

fn storable_into(v: &Type, slot: &Type) -> bool {
    match (v.as_scalar(), slot.as_scalar()) {
        (Some(a), Some(b)) => a.is_numeric() == b.is_numeric(),
        _ => v == slot,
    }
}

/// Scalar operators take priority over user methods.
fn prim(name: &str, types: &[Type]) -> Option<(Callee, Lattice)> {
    let op = BinOp::from_symbol(name)?;
    let [a, b] = types else { return None };
    let (a, b) = (a.as_scalar()?, b.as_scalar()?);
    if a == Scalar::Bool && b == Scalar::Bool && matches!(op, BinOp::Eq | BinOp::Ne) {
        return Some((Callee::Prim { op, operand: Scalar::Bool }, Lattice::Concrete(Type::BOOL)));
    }
    let s = Scalar::promote(a, b)?;
    let ret = if op.is_comparison() { Scalar::Bool } else { s };
    Some((Callee::Prim { op, operand: s }, Lattice::Concrete(Type::Scalar(ret))))
}

fn builtin_type(b: Builtin, types: &[Type], operands: &[Operand]) -> Result<Type, String> {
    let sc = |i: usize| types.get(i).and_then(|t| t.as_scalar());
    let arity = |n: usize| {
        if types.len() == n {
            Ok(())
        } else {
            Err(format!("{b:?} expects {n} argument(s), got {}", types.len()).to_lowercase())
        }
    };
    match b {
        Builtin::Length => {
            arity(1)?;
            match types[0].element() {
                Some(_) => Ok(Type::I64),
                None => Err(format!("no length for {}", types[0])),
            }
        }
        Builtin::Zeros => {
            arity(2)?;
            let elem = match &operands[0] {
                Operand::Type(p) => p.concrete(),
                _ => None,
            };
            match (elem, sc(1)) {
                (Some(e), Some(n)) if e.is_storable() && n.is_int() => Ok(Type::array(e)),
                _ => Err("zeros(T, n) expects a concrete storable type and an integer length".into()),
            }
        }
        Builtin::Throw => {
            arity(1)?;
            match sc(0) {
                Some(s) if s.is_int() => Ok(Type::Nothing),
                _ => Err("throw expects an integer code".into()),
            }
        }
        Builtin::Isa => {
            arity(2)?;
            match &operands[1] {
                Operand::Type(_) => Ok(Type::BOOL),
                _ => Err("isa expects a type as second argument".into()),
            }
        }
        Builtin::Sqrt => {
            arity(1)?;
            match sc(0) {
                Some(s) if s.is_float() => Ok(Type::Scalar(s)),
                Some(s) if s.is_int() => Ok(Type::F64),
                _ => Err(format!("no method matching sqrt(::{})", types[0])),
            }
        }
        Builtin::Abs => {
            arity(1)?;
            match sc(0) {
                Some(s) if s.is_numeric() => Ok(Type::Scalar(s)),
                _ => Err(format!("no method matching abs(::{})", types[0])),
            }
        }
        Builtin::Pow | Builtin::Min | Builtin::Max => {
            arity(2)?;
            match (sc(0), sc(1)) {
                (Some(a), Some(c)) => Scalar::promote(a, c)
                    .map(Type::Scalar)
                    .ok_or_else(|| format!("no arithmetic between {a} and {c}")),
                _ => Err(format!("numeric arguments required, got {} and {}", types[0], types[1])),
            }
        }
        Builtin::Convert(s) => {
            arity(1)?;
            match sc(0) {
                Some(_) => Ok(Type::Scalar(s)),
                None => Err(format!("cannot convert {} to {s}", types[0])),
            }
        }
    }
}

/// Infer a lowered function with a throwaway specializer.
pub fn infer(
    hir: HirFunction,
    params: &InferenceParams,
    hooks: Arc<dyn InferenceHooks>,
    table: &MethodTable,
) -> Result<HirFunction, InferError> {
    Specializer::new(params.clone(), hooks).infer(table, hir)
}

/// Dispatch, lower and infer `name` at `args` without a persistent memo.
pub fn specialize(
    table: &MethodTable,
    name: &str,
    args: &[Type],
    params: &InferenceParams,
    hooks: Arc<dyn InferenceHooks>,
) -> Result<Arc<HirFunction>, InferError> {
    Specializer::new(params.clone(), hooks).specialize(table, name, args)
}
