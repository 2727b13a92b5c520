//! Typed high-level IR: flattened expressions over named slots, structured
//! control flow, and per-call-site resolutions filled in by inference.

mod infer;
mod lower;
mod print;

use std::fmt;
use std::sync::Arc;

use crate::frontend::ast::{BinOp, UnOp};
use crate::frontend::builtins::Builtin;
use crate::frontend::table::MethodId;
use crate::frontend::types::{RecordType, Scalar, Type, TypePattern};
use crate::span::Span;

pub use infer::{
    infer, specialize, InferError, InferenceHooks, InferenceParams, InferenceStats, NoHooks, Specializer,
};
pub use lower::{lower_ast, LowerError};

/// Element of the type lattice `Bottom ⊑ concrete ⊑ Any`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Lattice {
    Bottom,
    Concrete(Type),
    Any,
}

impl Lattice {
    pub fn join(&self, other: &Lattice) -> Lattice {
        match (self, other) {
            (Lattice::Bottom, t) | (t, Lattice::Bottom) => t.clone(),
            (Lattice::Concrete(a), Lattice::Concrete(b)) if a == b => self.clone(),
            _ => Lattice::Any,
        }
    }

    pub fn leq(&self, other: &Lattice) -> bool {
        match (self, other) {
            (Lattice::Bottom, _) | (_, Lattice::Any) => true,
            (Lattice::Concrete(a), Lattice::Concrete(b)) => a == b,
            _ => false,
        }
    }

    pub fn concrete(&self) -> Option<&Type> {
        match self {
            Lattice::Concrete(t) => Some(t),
            _ => None,
        }
    }
}

impl From<Type> for Lattice {
    fn from(t: Type) -> Self {
        Lattice::Concrete(t)
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lattice::Bottom => f.write_str("Union{}"),
            Lattice::Concrete(t) => write!(f, "{t}"),
            Lattice::Any => f.write_str("Any"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Param,
    Local,
    Temp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotInfo {
    pub name: String,
    pub kind: SlotKind,
    pub span: Span,
}

/// Literal constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Const {
    Nothing,
    Bool(bool),
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
}

impl Const {
    pub fn ty(&self) -> Type {
        match self {
            Const::Nothing => Type::Nothing,
            Const::Bool(_) => Type::BOOL,
            Const::I32(_) => Type::I32,
            Const::I64(_) => Type::I64,
            Const::F32(_) => Type::F32,
            Const::F64(_) => Type::F64,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Const::I32(v) => Some(*v as i64),
            Const::I64(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Const {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const::Nothing => f.write_str("nothing"),
            Const::Bool(b) => write!(f, "{b}"),
            Const::I32(v) => write!(f, "{v}i32"),
            Const::I64(v) => write!(f, "{v}"),
            Const::F32(v) => write!(f, "{v:?}f0"),
            Const::F64(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Slot(SlotId),
    Const(Const),
    /// A type used as a value (`zeros(Float32, n)`, `isa(x, Point)`).
    Type(TypePattern),
    /// A function symbol used as a value (`reduce(+, ...)`).
    Func(Arc<str>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub enum CallName {
    Named(Arc<str>),
    Op(BinOp),
    /// Call through a local holding a function value.
    Slot(SlotId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rvalue {
    Use(Operand),
    Unary(UnOp, Operand),
    Call { site: SiteId, name: CallName, args: Vec<Operand> },
    Index(Operand, Operand),
    Field(Operand, Arc<str>),
    /// `x + one(typeof(x))`, the for-loop step.
    Increment(Operand),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { dest: SlotId, value: Rvalue },
    Eval(Rvalue),
    SetIndex { array: Operand, index: Operand, value: Operand },
    SetField { object: Operand, field: Arc<str>, value: Operand },
    If { cond: Operand, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    /// `header` recomputes `cond` before every iteration.
    Loop { header: Vec<Stmt>, cond: Operand, body: Vec<Stmt> },
    Return(Option<Operand>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

/// Identity of a specialization: a method at a concrete argument tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpecKey {
    pub method: MethodId,
    pub arg_types: Vec<Type>,
}

/// What a call site resolved to.
#[derive(Debug, Clone, PartialEq)]
pub enum Callee {
    /// Not yet known (some argument still Bottom).
    Unresolved,
    /// Some argument is `Any`: resolution deferred to run time.
    Dynamic,
    /// Scalar operator on operands promoted to `operand`.
    Prim { op: BinOp, operand: Scalar },
    Method(Arc<HirFunction>),
    Builtin { builtin: Builtin, arg_types: Vec<Type> },
    Construct(Arc<RecordType>),
    Intrinsic { name: Arc<str>, arg_types: Vec<Type>, ret: Type },
}

impl Callee {
    pub fn describe(&self) -> String {
        match self {
            Callee::Unresolved => "unresolved".into(),
            Callee::Dynamic => "dynamic".into(),
            Callee::Prim { op, operand } => format!("prim {} {operand}", op.symbol()),
            Callee::Method(h) => format!("method {}", h.signature()),
            Callee::Builtin { builtin, .. } => format!("builtin {builtin:?}").to_lowercase(),
            Callee::Construct(r) => format!("new {}", Type::Record(r.clone())),
            Callee::Intrinsic { name, .. } => format!("intrinsic {name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallSite {
    pub callee: Callee,
    pub span: Span,
}

/// A method body lowered for one argument-type tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct HirFunction {
    pub name: String,
    pub key: SpecKey,
    /// Age of the method when this specialization was produced.
    pub age: u64,
    pub params: Vec<SlotId>,
    pub slots: Vec<SlotInfo>,
    pub slot_types: Vec<Lattice>,
    pub body: Vec<Stmt>,
    pub sites: Vec<CallSite>,
    pub return_type: Lattice,
    /// Every method (transitively) dispatched, with its age at inference time.
    pub callees: Vec<(MethodId, u64)>,
    /// Generic-function names looked up in the method table, with their generation.
    pub name_deps: Vec<(String, u64)>,
    /// Inference cut off a recursive cycle inside this specialization.
    pub recursive: bool,
    pub typed: bool,
    pub span: Span,
}

impl HirFunction {
    pub fn slot_type(&self, s: SlotId) -> &Lattice {
        &self.slot_types[s.0 as usize]
    }

    pub fn slot(&self, s: SlotId) -> &SlotInfo {
        &self.slots[s.0 as usize]
    }

    pub fn site(&self, s: SiteId) -> &CallSite {
        &self.sites[s.0 as usize]
    }

    pub fn signature(&self) -> String {
        let ts: Vec<String> = self.key.arg_types.iter().map(|t| t.to_string()).collect();
        format!("{}({})", self.name, ts.join(", "))
    }

    /// Type of an operand under the current slot types.
    pub fn operand_type(&self, op: &Operand) -> Lattice {
        match op {
            Operand::Slot(s) => self.slot_type(*s).clone(),
            Operand::Const(c) => Lattice::Concrete(c.ty()),
            Operand::Type(_) => Lattice::Concrete(Type::Nothing),
            Operand::Func(f) => Lattice::Concrete(Type::Func(f.clone())),
        }
    }

    /// Slots that are read or written anywhere in the body, plus params.
    pub fn live_slots(&self) -> Vec<SlotId> {
        let mut live = vec![false; self.slots.len()];
        for p in &self.params {
            live[p.0 as usize] = true;
        }
        fn op(o: &Operand, live: &mut [bool]) {
            if let Operand::Slot(s) = o {
                live[s.0 as usize] = true;
            }
        }
        fn rv(r: &Rvalue, live: &mut [bool]) {
            match r {
                Rvalue::Use(a) | Rvalue::Unary(_, a) | Rvalue::Field(a, _) | Rvalue::Increment(a) => op(a, live),
                Rvalue::Call { args, .. } => args.iter().for_each(|a| op(a, live)),
                Rvalue::Index(a, b) => {
                    op(a, live);
                    op(b, live);
                }
            }
        }
        fn walk(body: &[Stmt], live: &mut [bool]) {
            for s in body {
                match &s.kind {
                    StmtKind::Assign { dest, value } => {
                        live[dest.0 as usize] = true;
                        rv(value, live);
                    }
                    StmtKind::Eval(r) => rv(r, live),
                    StmtKind::SetIndex { array, index, value } => {
                        op(array, live);
                        op(index, live);
                        op(value, live);
                    }
                    StmtKind::SetField { object, value, .. } => {
                        op(object, live);
                        op(value, live);
                    }
                    StmtKind::If { cond, then_body, else_body } => {
                        op(cond, live);
                        walk(then_body, live);
                        walk(else_body, live);
                    }
                    StmtKind::Loop { header, cond, body } => {
                        walk(header, live);
                        op(cond, live);
                        walk(body, live);
                    }
                    StmtKind::Return(Some(o)) => op(o, live),
                    StmtKind::Return(None) => {}
                }
            }
        }
        walk(&self.body, &mut live);
        live.iter()
            .enumerate()
            .filter(|(_, l)| **l)
            .map(|(i, _)| SlotId(i as u32))
            .collect()
    }

    /// Stable text dump: one statement per line, `slot: Type = expr`.
    pub fn dump(&self) -> String {
        print::dump(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn elems() -> Vec<Lattice> {
        vec![
            Lattice::Bottom,
            Lattice::Concrete(Type::I64),
            Lattice::Concrete(Type::F64),
            Lattice::Any,
        ]
    }

    #[test]
    fn join_laws() {
        for a in elems() {
            assert_eq!(Lattice::Bottom.join(&a), a);
            assert_eq!(a.join(&a), a);
            for b in elems() {
                assert_eq!(a.join(&b), b.join(&a));
                let j = a.join(&b);
                assert!(a.leq(&j) && b.leq(&j));
            }
        }
        assert_eq!(
            Lattice::Concrete(Type::I64).join(&Lattice::Concrete(Type::F64)),
            Lattice::Any
        );
    }

    #[test]
    fn partial_order_laws() {
        let es = elems();
        for a in &es {
            assert!(a.leq(a));
            for b in &es {
                if a.leq(b) && b.leq(a) {
                    assert_eq!(a, b);
                }
                for c in &es {
                    if a.leq(b) && b.leq(c) {
                        assert!(a.leq(c));
                    }
                }
            }
        }
    }
}
