//! AST → untyped HIR.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::*;
use crate::frontend::ast::{self, BinOp, Expr, ExprKind, StmtKind as AstStmt};
use crate::frontend::builtins::index_intrinsic;
use crate::frontend::table::{Method, MethodTable};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LowerError {
    #[error("{span}: undefined identifier `{name}`")]
    Undefined { name: String, span: Span },
    #[error("{span}: invalid assignment target")]
    InvalidTarget { span: Span },
    #[error("{name} takes {expected} argument(s), specialization requested {got}")]
    Arity { name: String, expected: usize, got: usize },
}

struct Lowerer<'a> {
    table: &'a MethodTable,
    vars: HashMap<String, SlotId>,
    slots: Vec<SlotInfo>,
    sites: Vec<CallSite>,
    temps: u32,
}

/// Lower a method body for the given argument types. Slots start at Bottom
/// except params, which take the argument types.
pub fn lower_ast(table: &MethodTable, method: &Method, arg_types: &[Type]) -> Result<HirFunction, LowerError> {
    let def = &method.body;
    if def.params.len() != arg_types.len() {
        return Err(LowerError::Arity {
            name: method.name.clone(),
            expected: def.params.len(),
            got: arg_types.len(),
        });
    }
    let mut lw = Lowerer {
        table,
        vars: HashMap::new(),
        slots: Vec::new(),
        sites: Vec::new(),
        temps: 0,
    };
    let mut params = Vec::new();
    for p in &def.params {
        params.push(lw.new_slot(&p.name, SlotKind::Param, p.span));
    }
    let mut assigned = Vec::new();
    collect_assigned(&def.body, &mut assigned);
    for (name, span) in assigned {
        if !lw.vars.contains_key(&name) {
            lw.new_slot(&name, SlotKind::Local, span);
        }
    }
    let mut body = Vec::new();
    lw.block(&def.body, &mut body)?;
    if falls_through(&body) {
        body.push(Stmt { kind: StmtKind::Return(None), span: def.span });
    }
    let mut slot_types = vec![Lattice::Bottom; lw.slots.len()];
    for (p, t) in params.iter().zip(arg_types) {
        slot_types[p.0 as usize] = Lattice::Concrete(t.clone());
    }
    Ok(HirFunction {
        name: method.name.clone(),
        key: SpecKey { method: method.id, arg_types: arg_types.to_vec() },
        age: method.age,
        params,
        slots: lw.slots,
        slot_types,
        body,
        sites: lw.sites,
        return_type: Lattice::Bottom,
        callees: Vec::new(),
        name_deps: Vec::new(),
        recursive: false,
        typed: false,
        span: def.span,
    })
}

fn collect_assigned(body: &[ast::Stmt], out: &mut Vec<(String, Span)>) {
    for s in body {
        match &s.kind {
            AstStmt::Assign { target, .. } => {
                if let ExprKind::Var(n) = &target.kind {
                    out.push((n.clone(), target.span));
                }
            }
            AstStmt::If { then_body, else_body, .. } => {
                collect_assigned(then_body, out);
                collect_assigned(else_body, out);
            }
            AstStmt::While { body, .. } => collect_assigned(body, out),
            AstStmt::For { var, body, .. } => {
                out.push((var.clone(), s.span));
                collect_assigned(body, out);
            }
            AstStmt::Expr(_) | AstStmt::Return(_) => {}
        }
    }
}

fn falls_through(body: &[Stmt]) -> bool {
    for s in body {
        match &s.kind {
            StmtKind::Return(_) => return false,
            StmtKind::If { then_body, else_body, .. } if !falls_through(then_body) && !falls_through(else_body) => {
                return false
            }
            _ => {}
        }
    }
    true
}

impl Lowerer<'_> {
    fn new_slot(&mut self, name: &str, kind: SlotKind, span: Span) -> SlotId {
        let id = SlotId(self.slots.len() as u32);
        self.slots.push(SlotInfo { name: name.to_string(), kind, span });
        if kind != SlotKind::Temp {
            self.vars.insert(name.to_string(), id);
        }
        id
    }

    fn temp(&mut self, span: Span) -> SlotId {
        self.temps += 1;
        let name = format!("%{}", self.temps);
        self.new_slot(&name, SlotKind::Temp, span)
    }

    fn site(&mut self, span: Span) -> SiteId {
        self.sites.push(CallSite { callee: Callee::Unresolved, span });
        SiteId(self.sites.len() as u32 - 1)
    }

    fn block(&mut self, body: &[ast::Stmt], out: &mut Vec<Stmt>) -> Result<(), LowerError> {
        for s in body {
            self.stmt(s, out)?;
        }
        Ok(())
    }

    fn push(out: &mut Vec<Stmt>, kind: StmtKind, span: Span) {
        out.push(Stmt { kind, span });
    }

    fn stmt(&mut self, s: &ast::Stmt, out: &mut Vec<Stmt>) -> Result<(), LowerError> {
        let span = s.span;
        match &s.kind {
            AstStmt::Expr(e) => {
                let r = self.rvalue(e, out)?;
                if !matches!(r, Rvalue::Use(_)) {
                    Self::push(out, StmtKind::Eval(r), span);
                }
            }
            AstStmt::Assign { target, value } => match &target.kind {
                ExprKind::Var(name) => {
                    let dest = self.vars[name];
                    let r = self.rvalue(value, out)?;
                    Self::push(out, StmtKind::Assign { dest, value: r }, span);
                }
                ExprKind::Index { base, index } => {
                    let array = self.expr(base, out)?;
                    let index = self.expr(index, out)?;
                    let value = self.expr(value, out)?;
                    Self::push(out, StmtKind::SetIndex { array, index, value }, target.span);
                }
                ExprKind::Field { base, name } => {
                    let object = self.expr(base, out)?;
                    let value = self.expr(value, out)?;
                    let field = Arc::from(name.as_str());
                    Self::push(out, StmtKind::SetField { object, field, value }, target.span);
                }
                _ => return Err(LowerError::InvalidTarget { span: target.span }),
            },
            AstStmt::Return(e) => {
                let v = match e {
                    Some(e) => Some(self.expr(e, out)?),
                    None => None,
                };
                Self::push(out, StmtKind::Return(v), span);
            }
            AstStmt::If { cond, then_body, else_body } => {
                let c = self.expr(cond, out)?;
                let mut t = Vec::new();
                self.block(then_body, &mut t)?;
                let mut f = Vec::new();
                self.block(else_body, &mut f)?;
                Self::push(out, StmtKind::If { cond: c, then_body: t, else_body: f }, span);
            }
            AstStmt::While { cond, body } => {
                let mut header = Vec::new();
                let c = self.expr(cond, &mut header)?;
                let mut b = Vec::new();
                self.block(body, &mut b)?;
                Self::push(out, StmtKind::Loop { header, cond: c, body: b }, span);
            }
            AstStmt::For { var, start, stop, body } => {
                let v = self.vars[var];
                let r = self.rvalue(start, out)?;
                Self::push(out, StmtKind::Assign { dest: v, value: r }, span);
                let stop = self.expr(stop, out)?;
                let stop = match stop {
                    Operand::Slot(s) if self.slots[s.0 as usize].kind != SlotKind::Temp => {
                        // The bound is evaluated once; copy so body writes do not affect it.
                        let t = self.temp(span);
                        Self::push(out, StmtKind::Assign { dest: t, value: Rvalue::Use(Operand::Slot(s)) }, span);
                        Operand::Slot(t)
                    }
                    other => other,
                };
                let mut header = Vec::new();
                let c = self.temp(span);
                let site = self.site(span);
                let test = Rvalue::Call {
                    site,
                    name: CallName::Op(BinOp::Le),
                    args: vec![Operand::Slot(v), stop],
                };
                Self::push(&mut header, StmtKind::Assign { dest: c, value: test }, span);
                let mut b = Vec::new();
                self.block(body, &mut b)?;
                let step = Rvalue::Increment(Operand::Slot(v));
                Self::push(&mut b, StmtKind::Assign { dest: v, value: step }, span);
                Self::push(out, StmtKind::Loop { header, cond: Operand::Slot(c), body: b }, span);
            }
        }
        Ok(())
    }

    /// Lower to an operand, spilling non-trivial values into a temporary.
    fn expr(&mut self, e: &Expr, out: &mut Vec<Stmt>) -> Result<Operand, LowerError> {
        match self.rvalue(e, out)? {
            Rvalue::Use(op) => Ok(op),
            r => {
                let t = self.temp(e.span);
                Self::push(out, StmtKind::Assign { dest: t, value: r }, e.span);
                Ok(Operand::Slot(t))
            }
        }
    }

    fn rvalue(&mut self, e: &Expr, out: &mut Vec<Stmt>) -> Result<Rvalue, LowerError> {
        let span = e.span;
        Ok(match &e.kind {
            ExprKind::Int(v) => Rvalue::Use(Operand::Const(Const::I64(*v))),
            ExprKind::Int32(v) => Rvalue::Use(Operand::Const(Const::I32(*v))),
            ExprKind::Float(v) => Rvalue::Use(Operand::Const(Const::F64(*v))),
            ExprKind::Float32(v) => Rvalue::Use(Operand::Const(Const::F32(*v))),
            ExprKind::Bool(b) => Rvalue::Use(Operand::Const(Const::Bool(*b))),
            ExprKind::OpRef(op) => Rvalue::Use(Operand::Func(Arc::from(op.symbol()))),
            ExprKind::Var(name) => Rvalue::Use(self.name_operand(name, span)?),
            ExprKind::Binary(op @ (BinOp::And | BinOp::Or), a, b) => {
                let t = self.temp(span);
                let ra = self.rvalue(a, out)?;
                Self::push(out, StmtKind::Assign { dest: t, value: ra }, a.span);
                let mut rhs = Vec::new();
                let rb = self.rvalue(b, &mut rhs)?;
                Self::push(&mut rhs, StmtKind::Assign { dest: t, value: rb }, b.span);
                let (then_body, else_body) = if *op == BinOp::And { (rhs, vec![]) } else { (vec![], rhs) };
                Self::push(out, StmtKind::If { cond: Operand::Slot(t), then_body, else_body }, span);
                Rvalue::Use(Operand::Slot(t))
            }
            ExprKind::Binary(op, a, b) => {
                let a = self.expr(a, out)?;
                let b = self.expr(b, out)?;
                let site = self.site(span);
                Rvalue::Call { site, name: CallName::Op(*op), args: vec![a, b] }
            }
            ExprKind::Unary(op, a) => {
                let a = self.expr(a, out)?;
                Rvalue::Unary(*op, a)
            }
            ExprKind::Call { callee, args } => {
                let mut ops = Vec::with_capacity(args.len());
                for a in args {
                    ops.push(self.expr(a, out)?);
                }
                let name = match self.vars.get(callee) {
                    Some(s) => CallName::Slot(*s),
                    None => CallName::Named(Arc::from(callee.as_str())),
                };
                let site = self.site(span);
                Rvalue::Call { site, name, args: ops }
            }
            ExprKind::Index { base, index } => {
                let b = self.expr(base, out)?;
                let i = self.expr(index, out)?;
                Rvalue::Index(b, i)
            }
            ExprKind::Field { base, name } => {
                if let ExprKind::Call { callee, args } = &base.kind {
                    if args.is_empty() && !self.vars.contains_key(callee) {
                        if let Some(intr) = index_intrinsic(callee, name) {
                            let site = self.site(span);
                            return Ok(Rvalue::Call {
                                site,
                                name: CallName::Named(Arc::from(intr.as_str())),
                                args: vec![],
                            });
                        }
                    }
                }
                let b = self.expr(base, out)?;
                Rvalue::Field(b, Arc::from(name.as_str()))
            }
        })
    }

    /// Identifiers that are not variables resolve to types or functions.
    fn name_operand(&self, name: &str, span: Span) -> Result<Operand, LowerError> {
        if let Some(s) = self.vars.get(name) {
            return Ok(Operand::Slot(*s));
        }
        if let Some(s) = Scalar::from_name(name) {
            return Ok(Operand::Type(TypePattern::Exact(Type::Scalar(s))));
        }
        if name == "Array" {
            return Ok(Operand::Type(TypePattern::ArrayOf(Box::new(TypePattern::Any))));
        }
        if let Some(r) = self.table.record(name) {
            return Ok(Operand::Type(TypePattern::RecordName(r.name.clone())));
        }
        if self.table.has_methods(name) || Builtin::lookup(name).is_some() {
            return Ok(Operand::Func(Arc::from(name)));
        }
        Err(LowerError::Undefined { name: name.to_string(), span })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parser::parse;

    fn lower(src: &str, name: &str, types: &[Type]) -> Result<HirFunction, LowerError> {
        let mut t = MethodTable::new();
        t.load(&parse(src).unwrap()).unwrap();
        let m = t.dispatch(name, types).unwrap();
        lower_ast(&t, &m, types)
    }

    fn count(body: &[Stmt], pred: &dyn Fn(&StmtKind) -> bool) -> usize {
        body.iter()
            .map(|s| {
                let inner = match &s.kind {
                    StmtKind::If { then_body, else_body, .. } => count(then_body, pred) + count(else_body, pred),
                    StmtKind::Loop { header, body, .. } => count(header, pred) + count(body, pred),
                    _ => 0,
                };
                inner + pred(&s.kind) as usize
            })
            .sum()
    }

    #[test]
    fn vadd_shape() {
        let src = "function vadd(a, b, c)\n\
                   i = (blockIdx().x-1) * blockDim().x + threadIdx().x\n\
                   c[i] = a[i] + b[i]\n\
                   return\nend";
        let arr = Type::array(Type::F32);
        let h = lower(src, "vadd", &[arr.clone(), arr.clone(), arr]).unwrap();
        let loads = count(&h.body, &|k| matches!(k, StmtKind::Assign { value: Rvalue::Index(..), .. }));
        let stores = count(&h.body, &|k| matches!(k, StmtKind::SetIndex { .. }));
        let adds = count(&h.body, &|k| {
            matches!(k, StmtKind::Assign { value: Rvalue::Call { name: CallName::Op(BinOp::Add), .. }, .. })
        });
        assert_eq!((loads, stores), (2, 1));
        // One add for the index computation and one for the element sum.
        assert_eq!(adds, 2);
        assert!(matches!(h.body.last().unwrap().kind, StmtKind::Return(None)));
    }

    #[test]
    fn empty_kernel_is_single_return() {
        let h = lower("function k() return end", "k", &[]).unwrap();
        assert_eq!(h.body.len(), 1);
        assert_eq!(h.body[0].kind, StmtKind::Return(None));
    }

    #[test]
    fn undefined_identifier_is_named() {
        let e = lower("function k(x) return x + q end", "k", &[Type::I64]).unwrap_err();
        assert!(matches!(&e, LowerError::Undefined { name, .. } if name == "q"), "{e}");
        assert!(e.to_string().contains("`q`"));
    }

    #[test]
    fn implicit_return_only_when_falling_through() {
        let h = lower("function k(x) if x > 0 return 1 else return 2 end end", "k", &[Type::I64]).unwrap();
        assert!(matches!(h.body.last().unwrap().kind, StmtKind::If { .. }));
    }
}
