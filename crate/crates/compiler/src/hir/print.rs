use std::fmt::Write;

use super::*;

fn operand(h: &HirFunction, op: &Operand) -> String {
    match op {
        Operand::Slot(s) => h.slot(*s).name.clone(),
        Operand::Const(c) => c.to_string(),
        Operand::Type(t) => t.to_string(),
        Operand::Func(f) => f.to_string(),
    }
}

fn rvalue(h: &HirFunction, rv: &Rvalue) -> String {
    match rv {
        Rvalue::Use(op) => operand(h, op),
        Rvalue::Unary(UnOp::Neg, a) => format!("-{}", operand(h, a)),
        Rvalue::Unary(UnOp::Not, a) => format!("!{}", operand(h, a)),
        Rvalue::Increment(a) => format!("incr({})", operand(h, a)),
        Rvalue::Index(a, i) => format!("{}[{}]", operand(h, a), operand(h, i)),
        Rvalue::Field(a, f) => format!("{}.{f}", operand(h, a)),
        Rvalue::Call { site, name, args } => {
            let callee = match name {
                CallName::Named(n) => n.to_string(),
                CallName::Op(op) => op.symbol().to_string(),
                CallName::Slot(s) => h.slot(*s).name.clone(),
            };
            let args: Vec<String> = args.iter().map(|a| operand(h, a)).collect();
            let mut s = format!("{callee}({})", args.join(", "));
            let c = &h.site(*site).callee;
            if *c != Callee::Unresolved {
                let _ = write!(s, "  # {}", c.describe());
            }
            s
        }
    }
}

fn stmts(out: &mut String, h: &HirFunction, body: &[Stmt], depth: usize) {
    let pad = "  ".repeat(depth);
    for s in body {
        match &s.kind {
            StmtKind::Assign { dest, value } => {
                let _ = writeln!(out, "{pad}{}: {} = {}", h.slot(*dest).name, h.slot_type(*dest), rvalue(h, value));
            }
            StmtKind::Eval(r) => {
                let _ = writeln!(out, "{pad}{}", rvalue(h, r));
            }
            StmtKind::SetIndex { array, index, value } => {
                let _ = writeln!(out, "{pad}{}[{}] = {}", operand(h, array), operand(h, index), operand(h, value));
            }
            StmtKind::SetField { object, field, value } => {
                let _ = writeln!(out, "{pad}{}.{field} = {}", operand(h, object), operand(h, value));
            }
            StmtKind::If { cond, then_body, else_body } => {
                let _ = writeln!(out, "{pad}if {}", operand(h, cond));
                stmts(out, h, then_body, depth + 1);
                if !else_body.is_empty() {
                    let _ = writeln!(out, "{pad}else");
                    stmts(out, h, else_body, depth + 1);
                }
                let _ = writeln!(out, "{pad}end");
            }
            StmtKind::Loop { header, cond, body } => {
                let _ = writeln!(out, "{pad}loop");
                stmts(out, h, header, depth + 1);
                let _ = writeln!(out, "{pad}while {}", operand(h, cond));
                stmts(out, h, body, depth + 1);
                let _ = writeln!(out, "{pad}end");
            }
            StmtKind::Return(None) => {
                let _ = writeln!(out, "{pad}return");
            }
            StmtKind::Return(Some(v)) => {
                let _ = writeln!(out, "{pad}return {}", operand(h, v));
            }
        }
    }
}

pub(super) fn dump(h: &HirFunction) -> String {
    let mut out = String::new();
    let params: Vec<String> = h
        .params
        .iter()
        .map(|p| format!("{}::{}", h.slot(*p).name, h.slot_type(*p)))
        .collect();
    let _ = writeln!(out, "function {}({}) -> {}", h.name, params.join(", "), h.return_type);
    stmts(&mut out, h, &h.body, 1);
    out.push_str("end\n");
    out
}
