//! AST printers: an indented s-expression dump and a KSL source printer.

use super::ast::*;

fn float_text(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn float32_text(v: f32) -> String {
    let s = format!("{v:?}");
    if s.contains('e') {
        s.replacen('e', "f", 1)
    } else {
        format!("{s}f0")
    }
}

fn type_text(t: &TypeExpr) -> String {
    if t.args.is_empty() {
        t.name.clone()
    } else {
        let args: Vec<String> = t.args.iter().map(type_text).collect();
        format!("{}{{{}}}", t.name, args.join(","))
    }
}

pub mod sexpr {
    use super::*;
    use std::fmt::Write;

    pub fn expr(e: &Expr) -> String {
        match &e.kind {
            ExprKind::Int(v) => v.to_string(),
            ExprKind::Int32(v) => format!("{v}i32"),
            ExprKind::Float(v) => float_text(*v),
            ExprKind::Float32(v) => float32_text(*v),
            ExprKind::Bool(b) => b.to_string(),
            ExprKind::Var(n) => n.clone(),
            ExprKind::OpRef(op) => format!("(opref {})", op.symbol()),
            ExprKind::Binary(op, a, b) => format!("({} {} {})", op.symbol(), expr(a), expr(b)),
            ExprKind::Unary(UnOp::Neg, a) => format!("(neg {})", expr(a)),
            ExprKind::Unary(UnOp::Not, a) => format!("(not {})", expr(a)),
            ExprKind::Call { callee, args } => {
                let mut s = format!("(call {callee}");
                for a in args {
                    s.push(' ');
                    s.push_str(&expr(a));
                }
                s.push(')');
                s
            }
            ExprKind::Index { base, index } => format!("(index {} {})", expr(base), expr(index)),
            ExprKind::Field { base, name } => format!("(. {} {name})", expr(base)),
        }
    }

    fn stmts(out: &mut String, body: &[Stmt], depth: usize) {
        for s in body {
            stmt(out, s, depth);
        }
    }

    fn stmt(out: &mut String, s: &Stmt, depth: usize) {
        let pad = "  ".repeat(depth);
        match &s.kind {
            StmtKind::Expr(e) => {
                let _ = writeln!(out, "{pad}{}", expr(e));
            }
            StmtKind::Assign { target, value } => {
                let _ = writeln!(out, "{pad}(= {} {})", expr(target), expr(value));
            }
            StmtKind::Return(None) => {
                let _ = writeln!(out, "{pad}(return)");
            }
            StmtKind::Return(Some(e)) => {
                let _ = writeln!(out, "{pad}(return {})", expr(e));
            }
            StmtKind::If { cond, then_body, else_body } => {
                let _ = writeln!(out, "{pad}(if {}", expr(cond));
                let _ = writeln!(out, "{pad}  (then");
                stmts(out, then_body, depth + 2);
                let _ = writeln!(out, "{pad}  )");
                if !else_body.is_empty() {
                    let _ = writeln!(out, "{pad}  (else");
                    stmts(out, else_body, depth + 2);
                    let _ = writeln!(out, "{pad}  )");
                }
                let _ = writeln!(out, "{pad})");
            }
            StmtKind::While { cond, body } => {
                let _ = writeln!(out, "{pad}(while {}", expr(cond));
                stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad})");
            }
            StmtKind::For { var, start, stop, body } => {
                let _ = writeln!(out, "{pad}(for {var} {} {}", expr(start), expr(stop));
                stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad})");
            }
        }
    }

    /// Indented s-expression dump of a whole program.
    pub fn ast(ast: &Ast) -> String {
        let mut out = String::new();
        for item in &ast.items {
            match item {
                Item::Function(f) => {
                    let params: Vec<String> = f
                        .params
                        .iter()
                        .map(|p| match &p.ty {
                            Some(t) => format!("(:: {} {})", p.name, type_text(t)),
                            None => p.name.clone(),
                        })
                        .collect();
                    let _ = writeln!(out, "(function {} ({})", f.name, params.join(" "));
                    stmts(&mut out, &f.body, 1);
                    out.push_str(")\n");
                }
                Item::Record(r) => {
                    let fields: Vec<String> = r
                        .fields
                        .iter()
                        .map(|fd| match &fd.ty {
                            Some(t) => format!("(:: {} {})", fd.name, type_text(t)),
                            None => fd.name.clone(),
                        })
                        .collect();
                    let kw = if r.mutable { "mutable-record" } else { "record" };
                    let _ = writeln!(out, "({kw} {} {})", r.name, fields.join(" "));
                }
                Item::Stmt(s) => stmt(&mut out, s, 0),
            }
        }
        out
    }
}

pub mod source {
    use super::*;
    use std::fmt::Write;

    /// Fully parenthesized so that re-parsing yields the same tree.
    pub fn expr(e: &Expr) -> String {
        match &e.kind {
            ExprKind::Int(v) => v.to_string(),
            ExprKind::Int32(v) => format!("{v}i32"),
            ExprKind::Float(v) => float_text(*v),
            ExprKind::Float32(v) => float32_text(*v),
            ExprKind::Bool(b) => b.to_string(),
            ExprKind::Var(n) => n.clone(),
            ExprKind::OpRef(op) => op.symbol().to_string(),
            ExprKind::Binary(op, a, b) => format!("({} {} {})", expr(a), op.symbol(), expr(b)),
            ExprKind::Unary(UnOp::Neg, a) => format!("(-{})", expr(a)),
            ExprKind::Unary(UnOp::Not, a) => format!("(!{})", expr(a)),
            ExprKind::Call { callee, args } => {
                let args: Vec<String> = args.iter().map(expr).collect();
                format!("{callee}({})", args.join(", "))
            }
            ExprKind::Index { base, index } => format!("{}[{}]", expr(base), expr(index)),
            ExprKind::Field { base, name } => format!("{}.{name}", expr(base)),
        }
    }

    fn stmts(out: &mut String, body: &[Stmt], depth: usize) {
        for s in body {
            stmt(out, s, depth);
        }
    }

    fn stmt(out: &mut String, s: &Stmt, depth: usize) {
        let pad = "    ".repeat(depth);
        match &s.kind {
            StmtKind::Expr(e) => {
                let _ = writeln!(out, "{pad}{}", expr(e));
            }
            StmtKind::Assign { target, value } => {
                let _ = writeln!(out, "{pad}{} = {}", expr(target), expr(value));
            }
            StmtKind::Return(None) => {
                let _ = writeln!(out, "{pad}return");
            }
            StmtKind::Return(Some(e)) => {
                let _ = writeln!(out, "{pad}return {}", expr(e));
            }
            StmtKind::If { cond, then_body, else_body } => {
                let _ = writeln!(out, "{pad}if {}", expr(cond));
                stmts(out, then_body, depth + 1);
                if !else_body.is_empty() {
                    let _ = writeln!(out, "{pad}else");
                    stmts(out, else_body, depth + 1);
                }
                let _ = writeln!(out, "{pad}end");
            }
            StmtKind::While { cond, body } => {
                let _ = writeln!(out, "{pad}while {}", expr(cond));
                stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad}end");
            }
            StmtKind::For { var, start, stop, body } => {
                let _ = writeln!(out, "{pad}for {var} = {}:{}", expr(start), expr(stop));
                stmts(out, body, depth + 1);
                let _ = writeln!(out, "{pad}end");
            }
        }
    }

    pub fn ast(ast: &Ast) -> String {
        let mut out = String::new();
        for item in &ast.items {
            match item {
                Item::Function(f) => {
                    let params: Vec<String> = f
                        .params
                        .iter()
                        .map(|p| match &p.ty {
                            Some(t) => format!("{}::{}", p.name, type_text(t)),
                            None => p.name.clone(),
                        })
                        .collect();
                    let _ = writeln!(out, "function {}({})", f.name, params.join(", "));
                    stmts(&mut out, &f.body, 1);
                    out.push_str("end\n");
                }
                Item::Record(r) => {
                    if r.mutable {
                        out.push_str("mutable ");
                    }
                    let _ = writeln!(out, "record {}", r.name);
                    for fd in &r.fields {
                        match &fd.ty {
                            Some(t) => {
                                let _ = writeln!(out, "    {}::{}", fd.name, type_text(t));
                            }
                            None => {
                                let _ = writeln!(out, "    {}", fd.name);
                            }
                        }
                    }
                    out.push_str("end\n");
                }
                Item::Stmt(s) => stmt(&mut out, s, 0),
            }
        }
        out
    }
}
