use std::collections::HashMap;
use std::fmt::Write;

use super::*;

struct Names(HashMap<ValueId, usize>);

impl Names {
    fn of(&self, v: ValueId) -> String {
        match self.0.get(&v) {
            Some(n) => format!("%v{n}"),
            None => format!("%?{}", v.0),
        }
    }

    fn list(&self, vs: &[ValueId]) -> String {
        vs.iter().map(|v| self.of(*v)).collect::<Vec<_>>().join(", ")
    }
}

fn inst(out: &mut String, f: &LirFunction, n: &Names, v: ValueId) {
    let d = f.value(v);
    let Def::Inst(i) = &d.def else { return };
    out.push_str("  ");
    if d.ty != LirType::Void {
        let _ = write!(out, "{}: {} = ", n.of(v), d.ty);
    }
    let body = match i {
        Inst::Const(ConstVal::Imm(x)) => format!("const {x}"),
        Inst::Const(ConstVal::Zero) => "const zero".to_string(),
        Inst::Bin(k, a, b) => format!("{} {}, {}", k.name(), n.of(*a), n.of(*b)),
        Inst::Un(k, a) => format!("{} {}", k.name(), n.of(*a)),
        Inst::Cmp(p, a, b) => format!("cmp {} {}, {}", p.name(), n.of(*a), n.of(*b)),
        Inst::Cast(k, a) => format!("{} {}", k.name(), n.of(*a)),
        Inst::Select(c, a, b) => format!("select {}, {}, {}", n.of(*c), n.of(*a), n.of(*b)),
        Inst::Extract(a, k) => format!("extract {}, {k}", n.of(*a)),
        Inst::Insert(a, k, x) => format!("insert {}, {k}, {}", n.of(*a), n.of(*x)),
        Inst::MakeStruct(vs) => format!("struct {}", n.list(vs)),
        Inst::Load { space, ptr } => format!("load.{space} {}", n.of(*ptr)),
        Inst::Store { space, ptr, value } => format!("store.{space} {}, {}", n.of(*ptr), n.of(*value)),
        Inst::AddrCast(p) => format!("addrcast {}", n.of(*p)),
        Inst::ElemAddr { elem, ptr, index } => format!("elemaddr {elem} {}, {}", n.of(*ptr), n.of(*index)),
        Inst::FieldAddr { agg, ptr, field } => format!("fieldaddr {agg} {}, {field}", n.of(*ptr)),
        Inst::AllocLocal(t) => format!("alloc_local {t}"),
        Inst::Call { callee, args } => format!("call @{callee}({})", n.list(args)),
        Inst::Intrinsic { name, args } => format!("intrinsic {name}({})", n.list(args)),
        Inst::RtCall { name, args } => format!("rtcall {name}({})", n.list(args)),
        Inst::Phi(inc) => {
            let parts: Vec<String> = inc.iter().map(|(b, x)| format!("[{}, {b}]", n.of(*x))).collect();
            format!("phi {}", parts.join(", "))
        }
    };
    out.push_str(&body);
    out.push('\n');
}

fn term(out: &mut String, n: &Names, t: Option<&Terminator>) {
    let s = match t {
        None => "<unterminated>".to_string(),
        Some(Terminator::Br(b)) => format!("br {b}"),
        Some(Terminator::CondBr(c, a, b)) => format!("condbr {}, {a}, {b}", n.of(*c)),
        Some(Terminator::Ret(None)) => "ret".to_string(),
        Some(Terminator::Ret(Some(v))) => format!("ret {}", n.of(*v)),
        Some(Terminator::Trap(v)) => format!("trap {}", n.of(*v)),
        Some(Terminator::Unreachable) => "unreachable".to_string(),
    };
    let _ = writeln!(out, "  {s}");
}

pub(super) fn function(f: &LirFunction) -> String {
    let mut map = HashMap::new();
    for p in &f.params {
        let k = map.len();
        map.insert(p.value, k);
    }
    for (_, v) in f.placed() {
        if f.ty(v) != &LirType::Void {
            let k = map.len();
            map.insert(v, k);
        }
    }
    let n = Names(map);
    let mut out = String::from("define ");
    for (on, word) in [(f.attrs.kernel, "kernel "), (f.attrs.wrapper, "wrapper "), (f.attrs.inline_always, "inline_always ")] {
        if on {
            out.push_str(word);
        }
    }
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| {
            let mut s = format!("{}: {}", n.of(p.value), p.ty);
            if let Some(t) = &p.by_ref {
                let _ = write!(s, " byref {t}");
            }
            if p.param_space {
                s.push_str(" byval");
            }
            s
        })
        .collect();
    let _ = writeln!(out, "@{}({}) -> {} {{", f.name, params.join(", "), f.ret);
    for b in f.block_ids() {
        let _ = writeln!(out, "{b}:");
        for v in &f.block(b).insts {
            inst(&mut out, f, &n, *v);
        }
        term(&mut out, &n, f.block(b).term.as_ref());
    }
    out.push_str("}\n");
    out
}
