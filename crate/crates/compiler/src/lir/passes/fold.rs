use std::collections::HashMap;

use super::{apply_replacements, simplify_phis};
use crate::lir::cfg::{self, DomTree};
use crate::lir::eval::{eval_bin, eval_cast, eval_cmp, eval_un};
use crate::lir::*;

fn imm_of(f: &LirFunction, v: ValueId) -> Option<Imm> {
    match f.inst(v)? {
        Inst::Const(ConstVal::Imm(i)) => Some(*i),
        Inst::Const(ConstVal::Zero) => Imm::zero(f.ty(v)).filter(|_| !f.ty(v).is_ptr()),
        _ => None,
    }
}

/// Constant folding, trivial algebra and branch folding.
pub fn fold(f: &mut LirFunction) {
    loop {
        let mut changed = false;
        let mut repl: HashMap<ValueId, ValueId> = HashMap::new();
        let order = DomTree::new(f).rpo;
        for b in order {
            for v in f.block(b).insts.clone() {
                let inst = f.inst(v).unwrap().clone();
                let folded = match &inst {
                    Inst::Bin(k, a, c) => match (imm_of(f, *a), imm_of(f, *c)) {
                        (Some(x), Some(y)) => eval_bin(*k, x, y).ok().map(ConstVal::Imm),
                        (_, Some(y)) if is_identity(*k, y) => {
                            repl.insert(v, *a);
                            None
                        }
                        _ => None,
                    },
                    Inst::Un(k, a) => imm_of(f, *a).and_then(|x| eval_un(*k, x).ok()).map(ConstVal::Imm),
                    Inst::Cmp(p, a, c) => match (imm_of(f, *a), imm_of(f, *c)) {
                        (Some(x), Some(y)) => eval_cmp(*p, x, y).ok().map(|r| ConstVal::Imm(Imm::I1(r))),
                        _ => None,
                    },
                    Inst::Cast(k, a) => imm_of(f, *a).and_then(|x| eval_cast(*k, x, f.ty(v)).ok()).map(ConstVal::Imm),
                    Inst::Select(c, a, x) => {
                        match imm_of(f, *c).and_then(|i| i.as_bool()) {
                            Some(true) => {
                                repl.insert(v, *a);
                            }
                            Some(false) => {
                                repl.insert(v, *x);
                            }
                            None if a == x => {
                                repl.insert(v, *a);
                            }
                            None => {}
                        }
                        None
                    }
                    Inst::Extract(a, k) => {
                        match f.inst(*a) {
                            Some(Inst::MakeStruct(vs)) => {
                                repl.insert(v, vs[*k as usize]);
                            }
                            Some(Inst::Insert(_, j, x)) if j == k => {
                                repl.insert(v, *x);
                            }
                            _ => {}
                        }
                        None
                    }
                    _ => None,
                };
                if let Some(c) = folded {
                    *f.inst_mut(v).unwrap() = Inst::Const(c);
                    changed = true;
                }
            }
        }
        if !repl.is_empty() {
            for v in repl.keys() {
                let b = f.placed().find(|(_, x)| x == v).map(|(b, _)| b).unwrap();
                f.remove_inst(b, *v);
            }
            apply_replacements(f, &repl);
            changed = true;
        }
        for b in f.block_ids().collect::<Vec<_>>() {
            let Some(Terminator::CondBr(c, t, e)) = f.block(b).term.clone() else { continue };
            let Some(k) = imm_of(f, c).and_then(|i| i.as_bool()) else { continue };
            let (take, drop) = if k { (t, e) } else { (e, t) };
            f.block_mut(b).term = Some(Terminator::Br(take));
            if take != drop {
                for v in f.block(drop).insts.clone() {
                    if let Some(Inst::Phi(inc)) = f.inst_mut(v) {
                        inc.retain(|(p, _)| *p != b);
                    }
                }
            }
            changed = true;
        }
        if cfg::remove_unreachable(f) {
            changed = true;
        }
        if simplify_phis(f) {
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

fn is_identity(k: BinKind, y: Imm) -> bool {
    match (k, y) {
        (BinKind::Add | BinKind::Sub | BinKind::Or | BinKind::Xor | BinKind::Shl | BinKind::LShr, Imm::I32(0) | Imm::I64(0)) => true,
        (BinKind::Mul | BinKind::SDiv, Imm::I32(1) | Imm::I64(1)) => true,
        _ => false,
    }
}
