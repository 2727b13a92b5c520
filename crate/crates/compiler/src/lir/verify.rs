use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::cfg::{self, DomTree};
use super::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("invalid LIR in `{function}`: {message}")]
    Invalid { function: String, message: String },
    #[error("builder: {0}")]
    Build(String),
}

fn operand_ty(f: &LirFunction, v: ValueId) -> Result<&LirType, String> {
    f.values
        .get(v.0 as usize)
        .filter(|d| d.def != Def::Removed)
        .map(|d| &d.ty)
        .ok_or_else(|| format!("use of undefined value %{}", v.0))
}

/// Type rule for one instruction with declared result type `ty`.
pub(crate) fn check_inst(f: &LirFunction, inst: &Inst, ty: &LirType) -> Result<(), String> {
    let t = |v: ValueId| operand_ty(f, v);
    let want = |ok: bool, what: &str| if ok { Ok(()) } else { Err(what.to_string()) };
    match inst {
        Inst::Const(ConstVal::Imm(i)) => want(i.ty() == *ty, "constant type mismatch"),
        Inst::Const(ConstVal::Zero) => want(*ty != LirType::Void, "void constant"),
        Inst::Bin(k, a, b) => {
            let (ta, tb) = (t(*a)?, t(*b)?);
            want(ta == tb && ta == ty, &format!("{} operands {ta}, {tb} -> {ty}", k.name()))?;
            let ok = match k {
                BinKind::And | BinKind::Or | BinKind::Xor => ty.is_int(),
                k if k.is_float() => ty.is_float(),
                _ => matches!(ty, LirType::I32 | LirType::I64),
            };
            want(ok, &format!("{} not defined on {ty}", k.name()))
        }
        Inst::Un(k, a) => {
            let ta = t(*a)?;
            want(ta == ty, "unary type mismatch")?;
            let ok = match k {
                UnKind::Neg => matches!(ty, LirType::I32 | LirType::I64),
                UnKind::FNeg => ty.is_float(),
                UnKind::Not => ty.is_int(),
            };
            want(ok, &format!("{} not defined on {ty}", k.name()))
        }
        Inst::Cmp(p, a, b) => {
            let (ta, tb) = (t(*a)?, t(*b)?);
            want(ta == tb, &format!("cmp operands {ta}, {tb}"))?;
            want(*ty == LirType::I1, "cmp must produce i1")?;
            let ok = if p.is_float() {
                ta.is_float()
            } else {
                ta.is_int() || (ta.is_ptr() && matches!(p, CmpPred::Eq | CmpPred::Ne))
            };
            want(ok, &format!("{} not defined on {ta}", p.name()))
        }
        Inst::Cast(k, a) => {
            let from = t(*a)?;
            let ok = match k {
                CastKind::Sext | CastKind::Zext => from.is_int() && ty.is_int() && from.size() <= ty.size(),
                CastKind::Trunc => from.is_int() && ty.is_int() && from.size() >= ty.size(),
                CastKind::SiToFp | CastKind::UiToFp => from.is_int() && ty.is_float(),
                CastKind::FpToSi => from.is_float() && matches!(ty, LirType::I32 | LirType::I64),
                CastKind::FpExt => *from == LirType::F32 && *ty == LirType::F64,
                CastKind::FpTrunc => *from == LirType::F64 && *ty == LirType::F32,
                CastKind::Bitcast => {
                    from.is_scalar() && ty.is_scalar() && from.size() == ty.size() && *from != LirType::I1
                }
            };
            want(ok, &format!("{} from {from} to {ty}", k.name()))
        }
        Inst::Select(c, a, b) => {
            want(*t(*c)? == LirType::I1, "select condition must be i1")?;
            want(t(*a)? == ty && t(*b)? == ty, "select arm type mismatch")
        }
        Inst::Extract(a, k) => {
            let ta = t(*a)?;
            let fs = ta.fields();
            want(matches!(ta, LirType::Struct(_)) && (*k as usize) < fs.len(), "extract out of range")?;
            want(fs[*k as usize] == *ty, "extract type mismatch")
        }
        Inst::Insert(a, k, v) => {
            let ta = t(*a)?;
            let fs = ta.fields();
            want(matches!(ta, LirType::Struct(_)) && (*k as usize) < fs.len(), "insert out of range")?;
            want(fs[*k as usize] == *t(*v)? && ta == ty, "insert type mismatch")
        }
        Inst::MakeStruct(vs) => {
            let fs = ty.fields();
            want(matches!(ty, LirType::Struct(_)) && fs.len() == vs.len(), "struct arity mismatch")?;
            for (v, ft) in vs.iter().zip(fs) {
                want(t(*v)? == ft, "struct field type mismatch")?;
            }
            Ok(())
        }
        Inst::Load { space, ptr } => {
            want(*t(*ptr)? == LirType::Ptr(*space), &format!("load.{space} through {}", t(*ptr)?))?;
            want(*ty != LirType::Void, "void load")
        }
        Inst::Store { space, ptr, value } => {
            want(*t(*ptr)? == LirType::Ptr(*space), &format!("store.{space} through {}", t(*ptr)?))?;
            want(*t(*value)? != LirType::Void, "void store")?;
            want(*ty == LirType::Void, "store has no result")
        }
        Inst::AddrCast(p) => {
            let (LirType::Ptr(from), LirType::Ptr(to)) = (t(*p)?, ty) else {
                return Err("addrcast needs pointers".into());
            };
            want(from != to && (*from == Space::Generic || *to == Space::Generic), &format!("addrcast {from} to {to}"))
        }
        Inst::ElemAddr { elem, ptr, index } => {
            let tp = t(*ptr)?;
            want(tp.is_ptr() && tp == ty, "elemaddr pointer mismatch")?;
            want(*t(*index)? == LirType::I64, "elemaddr index must be i64")?;
            want(*elem != LirType::Void, "void element")
        }
        Inst::FieldAddr { agg, ptr, field } => {
            let tp = t(*ptr)?;
            want(tp.is_ptr() && tp == ty, "fieldaddr pointer mismatch")?;
            want(matches!(agg, LirType::Struct(_)) && (*field as usize) < agg.fields().len(), "fieldaddr out of range")
        }
        Inst::AllocLocal(et) => {
            want(*ty == LirType::Ptr(Space::Local), "alloc_local yields ptr<local>")?;
            want(*et != LirType::Void, "void slot")
        }
        Inst::Call { args, .. } | Inst::Intrinsic { args, .. } | Inst::RtCall { args, .. } => {
            for a in args {
                want(*t(*a)? != LirType::Void, "void argument")?;
            }
            Ok(())
        }
        Inst::Phi(inc) => {
            want(*ty != LirType::Void, "void phi")?;
            for (_, v) in inc {
                want(t(*v)? == ty, "phi incoming type mismatch")?;
            }
            Ok(())
        }
    }
}

pub fn verify_function(f: &LirFunction) -> Result<(), IrError> {
    let err = |m: String| IrError::Invalid { function: f.name.clone(), message: m };
    for (i, p) in f.params.iter().enumerate() {
        let d = f.values.get(p.value.0 as usize).ok_or_else(|| err(format!("param {i} has no value")))?;
        if d.def != Def::Param(i as u32) || d.ty != p.ty {
            return Err(err(format!("param {i} value mismatch")));
        }
    }
    let mut pos: HashMap<ValueId, (BlockId, usize)> = HashMap::new();
    for b in f.block_ids() {
        let blk = f.block(b);
        if blk.term.is_none() {
            return Err(err(format!("{b} has no terminator")));
        }
        let mut phis_done = false;
        for (i, v) in blk.insts.iter().enumerate() {
            if pos.insert(*v, (b, i)).is_some() {
                return Err(err(format!("%{} placed twice", v.0)));
            }
            let d = &f.values[v.0 as usize];
            let Def::Inst(inst) = &d.def else {
                return Err(err(format!("%{} placed but not an instruction", v.0)));
            };
            if matches!(inst, Inst::Phi(_)) {
                if phis_done {
                    return Err(err(format!("phi %{} after non-phi in {b}", v.0)));
                }
            } else {
                phis_done = true;
            }
            check_inst(f, inst, &d.ty).map_err(|m| err(format!("%{}: {m}", v.0)))?;
        }
    }
    let dom = DomTree::new(f);
    if !cfg::is_reducible(f, &dom) {
        return Err(err("irreducible control flow".into()));
    }
    let preds = cfg::predecessors(f);
    let defined_at = |v: ValueId| -> Result<Option<(BlockId, usize)>, IrError> {
        match f.values.get(v.0 as usize).map(|d| &d.def) {
            Some(Def::Param(_)) => Ok(None),
            Some(Def::Inst(_)) => pos.get(&v).map(|p| Some(*p)).ok_or_else(|| err(format!("%{} used but not placed", v.0))),
            _ => Err(err(format!("use of removed value %{}", v.0))),
        }
    };
    for b in f.block_ids() {
        let live = dom.is_reachable(b);
        let blk = f.block(b);
        for (i, v) in blk.insts.iter().enumerate() {
            let inst = f.inst(*v).unwrap();
            if let Inst::Phi(inc) = inst {
                if live {
                    let ps: HashSet<BlockId> = preds[b.0 as usize].iter().copied().filter(|p| dom.is_reachable(*p)).collect();
                    let got: HashSet<BlockId> = inc.iter().map(|(p, _)| *p).filter(|p| dom.is_reachable(*p)).collect();
                    if ps != got || inc.iter().filter(|(p, _)| dom.is_reachable(*p)).count() != got.len() {
                        return Err(err(format!("phi %{} incoming blocks do not match predecessors of {b}", v.0)));
                    }
                }
                for (p, x) in inc {
                    if let Some((db, _)) = defined_at(*x)? {
                        if live && dom.is_reachable(*p) && !dom.dominates(db, *p) {
                            return Err(err(format!("phi %{} operand %{} does not dominate edge from {p}", v.0, x.0)));
                        }
                    }
                }
                continue;
            }
            for o in inst.operands() {
                if let Some((db, di)) = defined_at(o)? {
                    let ok = if db == b { di < i } else { !live || dom.dominates(db, b) };
                    if !ok {
                        return Err(err(format!("%{} used by %{} before its definition", o.0, v.0)));
                    }
                }
            }
        }
        let term = blk.term.as_ref().unwrap();
        for o in term.operands() {
            if let Some((db, _)) = defined_at(o)? {
                if live && !dom.dominates(db, b) {
                    return Err(err(format!("terminator of {b} uses %{} before its definition", o.0)));
                }
            }
        }
        for s in term.successors() {
            if s.0 as usize >= f.blocks.len() {
                return Err(err(format!("branch to missing block {s}")));
            }
        }
        match term {
            Terminator::CondBr(c, ..) if *operand_ty(f, *c).map_err(err)? != LirType::I1 => {
                return Err(err(format!("branch condition in {b} is not i1")))
            }
            Terminator::Trap(c) if *operand_ty(f, *c).map_err(err)? != LirType::I32 => {
                return Err(err(format!("trap code in {b} is not i32")))
            }
            Terminator::Ret(v) => {
                let got = match v {
                    Some(v) => operand_ty(f, *v).map_err(err)?.clone(),
                    None => LirType::Void,
                };
                if got != f.ret {
                    return Err(err(format!("return of {got} from function returning {}", f.ret)));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn verify_module(m: &LirModule) -> Result<(), IrError> {
    let mut names = HashSet::new();
    for f in &m.functions {
        if !names.insert(f.name.as_str()) {
            return Err(IrError::Invalid { function: f.name.clone(), message: "duplicate function".into() });
        }
    }
    for f in &m.functions {
        verify_function(f)?;
        for (_, v) in f.placed() {
            if let Some(Inst::Call { callee, args }) = f.inst(v) {
                let err = |m: String| IrError::Invalid { function: f.name.clone(), message: m };
                let g = m.get(callee).ok_or_else(|| err(format!("call to unknown function @{callee}")))?;
                if g.attrs.kernel {
                    return Err(err(format!("kernel @{callee} called from device code")));
                }
                let tys: Vec<&LirType> = args.iter().map(|a| f.ty(*a)).collect();
                let want: Vec<&LirType> = g.params.iter().map(|p| &p.ty).collect();
                if tys != want || *f.ty(v) != g.ret {
                    return Err(err(format!("call to @{callee} does not match its signature")));
                }
            }
        }
    }
    Ok(())
}
