use std::collections::{HashMap, HashSet};

use super::{apply_replacements, simplify_phis};
use crate::lir::cfg::{self, DomTree};
use crate::lir::*;

/// Slot promotion: local slots to SSA values, forwarding of single-store
/// aggregate spills, and narrowing of aggregate loads to field loads.
pub fn promote(f: &mut LirFunction) {
    cfg::remove_unreachable(f);
    loop {
        let a = mem2reg(f);
        let b = forward_spills(f);
        if !a && !b {
            break;
        }
    }
    narrow_loads(f);
    simplify_phis(f);
}

fn allocas(f: &LirFunction) -> Vec<(ValueId, LirType)> {
    f.block(f.entry())
        .insts
        .iter()
        .filter_map(|v| match f.inst(*v) {
            Some(Inst::AllocLocal(t)) => Some((*v, t.clone())),
            _ => None,
        })
        .collect()
}

fn mem2reg(f: &mut LirFunction) -> bool {
    let mut users: HashMap<ValueId, Vec<(BlockId, ValueId)>> = HashMap::new();
    for (b, v) in f.placed() {
        for o in f.inst(v).unwrap().operands() {
            users.entry(o).or_default().push((b, v));
        }
    }
    let mut term_used: HashSet<ValueId> = HashSet::new();
    for b in &f.blocks {
        if let Some(t) = &b.term {
            term_used.extend(t.operands());
        }
    }
    let mut cands: Vec<(ValueId, LirType)> = Vec::new();
    for (a, t) in allocas(f) {
        if term_used.contains(&a) {
            continue;
        }
        let ok = users.get(&a).map_or(true, |us| {
            us.iter().all(|(_, u)| match f.inst(*u) {
                Some(Inst::Load { space: Space::Local, ptr }) => *ptr == a && *f.ty(*u) == t,
                Some(Inst::Store { space: Space::Local, ptr, value }) => *ptr == a && *value != a && *f.ty(*value) == t,
                _ => false,
            })
        });
        if ok {
            cands.push((a, t));
        }
    }
    if cands.is_empty() {
        return false;
    }
    let index: HashMap<ValueId, usize> = cands.iter().enumerate().map(|(i, (a, _))| (*a, i)).collect();
    let dom = DomTree::new(f);
    let df = dom.frontiers(f);

    // Phi placement at iterated dominance frontiers of the defining blocks.
    let mut phi_of: HashMap<ValueId, usize> = HashMap::new();
    let mut phis_in: Vec<Vec<(usize, ValueId)>> = vec![Vec::new(); f.blocks.len()];
    for (i, (a, t)) in cands.iter().enumerate() {
        let mut work: Vec<BlockId> = users
            .get(a)
            .into_iter()
            .flatten()
            .filter(|(_, u)| matches!(f.inst(*u), Some(Inst::Store { .. })))
            .map(|(b, _)| *b)
            .collect();
        let mut has_phi: HashSet<BlockId> = HashSet::new();
        let mut seen: HashSet<BlockId> = work.iter().copied().collect();
        while let Some(b) = work.pop() {
            if !dom.is_reachable(b) {
                continue;
            }
            for d in &df[b.0 as usize] {
                if has_phi.insert(*d) {
                    let p = f.new_inst(Inst::Phi(Vec::new()), t.clone(), None);
                    f.block_mut(*d).insts.insert(0, p);
                    phi_of.insert(p, i);
                    phis_in[d.0 as usize].push((i, p));
                    if seen.insert(*d) {
                        work.push(*d);
                    }
                }
            }
        }
    }

    // Renaming along the dominator tree.
    let children = dom.children();
    let mut undef: Vec<Option<ValueId>> = vec![None; cands.len()];
    let mut repl: HashMap<ValueId, ValueId> = HashMap::new();
    let mut dead: Vec<(BlockId, ValueId)> = Vec::new();
    let mut cur: Vec<Option<ValueId>> = vec![None; cands.len()];
    let mut stack: Vec<(BlockId, Option<Vec<Option<ValueId>>>)> = vec![(f.entry(), None)];
    while let Some((b, saved)) = stack.pop() {
        if let Some(s) = saved {
            cur = s;
            continue;
        }
        let snapshot = cur.clone();
        for (i, p) in &phis_in[b.0 as usize] {
            cur[*i] = Some(*p);
        }
        for v in f.block(b).insts.clone() {
            match f.inst(v).cloned() {
                Some(Inst::Load { space: Space::Local, ptr }) if index.contains_key(&ptr) => {
                    let i = index[&ptr];
                    let val = match cur[i] {
                        Some(x) => x,
                        None => *undef[i].get_or_insert_with(|| {
                            let z = f.new_inst(Inst::Const(ConstVal::Zero), cands[i].1.clone(), None);
                            let at = allocas(f).len();
                            f.block_mut(BlockId(0)).insts.insert(at, z);
                            z
                        }),
                    };
                    repl.insert(v, val);
                    dead.push((b, v));
                }
                Some(Inst::Store { space: Space::Local, ptr, value }) if index.contains_key(&ptr) => {
                    cur[index[&ptr]] = Some(value);
                    dead.push((b, v));
                }
                _ => {}
            }
        }
        for s in cfg::successors(f, b) {
            for (i, p) in phis_in[s.0 as usize].clone() {
                let val = match cur[i] {
                    Some(x) => x,
                    None => *undef[i].get_or_insert_with(|| {
                        let z = f.new_inst(Inst::Const(ConstVal::Zero), cands[i].1.clone(), None);
                        let at = allocas(f).len();
                        f.block_mut(BlockId(0)).insts.insert(at, z);
                        z
                    }),
                };
                if let Some(Inst::Phi(inc)) = f.inst_mut(p) {
                    inc.push((b, val));
                }
            }
        }
        stack.push((b, Some(snapshot)));
        for c in children[b.0 as usize].iter().rev() {
            stack.push((*c, None));
        }
    }
    for (b, v) in dead {
        f.remove_inst(b, v);
    }
    for (a, _) in &cands {
        f.remove_inst(BlockId(0), *a);
    }
    apply_replacements(f, &repl);
    true
}

/// An alloca written once as a whole and otherwise only read, possibly
/// through a generic cast and field addresses.
fn forward_spills(f: &mut LirFunction) -> bool {
    let dom = DomTree::new(f);
    let mut pos: HashMap<ValueId, (BlockId, usize)> = HashMap::new();
    for b in f.block_ids() {
        for (i, v) in f.block(b).insts.iter().enumerate() {
            pos.insert(*v, (b, i));
        }
    }
    let mut users: HashMap<ValueId, Vec<ValueId>> = HashMap::new();
    for (_, v) in f.placed() {
        for o in f.inst(v).unwrap().operands() {
            users.entry(o).or_default().push(v);
        }
    }
    let mut term_used: HashSet<ValueId> = HashSet::new();
    for b in &f.blocks {
        if let Some(t) = &b.term {
            term_used.extend(t.operands());
        }
    }
    let before = |a: ValueId, b: ValueId| -> bool {
        let (ba, ia) = pos[&a];
        let (bb, ib) = pos[&b];
        if ba == bb {
            ia < ib
        } else {
            dom.dominates(ba, bb)
        }
    };
    let mut changed = false;
    for (a, t) in allocas(f) {
        if !matches!(t, LirType::Struct(_)) {
            continue;
        }
        let mut store: Option<(ValueId, ValueId)> = None;
        let mut whole: Vec<ValueId> = Vec::new();
        let mut fields: Vec<(ValueId, u32)> = Vec::new();
        let mut plumbing: Vec<ValueId> = Vec::new();
        let mut ok = true;
        let mut work = vec![(a, None::<u32>)];
        while let Some((p, field)) = work.pop() {
            if term_used.contains(&p) {
                ok = false;
                break;
            }
            for u in users.get(&p).cloned().unwrap_or_default() {
                match f.inst(u).unwrap() {
                    Inst::Store { ptr, value, .. } if *ptr == p && *value != p && field.is_none() && store.is_none() && *f.ty(*value) == t => {
                        store = Some((u, *value));
                    }
                    Inst::Load { ptr, .. } if *ptr == p => match field {
                        None if *f.ty(u) == t => whole.push(u),
                        Some(k) if *f.ty(u) == t.fields()[k as usize] => fields.push((u, k)),
                        _ => ok = false,
                    },
                    Inst::AddrCast(_) => {
                        plumbing.push(u);
                        work.push((u, field));
                    }
                    Inst::FieldAddr { agg, field: k, .. } if field.is_none() && *agg == t => {
                        plumbing.push(u);
                        work.push((u, Some(*k)));
                    }
                    _ => ok = false,
                }
                if !ok {
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        let Some((st, val)) = store else { continue };
        if !ok || !whole.iter().chain(fields.iter().map(|(u, _)| u)).all(|u| before(st, *u)) {
            continue;
        }
        let mut repl = HashMap::new();
        for u in whole {
            repl.insert(u, val);
            f.remove_inst(pos[&u].0, u);
        }
        for (u, k) in fields {
            *f.inst_mut(u).unwrap() = Inst::Extract(val, k);
        }
        apply_replacements(f, &repl);
        f.remove_inst(pos[&st].0, st);
        for p in plumbing {
            f.remove_inst(pos[&p].0, p);
        }
        f.remove_inst(pos[&a].0, a);
        changed = true;
    }
    changed
}

/// `extract (load p), k` becomes `load (fieldaddr p, k)` when the aggregate
/// load has no other use.
fn narrow_loads(f: &mut LirFunction) {
    let mut users: HashMap<ValueId, Vec<ValueId>> = HashMap::new();
    for (_, v) in f.placed() {
        for o in f.inst(v).unwrap().operands() {
            users.entry(o).or_default().push(v);
        }
    }
    let mut term_used: HashSet<ValueId> = HashSet::new();
    for b in &f.blocks {
        if let Some(t) = &b.term {
            term_used.extend(t.operands());
        }
    }
    for (b, l) in f.placed().collect::<Vec<_>>() {
        let Some(Inst::Load { space, ptr }) = f.inst(l).cloned() else { continue };
        let t = f.ty(l).clone();
        if !matches!(t, LirType::Struct(_)) || term_used.contains(&l) {
            continue;
        }
        let us = users.get(&l).cloned().unwrap_or_default();
        if us.iter().any(|u| !matches!(f.inst(*u), Some(Inst::Extract(x, _)) if *x == l)) {
            continue;
        }
        let at = f.block(b).insts.iter().position(|x| *x == l).unwrap();
        let mut new_insts = Vec::new();
        let mut by_field: HashMap<u32, ValueId> = HashMap::new();
        let mut repl = HashMap::new();
        let span = f.value(l).span;
        for u in &us {
            let Some(Inst::Extract(_, k)) = f.inst(*u).cloned() else { continue };
            let nl = match by_field.get(&k) {
                Some(x) => *x,
                None => {
                    let fp = f.new_inst(Inst::FieldAddr { agg: t.clone(), ptr, field: k }, f.ty(ptr).clone(), span);
                    let nl = f.new_inst(Inst::Load { space, ptr: fp }, t.fields()[k as usize].clone(), span);
                    new_insts.push(fp);
                    new_insts.push(nl);
                    by_field.insert(k, nl);
                    nl
                }
            };
            repl.insert(*u, nl);
        }
        let blk = f.block_mut(b);
        blk.insts.remove(at);
        for (i, v) in new_insts.into_iter().enumerate() {
            blk.insts.insert(at + i, v);
        }
        f.values[l.0 as usize].def = Def::Removed;
        for u in repl.keys().copied().collect::<Vec<_>>() {
            let ub = f.placed().find(|(_, x)| *x == u).map(|(bb, _)| bb).unwrap();
            f.remove_inst(ub, u);
        }
        apply_replacements(f, &repl);
    }
}
