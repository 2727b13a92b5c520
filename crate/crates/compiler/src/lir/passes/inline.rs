use std::collections::{HashMap, HashSet};

use super::PassOptions;
use crate::lir::cfg;
use crate::lir::*;

fn callees(f: &LirFunction) -> Vec<String> {
    f.placed()
        .filter_map(|(_, v)| match f.inst(v) {
            Some(Inst::Call { callee, .. }) => Some(callee.clone()),
            _ => None,
        })
        .collect()
}

/// Functions that can reach themselves through calls.
fn recursive_set(m: &LirModule) -> HashSet<String> {
    let graph: HashMap<&str, Vec<String>> = m.functions.iter().map(|f| (f.name.as_str(), callees(f))).collect();
    let mut out = HashSet::new();
    for f in &m.functions {
        let mut seen = HashSet::new();
        let mut stack: Vec<String> = graph[f.name.as_str()].clone();
        while let Some(g) = stack.pop() {
            if g == f.name {
                out.insert(f.name.clone());
                break;
            }
            if seen.insert(g.clone()) {
                if let Some(next) = graph.get(g.as_str()) {
                    stack.extend(next.iter().cloned());
                }
            }
        }
    }
    out
}

/// Inline calls to module functions. Callees marked inline-always are inlined
/// regardless of depth; recursive functions never are. Functions no longer
/// reachable from the entry or a kernel are dropped.
pub fn inline(m: &mut LirModule, opts: &PassOptions) {
    let recursive = recursive_set(m);
    for round in 0..64u32 {
        let mut changed = false;
        for i in 0..m.functions.len() {
            loop {
                let f = &m.functions[i];
                let site = f.placed().find_map(|(b, v)| match f.inst(v) {
                    Some(Inst::Call { callee, .. }) => {
                        let g = m.get(callee)?;
                        let eligible = !recursive.contains(callee)
                            && callee != &f.name
                            && (g.attrs.inline_always || round < opts.max_inline_depth);
                        eligible.then(|| (b, v, g.clone()))
                    }
                    _ => None,
                });
                let Some((b, v, g)) = site else { break };
                inline_call(&mut m.functions[i], b, v, &g);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut keep: HashSet<String> = HashSet::new();
    let mut stack: Vec<String> = m
        .functions
        .iter()
        .enumerate()
        .filter(|(i, f)| *i == 0 || f.attrs.kernel)
        .map(|(_, f)| f.name.clone())
        .collect();
    while let Some(n) = stack.pop() {
        if keep.insert(n.clone()) {
            if let Some(f) = m.get(&n) {
                stack.extend(callees(f));
            }
        }
    }
    m.functions.retain(|f| keep.contains(&f.name));
}

fn inline_call(f: &mut LirFunction, b: BlockId, call: ValueId, g: &LirFunction) {
    let Some(Inst::Call { args, .. }) = f.inst(call).cloned() else { return };
    let ret_ty = f.ty(call).clone();
    let k = f.block(b).insts.iter().position(|x| *x == call).unwrap();

    // Split the caller block after the call.
    let tail = f.add_block();
    let rest: Vec<ValueId> = f.block_mut(b).insts.split_off(k + 1);
    f.block_mut(b).insts.pop();
    let term = f.block_mut(b).term.take();
    f.block_mut(tail).insts = rest;
    f.block_mut(tail).term = term;
    for s in cfg::successors(f, tail) {
        for v in f.block(s).insts.clone() {
            if let Some(Inst::Phi(inc)) = f.inst_mut(v) {
                for (p, _) in inc.iter_mut() {
                    if *p == b {
                        *p = tail;
                    }
                }
            }
        }
    }

    // Clone the callee.
    let mut vmap: HashMap<ValueId, ValueId> = HashMap::new();
    for (p, a) in g.params.iter().zip(&args) {
        vmap.insert(p.value, *a);
    }
    let bmap: HashMap<BlockId, BlockId> = g.block_ids().map(|gb| (gb, f.add_block())).collect();
    let mut placed = Vec::new();
    for (gb, gv) in g.placed() {
        let d = g.value(gv);
        let nv = f.new_inst(Inst::Const(ConstVal::Zero), d.ty.clone(), d.span);
        vmap.insert(gv, nv);
        placed.push((gb, gv, nv));
    }
    let entry = f.entry();
    let mut hoisted = 0;
    for (gb, gv, nv) in &placed {
        let mut inst = g.inst(*gv).unwrap().clone();
        inst.map_operands(|x| vmap[&x]);
        if let Inst::Phi(inc) = &mut inst {
            for (p, _) in inc.iter_mut() {
                *p = bmap[p];
            }
        }
        let is_alloc = matches!(inst, Inst::AllocLocal(_));
        *f.inst_mut(*nv).unwrap() = inst;
        if is_alloc {
            f.block_mut(entry).insts.insert(hoisted, *nv);
            hoisted += 1;
        } else {
            f.block_mut(bmap[gb]).insts.push(*nv);
        }
    }
    let mut rets: Vec<(BlockId, Option<ValueId>)> = Vec::new();
    for gb in g.block_ids() {
        let nb = bmap[&gb];
        let t = match g.term(gb).clone() {
            Terminator::Ret(v) => {
                rets.push((nb, v.map(|x| vmap[&x])));
                Terminator::Br(tail)
            }
            mut t => {
                t.map_operands(|x| vmap[&x]);
                t.map_blocks(|x| bmap[&x]);
                t
            }
        };
        f.block_mut(nb).term = Some(t);
    }
    f.block_mut(b).term = Some(Terminator::Br(bmap[&g.entry()]));

    if ret_ty != LirType::Void {
        let vals: Vec<(BlockId, ValueId)> = rets.iter().filter_map(|(bb, v)| v.map(|v| (*bb, v))).collect();
        let result = if vals.len() == 1 {
            vals[0].1
        } else {
            let inst = if vals.is_empty() { Inst::Const(ConstVal::Zero) } else { Inst::Phi(vals) };
            let r = f.new_inst(inst, ret_ty, None);
            f.block_mut(tail).insts.insert(0, r);
            r
        };
        f.replace_uses(call, result);
    }
    f.values[call.0 as usize].def = Def::Removed;
    cfg::remove_unreachable(f);
}
