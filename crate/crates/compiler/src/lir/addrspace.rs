//! Recover concrete state spaces for generic pointers.

use std::collections::HashMap;

use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Known {
    Top,
    In(Space),
    Generic,
}

fn meet(a: Known, b: Known) -> Known {
    match (a, b) {
        (Known::Top, x) | (x, Known::Top) => x,
        (Known::In(x), Known::In(y)) if x == y => Known::In(x),
        _ => Known::Generic,
    }
}

/// Rewrite generic memory accesses whose pointer provably derives from a
/// specific space into accesses on that space. Pointers that still need a
/// generic form at an escaping use get an `addrcast` back.
pub fn infer_address_spaces(f: &mut LirFunction) {
    let generic = LirType::Ptr(Space::Generic);
    let mut state: HashMap<ValueId, Known> = HashMap::new();
    let placed: Vec<(BlockId, ValueId)> = f.placed().collect();
    for (_, v) in &placed {
        if *f.ty(*v) == generic {
            state.insert(*v, Known::Top);
        }
    }
    let src = |f: &LirFunction, state: &HashMap<ValueId, Known>, x: ValueId| -> Known {
        match f.ty(x) {
            LirType::Ptr(Space::Generic) => state.get(&x).copied().unwrap_or(Known::Generic),
            LirType::Ptr(s) => Known::In(*s),
            _ => Known::Generic,
        }
    };
    loop {
        let mut changed = false;
        for (_, v) in &placed {
            if !state.contains_key(v) {
                continue;
            }
            let new = match f.inst(*v).unwrap() {
                Inst::AddrCast(p) => src(f, &state, *p),
                Inst::ElemAddr { ptr, .. } | Inst::FieldAddr { ptr, .. } => src(f, &state, *ptr),
                Inst::Phi(inc) => inc.iter().fold(Known::Top, |acc, (_, x)| meet(acc, src(f, &state, *x))),
                Inst::Select(_, a, b) => meet(src(f, &state, *a), src(f, &state, *b)),
                _ => Known::Generic,
            };
            let old = state[v];
            let merged = if old == Known::Top { new } else { meet(old, new) };
            if merged != old {
                state.insert(*v, merged);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let resolved: HashMap<ValueId, Space> = state
        .iter()
        .filter_map(|(v, k)| match k {
            Known::In(s) => Some((*v, *s)),
            _ => None,
        })
        .collect();
    if resolved.is_empty() {
        return;
    }

    // Casts keep their generic type for escaping uses; derived pointers are retyped.
    let casts: HashMap<ValueId, ValueId> = resolved
        .keys()
        .filter_map(|v| match f.inst(*v) {
            Some(Inst::AddrCast(p)) => Some((*v, *p)),
            _ => None,
        })
        .collect();
    let retyped: HashMap<ValueId, Space> = resolved.iter().filter(|(v, _)| !casts.contains_key(v)).map(|(v, s)| (*v, *s)).collect();
    for (v, s) in &retyped {
        f.values[v.0 as usize].ty = LirType::Ptr(*s);
    }
    let spec = |x: ValueId| casts.get(&x).copied().unwrap_or(x);

    let mut edge_casts: HashMap<(BlockId, ValueId), ValueId> = HashMap::new();
    for b in f.block_ids().collect::<Vec<_>>() {
        let mut i = 0;
        while i < f.block(b).insts.len() {
            let v = f.block(b).insts[i];
            let mut inst = f.inst(v).unwrap().clone();
            let mut escaping: Vec<ValueId> = Vec::new();
            match &mut inst {
                Inst::Load { space, ptr } => {
                    *ptr = spec(*ptr);
                    if let LirType::Ptr(s) = f.ty(*ptr) {
                        *space = *s;
                    }
                }
                Inst::Store { space, ptr, value } => {
                    *ptr = spec(*ptr);
                    if let LirType::Ptr(s) = f.ty(*ptr) {
                        *space = *s;
                    }
                    if retyped.contains_key(value) {
                        escaping.push(*value);
                    }
                }
                Inst::ElemAddr { ptr, .. } | Inst::FieldAddr { ptr, .. } if retyped.contains_key(&v) => *ptr = spec(*ptr),
                Inst::Phi(inc) if retyped.contains_key(&v) => inc.iter_mut().for_each(|(_, x)| *x = spec(*x)),
                Inst::Select(_, a, c) if retyped.contains_key(&v) => {
                    *a = spec(*a);
                    *c = spec(*c);
                }
                Inst::Phi(inc) => {
                    for (p, x) in inc.iter_mut() {
                        if retyped.contains_key(x) {
                            let c = *edge_casts.entry((*p, *x)).or_insert_with(|| {
                                let c = f.new_inst(Inst::AddrCast(*x), generic.clone(), None);
                                f.block_mut(*p).insts.push(c);
                                c
                            });
                            *x = c;
                        }
                    }
                }
                other => escaping = other.operands().into_iter().filter(|x| retyped.contains_key(x)).collect(),
            }
            let mut inserted = 0;
            let mut subst: HashMap<ValueId, ValueId> = HashMap::new();
            for x in escaping {
                if subst.contains_key(&x) {
                    continue;
                }
                let c = f.new_inst(Inst::AddrCast(x), generic.clone(), f.value(v).span);
                f.block_mut(b).insts.insert(i + inserted, c);
                inserted += 1;
                subst.insert(x, c);
            }
            if !subst.is_empty() {
                match &mut inst {
                    Inst::Store { value, .. } => *value = subst[value],
                    other => other.map_operands(|x| subst.get(&x).copied().unwrap_or(x)),
                }
            }
            *f.inst_mut(v).unwrap() = inst;
            i += inserted + 1;
        }
        let escaping_term: Vec<ValueId> = f
            .block(b)
            .term
            .as_ref()
            .map(|t| t.operands().into_iter().filter(|x| retyped.contains_key(x)).collect())
            .unwrap_or_default();
        for x in escaping_term {
            let c = f.new_inst(Inst::AddrCast(x), generic.clone(), None);
            f.block_mut(b).insts.push(c);
            if let Some(t) = &mut f.block_mut(b).term {
                t.map_operands(|y| if y == x { c } else { y });
            }
        }
    }
    let uses = f.use_counts();
    for (b, v) in placed {
        if casts.contains_key(&v) && uses[v.0 as usize] == 0 {
            f.remove_inst(b, v);
        }
    }
}
