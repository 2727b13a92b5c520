use std::collections::HashSet;

use super::simplify_phis;
use crate::lir::cfg;
use crate::lir::*;

/// Remove unreachable blocks, unused pure instructions and local slots that
/// are written but never read.
pub fn dce(f: &mut LirFunction) {
    cfg::remove_unreachable(f);
    simplify_phis(f);
    loop {
        let mut live: HashSet<ValueId> = HashSet::new();
        let mut work: Vec<ValueId> = Vec::new();
        for (_, v) in f.placed() {
            if f.inst(v).unwrap().has_side_effects() {
                work.push(v);
            }
        }
        for b in &f.blocks {
            if let Some(t) = &b.term {
                work.extend(t.operands());
            }
        }
        // Stores into slots nobody reads are not roots.
        let dead_slots = write_only_slots(f);
        work.retain(|v| match f.inst(*v) {
            Some(Inst::Store { ptr, .. }) => !dead_slots.contains(ptr),
            _ => true,
        });
        while let Some(v) = work.pop() {
            if live.insert(v) {
                if let Some(i) = f.inst(v) {
                    work.extend(i.operands());
                }
            }
        }
        let dead: Vec<(BlockId, ValueId)> = f.placed().filter(|(_, v)| !live.contains(v)).collect();
        if dead.is_empty() {
            break;
        }
        for (b, v) in dead {
            f.remove_inst(b, v);
        }
    }
}

/// Allocas whose only uses are as the address of a local store.
fn write_only_slots(f: &LirFunction) -> HashSet<ValueId> {
    let mut out = HashSet::new();
    let mut term_used = HashSet::new();
    for b in &f.blocks {
        if let Some(t) = &b.term {
            term_used.extend(t.operands());
        }
    }
    for (_, a) in f.placed() {
        if !matches!(f.inst(a), Some(Inst::AllocLocal(_))) || term_used.contains(&a) {
            continue;
        }
        let only_stores = f.placed().all(|(_, u)| match f.inst(u).unwrap() {
            Inst::Store { value, .. } => *value != a,
            i => !i.operands().contains(&a),
        });
        if only_stores {
            out.insert(a);
        }
    }
    out
}
