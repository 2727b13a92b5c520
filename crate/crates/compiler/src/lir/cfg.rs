//! Control-flow analyses: orderings, dominators, post-dominators.

use std::collections::HashMap;

use super::{BlockId, Def, Inst, LirFunction, Terminator};

pub fn successors(f: &LirFunction, b: BlockId) -> Vec<BlockId> {
    f.block(b).term.as_ref().map(|t| t.successors()).unwrap_or_default()
}

pub fn predecessors(f: &LirFunction) -> Vec<Vec<BlockId>> {
    let mut preds = vec![Vec::new(); f.blocks.len()];
    for b in f.block_ids() {
        for s in successors(f, b) {
            if !preds[s.0 as usize].contains(&b) {
                preds[s.0 as usize].push(b);
            }
        }
    }
    preds
}

/// Reverse postorder of blocks reachable from the entry.
pub fn reverse_postorder(f: &LirFunction) -> Vec<BlockId> {
    let n = f.blocks.len();
    let mut seen = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut stack: Vec<(BlockId, usize)> = vec![(f.entry(), 0)];
    seen[0] = true;
    while let Some((b, i)) = stack.pop() {
        let succ = successors(f, b);
        if i < succ.len() {
            stack.push((b, i + 1));
            let s = succ[i];
            if !seen[s.0 as usize] {
                seen[s.0 as usize] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
        }
    }
    post.reverse();
    post
}

pub fn reachable(f: &LirFunction) -> Vec<bool> {
    let mut r = vec![false; f.blocks.len()];
    for b in reverse_postorder(f) {
        r[b.0 as usize] = true;
    }
    r
}

/// Immediate dominators over a generic graph given in reverse postorder
/// (Cooper, Harvey and Kennedy). Index `root` maps to itself.
fn idoms_generic(n: usize, rpo: &[usize], preds: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut order = vec![usize::MAX; n];
    for (i, b) in rpo.iter().enumerate() {
        order[*b] = i;
    }
    let mut idom: Vec<Option<usize>> = vec![None; n];
    let Some(&root) = rpo.first() else { return idom };
    idom[root] = Some(root);
    let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
        while a != b {
            while order[a] > order[b] {
                a = idom[a].unwrap();
            }
            while order[b] > order[a] {
                b = idom[b].unwrap();
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in &rpo[1..] {
            let mut new: Option<usize> = None;
            for &p in &preds[b] {
                if idom[p].is_none() || order[p] == usize::MAX {
                    continue;
                }
                new = Some(match new {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new.is_some() && idom[b] != new {
                idom[b] = new;
                changed = true;
            }
        }
    }
    idom
}

#[derive(Debug, Clone)]
pub struct DomTree {
    /// Immediate dominator; the entry maps to itself, unreachable blocks to `None`.
    pub idom: Vec<Option<BlockId>>,
    pub rpo: Vec<BlockId>,
    depth: Vec<u32>,
}

impl DomTree {
    pub fn new(f: &LirFunction) -> DomTree {
        let rpo = reverse_postorder(f);
        let preds = predecessors(f);
        let preds: Vec<Vec<usize>> = preds.iter().map(|ps| ps.iter().map(|b| b.0 as usize).collect()).collect();
        let order: Vec<usize> = rpo.iter().map(|b| b.0 as usize).collect();
        let idom = idoms_generic(f.blocks.len(), &order, &preds);
        let idom: Vec<Option<BlockId>> = idom.into_iter().map(|d| d.map(|x| BlockId(x as u32))).collect();
        let mut depth = vec![0u32; f.blocks.len()];
        for b in &rpo[1..] {
            let d = idom[b.0 as usize].unwrap();
            depth[b.0 as usize] = depth[d.0 as usize] + 1;
        }
        DomTree { idom, rpo, depth }
    }

    pub fn is_reachable(&self, b: BlockId) -> bool {
        self.idom[b.0 as usize].is_some()
    }

    /// Whether `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut x = b;
        while self.depth[x.0 as usize] > self.depth[a.0 as usize] {
            x = self.idom[x.0 as usize].unwrap();
        }
        x == a
    }

    pub fn children(&self) -> Vec<Vec<BlockId>> {
        let mut c = vec![Vec::new(); self.idom.len()];
        for b in &self.rpo[1..] {
            c[self.idom[b.0 as usize].unwrap().0 as usize].push(*b);
        }
        c
    }

    pub fn frontiers(&self, f: &LirFunction) -> Vec<Vec<BlockId>> {
        let preds = predecessors(f);
        let mut df = vec![Vec::new(); f.blocks.len()];
        for b in &self.rpo {
            let ps: Vec<BlockId> = preds[b.0 as usize].iter().copied().filter(|p| self.is_reachable(*p)).collect();
            if ps.len() < 2 {
                continue;
            }
            let bidom = self.idom[b.0 as usize].unwrap();
            for p in ps {
                let mut runner = p;
                while runner != bidom {
                    if !df[runner.0 as usize].contains(b) {
                        df[runner.0 as usize].push(*b);
                    }
                    runner = self.idom[runner.0 as usize].unwrap();
                }
            }
        }
        df
    }
}

/// Immediate post-dominators. Blocks without successors post-dominate into a
/// virtual exit, reported as `None`; blocks that cannot reach an exit also map to `None`.
pub fn post_dominators(f: &LirFunction) -> Vec<Option<BlockId>> {
    post_dominators_where(f, |_| true)
}

/// Post-dominators where only blocks whose terminator satisfies `is_exit`
/// reach the virtual exit. Other blocks without successors are left out, so
/// paths into them do not move reconvergence points.
pub fn post_dominators_where(f: &LirFunction, is_exit: impl Fn(&Terminator) -> bool) -> Vec<Option<BlockId>> {
    let n = f.blocks.len();
    let exit = n;
    let mut rpreds: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut rsuccs: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let live = reachable(f);
    for b in f.block_ids() {
        if !live[b.0 as usize] {
            continue;
        }
        let s = successors(f, b);
        if s.is_empty() && f.block(b).term.as_ref().is_none_or(&is_exit) {
            rsuccs[exit].push(b.0 as usize);
            rpreds[b.0 as usize].push(exit);
        }
        for x in s {
            rsuccs[x.0 as usize].push(b.0 as usize);
            rpreds[b.0 as usize].push(x.0 as usize);
        }
    }
    // Reverse postorder on the reversed graph from the virtual exit.
    let mut seen = vec![false; n + 1];
    let mut post = Vec::new();
    let mut stack = vec![(exit, 0usize)];
    seen[exit] = true;
    while let Some((b, i)) = stack.pop() {
        if i < rsuccs[b].len() {
            stack.push((b, i + 1));
            let s = rsuccs[b][i];
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            post.push(b);
        }
    }
    post.reverse();
    let ipdom = idoms_generic(n + 1, &post, &rpreds);
    (0..n)
        .map(|b| match ipdom[b] {
            Some(x) if x != exit => Some(BlockId(x as u32)),
            _ => None,
        })
        .collect()
}

/// Whether every retreating edge targets a block that dominates its source.
pub fn is_reducible(f: &LirFunction, dom: &DomTree) -> bool {
    let mut order = vec![usize::MAX; f.blocks.len()];
    for (i, b) in dom.rpo.iter().enumerate() {
        order[b.0 as usize] = i;
    }
    for b in &dom.rpo {
        for s in successors(f, *b) {
            if order[s.0 as usize] <= order[b.0 as usize] && !dom.dominates(s, *b) {
                return false;
            }
        }
    }
    true
}

/// Blocks that are targets of back edges (loop headers).
pub fn loop_headers(f: &LirFunction, dom: &DomTree) -> Vec<BlockId> {
    let mut hs = Vec::new();
    for b in &dom.rpo {
        for s in successors(f, *b) {
            if dom.dominates(s, *b) && !hs.contains(&s) {
                hs.push(s);
            }
        }
    }
    hs
}

/// Drop blocks unreachable from the entry and renumber the rest, fixing
/// terminators and phi incoming lists.
pub fn remove_unreachable(f: &mut LirFunction) -> bool {
    let live = reachable(f);
    if live.iter().all(|x| *x) {
        return false;
    }
    let mut map: HashMap<BlockId, BlockId> = HashMap::new();
    let mut next = 0u32;
    for b in f.block_ids() {
        if live[b.0 as usize] {
            map.insert(b, BlockId(next));
            next += 1;
        }
    }
    let old = std::mem::take(&mut f.blocks);
    for (i, mut blk) in old.into_iter().enumerate() {
        if !live[i] {
            for v in &blk.insts {
                f.values[v.0 as usize].def = Def::Removed;
            }
            continue;
        }
        if let Some(t) = &mut blk.term {
            t.map_blocks(|b| map[&b]);
        }
        f.blocks.push(blk);
    }
    for b in 0..f.blocks.len() {
        let insts = f.blocks[b].insts.clone();
        for v in insts {
            if let Some(Inst::Phi(inc)) = f.inst_mut(v) {
                inc.retain(|(p, _)| map.contains_key(p));
                for (p, _) in inc.iter_mut() {
                    *p = map[p];
                }
            }
        }
    }
    true
}
