use kforge_compiler::lir::eval::{eval_bin, eval_cast, eval_cmp, eval_un, EvalError, Imm};
use kforge_compiler::lir::{BlockId, ConstVal, Inst, LirType, Space, Terminator, ValueId};

use crate::memory::{address, resolve};
use crate::value::{decode, encode, Val};
use crate::{Access, DeviceState, Events, ExecutionReport, Kernel, LaunchConfig, ParamKind, TrapReport, VmError};

const DIVIDE_BY_ZERO: i32 = -2;

#[derive(Debug, Clone, Copy)]
struct Entry {
    block: BlockId,
    idx: usize,
    mask: u64,
    rpc: Option<BlockId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Running,
    Waiting(ValueId),
    Done,
}

struct Warp {
    /// Linear thread index of each lane; fewer than the warp size in a partial warp.
    tids: Vec<u64>,
    regs: Vec<Vec<Val>>,
    locals: Vec<Vec<u8>>,
    stack: Vec<Entry>,
    launched: u64,
    live: u64,
    state: State,
}

struct Block<'a> {
    linear: u64,
    idx: [u32; 3],
    shared: Vec<u8>,
    params: &'a [u8],
}

enum Flow {
    Continue,
    Trap(TrapReport),
}

struct Exec<'a> {
    dev: &'a mut DeviceState,
    k: &'a Kernel,
    launch: LaunchConfig,
    ws: u32,
    cycles: u64,
    events: Events,
}

fn lanes(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |l| mask >> l & 1 == 1)
}

fn lowest(mask: u64) -> usize {
    mask.trailing_zeros() as usize
}

pub(crate) fn launch(dev: &mut DeviceState, k: &Kernel, launch: &LaunchConfig, params: &[u8]) -> Result<ExecutionReport, VmError> {
    let cfg = &dev.config;
    let ws = cfg.warp_size;
    if ws == 0 || ws > 64 {
        return Err(VmError::InvalidLaunch(format!("warp size {ws} must be between 1 and 64")));
    }
    if launch.grid.contains(&0) || launch.block.contains(&0) {
        return Err(VmError::InvalidLaunch("grid and block dimensions must be positive".into()));
    }
    if launch.block_threads() > cfg.max_block_threads {
        return Err(VmError::InvalidLaunch(format!(
            "{} threads per block exceeds the limit of {}",
            launch.block_threads(),
            cfg.max_block_threads
        )));
    }
    let shared = k.shared_size() + launch.shared_bytes;
    if shared > cfg.max_shared_bytes {
        return Err(VmError::InvalidLaunch(format!(
            "{shared} shared bytes per block exceeds the limit of {}",
            cfg.max_shared_bytes
        )));
    }
    if params.len() as u64 != k.param_size() {
        return Err(VmError::ParamSize { want: k.param_size(), got: params.len() as u64 });
    }
    let mut ex = Exec { k, launch: *launch, ws, cycles: dev.config.costs.launch, events: Events::default(), dev };
    let [gx, gy, gz] = launch.grid;
    let mut trap = None;
    'grid: for z in 0..gz {
        for y in 0..gy {
            for x in 0..gx {
                let linear = x as u64 + gx as u64 * (y as u64 + gy as u64 * z as u64);
                let mut blk = Block { linear, idx: [x, y, z], shared: vec![0; shared as usize], params };
                if let Flow::Trap(t) = ex.run_block(&mut blk)? {
                    trap = Some(t);
                    break 'grid;
                }
            }
        }
    }
    if trap.is_some() {
        ex.events.traps += 1;
    }
    Ok(ExecutionReport { cycles: ex.cycles, events: ex.events, trap, launch: *launch, warp_size: ws })
}

impl Exec<'_> {
    fn run_block(&mut self, blk: &mut Block) -> Result<Flow, VmError> {
        let f = &self.k.f;
        let threads = self.launch.block_threads();
        let ws = self.ws as u64;
        let entry = f.entry();
        let mut warps = Vec::new();
        for start in (0..threads).step_by(ws as usize) {
            let tids: Vec<u64> = (start..threads.min(start + ws)).collect();
            let n = tids.len();
            let launched = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
            let mut regs = vec![vec![Val::Undef; f.values.len()]; n];
            for r in regs.iter_mut() {
                for (p, slot) in f.params.iter().zip(self.k.params()) {
                    let bytes = &blk.params[slot.offset as usize..(slot.offset + slot.size) as usize];
                    r[p.value.0 as usize] = match slot.kind {
                        ParamKind::Scalar => decode(&slot.ty, bytes),
                        ParamKind::ByValue => Val::Ptr(address(Space::Param, slot.offset)),
                        ParamKind::ByReference => decode(&LirType::I64, bytes).imm().map_or(Val::Ptr(0), |i| Val::Ptr(i.to_bits())),
                    };
                }
            }
            warps.push(Warp {
                tids,
                regs,
                locals: vec![vec![0; self.k.local_size as usize]; n],
                stack: vec![Entry { block: entry, idx: self.k.body_start[entry.0 as usize], mask: launched, rpc: None }],
                launched,
                live: launched,
                state: State::Running,
            });
        }
        loop {
            let mut progressed = false;
            for w in 0..warps.len() {
                if warps[w].state != State::Running {
                    continue;
                }
                progressed = true;
                if let Flow::Trap(t) = self.step(blk, &mut warps[w])? {
                    return Ok(Flow::Trap(t));
                }
            }
            if progressed {
                continue;
            }
            let waiting: Vec<ValueId> = warps
                .iter()
                .filter_map(|w| match w.state {
                    State::Waiting(b) => Some(b),
                    _ => None,
                })
                .collect();
            if waiting.is_empty() {
                return Ok(Flow::Continue);
            }
            if waiting.len() != warps.len() || waiting.iter().any(|b| *b != waiting[0]) {
                let done = warps.iter().filter(|w| w.state == State::Done).count();
                return Err(VmError::BarrierDivergence {
                    block: blk.linear,
                    detail: format!("{} of {} warps wait at a barrier, {done} exited, waits are at {} distinct barriers", waiting.len(), warps.len(), {
                        let mut d = waiting.clone();
                        d.sort_by_key(|v| v.0);
                        d.dedup();
                        d.len()
                    }),
                });
            }
            for w in warps.iter_mut() {
                w.state = State::Running;
                w.stack.last_mut().expect("waiting warp has a frame").idx += 1;
                self.events.barriers += 1;
                self.cycles += self.dev.config.costs.barrier_per_warp;
            }
        }
    }

    fn step(&mut self, blk: &mut Block, w: &mut Warp) -> Result<Flow, VmError> {
        while let Some(top) = w.stack.last() {
            if top.mask & w.live != 0 {
                break;
            }
            w.stack.pop();
        }
        let Some(&top) = w.stack.last() else {
            w.state = State::Done;
            return Ok(Flow::Continue);
        };
        self.events.warp_instructions += 1;
        if self.events.warp_instructions > self.dev.config.step_limit {
            return Err(VmError::StepLimit(self.dev.config.step_limit));
        }
        let mask = top.mask & w.live;
        self.events.lane_instructions += mask.count_ones() as u64;
        let f = &self.k.f;
        let blkdata = f.block(top.block);
        if top.idx < blkdata.insts.len() {
            let v = blkdata.insts[top.idx];
            let inst = f.inst(v).ok_or_else(|| VmError::Malformed(format!("{v} is not an instruction")))?;
            match inst {
                Inst::Intrinsic { name, .. } if name == "barrier" => {
                    if mask != w.launched {
                        return Err(VmError::BarrierDivergence {
                            block: blk.linear,
                            detail: format!(
                                "warp of thread {} reached a barrier with {} of {} lanes active",
                                w.tids[0],
                                mask.count_ones(),
                                w.launched.count_ones()
                            ),
                        });
                    }
                    w.state = State::Waiting(v);
                    return Ok(Flow::Continue);
                }
                Inst::Intrinsic { name, args } if name == "shfl_down_u32" => {
                    self.shuffle(w, mask, v, args[0], args[1])?;
                }
                _ => {
                    for l in lanes(mask) {
                        if let Some(code) = self.lane_inst(blk, w, l, v, inst)? {
                            return Ok(Flow::Trap(TrapReport { block: blk.linear, thread: w.tids[l], code }));
                        }
                    }
                }
            }
            w.stack.last_mut().expect("frame").idx += 1;
            return Ok(Flow::Continue);
        }
        let term = blkdata.term.as_ref().ok_or_else(|| VmError::Malformed(format!("{} has no terminator", top.block)))?;
        match term {
            Terminator::Br(t) => {
                self.transfer(w, mask, top.block, *t);
                self.goto(w, *t);
            }
            Terminator::CondBr(c, t, e) => {
                let costs = self.dev.config.costs.arithmetic;
                let mut taken = 0u64;
                for l in lanes(mask) {
                    self.cycles += costs;
                    let b = w.regs[l][c.0 as usize].imm().and_then(Imm::as_bool);
                    if b.ok_or_else(|| VmError::Malformed(format!("branch condition {c} is not a boolean")))? {
                        taken |= 1 << l;
                    }
                }
                let not_taken = mask & !taken;
                if t == e || not_taken == 0 || taken == 0 {
                    let dest = if taken != 0 { *t } else { *e };
                    self.transfer(w, mask, top.block, dest);
                    self.goto(w, dest);
                } else {
                    self.transfer(w, taken, top.block, *t);
                    self.transfer(w, not_taken, top.block, *e);
                    self.diverge(w, top, [(*t, taken), (*e, not_taken)])?;
                }
            }
            Terminator::Ret(_) => {
                w.live &= !mask;
                w.stack.pop();
            }
            Terminator::Trap(code) => {
                let l = lowest(mask);
                let code = w.regs[l][code.0 as usize].imm().and_then(Imm::as_i64).unwrap_or(0) as i32;
                return Ok(Flow::Trap(TrapReport { block: blk.linear, thread: w.tids[l], code }));
            }
            Terminator::Unreachable => {
                return Err(VmError::Unreachable { block: blk.linear, thread: w.tids[lowest(mask)] });
            }
        }
        Ok(Flow::Continue)
    }

    fn diverge(&mut self, w: &mut Warp, top: Entry, paths: [(BlockId, u64); 2]) -> Result<(), VmError> {
        let r = self.k.ipdom[top.block.0 as usize];
        let rpc = r.or(top.rpc);
        w.stack.pop();
        if let Some(r) = r {
            if Some(r) != top.rpc {
                w.stack.push(Entry { block: r, idx: self.k.body_start[r.0 as usize], mask: top.mask, rpc: top.rpc });
            }
        }
        let mut order = paths;
        // Paths ending in a trap run first so the trap is reported before other side effects.
        order.sort_by_key(|(b, _)| self.k.trap_block[b.0 as usize]);
        for (b, m) in order {
            if Some(b) == rpc {
                continue;
            }
            w.stack.push(Entry { block: b, idx: self.k.body_start[b.0 as usize], mask: m, rpc });
        }
        if w.stack.len() > self.dev.config.max_stack_depth {
            return Err(VmError::StackOverflow(self.dev.config.max_stack_depth));
        }
        Ok(())
    }

    fn goto(&self, w: &mut Warp, t: BlockId) {
        let top = w.stack.last_mut().expect("frame");
        if top.rpc == Some(t) {
            w.stack.pop();
        } else {
            top.block = t;
            top.idx = self.k.body_start[t.0 as usize];
        }
    }

    /// Assign the phis of `to` for lanes in `mask` leaving `from`.
    fn transfer(&self, w: &mut Warp, mask: u64, from: BlockId, to: BlockId) {
        let phis = &self.k.phis[to.0 as usize];
        if phis.is_empty() {
            return;
        }
        let f = &self.k.f;
        for l in lanes(mask) {
            let vals: Vec<Val> = phis
                .iter()
                .map(|p| match f.inst(*p) {
                    Some(Inst::Phi(inc)) => inc
                        .iter()
                        .find(|(b, _)| *b == from)
                        .map_or(Val::Undef, |(_, x)| w.regs[l][x.0 as usize].clone()),
                    _ => Val::Undef,
                })
                .collect();
            for (p, x) in phis.iter().zip(vals) {
                w.regs[l][p.0 as usize] = x;
            }
        }
    }

    fn shuffle(&mut self, w: &mut Warp, mask: u64, v: ValueId, word: ValueId, delta: ValueId) -> Result<(), VmError> {
        self.events.shuffles += 1;
        self.cycles += self.dev.config.costs.shuffle_per_word;
        let ws = self.ws as usize;
        let word_of = |w: &Warp, l: usize| -> Result<i32, VmError> {
            match w.regs[l][word.0 as usize].imm() {
                Some(Imm::I32(x)) => Ok(x),
                _ => Err(VmError::Malformed("shuffle word is not an i32".into())),
            }
        };
        let mut out = Vec::new();
        for l in lanes(mask) {
            let d = w.regs[l][delta.0 as usize].imm().and_then(Imm::as_i64).ok_or_else(|| VmError::Malformed("shuffle delta is not an integer".into()))?;
            if d < 0 || d >= ws as i64 {
                return Err(VmError::ShuffleDelta { delta: d, warp_size: self.ws });
            }
            let src = l + d as usize;
            let x = if src >= ws {
                word_of(w, l)?
            } else if mask >> src & 1 == 1 {
                word_of(w, src)?
            } else {
                0
            };
            out.push((l, x));
        }
        for (l, x) in out {
            w.regs[l][v.0 as usize] = Val::Scalar(Imm::I32(x));
        }
        Ok(())
    }

    /// Execute one instruction for one lane. Returns a trap code when the lane traps.
    fn lane_inst(&mut self, blk: &mut Block, w: &mut Warp, l: usize, v: ValueId, inst: &Inst) -> Result<Option<i32>, VmError> {
        let f = &self.k.f;
        let arith = self.dev.config.costs.arithmetic;
        let regs = &w.regs[l];
        let get = |x: &ValueId| regs[x.0 as usize].clone();
        let imm = |x: &ValueId| regs[x.0 as usize].imm().ok_or_else(|| VmError::Malformed(format!("{x} is not a scalar")));
        let mismatch = |e: EvalError| VmError::Malformed(e.to_string());
        let ty = f.ty(v);
        let out = match inst {
            Inst::Const(ConstVal::Imm(i)) => match ty {
                LirType::Ptr(_) => Val::Ptr(i.to_bits()),
                _ => Val::Scalar(*i),
            },
            Inst::Const(ConstVal::Zero) => Val::zero(ty),
            Inst::Phi(_) => return Ok(None),
            Inst::Bin(k, a, b) => {
                self.cycles += arith;
                match eval_bin(*k, imm(a)?, imm(b)?) {
                    Ok(r) => Val::Scalar(r),
                    Err(EvalError::DivideByZero) => return Ok(Some(DIVIDE_BY_ZERO)),
                    Err(e) => return Err(mismatch(e)),
                }
            }
            Inst::Un(k, a) => {
                self.cycles += arith;
                Val::Scalar(eval_un(*k, imm(a)?).map_err(mismatch)?)
            }
            Inst::Cmp(p, a, b) => {
                self.cycles += arith;
                Val::Scalar(Imm::I1(eval_cmp(*p, imm(a)?, imm(b)?).map_err(mismatch)?))
            }
            Inst::Cast(k, a) => {
                self.cycles += arith;
                let r = eval_cast(*k, imm(a)?, ty).map_err(mismatch)?;
                match ty {
                    LirType::Ptr(_) => Val::Ptr(r.to_bits()),
                    _ => Val::Scalar(r),
                }
            }
            Inst::Select(c, a, b) => {
                self.cycles += arith;
                let c = imm(c)?.as_bool().ok_or_else(|| VmError::Malformed("select condition is not a boolean".into()))?;
                if c {
                    get(a)
                } else {
                    get(b)
                }
            }
            Inst::Extract(a, k) => {
                self.cycles += arith;
                let agg = get(a);
                agg.fields().and_then(|fs| fs.get(*k as usize)).cloned().ok_or_else(|| VmError::Malformed(format!("extract from non-aggregate {a}")))?
            }
            Inst::Insert(a, k, x) => {
                self.cycles += arith;
                let agg = get(a);
                let mut fs: Vec<Val> = agg.fields().ok_or_else(|| VmError::Malformed(format!("insert into non-aggregate {a}")))?.to_vec();
                fs[*k as usize] = get(x);
                Val::Agg(fs.into())
            }
            Inst::MakeStruct(xs) => {
                self.cycles += arith;
                Val::Agg(xs.iter().map(get).collect())
            }
            Inst::AddrCast(a) => get(a),
            Inst::ElemAddr { elem, ptr, index } => {
                self.cycles += arith;
                let p = get(ptr).ptr().ok_or_else(|| VmError::Malformed(format!("{ptr} is not a pointer")))?;
                let i = imm(index)?.as_i64().ok_or_else(|| VmError::Malformed("element index is not an integer".into()))?;
                Val::Ptr(p.wrapping_add((i as u64).wrapping_mul(elem.size())))
            }
            Inst::FieldAddr { agg, ptr, field } => {
                self.cycles += arith;
                let p = get(ptr).ptr().ok_or_else(|| VmError::Malformed(format!("{ptr} is not a pointer")))?;
                Val::Ptr(p.wrapping_add(agg.field_offset(*field as usize)))
            }
            Inst::AllocLocal(_) => Val::Ptr(address(Space::Local, self.k.local_offset[v.0 as usize])),
            Inst::Load { space, ptr } => {
                let p = get(ptr).ptr().ok_or_else(|| VmError::Malformed(format!("{ptr} is not a pointer")))?;
                let len = ty.size();
                let resolved = self.check(blk, w, l, *space, p, len, false)?;
                self.events.loads.bump(*space);
                self.cycles += self.dev.config.costs.memory(*space, resolved);
                let off = resolve(p).expect("checked").1;
                let bytes = match resolved {
                    Space::Global => self.dev.global.slice(off, len).expect("checked"),
                    Space::Shared => &blk.shared[off as usize..(off + len) as usize],
                    Space::Param => &blk.params[off as usize..(off + len) as usize],
                    _ => &w.locals[l][off as usize..(off + len) as usize],
                };
                decode(ty, bytes)
            }
            Inst::Store { space, ptr, value } => {
                let p = get(ptr).ptr().ok_or_else(|| VmError::Malformed(format!("{ptr} is not a pointer")))?;
                let vt = f.ty(*value);
                let len = vt.size();
                let resolved = self.check(blk, w, l, *space, p, len, true)?;
                self.events.stores.bump(*space);
                self.cycles += self.dev.config.costs.memory(*space, resolved);
                let off = resolve(p).expect("checked").1;
                let x = get(value);
                let bytes = match resolved {
                    Space::Global => self.dev.global.slice_mut(off, len).expect("checked"),
                    Space::Shared => &mut blk.shared[off as usize..(off + len) as usize],
                    _ => &mut w.locals[l][off as usize..(off + len) as usize],
                };
                encode(vt, &x, bytes);
                return Ok(None);
            }
            Inst::Intrinsic { name, args } => match name.as_str() {
                "shared_alloc" => Val::Ptr(address(Space::Shared, self.k.shared_offset[v.0 as usize])),
                _ => {
                    self.cycles += arith;
                    let ops: Vec<Imm> = args.iter().map(imm).collect::<Result<_, _>>()?;
                    Val::Scalar(self.intrinsic(blk, w, l, name, &ops)?)
                }
            },
            Inst::Call { callee, .. } => return Err(VmError::Unsupported(format!("call to `{callee}`"))),
            Inst::RtCall { name, .. } => return Err(VmError::Unsupported(format!("runtime call `{name}`"))),
        };
        w.regs[l][v.0 as usize] = out;
        Ok(None)
    }

    #[allow(clippy::too_many_arguments)]
    fn check(&mut self, blk: &Block, w: &Warp, l: usize, tag: Space, addr: u64, len: u64, write: bool) -> Result<Space, VmError> {
        let fault = || VmError::Fault { block: blk.linear, thread: w.tids[l], space: tag, addr, len, write };
        let (space, off) = resolve(addr).ok_or_else(fault)?;
        if tag != Space::Generic && tag != space {
            return Err(fault());
        }
        let end = off.checked_add(len).ok_or_else(fault)?;
        let ok = match space {
            Space::Global => self.dev.global.slice(off, len).is_some(),
            Space::Shared => end <= blk.shared.len() as u64,
            Space::Param => !write && end <= blk.params.len() as u64,
            Space::Local => end <= w.locals[l].len() as u64,
            Space::Generic => false,
        };
        if !ok {
            return Err(fault());
        }
        if self.dev.config.log_accesses {
            self.dev.access_log.push(Access {
                block: blk.linear,
                thread: w.tids[l],
                write,
                tag: tag.name().into(),
                space: space.name().into(),
                addr,
                len,
            });
        }
        Ok(space)
    }

    fn intrinsic(&self, blk: &Block, w: &Warp, l: usize, name: &str, ops: &[Imm]) -> Result<Imm, VmError> {
        let bad = || VmError::Malformed(format!("bad operands for intrinsic `{name}`"));
        let [bx, by, _] = self.launch.block;
        let tid = w.tids[l];
        let thread = [tid % bx as u64, tid / bx as u64 % by as u64, tid / (bx as u64 * by as u64)];
        let dim = |d: [u32; 3], c: usize| Imm::I64(d[c] as i64);
        let axis = |n: &str| match n.rsplit('_').next() {
            Some("x") => Some(0),
            Some("y") => Some(1),
            Some("z") => Some(2),
            _ => None,
        };
        Ok(match (name, ops) {
            ("warpsize", []) => Imm::I64(self.ws as i64),
            (n, []) if n.starts_with("thread_idx_") => Imm::I64(thread[axis(n).ok_or_else(bad)?] as i64 + 1),
            (n, []) if n.starts_with("block_idx_") => Imm::I64(blk.idx[axis(n).ok_or_else(bad)?] as i64 + 1),
            (n, []) if n.starts_with("block_dim_") => dim(self.launch.block, axis(n).ok_or_else(bad)?),
            (n, []) if n.starts_with("grid_dim_") => dim(self.launch.grid, axis(n).ok_or_else(bad)?),
            ("abs_i32", [Imm::I32(x)]) => Imm::I32(x.wrapping_abs()),
            ("abs_i64", [Imm::I64(x)]) => Imm::I64(x.wrapping_abs()),
            ("fabs_f32", [Imm::F32(x)]) => Imm::F32(x.abs()),
            ("fabs_f64", [Imm::F64(x)]) => Imm::F64(x.abs()),
            ("sqrt_f32", [Imm::F32(x)]) => Imm::F32(x.sqrt()),
            ("sqrt_f64", [Imm::F64(x)]) => Imm::F64(x.sqrt()),
            ("pow_f32", [Imm::F32(x), Imm::F32(y)]) => Imm::F32(x.powf(*y)),
            ("pow_f64", [Imm::F64(x), Imm::F64(y)]) => Imm::F64(x.powf(*y)),
            _ => return Err(VmError::Unsupported(format!("intrinsic `{name}`"))),
        })
    }
}
