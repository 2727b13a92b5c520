use kforge_compiler::lir::cfg::post_dominators_where;
use kforge_compiler::lir::{BlockId, ConstVal, Inst, LirFunction, LirType, Terminator, ValueId};

use crate::VmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// A scalar read directly from param memory.
    Scalar,
    /// An aggregate stored in param memory; the parameter is its Param address.
    ByValue,
    /// A generic pointer stored in param memory, pointing at a staged copy.
    ByReference,
}

/// Where one kernel parameter lives in param memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    /// Scalar type, or the aggregate's type for the by-value and by-reference kinds.
    pub ty: LirType,
    pub offset: u64,
    /// Bytes occupied in param memory.
    pub size: u64,
}

/// A kernel entry prepared for execution: post-dominators, phi tables and
/// static local/shared layouts.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub(crate) f: LirFunction,
    pub(crate) ipdom: Vec<Option<BlockId>>,
    pub(crate) body_start: Vec<usize>,
    pub(crate) phis: Vec<Vec<ValueId>>,
    pub(crate) trap_block: Vec<bool>,
    pub(crate) local_offset: Vec<u64>,
    pub(crate) local_size: u64,
    pub(crate) shared_offset: Vec<u64>,
    pub(crate) shared_size: u64,
    params: Vec<ParamSlot>,
    param_size: u64,
}

fn align(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

impl Kernel {
    pub fn new(f: &LirFunction) -> Result<Kernel, VmError> {
        let unsupported = |m: String| Err(VmError::Unsupported(m));
        let n = f.values.len();
        let mut local_offset = vec![u64::MAX; n];
        let mut shared_offset = vec![u64::MAX; n];
        let (mut local_size, mut shared_size) = (0u64, 0u64);
        let mut body_start = Vec::new();
        let mut phis = Vec::new();
        let mut trap_block = Vec::new();
        for b in f.block_ids() {
            let blk = f.block(b);
            let k = blk.insts.iter().take_while(|v| matches!(f.inst(**v), Some(Inst::Phi(_)))).count();
            body_start.push(k);
            phis.push(blk.insts[..k].to_vec());
            trap_block.push(matches!(blk.term, Some(Terminator::Trap(_))));
            for v in &blk.insts {
                match f.inst(*v) {
                    Some(Inst::AllocLocal(t)) => {
                        local_size = align(local_size, 8);
                        local_offset[v.0 as usize] = local_size;
                        local_size += t.size();
                    }
                    Some(Inst::Intrinsic { name, args }) if name == "shared_alloc" => {
                        let bytes = match args.first().and_then(|a| f.inst(*a)) {
                            Some(Inst::Const(ConstVal::Imm(i))) => i.as_i64().unwrap_or(-1),
                            _ => -1,
                        };
                        if bytes < 0 {
                            return unsupported("shared_alloc needs a constant size".into());
                        }
                        shared_size = align(shared_size, 16);
                        shared_offset[v.0 as usize] = shared_size;
                        shared_size += bytes as u64;
                    }
                    Some(Inst::Call { callee, .. }) => return unsupported(format!("call to `{callee}`")),
                    Some(Inst::RtCall { name, .. }) => return unsupported(format!("runtime call `{name}`")),
                    _ => {}
                }
            }
        }
        let mut params = Vec::new();
        let mut off = 0u64;
        for p in &f.params {
            let (kind, ty, size) = match (&p.by_ref, p.param_space) {
                (Some(t), true) => (ParamKind::ByValue, t.clone(), t.size()),
                (Some(t), false) => (ParamKind::ByReference, t.clone(), 8),
                (None, _) if p.ty.is_scalar() => (ParamKind::Scalar, p.ty.clone(), p.ty.size()),
                (None, _) => return unsupported(format!("parameter `{}` of type {}", p.name, p.ty)),
            };
            off = align(off, 8);
            params.push(ParamSlot { name: p.name.clone(), kind, ty, offset: off, size });
            off += size;
        }
        Ok(Kernel {
            f: f.clone(),
            ipdom: post_dominators_where(f, |t| matches!(t, Terminator::Ret(_))),
            body_start,
            phis,
            trap_block,
            local_offset,
            local_size,
            shared_offset,
            shared_size,
            params,
            param_size: align(off, 8),
        })
    }

    pub fn function(&self) -> &LirFunction {
        &self.f
    }

    pub fn params(&self) -> &[ParamSlot] {
        &self.params
    }

    /// Total bytes of param memory a launch must supply.
    pub fn param_size(&self) -> u64 {
        self.param_size
    }

    /// Statically allocated shared bytes per block.
    pub fn shared_size(&self) -> u64 {
        self.shared_size
    }

    pub fn local_size(&self) -> u64 {
        self.local_size
    }
}
