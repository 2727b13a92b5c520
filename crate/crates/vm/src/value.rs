use std::rc::Rc;

use kforge_compiler::lir::{Imm, LirType};

/// A lane's value of one SSA register.
#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Undef,
    Scalar(Imm),
    Ptr(u64),
    Agg(Rc<[Val]>),
}

impl Val {
    pub fn zero(ty: &LirType) -> Val {
        match ty {
            LirType::Void => Val::Undef,
            LirType::Ptr(_) => Val::Ptr(0),
            LirType::Struct(fs) => Val::Agg(fs.iter().map(Val::zero).collect()),
            t => Val::Scalar(Imm::zero(t).expect("scalar type")),
        }
    }

    pub fn imm(&self) -> Option<Imm> {
        match self {
            Val::Scalar(i) => Some(*i),
            Val::Ptr(p) => Some(Imm::I64(*p as i64)),
            _ => None,
        }
    }

    pub fn ptr(&self) -> Option<u64> {
        match self {
            Val::Ptr(p) => Some(*p),
            _ => None,
        }
    }

    pub fn fields(&self) -> Option<&[Val]> {
        match self {
            Val::Agg(fs) => Some(fs),
            _ => None,
        }
    }
}

/// Write the packed little-endian image of `v` into `out[..ty.size()]`.
pub fn encode(ty: &LirType, v: &Val, out: &mut [u8]) {
    match (ty, v) {
        (LirType::Struct(fs), Val::Agg(vs)) => {
            let mut off = 0;
            for (t, x) in fs.iter().zip(vs.iter()) {
                let n = t.size() as usize;
                encode(t, x, &mut out[off..off + n]);
                off += n;
            }
        }
        (LirType::Void, _) => {}
        (t, v) => {
            let bits = match v {
                Val::Scalar(i) => i.to_bits(),
                Val::Ptr(p) => *p,
                _ => 0,
            };
            let n = t.size() as usize;
            out[..n].copy_from_slice(&bits.to_le_bytes()[..n]);
        }
    }
}

pub fn decode(ty: &LirType, bytes: &[u8]) -> Val {
    match ty {
        LirType::Void => Val::Undef,
        LirType::Struct(fs) => {
            let mut off = 0;
            let mut vs = Vec::with_capacity(fs.len());
            for t in fs.iter() {
                let n = t.size() as usize;
                vs.push(decode(t, &bytes[off..off + n]));
                off += n;
            }
            Val::Agg(vs.into())
        }
        t => {
            let n = t.size() as usize;
            let mut b = [0u8; 8];
            b[..n].copy_from_slice(&bytes[..n]);
            let bits = u64::from_le_bytes(b);
            match t {
                LirType::Ptr(_) => Val::Ptr(bits),
                t => Val::Scalar(Imm::from_bits(t, bits).expect("scalar type")),
            }
        }
    }
}
