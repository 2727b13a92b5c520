//! Scalar semantics of LIR instructions, shared by constant folding and the VM.

use std::fmt;

use thiserror::Error;

use super::{BinKind, CastKind, CmpPred, LirType, UnKind};
use crate::frontend::interp::ipow_i64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imm {
    I1(bool),
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("integer division by zero")]
    DivideByZero,
    #[error("operand types do not fit the operation")]
    Mismatch,
}

impl Imm {
    pub fn ty(self) -> LirType {
        match self {
            Imm::I1(_) => LirType::I1,
            Imm::I32(_) => LirType::I32,
            Imm::I64(_) => LirType::I64,
            Imm::F32(_) => LirType::F32,
            Imm::F64(_) => LirType::F64,
        }
    }

    pub fn zero(ty: &LirType) -> Option<Imm> {
        Some(match ty {
            LirType::I1 => Imm::I1(false),
            LirType::I32 => Imm::I32(0),
            LirType::I64 | LirType::Ptr(_) => Imm::I64(0),
            LirType::F32 => Imm::F32(0.0),
            LirType::F64 => Imm::F64(0.0),
            _ => return None,
        })
    }

    /// Raw little-endian bit pattern, zero-extended to 64 bits.
    pub fn to_bits(self) -> u64 {
        match self {
            Imm::I1(b) => b as u64,
            Imm::I32(x) => x as u32 as u64,
            Imm::I64(x) => x as u64,
            Imm::F32(x) => x.to_bits() as u64,
            Imm::F64(x) => x.to_bits(),
        }
    }

    pub fn from_bits(ty: &LirType, bits: u64) -> Option<Imm> {
        Some(match ty {
            LirType::I1 => Imm::I1(bits & 1 != 0),
            LirType::I32 => Imm::I32(bits as u32 as i32),
            LirType::I64 | LirType::Ptr(_) => Imm::I64(bits as i64),
            LirType::F32 => Imm::F32(f32::from_bits(bits as u32)),
            LirType::F64 => Imm::F64(f64::from_bits(bits)),
            _ => return None,
        })
    }

    pub fn as_i64(self) -> Option<i64> {
        match self {
            Imm::I1(b) => Some(b as i64),
            Imm::I32(x) => Some(x as i64),
            Imm::I64(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Imm::I1(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for Imm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Imm::I1(b) => write!(f, "{b}"),
            Imm::I32(x) => write!(f, "{x}"),
            Imm::I64(x) => write!(f, "{x}"),
            Imm::F32(x) => write!(f, "{x:?}"),
            Imm::F64(x) => write!(f, "{x:?}"),
        }
    }
}

pub fn eval_bin(kind: BinKind, a: Imm, b: Imm) -> Result<Imm, EvalError> {
    use BinKind::*;
    macro_rules! int {
        ($x:expr, $y:expr, $ctor:path, $bits:expr, $pow:expr) => {{
            let (x, y) = ($x, $y);
            Ok($ctor(match kind {
                Add => x.wrapping_add(y),
                Sub => x.wrapping_sub(y),
                Mul => x.wrapping_mul(y),
                SDiv | SRem if y == 0 => return Err(EvalError::DivideByZero),
                SDiv => x.wrapping_div(y),
                SRem => x.wrapping_rem(y),
                IPow => $pow(x, y),
                And => x & y,
                Or => x | y,
                Xor => x ^ y,
                Shl => x.wrapping_shl(y as u32 % $bits),
                LShr => ((x as u64 & (u64::MAX >> (64 - $bits))) >> (y as u32 % $bits)) as _,
                _ => return Err(EvalError::Mismatch),
            }))
        }};
    }
    macro_rules! float {
        ($x:expr, $y:expr, $ctor:path) => {{
            let (x, y) = ($x, $y);
            Ok($ctor(match kind {
                FAdd => x + y,
                FSub => x - y,
                FMul => x * y,
                FDiv => x / y,
                FRem => x % y,
                FPow => x.powf(y),
                _ => return Err(EvalError::Mismatch),
            }))
        }};
    }
    match (a, b) {
        (Imm::I1(x), Imm::I1(y)) => Ok(Imm::I1(match kind {
            And => x & y,
            Or => x | y,
            Xor => x ^ y,
            _ => return Err(EvalError::Mismatch),
        })),
        (Imm::I32(x), Imm::I32(y)) => {
            int!(x, y, Imm::I32, 32, |x: i32, y: i32| ipow_i64(x as i64, y as i64) as i32)
        }
        (Imm::I64(x), Imm::I64(y)) => int!(x, y, Imm::I64, 64, ipow_i64),
        (Imm::F32(x), Imm::F32(y)) => float!(x, y, Imm::F32),
        (Imm::F64(x), Imm::F64(y)) => float!(x, y, Imm::F64),
        _ => Err(EvalError::Mismatch),
    }
}

pub fn eval_un(kind: UnKind, a: Imm) -> Result<Imm, EvalError> {
    Ok(match (kind, a) {
        (UnKind::Neg, Imm::I32(x)) => Imm::I32(x.wrapping_neg()),
        (UnKind::Neg, Imm::I64(x)) => Imm::I64(x.wrapping_neg()),
        (UnKind::FNeg, Imm::F32(x)) => Imm::F32(-x),
        (UnKind::FNeg, Imm::F64(x)) => Imm::F64(-x),
        (UnKind::Not, Imm::I1(b)) => Imm::I1(!b),
        (UnKind::Not, Imm::I32(x)) => Imm::I32(!x),
        (UnKind::Not, Imm::I64(x)) => Imm::I64(!x),
        _ => return Err(EvalError::Mismatch),
    })
}

pub fn eval_cmp(pred: CmpPred, a: Imm, b: Imm) -> Result<bool, EvalError> {
    use CmpPred::*;
    let int = |x: i64, y: i64, ux: u64, uy: u64| -> Result<bool, EvalError> {
        Ok(match pred {
            Eq => x == y,
            Ne => x != y,
            Slt => x < y,
            Sle => x <= y,
            Sgt => x > y,
            Sge => x >= y,
            Ult => ux < uy,
            _ => return Err(EvalError::Mismatch),
        })
    };
    let float = |x: f64, y: f64| -> Result<bool, EvalError> {
        Ok(match pred {
            FEq => x == y,
            FNe => x != y,
            FLt => x < y,
            FLe => x <= y,
            FGt => x > y,
            FGe => x >= y,
            _ => return Err(EvalError::Mismatch),
        })
    };
    match (a, b) {
        (Imm::I1(x), Imm::I1(y)) => int(x as i64, y as i64, x as u64, y as u64),
        (Imm::I32(x), Imm::I32(y)) => int(x as i64, y as i64, x as u32 as u64, y as u32 as u64),
        (Imm::I64(x), Imm::I64(y)) => int(x, y, x as u64, y as u64),
        // f32 comparisons are exact after widening.
        (Imm::F32(x), Imm::F32(y)) => float(x as f64, y as f64),
        (Imm::F64(x), Imm::F64(y)) => float(x, y),
        _ => Err(EvalError::Mismatch),
    }
}

pub fn eval_cast(kind: CastKind, a: Imm, to: &LirType) -> Result<Imm, EvalError> {
    use CastKind::*;
    let m = Err(EvalError::Mismatch);
    let signed = |a: Imm| a.as_i64();
    let unsigned = |a: Imm| -> Option<u64> {
        Some(match a {
            Imm::I1(b) => b as u64,
            Imm::I32(x) => x as u32 as u64,
            Imm::I64(x) => x as u64,
            _ => return None,
        })
    };
    let float = |a: Imm| -> Option<f64> {
        match a {
            Imm::F32(x) => Some(x as f64),
            Imm::F64(x) => Some(x),
            _ => None,
        }
    };
    let int_to = |v: i64| -> Result<Imm, EvalError> {
        match to {
            LirType::I1 => Ok(Imm::I1(v & 1 != 0)),
            LirType::I32 => Ok(Imm::I32(v as i32)),
            LirType::I64 | LirType::Ptr(_) => Ok(Imm::I64(v)),
            _ => Err(EvalError::Mismatch),
        }
    };
    match kind {
        Sext => signed(a).map_or(m, int_to),
        Zext | Trunc => unsigned(a).map_or(m, |u| int_to(u as i64)),
        SiToFp => match (a, to) {
            (Imm::I64(x), LirType::F32) => Ok(Imm::F32(x as f32)),
            (Imm::I64(x), LirType::F64) => Ok(Imm::F64(x as f64)),
            (_, LirType::F32) => signed(a).map_or(m, |x| Ok(Imm::F32(x as f32))),
            (_, LirType::F64) => signed(a).map_or(m, |x| Ok(Imm::F64(x as f64))),
            _ => m,
        },
        UiToFp => match to {
            LirType::F32 => unsigned(a).map_or(m, |x| Ok(Imm::F32(x as f32))),
            LirType::F64 => unsigned(a).map_or(m, |x| Ok(Imm::F64(x as f64))),
            _ => m,
        },
        FpToSi => match (a, to) {
            (Imm::F32(x), LirType::I32) => Ok(Imm::I32(x as i32)),
            (Imm::F64(x), LirType::I32) => Ok(Imm::I32(x as i32)),
            (Imm::F32(x), LirType::I64) => Ok(Imm::I64(x as i64)),
            (Imm::F64(x), LirType::I64) => Ok(Imm::I64(x as i64)),
            _ => m,
        },
        FpExt => float(a).filter(|_| *to == LirType::F64).map_or(m, |x| Ok(Imm::F64(x))),
        FpTrunc => match (a, to) {
            (Imm::F64(x), LirType::F32) => Ok(Imm::F32(x as f32)),
            _ => m,
        },
        Bitcast => {
            if a.ty().size() != to.size() {
                return m;
            }
            Imm::from_bits(to, a.to_bits()).ok_or(EvalError::Mismatch)
        }
    }
}
