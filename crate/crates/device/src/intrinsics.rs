//! Device intrinsics: typing for inference and lowering for codegen.

use std::sync::Arc;

use kforge_compiler::frontend::{Method, Scalar, Type};
use kforge_compiler::hir::{InferenceHooks, Operand};
use kforge_compiler::lir::{
    lir_type, BinKind, CastKind, CodegenHooks, IntrinsicCall, IrBuilder, IrError, LirType, Space, ValueId,
};

use crate::stdlib;

const INDEX_BASES: [&str; 4] = ["thread_idx", "block_idx", "block_dim", "grid_dim"];

/// Math intrinsics: name, argument scalars, result scalar.
pub const MATH: [(&str, &[Scalar], Scalar); 8] = [
    ("abs_i32", &[Scalar::Int32], Scalar::Int32),
    ("abs_i64", &[Scalar::Int64], Scalar::Int64),
    ("fabs_f32", &[Scalar::Float32], Scalar::Float32),
    ("fabs_f64", &[Scalar::Float64], Scalar::Float64),
    ("sqrt_f32", &[Scalar::Float32], Scalar::Float32),
    ("sqrt_f64", &[Scalar::Float64], Scalar::Float64),
    ("pow_f32", &[Scalar::Float32, Scalar::Float32], Scalar::Float32),
    ("pow_f64", &[Scalar::Float64, Scalar::Float64], Scalar::Float64),
];

pub fn is_index_intrinsic(name: &str) -> bool {
    INDEX_BASES.iter().any(|b| {
        name.strip_prefix(b)
            .and_then(|r| r.strip_prefix('_'))
            .is_some_and(|c| matches!(c, "x" | "y" | "z"))
    })
}

/// Names that may appear in `intrinsic` instructions of validated device LIR.
pub fn is_device_intrinsic(name: &str) -> bool {
    is_index_intrinsic(name)
        || matches!(name, "warpsize" | "barrier" | "shfl_down_u32" | "shared_alloc")
        || MATH.iter().any(|(n, _, _)| *n == name)
}

/// Number of 32-bit words a value of this type occupies when shuffled.
pub fn shuffle_words(t: &LirType) -> u64 {
    t.size().div_ceil(4)
}

/// Inference and codegen callbacks of the device target.
#[derive(Debug, Clone)]
pub struct DeviceHooks {
    pub warp_size: u32,
}

fn const_count(op: &Operand) -> Result<u64, String> {
    match op {
        Operand::Const(c) => match c.as_i64() {
            Some(n) if n > 0 => Ok(n as u64),
            _ => Err(format!("shared array length must be a positive integer, got {c}")),
        },
        _ => Err("shared array length must be a compile-time constant".into()),
    }
}

impl InferenceHooks for DeviceHooks {
    fn resolve_call(&self, name: &str, args: &[Type]) -> Option<Arc<Method>> {
        stdlib::resolve(name, args)
    }

    fn intrinsic_type(&self, name: &str, args: &[Type], operands: &[Operand]) -> Option<Result<Type, String>> {
        let arity = |n: usize| -> Result<(), String> {
            if args.len() == n {
                Ok(())
            } else {
                Err(format!("`{name}` takes {n} argument(s), got {}", args.len()))
            }
        };
        if is_index_intrinsic(name) || name == "warpsize" {
            return Some(arity(0).map(|_| Type::I64));
        }
        if let Some((_, want, ret)) = MATH.iter().find(|(n, _, _)| *n == name) {
            let ok = args.len() == want.len() && args.iter().zip(want.iter()).all(|(a, w)| a.as_scalar() == Some(*w));
            return Some(if ok {
                Ok(Type::Scalar(*ret))
            } else {
                Err(format!("no method matching {name} for these argument types"))
            });
        }
        Some(match name {
            "sync_threads" => arity(0).map(|_| Type::Nothing),
            "shfl_down" => arity(2).and_then(|_| {
                if !args[0].is_storable() {
                    return Err(format!("cannot shuffle a value of type {}", args[0]));
                }
                if !matches!(args[1].as_scalar(), Some(Scalar::Int32 | Scalar::Int64)) {
                    return Err("shuffle delta must be an integer".into());
                }
                Ok(args[0].clone())
            }),
            "shared_array" => arity(2).and_then(|_| {
                let Some(Operand::Type(p)) = operands.first() else {
                    return Err("shared_array expects an element type".into());
                };
                let elem = p.concrete().filter(|t| t.is_storable()).ok_or_else(|| format!("invalid shared element type {p}"))?;
                const_count(&operands[1])?;
                Ok(Type::SharedArray(Arc::new(elem)))
            }),
            "shared_like" => arity(2).and_then(|_| {
                if !args[0].is_storable() {
                    return Err(format!("invalid shared element type {}", args[0]));
                }
                const_count(&operands[1])?;
                Ok(Type::SharedArray(Arc::new(args[0].clone())))
            }),
            _ => return None,
        })
    }
}

impl CodegenHooks for DeviceHooks {
    fn lower_intrinsic(&self, b: &mut IrBuilder, call: &IntrinsicCall) -> Option<Result<Option<ValueId>, String>> {
        let r = match call.name {
            "sync_threads" => b.intrinsic("barrier", vec![], LirType::Void).map(|_| None),
            "shfl_down" => {
                let (Some(v), Some(d)) = (call.args[0], call.args[1]) else {
                    return Some(Err("shuffle operands have no value".into()));
                };
                shuffle_down(b, v, d).map(Some)
            }
            "shared_array" | "shared_like" => {
                let Type::SharedArray(elem) = call.ret else {
                    return Some(Err("shared array intrinsic without a shared result type".into()));
                };
                let n = match const_count(&call.operands[1]) {
                    Ok(n) => n,
                    Err(e) => return Some(Err(e)),
                };
                let bytes = n * lir_type(elem, call.params).size();
                shared_descriptor(b, bytes, n).map(Some)
            }
            _ => return None,
        };
        Some(r.map_err(|e| e.to_string()))
    }
}

fn shared_descriptor(b: &mut IrBuilder, bytes: u64, n: u64) -> Result<ValueId, IrError> {
    let size = b.i64(bytes as i64)?;
    let p = b.intrinsic("shared_alloc", vec![size], LirType::Ptr(Space::Shared))?;
    let len = b.i64(n as i64)?;
    b.make_struct(LirType::structure(vec![LirType::Ptr(Space::Shared), LirType::I64]), vec![p, len])
}

fn to_bits(b: &mut IrBuilder, v: ValueId) -> Result<ValueId, IrError> {
    match b.ty(v).clone() {
        LirType::I1 | LirType::I32 => b.cast(CastKind::Zext, v, LirType::I64),
        LirType::F32 => {
            let i = b.cast(CastKind::Bitcast, v, LirType::I32)?;
            b.cast(CastKind::Zext, i, LirType::I64)
        }
        LirType::F64 => b.cast(CastKind::Bitcast, v, LirType::I64),
        _ => Ok(v),
    }
}

fn from_bits(b: &mut IrBuilder, bits: ValueId, ty: &LirType) -> Result<ValueId, IrError> {
    match ty {
        LirType::I1 | LirType::I32 => b.cast(CastKind::Trunc, bits, ty.clone()),
        LirType::F32 => {
            let i = b.cast(CastKind::Trunc, bits, LirType::I32)?;
            b.cast(CastKind::Bitcast, i, LirType::F32)
        }
        LirType::F64 => b.cast(CastKind::Bitcast, bits, LirType::F64),
        _ => Ok(bits),
    }
}

fn shift(b: &mut IrBuilder, k: BinKind, v: ValueId, bytes: u64) -> Result<ValueId, IrError> {
    if bytes == 0 {
        return Ok(v);
    }
    let s = b.i64(8 * bytes as i64)?;
    b.bin(k, v, s)
}

fn mask(b: &mut IrBuilder, v: ValueId, bytes: u64) -> Result<ValueId, IrError> {
    let m = b.i64(((1u128 << (8 * bytes)) - 1) as i64)?;
    b.bin(BinKind::And, v, m)
}

fn or_into(b: &mut IrBuilder, acc: Option<ValueId>, v: ValueId) -> Result<Option<ValueId>, IrError> {
    Ok(Some(match acc {
        Some(a) => b.bin(BinKind::Or, a, v)?,
        None => v,
    }))
}

/// Move a value of any storable type through `shfl_down_u32`, one 32-bit word
/// at a time over its packed byte image.
fn shuffle_down(b: &mut IrBuilder, v: ValueId, delta: ValueId) -> Result<ValueId, IrError> {
    let ty = b.ty(v).clone();
    let delta = match b.ty(delta) {
        LirType::I32 => delta,
        _ => b.cast(CastKind::Trunc, delta, LirType::I32)?,
    };
    if matches!(ty, LirType::I32 | LirType::F32) {
        let w = match ty {
            LirType::F32 => b.cast(CastKind::Bitcast, v, LirType::I32)?,
            _ => v,
        };
        let r = b.intrinsic("shfl_down_u32", vec![w, delta], LirType::I32)?;
        return match ty {
            LirType::F32 => b.cast(CastKind::Bitcast, r, LirType::F32),
            _ => Ok(r),
        };
    }
    let field_types: Vec<LirType> = match &ty {
        LirType::Struct(fs) => fs.to_vec(),
        t => vec![t.clone()],
    };
    let mut fields = Vec::new();
    for (k, ft) in field_types.iter().enumerate() {
        let fv = match ty {
            LirType::Struct(_) => b.extract(v, k as u32)?,
            _ => v,
        };
        let bits = to_bits(b, fv)?;
        fields.push((ty.field_offset(k), ft.size(), ft.clone(), bits));
    }
    let words = shuffle_words(&ty);
    let mut shuffled = Vec::new();
    for w in 0..words {
        let (lo, hi) = (4 * w, 4 * w + 4);
        let mut acc = None;
        for (off, size, _, bits) in &fields {
            let (start, end) = (lo.max(*off), hi.min(off + size));
            if start >= end {
                continue;
            }
            let mut piece = shift(b, BinKind::LShr, *bits, start - off)?;
            if start - off + (end - start) < *size {
                piece = mask(b, piece, end - start)?;
            }
            piece = shift(b, BinKind::Shl, piece, start - lo)?;
            acc = or_into(b, acc, piece)?;
        }
        let acc = match acc {
            Some(a) => a,
            None => b.i64(0)?,
        };
        let word = b.cast(CastKind::Trunc, acc, LirType::I32)?;
        let r = b.intrinsic("shfl_down_u32", vec![word, delta], LirType::I32)?;
        shuffled.push(b.cast(CastKind::Zext, r, LirType::I64)?);
    }
    let mut out = Vec::new();
    for (off, size, ft, _) in &fields {
        let mut acc = None;
        for (w, wz) in shuffled.iter().enumerate() {
            let (lo, hi) = (4 * w as u64, 4 * w as u64 + 4);
            let (start, end) = (lo.max(*off), hi.min(off + size));
            if start >= end {
                continue;
            }
            let mut piece = shift(b, BinKind::LShr, *wz, start - lo)?;
            if start - lo + (end - start) < 4 {
                piece = mask(b, piece, end - start)?;
            }
            piece = shift(b, BinKind::Shl, piece, start - off)?;
            acc = or_into(b, acc, piece)?;
        }
        let bits = match acc {
            Some(a) => a,
            None => b.i64(0)?,
        };
        out.push(from_bits(b, bits, ft)?);
    }
    match ty {
        LirType::Struct(_) => b.make_struct(ty, out),
        _ => Ok(out[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_names() {
        assert!(is_index_intrinsic("thread_idx_x"));
        assert!(is_index_intrinsic("grid_dim_z"));
        assert!(!is_index_intrinsic("thread_idx_w"));
        assert!(!is_index_intrinsic("thread_idx"));
        assert!(is_device_intrinsic("shfl_down_u32"));
        assert!(!is_device_intrinsic("print"));
    }

    #[test]
    fn word_counts() {
        let s = |fs: Vec<LirType>| LirType::structure(fs);
        assert_eq!(shuffle_words(&LirType::I32), 1);
        assert_eq!(shuffle_words(&LirType::F64), 2);
        assert_eq!(shuffle_words(&s(vec![LirType::I32, LirType::I32, LirType::I32])), 3);
        assert_eq!(shuffle_words(&s(vec![LirType::I64, LirType::I64])), 4);
        assert_eq!(shuffle_words(&s(vec![LirType::I1, LirType::I1])), 1);
    }
}
