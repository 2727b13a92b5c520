//! Byte images of KSL values and host arrays.

use std::io::{Read, Write};

use kforge_compiler::frontend::{Scalar, Type, Value};

use crate::RuntimeError;

fn scalar_bytes(v: &Value, s: Scalar, out: &mut Vec<u8>) -> bool {
    match (v, s) {
        (Value::Bool(b), Scalar::Bool) => out.push(*b as u8),
        (Value::I32(x), Scalar::Int32) => out.extend_from_slice(&x.to_le_bytes()),
        (Value::I64(x), Scalar::Int64) => out.extend_from_slice(&x.to_le_bytes()),
        (Value::F32(x), Scalar::Float32) => out.extend_from_slice(&x.to_le_bytes()),
        (Value::F64(x), Scalar::Float64) => out.extend_from_slice(&x.to_le_bytes()),
        _ => return false,
    }
    true
}

fn scalar_value(s: Scalar, b: &[u8]) -> Value {
    match s {
        Scalar::Bool => Value::Bool(b[0] != 0),
        Scalar::Int32 => Value::I32(i32::from_le_bytes(b[..4].try_into().unwrap())),
        Scalar::Int64 => Value::I64(i64::from_le_bytes(b[..8].try_into().unwrap())),
        Scalar::Float32 => Value::F32(f32::from_le_bytes(b[..4].try_into().unwrap())),
        Scalar::Float64 => Value::F64(f64::from_le_bytes(b[..8].try_into().unwrap())),
    }
}

/// Append the packed little-endian image of `v`, which must have type `ty`.
pub fn encode_value(v: &Value, ty: &Type, out: &mut Vec<u8>) -> Result<(), RuntimeError> {
    let ok = match (v, ty) {
        (v, Type::Scalar(s)) => scalar_bytes(v, *s, out),
        (Value::Record(rt, fields), Type::Record(want)) if rt == want => {
            rt.fields.iter().zip(fields.iter()).all(|((_, s), f)| scalar_bytes(f, *s, out))
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(RuntimeError::ValueType { value: v.to_string(), ty: ty.clone() })
    }
}

pub fn decode_value(ty: &Type, bytes: &[u8]) -> Value {
    match ty {
        Type::Scalar(s) => scalar_value(*s, bytes),
        Type::Record(r) => {
            let fields: Vec<Value> =
                r.fields.iter().enumerate().map(|(i, (_, s))| scalar_value(*s, &bytes[r.field_offset(i) as usize..])).collect();
            Value::Record(r.clone(), fields.into())
        }
        _ => Value::Nothing,
    }
}

/// Whether arrays of `ty` can live in device memory.
pub fn is_element_type(ty: &Type) -> bool {
    match ty {
        Type::Scalar(_) => true,
        Type::Record(r) => !r.mutable,
        _ => false,
    }
}

/// A host-side array: element type, length and packed element bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct HostArray {
    elem: Type,
    len: u64,
    bytes: Vec<u8>,
}

impl HostArray {
    pub fn from_values(elem: Type, values: &[Value]) -> Result<HostArray, RuntimeError> {
        if !is_element_type(&elem) {
            return Err(RuntimeError::ElementType(elem));
        }
        let mut bytes = Vec::with_capacity(values.len() * elem.size() as usize);
        for v in values {
            encode_value(v, &elem, &mut bytes)?;
        }
        Ok(HostArray { elem, len: values.len() as u64, bytes })
    }

    /// Convert an interpreter array value.
    pub fn from_value(v: &Value) -> Result<HostArray, RuntimeError> {
        match v {
            Value::Array(a) => {
                let a = a.borrow();
                HostArray::from_values(a.elem.clone(), &a.data)
            }
            other => Err(RuntimeError::ValueType { value: other.to_string(), ty: Type::array(other.ty()) }),
        }
    }

    pub fn from_bytes(elem: Type, bytes: Vec<u8>) -> Result<HostArray, RuntimeError> {
        let size = elem.size();
        if !is_element_type(&elem) {
            return Err(RuntimeError::ElementType(elem));
        }
        if size == 0 || bytes.len() as u64 % size != 0 {
            return Err(RuntimeError::ArrayFile(format!("{} bytes is not a whole number of {elem} elements", bytes.len())));
        }
        Ok(HostArray { len: bytes.len() as u64 / size, elem, bytes })
    }

    pub fn from_f32(xs: &[f32]) -> HostArray {
        HostArray { elem: Type::F32, len: xs.len() as u64, bytes: xs.iter().flat_map(|x| x.to_le_bytes()).collect() }
    }

    pub fn from_f64(xs: &[f64]) -> HostArray {
        HostArray { elem: Type::F64, len: xs.len() as u64, bytes: xs.iter().flat_map(|x| x.to_le_bytes()).collect() }
    }

    pub fn from_i32(xs: &[i32]) -> HostArray {
        HostArray { elem: Type::I32, len: xs.len() as u64, bytes: xs.iter().flat_map(|x| x.to_le_bytes()).collect() }
    }

    pub fn from_i64(xs: &[i64]) -> HostArray {
        HostArray { elem: Type::I64, len: xs.len() as u64, bytes: xs.iter().flat_map(|x| x.to_le_bytes()).collect() }
    }

    pub fn elem(&self) -> &Type {
        &self.elem
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: u64) -> Option<Value> {
        let size = self.elem.size();
        (i < self.len).then(|| decode_value(&self.elem, &self.bytes[(i * size) as usize..]))
    }

    pub fn values(&self) -> Vec<Value> {
        (0..self.len).filter_map(|i| self.get(i)).collect()
    }

    pub fn to_value(&self) -> Value {
        Value::array(self.elem.clone(), self.values())
    }

    pub fn f32s(&self) -> Option<Vec<f32>> {
        (self.elem == Type::F32).then(|| self.bytes.chunks(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn f64s(&self) -> Option<Vec<f64>> {
        (self.elem == Type::F64).then(|| self.bytes.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn i32s(&self) -> Option<Vec<i32>> {
        (self.elem == Type::I32).then(|| self.bytes.chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn i64s(&self) -> Option<Vec<i64>> {
        (self.elem == Type::I64).then(|| self.bytes.chunks(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Write the array file format: element count as a little-endian u64
    /// followed by the packed elements.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.len.to_le_bytes())?;
        w.write_all(&self.bytes)
    }

    pub fn read_from(elem: Type, mut r: impl Read) -> Result<HostArray, RuntimeError> {
        let io = |e: std::io::Error| RuntimeError::ArrayFile(e.to_string());
        let mut header = [0u8; 8];
        r.read_exact(&mut header).map_err(io)?;
        let len = u64::from_le_bytes(header);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() as u64 != len * elem.size() {
            return Err(RuntimeError::ArrayFile(format!(
                "header declares {len} elements of {elem} but {} payload bytes follow",
                bytes.len()
            )));
        }
        HostArray::from_bytes(elem, bytes)
    }
}

/// Parse an element type name as written in KSL (`Float32`, `Int64`, ...).
pub fn scalar_type(name: &str) -> Option<Type> {
    Scalar::from_name(name).map(Type::Scalar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let a = HostArray::from_f32(&[1.5, -2.0, 3.25]);
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 12);
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        assert_eq!(HostArray::read_from(Type::F32, &buf[..]).unwrap(), a);
        assert!(HostArray::read_from(Type::F64, &buf[..]).is_err());
    }

    #[test]
    fn scalars_must_match() {
        let mut out = Vec::new();
        assert!(encode_value(&Value::I64(1), &Type::F64, &mut out).is_err());
        encode_value(&Value::F64(1.0), &Type::F64, &mut out).unwrap();
        assert_eq!(decode_value(&Type::F64, &out), Value::F64(1.0));
    }
}
