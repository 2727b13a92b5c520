//! Concrete KSL types and the type patterns used as method constraints.

use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scalar {
    Bool,
    Int32,
    Int64,
    Float32,
    Float64,
}

impl Scalar {
    pub const ALL: [Scalar; 5] = [
        Scalar::Bool,
        Scalar::Int32,
        Scalar::Int64,
        Scalar::Float32,
        Scalar::Float64,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scalar::Bool => "Bool",
            Scalar::Int32 => "Int32",
            Scalar::Int64 => "Int64",
            Scalar::Float32 => "Float32",
            Scalar::Float64 => "Float64",
        }
    }

    pub fn from_name(name: &str) -> Option<Scalar> {
        Scalar::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn size(self) -> u64 {
        match self {
            Scalar::Bool => 1,
            Scalar::Int32 | Scalar::Float32 => 4,
            Scalar::Int64 | Scalar::Float64 => 8,
        }
    }

    pub fn is_int(self) -> bool {
        matches!(self, Scalar::Int32 | Scalar::Int64)
    }

    pub fn is_float(self) -> bool {
        matches!(self, Scalar::Float32 | Scalar::Float64)
    }

    pub fn is_numeric(self) -> bool {
        self != Scalar::Bool
    }

    /// Arithmetic promotion: any float wins over integers, wider wins otherwise.
    pub fn promote(a: Scalar, b: Scalar) -> Option<Scalar> {
        if !a.is_numeric() || !b.is_numeric() {
            return None;
        }
        Some(match (a.is_float(), b.is_float()) {
            (true, true) | (false, false) => {
                if a.size() >= b.size() {
                    a
                } else {
                    b
                }
            }
            (true, false) => a,
            (false, true) => b,
        })
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A monomorphized record type. Fields are scalars; layout has no padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordType {
    pub name: Arc<str>,
    pub fields: Vec<(Arc<str>, Scalar)>,
    pub mutable: bool,
}

impl RecordType {
    pub fn size(&self) -> u64 {
        self.fields.iter().map(|(_, s)| s.size()).sum()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|(n, _)| &**n == name)
    }

    pub fn field_offset(&self, index: usize) -> u64 {
        self.fields[..index].iter().map(|(_, s)| s.size()).sum()
    }
}

/// Concrete types of KSL values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Type {
    Scalar(Scalar),
    Nothing,
    /// Mutable array of elements stored in the default (global/host) memory.
    Array(Arc<Type>),
    /// Block-shared, statically allocated array (device only).
    SharedArray(Arc<Type>),
    Record(Arc<RecordType>),
    /// A function symbol used as a value.
    Func(Arc<str>),
}

impl Type {
    pub const BOOL: Type = Type::Scalar(Scalar::Bool);
    pub const I32: Type = Type::Scalar(Scalar::Int32);
    pub const I64: Type = Type::Scalar(Scalar::Int64);
    pub const F32: Type = Type::Scalar(Scalar::Float32);
    pub const F64: Type = Type::Scalar(Scalar::Float64);

    pub fn array(elem: Type) -> Type {
        Type::Array(Arc::new(elem))
    }

    pub fn as_scalar(&self) -> Option<Scalar> {
        match self {
            Type::Scalar(s) => Some(*s),
            _ => None,
        }
    }

    pub fn element(&self) -> Option<&Type> {
        match self {
            Type::Array(e) | Type::SharedArray(e) => Some(e),
            _ => None,
        }
    }

    /// Byte size of the value representation. Arrays are (base, length) descriptors.
    pub fn size(&self) -> u64 {
        match self {
            Type::Scalar(s) => s.size(),
            Type::Nothing | Type::Func(_) => 0,
            Type::Array(_) | Type::SharedArray(_) => 16,
            Type::Record(r) if r.mutable => 8,
            Type::Record(r) => r.size(),
        }
    }

    /// Immutable aggregates: records and array descriptors.
    pub fn is_immutable_aggregate(&self) -> bool {
        match self {
            Type::Array(_) | Type::SharedArray(_) => true,
            Type::Record(r) => !r.mutable,
            _ => false,
        }
    }

    /// Whether a value of this type can live in device memory (array elements).
    pub fn is_storable(&self) -> bool {
        match self {
            Type::Scalar(_) => true,
            Type::Record(r) => !r.mutable,
            _ => false,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(s) => write!(f, "{s}"),
            Type::Nothing => f.write_str("Nothing"),
            Type::Array(e) => write!(f, "Array{{{e}}}"),
            Type::SharedArray(e) => write!(f, "SharedArray{{{e}}}"),
            Type::Record(r) => {
                write!(f, "{}{{", r.name)?;
                for (i, (_, s)) in r.fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{s}")?;
                }
                f.write_str("}")
            }
            Type::Func(name) => write!(f, "typeof({name})"),
        }
    }
}

/// A constraint on a method parameter or a type test operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypePattern {
    Any,
    Exact(Type),
    /// Any monomorphization of the named record.
    RecordName(Arc<str>),
    ArrayOf(Box<TypePattern>),
}

impl TypePattern {
    pub fn matches(&self, ty: &Type) -> bool {
        match self {
            TypePattern::Any => true,
            TypePattern::Exact(t) => t == ty,
            TypePattern::RecordName(n) => matches!(ty, Type::Record(r) if r.name == *n),
            TypePattern::ArrayOf(p) => matches!(ty, Type::Array(e) if p.matches(e)),
        }
    }

    pub fn is_constrained(&self) -> bool {
        !matches!(self, TypePattern::Any)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, TypePattern::Exact(_))
    }

    /// The concrete type when the pattern admits exactly one type.
    pub fn concrete(&self) -> Option<Type> {
        match self {
            TypePattern::Exact(t) => Some(t.clone()),
            TypePattern::ArrayOf(p) => p.concrete().map(Type::array),
            _ => None,
        }
    }
}

impl fmt::Display for TypePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypePattern::Any => f.write_str("Any"),
            TypePattern::Exact(t) => write!(f, "{t}"),
            TypePattern::RecordName(n) => write!(f, "{n}"),
            TypePattern::ArrayOf(p) => write!(f, "Array{{{p}}}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn promotion_prefers_floats_then_width() {
        use Scalar::*;
        assert_eq!(Scalar::promote(Int64, Float32), Some(Float32));
        assert_eq!(Scalar::promote(Int32, Int64), Some(Int64));
        assert_eq!(Scalar::promote(Float32, Float64), Some(Float64));
        assert_eq!(Scalar::promote(Bool, Int64), None);
    }

    #[test]
    fn record_layout_is_packed() {
        let r = RecordType {
            name: "P".into(),
            fields: vec![("a".into(), Scalar::Bool), ("b".into(), Scalar::Int64)],
            mutable: false,
        };
        assert_eq!(r.size(), 9);
        assert_eq!(r.field_offset(1), 1);
    }
}
