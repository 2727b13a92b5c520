//! Names the core language understands without a method definition.

use super::types::Scalar;

/// Error codes reported by implicit checks; user `throw` codes should be >= 0.
pub mod codes {
    pub const BOUNDS: i32 = -1;
    pub const DIVIDE_BY_ZERO: i32 = -2;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Length,
    Zeros,
    Throw,
    Isa,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
    Convert(Scalar),
}

impl Builtin {
    pub fn lookup(name: &str) -> Option<Builtin> {
        if let Some(s) = Scalar::from_name(name) {
            return Some(Builtin::Convert(s));
        }
        Some(match name {
            "length" => Builtin::Length,
            "zeros" => Builtin::Zeros,
            "throw" => Builtin::Throw,
            "isa" => Builtin::Isa,
            "sqrt" => Builtin::Sqrt,
            "abs" => Builtin::Abs,
            "pow" => Builtin::Pow,
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            _ => return None,
        })
    }

    /// Host math routines reached through a runtime call when compiled.
    pub fn is_host_math(self) -> bool {
        matches!(self, Builtin::Sqrt | Builtin::Abs | Builtin::Pow)
    }
}

/// `threadIdx().x` style accessors desugar to these names.
pub fn index_intrinsic(func: &str, component: &str) -> Option<String> {
    let base = match func {
        "threadIdx" => "thread_idx",
        "blockIdx" => "block_idx",
        "blockDim" => "block_dim",
        "gridDim" => "grid_dim",
        _ => return None,
    };
    matches!(component, "x" | "y" | "z").then(|| format!("{base}_{component}"))
}
