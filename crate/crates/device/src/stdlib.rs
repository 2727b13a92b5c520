//! Generic math methods for device code, each method mapping one argument
//! type to a width-specific intrinsic.

use std::sync::{Arc, OnceLock};

use kforge_compiler::frontend::{parse, Method, MethodTable, Type};

const SOURCE: &str = "\
function abs(x::Int32)
  return abs_i32(x)
end
function abs(x::Int64)
  return abs_i64(x)
end
function abs(x::Float32)
  return fabs_f32(x)
end
function abs(x::Float64)
  return fabs_f64(x)
end
function sqrt(x::Float32)
  return sqrt_f32(x)
end
function sqrt(x::Float64)
  return sqrt_f64(x)
end
function sqrt(x::Int32)
  return sqrt_f64(Float64(x))
end
function sqrt(x::Int64)
  return sqrt_f64(Float64(x))
end
function pow(x::Float32, y::Float32)
  return pow_f32(x, y)
end
function pow(x::Float64, y::Float64)
  return pow_f64(x, y)
end
";

/// The overlay table. It is never merged into user tables.
pub fn device_stdlib() -> &'static MethodTable {
    static TABLE: OnceLock<MethodTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = MethodTable::new();
        t.load(&parse(SOURCE).expect("device stdlib parses")).expect("device stdlib loads");
        t
    })
}

pub fn source() -> &'static str {
    SOURCE
}

pub(crate) fn resolve(name: &str, args: &[Type]) -> Option<Arc<Method>> {
    let t = device_stdlib();
    if !t.has_methods(name) {
        return None;
    }
    t.dispatch(name, args).ok()
}
