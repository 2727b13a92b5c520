//! A function returning different record types on different paths cannot be
//! compiled for the device. Splitting it into methods restores stability.

use kernelforge::compiler::frontend::{parse, MethodTable, Type};
use kernelforge::device::{compile_kernel, DeviceTargetConfig};

const UNSTABLE: &str = "
record Rect x; y end
record Line x; y end
function intersect(a, b)
  if b.x > a.x
    return Line(a.x, b.y)
  end
  return Rect(a.x, a.y)
end
function k(out, a, b)
  out[1] = intersect(a, b).x
end
";

const STABLE: &str = "
record Rect x; y end
record Line x; y end
function intersect(a::Rect, b::Rect) return Rect(a.x, b.y) end
function intersect(a::Rect, b::Line) return Line(a.x, b.y) end
function k(out, a, b)
  out[1] = intersect(a, b).x
end
";

fn attempt(src: &str) -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(src).map_err(|d| format!("{d:?}"))?)?;
    let rect = Type::Record(table.instantiate_record("Rect", &[Type::F64, Type::F64])?);
    match compile_kernel(&table, "k", &[Type::array(Type::F64), rect.clone(), rect], &DeviceTargetConfig::default()) {
        Ok(k) => println!("compiled: {} instructions", k.dump().lines().count()),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("single method:");
    attempt(UNSTABLE)?;
    println!("multimethod:");
    attempt(STABLE)
}
