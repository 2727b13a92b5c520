//! Multiple dispatch picks the most specific method; inference then gives
//! every expression a concrete type.

use kernelforge::compile_host;
use kernelforge::compiler::frontend::{interpret_reference, parse, MethodTable, Type, Value};

const SRC: &str = "
function describe(x) return 0 end
function describe(x::Int64) return 1 end
function describe(x::Float64) return 2 end
function describe(x::Int64, y::Int64) return 3 end

function scale(x, k)
  return x * k + describe(x)
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;

    for args in [vec![Type::I64], vec![Type::F64], vec![Type::F32], vec![Type::I64, Type::I64]] {
        let m = table.dispatch("describe", &args)?;
        let shown: Vec<String> = args.iter().map(|t| t.to_string()).collect();
        println!("describe({}) -> method #{}", shown.join(", "), m.id);
    }

    let v = interpret_reference(&table, "scale", &[Value::F64(1.5), Value::F64(2.0)])?;
    println!("scale(1.5, 2.0) = {v}");

    let compiled = compile_host(&table, "scale", &[Type::I64, Type::I64])?;
    println!("{}", compiled.hir.dump());
    Ok(())
}
