//! Lower a function to LIR and run the default pass pipeline, printing the
//! module before and after.

use kernelforge::compile_host;
use kernelforge::compiler::frontend::{parse, MethodTable, Type};

const SRC: &str = "
function sq(x) return x * x end
function sumsq(a)
  s = 0.0
  for i = 1:length(a)
    s = s + sq(a[i])
  end
  return s
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;
    let c = compile_host(&table, "sumsq", &[Type::array(Type::F64)])?;
    println!("-- lowered --\n{}", c.lir.dump());
    println!("-- optimized --\n{}", c.optimized.dump());
    Ok(())
}
