//! A record argument is passed by value in parameter space after the ABI
//! rewrite; its fields are read with param loads instead of a local copy.

use kernelforge::compiler::frontend::{parse, MethodTable, Type};
use kernelforge::device::{compile_kernel, DeviceTargetConfig};

const SRC: &str = "
record Pair a; b end
function k(out, p)
  i = threadIdx().x
  out[i] = p.a * i + p.b
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;
    let pair = Type::Record(table.instantiate_record("Pair", &[Type::I64, Type::I64])?);
    let args = [Type::array(Type::I64), pair];
    for abi_rewrite in [true, false] {
        let config = DeviceTargetConfig { abi_rewrite, ..DeviceTargetConfig::default() };
        let k = compile_kernel(&table, "k", &args, &config)?;
        println!("-- abi_rewrite = {abi_rewrite} --\n{}", k.dump());
    }
    Ok(())
}
