//! Compare a kernel with and without address-space inference. Generic
//! accesses pay a surcharge per lane.

use kernelforge::compiler::frontend::{parse, MethodTable, Type, Value};
use kernelforge::runtime::{HostArray, Runtime};
use kernelforge::vm::LaunchConfig;

const SRC: &str = "
function scopy(dst, src, stride)
  i = (blockIdx().x - 1) * blockDim().x + threadIdx().x
  dst[i] = src[(i - 1) * stride + 1]
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;
    for infer in [true, false] {
        let mut rt = Runtime::default();
        let mut target = rt.config().target.clone();
        target.address_space_inference = infer;
        rt.set_target(target);
        let ctx = rt.current();
        let src = rt.upload(ctx, &HostArray::from_i64(&(0..256).collect::<Vec<_>>()))?;
        let dst = rt.upload(ctx, &HostArray::from_i64(&[0; 64]))?;
        let r = rt.cuda_launch(ctx, &table, "scopy", &[(&dst).into(), (&src).into(), Value::I64(4).into()], &LaunchConfig::linear(2, 32))?;
        println!("inference={infer:<5} cycles={:<6} generic={:<4} global={}", r.cycles, r.events.generic_ops(), r.events.loads.global + r.events.stores.global);
        let kernel = rt.compile(ctx, &table, "scopy", &[dst.ty(), src.ty(), Type::I64])?;
        let dump = kernel.compiled.dump();
        let loads: Vec<&str> = dump.lines().filter(|l| l.contains("load.") || l.contains("store.")).map(str::trim).collect();
        println!("  {}", loads.join("\n  "));
    }
    Ok(())
}
