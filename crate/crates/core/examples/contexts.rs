//! Each device context owns its memory and kernel cache.

use kernelforge::compiler::frontend::{parse, MethodTable};
use kernelforge::runtime::{HostArray, Runtime};
use kernelforge::vm::LaunchConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse("function dbl(a)\n  i = threadIdx().x\n  a[i] = 2 * a[i]\nend\n").map_err(|d| format!("{d:?}"))?)?;
    let mut rt = Runtime::default();
    let first = rt.current();
    let second = rt.create_context();

    for ctx in [first, second, first] {
        let a = rt.upload(ctx, &HostArray::from_i64(&[1, 2, 3, 4]))?;
        rt.cuda_launch(ctx, &table, "dbl", &[(&a).into()], &LaunchConfig::linear(1, 4))?;
        println!("{ctx:?}: {:?} compiles={}", rt.download(ctx, &a)?.i64s().unwrap(), rt.counters().compiles);
    }

    let stray = rt.upload(first, &HostArray::from_i64(&[0]))?;
    if let Err(e) = rt.download(second, &stray) {
        println!("cross-context access: {e}");
    }
    rt.destroy_context(second)?;
    Ok(())
}
