//! Kernels are cached per context and argument types. Redefining a callee
//! invalidates every kernel that inlined it.

use kernelforge::compiler::frontend::{parse, MethodTable};
use kernelforge::runtime::{HostArray, Runtime};
use kernelforge::vm::LaunchConfig;

fn load(table: &mut MethodTable, src: &str) {
    table.load(&parse(src).expect("parses")).expect("loads");
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    load(&mut table, "function g(x) return x + 1.0f0 end\nfunction k(a)\n  i = threadIdx().x\n  a[i] = g(a[i])\nend\n");
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let a = rt.upload(ctx, &HostArray::from_f32(&[0.0; 4]))?;

    let step = |rt: &mut Runtime, table: &MethodTable, what: &str| -> Result<(), Box<dyn std::error::Error>> {
        let before = rt.counters();
        rt.cuda_launch(ctx, table, "k", &[(&a).into()], &LaunchConfig::linear(1, 4))?;
        let after = rt.counters();
        println!(
            "{what:<18} compiles +{} hits +{} -> {:?}",
            after.compiles - before.compiles,
            after.cache_hits - before.cache_hits,
            rt.download(ctx, &a)?.f32s().unwrap()
        );
        Ok(())
    };
    step(&mut rt, &table, "first launch")?;
    step(&mut rt, &table, "second launch")?;
    load(&mut table, "function g(x) return x + 10.0f0 end\n");
    step(&mut rt, &table, "after redefining g")?;
    println!("cached kernels: {}", rt.context(ctx)?.cache().len());
    Ok(())
}
