//! A nested elementwise expression becomes one fused kernel.

use kernelforge::arrays::broadcast_expr;
use kernelforge::compiler::frontend::{parse, MethodTable};
use kernelforge::runtime::{HostArray, Runtime};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse("function f(x) return 3*x^2 + 5*x + 2 end\n").map_err(|d| format!("{d:?}"))?)?;
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let xs: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let x = rt.upload(ctx, &HostArray::from_f64(&xs))?;

    let run = broadcast_expr(&mut rt, ctx, &mut table, "f(2*x^2 + 6*x^3 - sqrt(x))", &[("x", &x)])?;
    println!("compiles = {}, cycles = {}", rt.counters().compiles, run.report.map_or(0, |r| r.cycles));
    println!("{:?}", rt.download(ctx, &run.output)?.f64s().unwrap());
    Ok(())
}
