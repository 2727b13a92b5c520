//! Upload two arrays, launch a vector add and read the result back.

use kernelforge::compiler::frontend::{parse, MethodTable};
use kernelforge::runtime::{HostArray, Runtime};
use kernelforge::vm::LaunchConfig;

const SRC: &str = "
function vadd(a, b, c)
  i = (blockIdx().x - 1) * blockDim().x + threadIdx().x
  if i <= length(c)
    c[i] = a[i] + b[i]
  end
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;

    let n = 100;
    let a: Vec<f32> = (0..n).map(|i| i as f32).collect();
    let b: Vec<f32> = (0..n).map(|i| (2 * i) as f32).collect();

    let mut rt = Runtime::default();
    let ctx = rt.current();
    let da = rt.upload(ctx, &HostArray::from_f32(&a))?;
    let db = rt.upload(ctx, &HostArray::from_f32(&b))?;
    let dc = rt.similar(ctx, &da)?;
    let report = rt.cuda_launch(ctx, &table, "vadd", &[(&da).into(), (&db).into(), (&dc).into()], &LaunchConfig::linear(4, 32))?;
    let c = rt.download(ctx, &dc)?.f32s().unwrap();

    println!("c[1..5] = {:?}", &c[..5]);
    println!("cycles = {}", report.cycles);
    assert!(c.iter().enumerate().all(|(i, x)| *x == 3.0 * i as f32));
    Ok(())
}
