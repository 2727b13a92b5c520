//! Divergent branches inside a warp run one side at a time and reconverge.
//! A barrier that only some threads reach is reported.

use kernelforge::compiler::frontend::{parse, MethodTable};
use kernelforge::runtime::{HostArray, Runtime, RuntimeConfig};
use kernelforge::vm::LaunchConfig;

const SRC: &str = "
function collatz(out)
  i = threadIdx().x
  n = i
  k = 0
  while n != 1
    if n % 2 == 0
      n = n / 2
    else
      n = 3 * n + 1
    end
    k = k + 1
  end
  out[i] = k
end

function bad(out)
  i = threadIdx().x
  if i <= 2
    sync_threads()
  end
  out[i] = i
end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;
    let mut config = RuntimeConfig::default();
    config.vm.warp_size = 4;
    config.target.warp_size = 4;
    let mut rt = Runtime::new(config);
    let ctx = rt.current();

    let out = rt.upload(ctx, &HostArray::from_i64(&[0; 8]))?;
    let r = rt.cuda_launch(ctx, &table, "collatz", &[(&out).into()], &LaunchConfig::linear(1, 8))?;
    println!("steps = {:?}", rt.download(ctx, &out)?.i64s().unwrap());
    println!("lane instructions = {}, warp instructions = {}", r.events.lane_instructions, r.events.warp_instructions);

    match rt.cuda_launch(ctx, &table, "bad", &[(&out).into()], &LaunchConfig::linear(1, 8)) {
        Ok(_) => println!("bad: no diagnostic"),
        Err(e) => println!("bad: {e}"),
    }
    Ok(())
}
