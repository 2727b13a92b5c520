//! Reduce an array of records with a user-defined operator using warp
//! shuffles and shared memory.

use kernelforge::arrays::reduce_profiled;
use kernelforge::compiler::frontend::{parse, MethodTable, Type, Value};
use kernelforge::runtime::{HostArray, Runtime};

const SRC: &str = "
record Point x; y end
function +(a::Point, b::Point) return Point(a.x + b.x, a.y + b.y) end
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut table = MethodTable::new();
    table.load(&parse(SRC).map_err(|d| format!("{d:?}"))?)?;
    let pt = table.instantiate_record("Point", &[Type::I64, Type::I64])?;
    let point = |x: i64, y: i64| Value::Record(pt.clone(), vec![Value::I64(x), Value::I64(y)].into());

    let values: Vec<Value> = (1..=1000).map(|i| point(i, -i)).collect();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let input = rt.upload(ctx, &HostArray::from_values(Type::Record(pt.clone()), &values)?)?;
    let run = reduce_profiled(&mut rt, ctx, &mut table, "+", point(0, 0), &input)?;
    println!("sum = {}", run.value);
    for (i, r) in run.reports.iter().enumerate() {
        println!("pass {}: cycles={} shuffles={} barriers={}", i + 1, r.cycles, r.events.shuffles, r.events.barriers);
    }
    Ok(())
}
