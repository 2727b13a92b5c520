//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use kernelforge::arrays::{broadcast_expr, reduce, reduce_profiled, REDUCE_BLOCK};
use kernelforge::compile_host;
use kernelforge::compiler::frontend::{interpret_reference, parse, MethodTable, Type, Value};
use kernelforge::compiler::hir::InferError;
use kernelforge::device::{compile_kernel, device_stdlib, DeviceError, DeviceTargetConfig};
use kernelforge::run_per_thread;
use kernelforge::runtime::{ContextId, HostArray, KernelArg, Runtime, RuntimeConfig};
use kernelforge::vm::{CostTable, ExecutionReport, LaunchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(src: &str) -> MethodTable {
    let mut t = MethodTable::new();
    t.load(&parse(src).unwrap()).unwrap();
    t
}

fn redefine(t: &mut MethodTable, src: &str) {
    t.load(&parse(src).unwrap()).unwrap();
}

const VADD: &str = "function vadd(a, b, c)\n  i = (blockIdx().x - 1) * blockDim().x + threadIdx().x\n  c[i] = a[i] + b[i]\nend\n";

fn end_to_end_vadd() {
    let t = table(VADD);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a: Vec<f32> = (0..100).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let b: Vec<f32> = (0..100).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let launch = LaunchConfig::linear(1, 100);

    let start = Instant::now();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let da = rt.upload(ctx, &HostArray::from_f32(&a)).unwrap();
    let db = rt.upload(ctx, &HostArray::from_f32(&b)).unwrap();
    let dc = rt.similar(ctx, &da).unwrap();
    rt.cuda_launch(ctx, &t, "vadd", &[(&da).into(), (&db).into(), (&dc).into()], &launch).unwrap();
    let got = rt.download(ctx, &dc).unwrap();
    let elapsed = start.elapsed();

    // Oracle: the reference interpreter running every thread of the launch.
    let hc = HostArray::from_f32(&[0.0; 100]).to_value();
    let args = [HostArray::from_f32(&a).to_value(), HostArray::from_f32(&b).to_value(), hc.clone()];
    run_per_thread(&t, "vadd", &args, &launch, 32).unwrap();
    assert_eq!(got.to_value(), hc);
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
}

fn cache_sequence() {
    let src = "function g(x) return x + 1.0f0 end\nfunction k(a, b)\n  i = threadIdx().x\n  b[i] = g(a[i])\nend\n";
    let mut t = table(src);
    let mut rt = Runtime::default();
    let mut oracle = Runtime::new(RuntimeConfig { bypass_cache: true, ..RuntimeConfig::default() });
    let (mut ctx, mut octx) = (rt.current(), oracle.current());
    let mut f64s = false;
    let mut counts = Vec::new();
    let steps = ["launch", "launch", "redefine kernel", "launch", "redefine callee", "launch", "switch context", "launch", "change types", "launch"];
    for step in steps {
        match step {
            "redefine kernel" => redefine(&mut t, "function k(a, b)\n  i = threadIdx().x\n  b[i] = g(a[i]) * 2.0f0\nend\n"),
            "redefine callee" => redefine(&mut t, "function g(x) return x + 3.0f0 end\n"),
            "switch context" => {
                ctx = rt.create_context();
                rt.set_current(ctx).unwrap();
                octx = oracle.create_context();
            }
            "change types" => {
                f64s = true;
                redefine(&mut t, "function g(x::Float64) return x + 3.0 end\n");
            }
            _ => {
                let before = rt.counters().compiles;
                let run = |rt: &mut Runtime, ctx: ContextId| {
                    let host = if f64s { HostArray::from_f64(&[1.0, 2.0, 3.0, 4.0]) } else { HostArray::from_f32(&[1.0, 2.0, 3.0, 4.0]) };
                    let a = rt.upload(ctx, &host).unwrap();
                    let b = rt.similar(ctx, &a).unwrap();
                    rt.cuda_launch(ctx, &t, "k", &[(&a).into(), (&b).into()], &LaunchConfig::linear(1, 4)).unwrap();
                    rt.download(ctx, &b).unwrap()
                };
                let got = run(&mut rt, ctx);
                counts.push(rt.counters().compiles - before);
                assert_eq!(got, run(&mut oracle, octx), "after step {}", counts.len());
            }
        }
    }
    assert_eq!(counts, [1, 0, 1, 1, 1, 1]);
    assert_eq!(oracle.counters().compiles, 6);
}

fn fast_path_purity() {
    let t = table(VADD);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    for nargs_extra in [0usize, 1] {
        let src = if nargs_extra == 0 { VADD.to_string() } else { "function sc(a, b, c, s)\n  i = threadIdx().x\n  c[i] = a[i] + b[i] * s\nend\n".to_string() };
        let t2 = if nargs_extra == 0 { t.clone() } else { table(&src) };
        let name = if nargs_extra == 0 { "vadd" } else { "sc" };
        let a = rt.upload(ctx, &HostArray::from_f32(&[1.0; 64])).unwrap();
        let mut args: Vec<KernelArg> = vec![(&a).into(), (&a).into(), (&rt.similar(ctx, &a).unwrap()).into()];
        if nargs_extra == 1 {
            args.push(Value::F32(2.0).into());
        }
        rt.cuda_launch(ctx, &t2, name, &args, &LaunchConfig::linear(2, 32)).unwrap();
        let first = rt.counters();
        rt.cuda_launch(ctx, &t2, name, &args, &LaunchConfig::linear(2, 32)).unwrap();
        let second = rt.counters();
        assert_eq!(second.inferences, first.inferences, "inference on a cache hit");
        assert_eq!(second.lowerings, first.lowerings, "codegen on a cache hit");
        assert_eq!(second.compiles, first.compiles);
        assert_eq!(second.cache_hits, first.cache_hits + 1);
        assert_eq!(second.arg_conversions - first.arg_conversions, args.len() as u64);
    }
}

fn run_with_target(src: &str, name: &str, infer: bool, abi: bool, args: &dyn Fn(&mut Runtime, ContextId) -> Vec<KernelArg>, launch: LaunchConfig) -> (ExecutionReport, Vec<HostArray>) {
    let t = table(src);
    let mut rt = Runtime::default();
    let mut target = rt.config().target.clone();
    target.address_space_inference = infer;
    target.abi_rewrite = abi;
    rt.set_target(target);
    let ctx = rt.current();
    let args = args(&mut rt, ctx);
    let report = rt.cuda_launch(ctx, &t, name, &args, &launch).unwrap();
    let arrays = args
        .iter()
        .filter_map(|a| match a {
            KernelArg::Array(d) => Some(rt.download(ctx, d).unwrap()),
            _ => None,
        })
        .collect();
    (report, arrays)
}

fn address_space_effect() {
    let costs = CostTable::default();
    let strided = "function scopy(dst, src, stride)\n  i = (blockIdx().x - 1) * blockDim().x + threadIdx().x\n  dst[i] = src[(i - 1) * stride + 1]\nend\n";
    let vadd_args = |rt: &mut Runtime, ctx: ContextId| -> Vec<KernelArg> {
        let a = rt.upload(ctx, &HostArray::from_f32(&(0..96).map(|i| i as f32).collect::<Vec<_>>())).unwrap();
        let c = rt.similar(ctx, &a).unwrap();
        vec![(&a).into(), (&a).into(), (&c).into()]
    };
    let copy_args = |rt: &mut Runtime, ctx: ContextId| -> Vec<KernelArg> {
        let src = rt.upload(ctx, &HostArray::from_i64(&(0..288).collect::<Vec<_>>())).unwrap();
        let dst = rt.upload(ctx, &HostArray::from_i64(&[0; 96])).unwrap();
        vec![(&dst).into(), (&src).into(), Value::I64(3).into()]
    };
    let cases: [(&str, &str, &dyn Fn(&mut Runtime, ContextId) -> Vec<KernelArg>); 2] = [(VADD, "vadd", &vadd_args), (strided, "scopy", &copy_args)];
    for (src, name, args) in cases {
        let (with, out_with) = run_with_target(src, name, true, true, args, LaunchConfig::linear(3, 32));
        let (without, out_without) = run_with_target(src, name, false, true, args, LaunchConfig::linear(3, 32));
        assert_eq!(out_with, out_without, "{name}: results differ");
        assert_eq!(with.events.generic_ops(), 0, "{name}: generic accesses remain");
        assert!(without.events.generic_ops() > 0);
        assert!(with.cycles < without.cycles, "{name}");
        assert_eq!(without.cycles - with.cycles, costs.generic_surcharge * without.events.generic_ops(), "{name}");
    }
}

fn kernel_abi_rewrite() {
    let src = "record Pair a; b end\nfunction k(out, p)\n  i = threadIdx().x\n  out[i] = p.a * i + p.b\nend\n";
    let t = table(src);
    let pair = t.instantiate_record("Pair", &[Type::I64, Type::I64]).unwrap();
    let arg_types = [Type::array(Type::I64), Type::Record(pair.clone())];
    let k = compile_kernel(&t, "k", &arg_types, &DeviceTargetConfig::default()).unwrap();
    let dump = k.dump();
    assert!(!dump.contains("call"), "{dump}");
    // The record parameter is the second entry parameter; its fields are read
    // through Param-tagged loads.
    let entry = k.entry();
    let p = entry.params[1].value;
    let field_loads: Vec<&str> = dump.lines().filter(|l| l.contains("fieldaddr") && l.contains(&format!("{p}, "))).collect();
    assert_eq!(field_loads.len(), 2, "{dump}");
    for l in &field_loads {
        assert!(l.contains("ptr<param>"), "{l}");
        let v = l.trim().split(':').next().unwrap();
        assert!(dump.lines().any(|x| x.contains(&format!("load.param {v}"))), "{v} not read from param space\n{dump}");
    }
    assert!(!dump.contains("load.generic") && !dump.contains("load.local"));

    let pval = Value::Record(pair, vec![Value::I64(3), Value::I64(4)].into());
    let args = |rt: &mut Runtime, ctx: ContextId| -> Vec<KernelArg> {
        let out = rt.upload(ctx, &HostArray::from_i64(&[0; 64])).unwrap();
        vec![(&out).into(), pval.clone().into()]
    };
    let (rewritten, a) = run_with_target(src, "k", true, true, &args, LaunchConfig::linear(1, 64));
    let (plain, b) = run_with_target(src, "k", true, false, &args, LaunchConfig::linear(1, 64));
    assert_eq!(a, b);
    assert_eq!(a[0].i64s().unwrap(), (1..=64).map(|i| 3 * i + 4).collect::<Vec<_>>());
    assert!(rewritten.cycles <= plain.cycles, "{} > {}", rewritten.cycles, plain.cycles);
}

fn broadcast_fusion() {
    let poly = "function f(x) return 3*x^2 + 5*x + 2 end\n";
    let expr = "f(2*x^2 + 6*x^3 - sqrt(x))";
    let mut t = table(poly);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let xs: Vec<f64> = (0..42).map(|_| rng.gen::<f64>()).collect();
    let x = rt.upload(ctx, &HostArray::from_f64(&xs)).unwrap();
    let run = broadcast_expr(&mut rt, ctx, &mut t, expr, &[("x", &x)]).unwrap();
    assert_eq!(rt.counters().compiles, 1);
    let key = rt.context(ctx).unwrap().cache().keys().next().unwrap().clone();
    let kernel_name = t.all_methods().find(|m| m.id == key.method).unwrap().name.clone();
    let cached = rt.compile(ctx, &t, &kernel_name, &key.arg_types).unwrap();
    assert_eq!(rt.counters().compiles, 1);
    assert!(!cached.compiled.dump().contains("call"), "{}", cached.compiled.dump());
    let got = rt.download(ctx, &run.output).unwrap().f64s().unwrap();
    let oracle = table(&format!("{poly}function g(x)\n  return {expr}\nend\n"));
    for (x, y) in xs.iter().zip(&got) {
        assert_eq!(interpret_reference(&oracle, "g", &[Value::F64(*x)]).unwrap(), Value::F64(*y), "x = {x}");
    }
}

fn logical_shuffles(n: u64, ws: u32) -> u64 {
    let per_block = (u64::from(REDUCE_BLOCK / ws) + 1) * u64::from(ws.trailing_zeros());
    let mut total = 0;
    let mut m = n;
    while m > 0 {
        let blocks = m.div_ceil(u64::from(REDUCE_BLOCK));
        total += blocks * per_block;
        if blocks == 1 {
            break;
        }
        m = blocks;
    }
    total
}

fn shuffle_reduction() {
    let src = "record Point x; y end\nfunction +(a::Point, b::Point) return Point(a.x + b.x, a.y + b.y) end\n";
    let mut t = table(src);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let pt = t.instantiate_record("Point", &[Type::I64, Type::I64]).unwrap();
    let point = |x: i64, y: i64| Value::Record(pt.clone(), vec![Value::I64(x), Value::I64(y)].into());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in [0u64, 1, 31, 32, 33, 255, 256, 1000] {
        let ps: Vec<(i64, i64)> = (0..n).map(|_| (rng.gen_range(-1000..1000), rng.gen_range(-1000..1000))).collect();
        let vals: Vec<Value> = ps.iter().map(|(a, b)| point(*a, *b)).collect();
        let x = rt.upload(ctx, &HostArray::from_values(Type::Record(pt.clone()), &vals).unwrap()).unwrap();
        let run = reduce_profiled(&mut rt, ctx, &mut t, "+", point(0, 0), &x).unwrap();
        let (sx, sy) = ps.iter().fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
        assert_eq!(run.value, point(sx, sy), "n = {n}");
        let events: u64 = run.reports.iter().map(|r| r.events.shuffles).sum();
        assert_eq!(events, 4 * logical_shuffles(n, 32), "n = {n}");
    }
    let xs: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = rt.upload(ctx, &HostArray::from_f64(&xs)).unwrap();
    let Value::F64(got) = reduce(&mut rt, ctx, &mut t, "+", Value::F64(0.0), &x).unwrap() else { panic!("not a Float64") };
    let want = xs.iter().fold(0.0, |a, b| a + b);
    assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
}

fn host_suite() -> (MethodTable, Vec<(&'static str, Vec<Type>)>) {
    let src = "function poly(x) return 3*x^2 + 5*x + 2 end\n\
        function hvadd(a, b, c)\n  for i = 1:length(a)\n    c[i] = a[i] + b[i]\n  end\nend\n\
        function absum(a)\n  s = 0.0\n  for i = 1:length(a)\n    s = s + abs(a[i])\n  end\n  return s\nend\n\
        record Point x; y end\n\
        function norm1(p::Point) return abs(p.x) + abs(p.y) end\n\
        function collatz(n)\n  k = 0\n  while n != 1\n    if n % 2 == 0\n      n = n / 2\n    else\n      n = 3 * n + 1\n    end\n    k = k + 1\n  end\n  return k\nend\n\
        function mx(a, b)\n  if a > b\n    return a\n  end\n  return b\nend\n";
    let t = table(&format!("{src}{VADD}"));
    let point = Type::Record(t.instantiate_record("Point", &[Type::F64, Type::F64]).unwrap());
    let suite = vec![
        ("poly", vec![Type::F64]),
        ("poly", vec![Type::I64]),
        ("poly", vec![Type::F32]),
        ("hvadd", vec![Type::array(Type::F32), Type::array(Type::F32), Type::array(Type::F32)]),
        ("absum", vec![Type::array(Type::F64)]),
        ("norm1", vec![point]),
        ("collatz", vec![Type::I64]),
        ("mx", vec![Type::I32, Type::I32]),
        ("mx", vec![Type::F64, Type::F64]),
    ];
    (t, suite)
}

/// Compiler internals the device target must not use.
const INTERNAL_PATHS: &[&str] = &[
    "hir::infer::",
    "hir::lower::",
    "lir::lower::",
    "lir::passes::inline",
    "lir::passes::promote",
    "lir::passes::fold",
    "lir::passes::dce",
    "lir::builder",
    "frontend::parser::",
    "frontend::interp::",
    "frontend::lexer::",
];

fn non_invasiveness() {
    let (t, suite) = host_suite();
    let dumps = |t: &MethodTable| -> Vec<String> {
        suite.iter().map(|(n, a)| {
            let c = compile_host(t, n, a).unwrap();
            format!("{}{}{}", c.hir.dump(), c.lir.dump(), c.optimized.dump())
        }).collect()
    };
    let before = dumps(&t);
    let generation = t.world_age();
    let _ = device_stdlib();
    let arr = Type::array(Type::F32);
    compile_kernel(&t, "vadd", &[arr.clone(), arr.clone(), arr], &DeviceTargetConfig::default()).unwrap();
    assert_eq!(t.world_age(), generation);
    assert_eq!(dumps(&t), before);
    assert_eq!(dumps(&host_suite().0), before);

    let device = Path::new(env!("CARGO_MANIFEST_DIR")).join("../device");
    let manifest = std::fs::read_to_string(device.join("Cargo.toml")).unwrap();
    let deps = manifest.split("[dependencies]").nth(1).unwrap().split("\n[").next().unwrap();
    let kforge: Vec<&str> = deps.lines().filter(|l| l.starts_with("kforge")).collect();
    assert_eq!(kforge.len(), 1, "device depends on {kforge:?}");
    assert!(kforge[0].starts_with("kforge-compiler"));
    let mut checked = 0;
    for entry in std::fs::read_dir(device.join("src")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| l.contains("kforge_compiler")) {
            checked += 1;
            for bad in INTERNAL_PATHS {
                assert!(!line.contains(bad), "{}:{}: uses `{bad}`", path.display(), n + 1);
            }
        }
    }
    assert!(checked > 0);
}

const SHAPES_SINGLE: &str = "record Rect x; y end\nrecord Line x; y end\n\
    function intersect(a, b)\n\
      if b.x > a.x\n return Line(a.x, b.y)\n end\n\
      return Rect(a.x, a.y)\n\
    end\n\
    function k(out, a, b)\n  r = intersect(a, b)\n  out[1] = r.x\nend\n";

const SHAPES_MULTI: &str = "record Rect x; y end\nrecord Line x; y end\n\
    function intersect(a::Rect, b::Rect) return Rect(a.x, b.y) end\n\
    function intersect(a::Rect, b::Line) return Line(a.x, b.y) end\n\
    function k(out, a, b)\n  r = intersect(a, b)\n  out[1] = r.x\nend\n";

fn type_stability_gate() {
    let t = table(SHAPES_SINGLE);
    let rect = Type::Record(t.instantiate_record("Rect", &[Type::F64, Type::F64]).unwrap());
    let args = [Type::array(Type::F64), rect.clone(), rect];
    match compile_kernel(&t, "k", &args, &DeviceTargetConfig::default()) {
        Err(DeviceError::Inference(InferError::Unstable { function, .. })) => assert!(function.starts_with("intersect")),
        other => panic!("expected an instability diagnostic, got {other:?}"),
    }

    let t = table(SHAPES_MULTI);
    let rect = t.instantiate_record("Rect", &[Type::F64, Type::F64]).unwrap();
    let r = |x: f64, y: f64| Value::Record(rect.clone(), vec![Value::F64(x), Value::F64(y)].into());
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let out = rt.upload(ctx, &HostArray::from_f64(&[0.0])).unwrap();
    rt.cuda_launch(ctx, &t, "k", &[(&out).into(), r(2.5, 1.0).into(), r(7.0, 3.0).into()], &LaunchConfig::linear(1, 1)).unwrap();
    assert_eq!(rt.download(ctx, &out).unwrap().f64s().unwrap(), vec![2.5]);
}

fn simt_semantics() {
    for ws in [4, 32] {
        for seed in 0..100 {
            if let Err(e) = common::check_random_kernel(seed, ws) {
                panic!("seed {seed}: {e}");
            }
        }
    }
    for (t, block, ws) in [(1, 4, 4), (3, 8, 4), (4, 8, 4), (8, 8, 4), (16, 32, 32), (31, 32, 32), (32, 64, 32), (64, 64, 32), (0, 32, 32)] {
        common::check_barrier_diagnosis(t, block, ws).unwrap();
    }
}

fn main() {
    let criteria: [(&str, fn()); 10] = [
        ("end-to-end vadd", end_to_end_vadd),
        ("kernel cache sequence", cache_sequence),
        ("cache-hit fast path", fast_path_purity),
        ("address-space inference", address_space_effect),
        ("kernel ABI rewrite", kernel_abi_rewrite),
        ("broadcast fusion", broadcast_fusion),
        ("shuffle reduction", shuffle_reduction),
        ("device target non-invasiveness", non_invasiveness),
        ("type-stability gate", type_stability_gate),
        ("SIMT semantics", simt_semantics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check));
        let status = if result.is_ok() { "PASS" } else { "FAIL" };
        if result.is_err() {
            failed += 1;
        }
        println!("criterion {:>2} {name}: {status}", i + 1);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
