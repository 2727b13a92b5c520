use kforge_arrays::*;
use kforge_compiler::frontend::{interpret_reference, parse, MethodTable, Type, Value};
use kforge_runtime::{HostArray, Runtime, RuntimeConfig, RuntimeError};
use kforge_vm::VmConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(src: &str) -> MethodTable {
    let mut t = MethodTable::new();
    t.load(&parse(src).unwrap()).unwrap();
    t
}

fn runtime(ws: u32) -> Runtime {
    let mut config = RuntimeConfig { vm: VmConfig { warp_size: ws, ..VmConfig::default() }, ..RuntimeConfig::default() };
    config.target = config.target.with_warp_size(ws);
    Runtime::new(config)
}

const POLY: &str = "function f(x) return 3*x^2 + 5*x + 2 end\n";

#[test]
fn fused_expression_matches_the_interpreter() {
    let mut t = table(POLY);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let xs: Vec<f64> = (0..42).map(|_| rng.gen::<f64>()).collect();
    let x = rt.upload(ctx, &HostArray::from_f64(&xs)).unwrap();
    let expr = "f(2*x^2 + 6*x^3 - sqrt(x))";
    let run = broadcast_expr(&mut rt, ctx, &mut t, expr, &[("x", &x)]).unwrap();
    assert_eq!(rt.counters().compiles, 1);
    let got = rt.download(ctx, &run.output).unwrap().f64s().unwrap();
    // Oracle: the sequential interpreter evaluating the same expression per element.
    let oracle = table(&format!("{POLY}function g(x)\n  return {expr}\nend\n"));
    for (x, y) in xs.iter().zip(&got) {
        assert_eq!(interpret_reference(&oracle, "g", &[Value::F64(*x)]).unwrap(), Value::F64(*y));
    }
    let cached = rt.context(ctx).unwrap().cache().keys().count();
    assert_eq!(cached, 1);
    broadcast_expr(&mut rt, ctx, &mut t, expr, &[("x", &x)]).unwrap();
    assert_eq!(rt.counters().compiles, 1);
}

#[test]
fn broadcast_kernel_has_no_calls() {
    let mut t = table(&format!("{POLY}function g(x, y) return f(x) - y end\n"));
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let x = rt.upload(ctx, &HostArray::from_f32(&[1.0, 2.0, 3.0])).unwrap();
    let y = rt.upload(ctx, &HostArray::from_f32(&[1.0, 1.0, 1.0])).unwrap();
    let plan = plan_broadcast(&mut rt, ctx, &mut t, "g", &[x.clone(), y.clone()]).unwrap();
    assert_eq!(plan.launch.block, [3, 1, 1]);
    let run = plan.run(&mut rt, ctx, &t).unwrap();
    assert_eq!(rt.download(ctx, &run.output).unwrap().f32s().unwrap(), vec![9.0, 23.0, 43.0]);
    let k = rt.compile(ctx, &t, &plan.kernel, &[plan.output.ty(), x.ty(), y.ty()]).unwrap();
    assert!(!k.compiled.dump().contains("call"), "{}", k.compiled.dump());
    assert_eq!(rt.counters().compiles, 1);
}

#[test]
fn identity_broadcast_copies() {
    let mut t = table("function id(x) return x end\n");
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let xs: Vec<i64> = (0..600).map(|i| i * 7 - 100).collect();
    let x = rt.upload(ctx, &HostArray::from_i64(&xs)).unwrap();
    let run = broadcast_apply(&mut rt, ctx, &mut t, "id", &[x]).unwrap();
    assert_eq!(rt.download(ctx, &run.output).unwrap().i64s().unwrap(), xs);
    assert_eq!(run.report.unwrap().launch.grid, [3, 1, 1]);
    let empty = rt.upload(ctx, &HostArray::from_i64(&[])).unwrap();
    assert!(broadcast_apply(&mut rt, ctx, &mut t, "id", &[empty]).unwrap().output.is_empty());
}

#[test]
fn broadcast_checks_its_inputs() {
    let mut t = table("function add(x, y) return x + y end\nrecord Rect x; y end\nrecord Line x; y end\n\
        function shape(x)\n  if x > 0.0\n return Line(x, x)\n end\n  return Rect(x, x)\nend\n");
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let a = rt.upload(ctx, &HostArray::from_f64(&[1.0, 2.0])).unwrap();
    let b = rt.upload(ctx, &HostArray::from_f64(&[1.0])).unwrap();
    assert_eq!(
        broadcast_apply(&mut rt, ctx, &mut t, "add", &[a.clone(), b]).unwrap_err(),
        ArrayError::LengthMismatch { index: 1, expected: 2, got: 1 }
    );
    assert!(matches!(broadcast_apply(&mut rt, ctx, &mut t, "shape", &[a]), Err(ArrayError::Inference(_))));
    assert_eq!(rt.counters().compiles, 0);
}

fn fold_i64(xs: &[i64]) -> i64 {
    xs.iter().fold(0i64, |a, b| a.wrapping_add(*b))
}

#[test]
fn integer_sum_of_a_series() {
    let mut t = MethodTable::new();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let xs: Vec<i64> = (1..=100).collect();
    let x = rt.upload(ctx, &HostArray::from_i64(&xs)).unwrap();
    assert_eq!(reduce(&mut rt, ctx, &mut t, "+", Value::I64(0), &x).unwrap(), Value::I64(5050));
}

#[test]
fn integer_reduce_matches_the_sequential_fold() {
    let mut t = MethodTable::new();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in [0usize, 1, 31, 32, 33, 255, 256, 1000, 4096] {
            let xs: Vec<i64> = (0..n).map(|_| rng.gen_range(-1_000_000..1_000_000)).collect();
            let x = rt.upload(ctx, &HostArray::from_i64(&xs)).unwrap();
            let got = reduce(&mut rt, ctx, &mut t, "+", Value::I64(0), &x).unwrap();
            assert_eq!(got, Value::I64(fold_i64(&xs)), "n = {n}, seed = {seed}");
            rt.free(ctx, &x).unwrap();
        }
    }
    // One kernel serves every length.
    assert_eq!(rt.counters().compiles, 1);
}

const POINT: &str = "record Point x; y end\nfunction +(a::Point, b::Point) return Point(a.x + b.x, a.y + b.y) end\n";

fn log2(ws: u32) -> u64 {
    ws.trailing_zeros() as u64
}

/// Logical shuffles of one launch: every warp reduces once, then the first
/// warp reduces the staged warp results.
fn logical_shuffles(blocks: u64, ws: u32) -> u64 {
    let nwarps = (REDUCE_BLOCK / ws) as u64;
    blocks * (nwarps + 1) * log2(ws)
}

#[test]
fn point_reduce_moves_four_words_per_shuffle() {
    let mut t = table(POINT);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let pt = t.instantiate_record("Point", &[Type::I64, Type::I64]).unwrap();
    let point = |x: i64, y: i64| Value::Record(pt.clone(), vec![Value::I64(x), Value::I64(y)].into());
    let xs = HostArray::from_values(Type::Record(pt.clone()), &vec![point(1, 2); 32]).unwrap();
    let x = rt.upload(ctx, &xs).unwrap();
    let run = reduce_profiled(&mut rt, ctx, &mut t, "+", point(0, 0), &x).unwrap();
    assert_eq!(run.value, point(32, 64));
    assert_eq!(run.reports.len(), 1);
    assert_eq!(run.reports[0].events.shuffles, 4 * logical_shuffles(1, 32));
}

#[test]
fn point_reduce_matches_the_fold_for_all_lengths() {
    let mut t = table(POINT);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let pt = t.instantiate_record("Point", &[Type::I64, Type::I64]).unwrap();
    let point = |x: i64, y: i64| Value::Record(pt.clone(), vec![Value::I64(x), Value::I64(y)].into());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [0usize, 1, 31, 32, 33, 255, 256, 1000] {
        let ps: Vec<(i64, i64)> = (0..n).map(|_| (rng.gen_range(-1000..1000), rng.gen_range(-1000..1000))).collect();
        let vals: Vec<Value> = ps.iter().map(|(a, b)| point(*a, *b)).collect();
        let x = rt.upload(ctx, &HostArray::from_values(Type::Record(pt.clone()), &vals).unwrap()).unwrap();
        let run = reduce_profiled(&mut rt, ctx, &mut t, "+", point(0, 0), &x).unwrap();
        let want = ps.iter().fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
        assert_eq!(run.value, point(want.0, want.1), "n = {n}");
        let blocks = (n as u64).div_ceil(256);
        let mut expected = 0;
        let mut m = blocks;
        if n > 0 {
            expected += logical_shuffles(blocks, 32);
            while m > 1 {
                let b = m.div_ceil(256);
                expected += logical_shuffles(b, 32);
                m = b;
            }
        }
        let total: u64 = run.reports.iter().map(|r| r.events.shuffles).sum();
        assert_eq!(total, 4 * expected, "n = {n}");
    }
}

#[test]
fn float_reduce_is_close_to_the_fold() {
    let mut t = MethodTable::new();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let xs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
    let x = rt.upload(ctx, &HostArray::from_f64(&xs)).unwrap();
    let Value::F64(got) = reduce(&mut rt, ctx, &mut t, "+", Value::F64(0.0), &x).unwrap() else { panic!() };
    let want: f64 = xs.iter().sum();
    assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn shuffle_events_follow_element_size() {
    let src = "record P3 a; b end\nfunction +(x::P3, y::P3) return P3(x.a + y.a, x.b + y.b) end\n".to_string() + POINT;
    let mut t = table(&src);
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let p3 = t.instantiate_record("P3", &[Type::I32, Type::I64]).unwrap();
    let pt = t.instantiate_record("Point", &[Type::I64, Type::I64]).unwrap();
    let cases: Vec<(Value, u64)> = vec![
        (Value::I32(1), 4),
        (Value::I64(1), 8),
        (Value::Record(p3.clone(), vec![Value::I32(1), Value::I64(2)].into()), 12),
        (Value::Record(pt.clone(), vec![Value::I64(1), Value::I64(2)].into()), 16),
    ];
    for (one, size) in cases {
        assert_eq!(one.ty().size(), size);
        let zero = match &one {
            Value::I32(_) => Value::I32(0),
            Value::I64(_) => Value::I64(0),
            Value::Record(r, _) if r.name.as_ref() == "P3" => Value::Record(r.clone(), vec![Value::I32(0), Value::I64(0)].into()),
            Value::Record(r, _) => Value::Record(r.clone(), vec![Value::I64(0), Value::I64(0)].into()),
            _ => unreachable!(),
        };
        let x = rt.upload(ctx, &HostArray::from_values(one.ty(), &vec![one.clone(); 10]).unwrap()).unwrap();
        let run = reduce_profiled(&mut rt, ctx, &mut t, "+", zero, &x).unwrap();
        assert_eq!(run.reports[0].events.shuffles, size.div_ceil(4) * logical_shuffles(1, 32));
    }
    // Distinct element types are distinct specializations of the same kernel.
    assert_eq!(rt.context(ctx).unwrap().cache().len(), 4);
}

#[test]
fn repeated_reductions_hit_the_cache() {
    let mut t = table("function mx(a, b)\n  if a > b\n return a\n end\n  return b\nend\n");
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let x = rt.upload(ctx, &HostArray::from_i64(&[3, 9, -2, 7])).unwrap();
    assert_eq!(reduce(&mut rt, ctx, &mut t, "mx", Value::I64(i64::MIN), &x).unwrap(), Value::I64(9));
    assert_eq!(reduce(&mut rt, ctx, &mut t, "mx", Value::I64(i64::MIN), &x).unwrap(), Value::I64(9));
    assert_eq!(reduce(&mut rt, ctx, &mut t, "+", Value::I64(0), &x).unwrap(), Value::I64(17));
    assert_eq!(rt.counters().compiles, 2);
    assert_eq!(rt.counters().cache_hits, 1);
}

#[test]
fn reduce_works_at_warp_size_four() {
    let mut t = MethodTable::new();
    let mut rt = runtime(4);
    let ctx = rt.current();
    let xs: Vec<i64> = (0..777).map(|i| i % 13 - 6).collect();
    let x = rt.upload(ctx, &HostArray::from_i64(&xs)).unwrap();
    let run = reduce_profiled(&mut rt, ctx, &mut t, "+", Value::I64(0), &x).unwrap();
    assert_eq!(run.value, Value::I64(fold_i64(&xs)));
    assert_eq!(run.reports[0].events.shuffles, 2 * logical_shuffles(4, 4));
}

#[test]
fn reduce_rejects_mismatched_neutral() {
    let mut t = MethodTable::new();
    let mut rt = Runtime::default();
    let ctx = rt.current();
    let x = rt.upload(ctx, &HostArray::from_i64(&[1])).unwrap();
    let e = reduce(&mut rt, ctx, &mut t, "+", Value::F64(0.0), &x).unwrap_err();
    assert!(matches!(e, ArrayError::NeutralType { .. }));
    let e = reduce(&mut rt, ctx, &mut t, "nosuch", Value::I64(0), &x).unwrap_err();
    assert!(matches!(e, ArrayError::Runtime(RuntimeError::Compile(_))), "{e}");
}

fn expr_strategy() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![Just("x".to_string()), Just("y".to_string()), (1i32..9).prop_map(|c| format!("{c}.0"))];
    leaf.prop_recursive(8, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop_oneof![Just("+"), Just("-"), Just("*")]).prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            inner.clone().prop_map(|a| format!("abs({a})")),
            inner.prop_map(|a| format!("sqrt(abs({a}))")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_fused_expression_is_one_kernel(expr in expr_strategy()) {
        let mut t = MethodTable::new();
        let mut rt = Runtime::default();
        let ctx = rt.current();
        let x = rt.upload(ctx, &HostArray::from_f64(&[0.5, -1.5, 2.0])).unwrap();
        let y = rt.upload(ctx, &HostArray::from_f64(&[4.0, 0.25, -3.0])).unwrap();
        let run = broadcast_expr(&mut rt, ctx, &mut t, &expr, &[("x", &x), ("y", &y)]).unwrap();
        prop_assert_eq!(rt.counters().compiles, 1);
        let key = rt.context(ctx).unwrap().cache().keys().next().unwrap().clone();
        let k = rt.compile(ctx, &t, &format!("__broadcast_{}_2", t.all_methods().find(|m| m.name.starts_with("__fused_")).unwrap().name), &key.arg_types).unwrap();
        prop_assert!(!k.compiled.dump().contains("call"));
        let got = rt.download(ctx, &run.output).unwrap().f64s().unwrap();
        let oracle = {
            let mut o = MethodTable::new();
            o.load(&parse(&format!("function g(x, y)\n  return {expr}\nend\n")).unwrap()).unwrap();
            o
        };
        for (i, (a, b)) in [(0.5, 4.0), (-1.5, 0.25), (2.0, -3.0)].into_iter().enumerate() {
            let want = interpret_reference(&oracle, "g", &[Value::F64(a), Value::F64(b)]).unwrap();
            prop_assert_eq!(want, Value::F64(got[i]));
        }
    }

    #[test]
    fn integer_reduce_property(xs in proptest::collection::vec(-1000i64..1000, 0..600)) {
        let mut t = MethodTable::new();
        let mut rt = Runtime::default();
        let ctx = rt.current();
        let x = rt.upload(ctx, &HostArray::from_i64(&xs)).unwrap();
        prop_assert_eq!(reduce(&mut rt, ctx, &mut t, "+", Value::I64(0), &x).unwrap(), Value::I64(fold_i64(&xs)));
    }
}
