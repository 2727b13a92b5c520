use std::sync::Arc;

use kforge_compiler::frontend::{parse, MethodTable, Type};
use kforge_compiler::hir::{specialize, InferError, InferenceParams, NoHooks};
use kforge_compiler::lir::*;

fn table(src: &str) -> MethodTable {
    let mut t = MethodTable::new();
    t.load(&parse(src).unwrap()).unwrap();
    t
}

fn try_lower(src: &str, name: &str, args: &[Type], params: &CodegenParams) -> Result<LirModule, CodegenError> {
    let t = table(src);
    let h = specialize(&t, name, args, &InferenceParams::default(), Arc::new(NoHooks)).unwrap();
    lower_hir(&h, params, &NoCodegenHooks)
}

fn lower(src: &str, name: &str, args: &[Type], params: &CodegenParams) -> LirModule {
    let m = try_lower(src, name, args, params).unwrap();
    verify_module(&m).unwrap();
    m
}

fn optimize(m: LirModule) -> LirModule {
    run_passes(m, passes::DEFAULT_PIPELINE, &PassOptions::default()).unwrap()
}

const VADD: &str = "function vadd(a, b, c)\n  for i = 1:length(a)\n    c[i] = a[i] + b[i]\n  end\nend\n";

#[test]
fn golden_grammar() {
    let m = optimize(lower("function inc(x)\n  return x + 1\nend\n", "inc", &[Type::I64], &CodegenParams::default()));
    let want = "define @inc_i64(%v0: i64) -> i64 {\nbb0:\n  %v1: i64 = const 1\n  %v2: i64 = add %v0, %v1\n  ret %v2\n}\n";
    assert_eq!(m.dump(), want);
}

#[test]
fn constant_expression_folds() {
    let m = optimize(lower("function five()\n  return 2 + 3\nend\n", "five", &[], &CodegenParams::default()));
    let d = m.dump();
    assert!(d.contains("const 5"), "{d}");
    assert!(!d.contains("add"), "{d}");
}

#[test]
fn dead_local_is_removed() {
    let src = "function f(x)\n  y = x * 2\n  return x\nend\n";
    let m = optimize(lower(src, "f", &[Type::I64], &CodegenParams::default()));
    let d = m.dump();
    assert!(!d.contains("mul") && !d.contains("alloc_local") && !d.contains("store"), "{d}");
}

#[test]
fn empty_function_is_one_block() {
    let m = optimize(lower("function k()\nend\n", "k", &[], &CodegenParams::default()));
    let f = &m.functions[0];
    assert_eq!(f.blocks.len(), 1);
    assert_eq!(f.total_insts(), 1);
    assert!(m.dump().contains("  ret\n"));
}

#[test]
fn explicit_throw_is_rejected_under_forbid() {
    let src = "function f(x)\n  if x > 0\n    throw(7)\n  end\n  return x\nend\n";
    let params = CodegenParams { exception_policy: ExceptionPolicy::Forbid, ..CodegenParams::default() };
    assert!(matches!(try_lower(src, "f", &[Type::I64], &params), Err(CodegenError::ForbiddenThrow { .. })));
    let params = CodegenParams { exception_policy: ExceptionPolicy::Trap, ..CodegenParams::default() };
    let d = optimize(lower(src, "f", &[Type::I64], &params)).dump();
    assert!(d.contains("trap") && !d.contains("rtcall"), "{d}");
}

#[test]
fn allocation_is_rejected_under_forbid() {
    let src = "function f(n)\n  z = zeros(Float32, n)\n  return length(z)\nend\n";
    let params = CodegenParams { allocation_policy: AllocationPolicy::Forbid, ..CodegenParams::default() };
    assert!(matches!(try_lower(src, "f", &[Type::I64], &params), Err(CodegenError::ForbiddenAlloc { .. })));
}

#[test]
fn host_vadd_has_runtime_bounds_calls() {
    let arr = Type::array(Type::F32);
    let m = optimize(lower(VADD, "vadd", &[arr.clone(), arr.clone(), arr], &CodegenParams::default()));
    let d = m.dump();
    assert_eq!(m.functions.len(), 1);
    assert_eq!(d.matches("rtcall ksl_bounds_error").count(), 3);
    assert_eq!(d.matches("phi").count(), 1);
    assert!(!d.contains("alloc_local"), "{d}");
}

#[test]
fn calls_are_inlined() {
    let src = "function sq(x)\n  return x * x\nend\nfunction f(x)\n  return sq(x) + sq(x + 1)\nend\n";
    let m = lower(src, "f", &[Type::I64], &CodegenParams::default());
    assert_eq!(m.functions.len(), 2);
    let m = optimize(m);
    assert_eq!(m.functions.len(), 1);
    assert!(!m.dump().contains("call"));
}

#[test]
fn recursion_is_rejected_without_any() {
    let src = "function fact(n)\n  if n <= 1\n    return 1\n  end\n  return n * fact(n - 1)\nend\n";
    let t = table(src);
    let strict = InferenceParams { allow_any: false, ..InferenceParams::default() };
    let r = specialize(&t, "fact", &[Type::I64], &strict, Arc::new(NoHooks));
    assert!(matches!(r, Err(InferError::Recursion { .. })), "{r:?}");
}

#[test]
fn kernel_abi_and_address_spaces() {
    let src = "record Pair x; y end\nfunction k(p, a)\n  a[1] = p.x + p.y\nend\n";
    let t = table(src);
    let pair = Type::Record(t.instantiate_record("Pair", &[Type::F32, Type::F32]).unwrap());
    let args = [pair, Type::array(Type::F32)];
    let h = specialize(&t, "k", &args, &InferenceParams::default(), Arc::new(NoHooks)).unwrap();
    let params = CodegenParams {
        exception_policy: ExceptionPolicy::Trap,
        allocation_policy: AllocationPolicy::Forbid,
        emit_bounds_checks: true,
        array_base_space: Space::Global,
    };
    let mut m = lower_hir(&h, &params, &NoCodegenHooks).unwrap();
    let name = m.functions[0].name.clone();
    rewrite_kernel_abi(&mut m, &name).unwrap();
    verify_module(&m).unwrap();
    assert!(m.functions[0].attrs.kernel && m.functions[0].attrs.wrapper);
    assert!(m.functions[0].params.iter().all(|p| p.param_space && p.ty == LirType::Ptr(Space::Param)));
    let mut m = optimize(m);
    for f in &mut m.functions {
        infer_address_spaces(f);
        verify_function(f).unwrap();
    }
    let d = m.dump();
    assert_eq!(m.functions.len(), 1, "{d}");
    assert!(!d.contains("call"), "{d}");
    assert!(!d.contains(".generic"), "{d}");
    assert_eq!(d.matches("load.param").count(), 4, "{d}");
    assert_eq!(d.matches("store.global").count(), 1, "{d}");
}

#[test]
fn abi_rejects_mutable_records() {
    let src = "mutable record Acc\n  total::Float64\nend\nfunction k(acc)\n  acc.total = 1.0\nend\n";
    let t = table(src);
    let acc = Type::Record(t.instantiate_record("Acc", &[Type::F64]).unwrap());
    let h = specialize(&t, "k", &[acc], &InferenceParams::default(), Arc::new(NoHooks)).unwrap();
    let mut m = lower_hir(&h, &CodegenParams::default(), &NoCodegenHooks).unwrap();
    let name = m.functions[0].name.clone();
    assert!(matches!(rewrite_kernel_abi(&mut m, &name), Err(AbiError::MutableAggregate { .. })));
}

#[test]
fn verifier_rejects_unterminated_block() {
    let mut f = LirFunction::new("bad", LirType::Void);
    let b = f.add_block();
    f.block_mut(BlockId(0)).term = Some(Terminator::Br(b));
    assert!(verify_function(&f).is_err());
    f.block_mut(b).term = Some(Terminator::Ret(None));
    assert!(verify_function(&f).is_ok());
}

#[test]
fn unknown_pass_is_an_error() {
    let m = lower("function k()\nend\n", "k", &[], &CodegenParams::default());
    assert!(matches!(run_passes(m, &["nope"], &PassOptions::default()), Err(PassError::Unknown(_))));
}
