use kforge_compiler::frontend::{parse, MethodTable, Type};
use kforge_compiler::lir::eval::Imm;
use kforge_compiler::lir::LirType;
use kforge_device::{compile_kernel, DeviceTargetConfig};
use kforge_vm::*;

enum Arg {
    Array(u64, u64),
    Scalar(Imm),
}

fn kernel(src: &str, name: &str, args: &[Type], config: &DeviceTargetConfig) -> Kernel {
    let mut t = MethodTable::new();
    t.load(&parse(src).unwrap()).unwrap();
    let k = compile_kernel(&t, name, args, config).unwrap();
    Kernel::new(k.entry()).unwrap()
}

fn params(k: &Kernel, args: &[Arg]) -> Vec<u8> {
    let mut out = vec![0u8; k.param_size() as usize];
    for (slot, a) in k.params().iter().zip(args) {
        let dst = &mut out[slot.offset as usize..(slot.offset + slot.size) as usize];
        match a {
            Arg::Array(addr, len) => {
                let v = Val::Agg(vec![Val::Ptr(*addr), Val::Scalar(Imm::I64(*len as i64))].into());
                encode(&slot.ty, &v, dst);
            }
            Arg::Scalar(i) => encode(&slot.ty, &Val::Scalar(*i), dst),
        }
    }
    out
}

fn upload_i64(dev: &mut DeviceState, xs: &[i64]) -> u64 {
    let a = dev.global.alloc(xs.len() as u64 * 8).unwrap();
    let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
    dev.global.write(a, &bytes).unwrap();
    a
}

fn download_i64(dev: &DeviceState, a: u64, n: usize) -> Vec<i64> {
    dev.global.read(a, n as u64 * 8).unwrap().chunks(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn warp(ws: u32) -> DeviceState {
    DeviceState::new(VmConfig { warp_size: ws, ..VmConfig::default() })
}

fn arr(t: Type) -> Type {
    Type::array(t)
}

#[test]
fn empty_kernel_costs_the_launch_constant() {
    let k = kernel("function nop() end", "nop", &[], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    let r = dev.launch(&k, &LaunchConfig::linear(1, 1), &[]).unwrap();
    assert_eq!(r.cycles, 100);
    assert_eq!(r.events.stores.total(), 0);
    assert_eq!(r.trap, None);
}

#[test]
fn divergent_if_rejoins_with_full_mask() {
    let src = "function d(a, b)\n i = threadIdx().x\n if i <= 2\n a[i] = 1\n else\n a[i] = 2\n end\n b[i] = i\nend";
    let k = kernel(src, "d", &[arr(Type::I64), arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[0; 4]);
    let b = upload_i64(&mut dev, &[0; 4]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 4), &params(&k, &[Arg::Array(a, 4), Arg::Array(b, 4)])).unwrap();
    assert_eq!(download_i64(&dev, a, 4), [1, 1, 2, 2]);
    assert_eq!(download_i64(&dev, b, 4), [1, 2, 3, 4]);
    // One store per lane on each side, then one per lane after the rejoin.
    assert_eq!(r.events.stores.global, 8);
}

#[test]
fn checked_store_in_branch_rejoins_before_barrier() {
    let src = "function c(a)\n i = threadIdx().x\n if i == 1\n a[1] = 7\n end\n sync_threads()\n a[i] = a[i] + 1\nend";
    let k = kernel(src, "c", &[arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[0; 8]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 8), &params(&k, &[Arg::Array(a, 8)])).unwrap();
    assert_eq!(download_i64(&dev, a, 8), [8, 1, 1, 1, 1, 1, 1, 1]);
    assert_eq!(r.events.barriers, 2);
}

#[test]
fn uniform_branch_runs_one_side() {
    let src = "function u(a, n)\n i = threadIdx().x\n if n > 0\n a[i] = 1\n else\n a[i] = 2\n end\nend";
    let k = kernel(src, "u", &[arr(Type::I64), Type::I64], &DeviceTargetConfig::default());
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[0; 4]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 4), &params(&k, &[Arg::Array(a, 4), Arg::Scalar(Imm::I64(1))])).unwrap();
    assert_eq!(download_i64(&dev, a, 4), [1; 4]);
    assert_eq!(r.events.stores.global, 4);
}

#[test]
fn loops_run_per_lane_trip_counts() {
    let src = "function l(a, c)\n i = threadIdx().x\n k = 0\n while k < i - 1\n k = k + 1\n c[i] = c[i] + 10\n end\n a[i] = k\nend";
    let k = kernel(src, "l", &[arr(Type::I64), arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[0; 4]);
    let c = upload_i64(&mut dev, &[0; 4]);
    dev.launch(&k, &LaunchConfig::linear(1, 4), &params(&k, &[Arg::Array(a, 4), Arg::Array(c, 4)])).unwrap();
    // Scalar oracle: lane t runs t bodies.
    let want: Vec<i64> = (0..4).collect();
    assert_eq!(download_i64(&dev, a, 4), want);
    assert_eq!(download_i64(&dev, c, 4), want.iter().map(|t| t * 10).collect::<Vec<_>>());
}

#[test]
fn shuffle_down_shifts_lanes() {
    let src = "function s(a, d)\n i = threadIdx().x\n a[i] = shfl_down(a[i], d)\nend";
    let k = kernel(src, "s", &[arr(Type::I64), Type::I64], &DeviceTargetConfig::default());
    for delta in [16i64, 0, 31] {
        let mut dev = DeviceState::default();
        let input: Vec<i64> = (1..=32).collect();
        let a = upload_i64(&mut dev, &input);
        let r = dev.launch(&k, &LaunchConfig::linear(1, 32), &params(&k, &[Arg::Array(a, 32), Arg::Scalar(Imm::I64(delta))])).unwrap();
        let want: Vec<i64> = (0..32).map(|l| if l + delta < 32 { input[(l + delta) as usize] } else { input[l as usize] }).collect();
        let got = download_i64(&dev, a, 32);
        assert_eq!(got, want);
        if delta == 16 {
            assert_eq!(got[0], 17);
        }
        // An Int64 moves as two 32-bit words.
        assert_eq!(r.events.shuffles, 2);
    }
}

#[test]
fn shuffle_delta_out_of_range_is_an_error() {
    let src = "function s(a, d)\n i = threadIdx().x\n a[i] = shfl_down(a[i], d)\nend";
    let k = kernel(src, "s", &[arr(Type::I64), Type::I64], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[1, 2, 3, 4]);
    for d in [4, -1] {
        let e = dev.launch(&k, &LaunchConfig::linear(1, 4), &params(&k, &[Arg::Array(a, 4), Arg::Scalar(Imm::I64(d))]));
        assert_eq!(e.unwrap_err(), VmError::ShuffleDelta { delta: d, warp_size: 4 });
    }
}

#[test]
fn shuffle_with_inactive_lanes_reads_zero() {
    let src = "function s(a)\n i = threadIdx().x\n if i != 2\n a[i] = shfl_down(a[i], 1)\n end\nend";
    let k = kernel(src, "s", &[arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[1, 2, 3, 4]);
    dev.launch(&k, &LaunchConfig::linear(1, 4), &params(&k, &[Arg::Array(a, 4)])).unwrap();
    assert_eq!(download_i64(&dev, a, 4), [0, 2, 4, 4]);
}

fn vadd_cycles(infer: bool) -> (ExecutionReport, Vec<i64>) {
    let src = "function vadd(a, b, c)\n i = (blockIdx().x-1) * blockDim().x + threadIdx().x\n c[i] = a[i] + b[i]\nend";
    let config = DeviceTargetConfig { address_space_inference: infer, ..DeviceTargetConfig::default() };
    let k = kernel(src, "vadd", &[arr(Type::I64), arr(Type::I64), arr(Type::I64)], &config);
    let mut dev = DeviceState::default();
    let xs: Vec<i64> = (0..100).collect();
    let a = upload_i64(&mut dev, &xs);
    let b = upload_i64(&mut dev, &xs);
    let c = upload_i64(&mut dev, &[0; 100]);
    let p = params(&k, &[Arg::Array(a, 100), Arg::Array(b, 100), Arg::Array(c, 100)]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 100), &p).unwrap();
    (r, download_i64(&dev, c, 100))
}

#[test]
fn generic_accesses_pay_the_surcharge() {
    let (tagged, c1) = vadd_cycles(true);
    let (generic, c2) = vadd_cycles(false);
    assert_eq!(c1, c2);
    assert_eq!(c1, (0..100).map(|x| 2 * x).collect::<Vec<_>>());
    assert_eq!(tagged.events.generic_ops(), 0);
    assert_eq!(tagged.events.loads.global, 200);
    assert_eq!(tagged.events.stores.global, 100);
    let n = generic.events.generic_ops();
    assert!(n > 0);
    assert_eq!(generic.events.memory_ops(), tagged.events.memory_ops());
    assert_eq!(generic.cycles - tagged.cycles, CostTable::default().generic_surcharge * n);
}

#[test]
fn out_of_bounds_index_traps() {
    let src = "function w(a)\n i = threadIdx().x\n a[i] = 1\nend";
    let k = kernel(src, "w", &[arr(Type::I64)], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    let a = upload_i64(&mut dev, &[0; 100]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 101), &params(&k, &[Arg::Array(a, 100)])).unwrap();
    assert_eq!(r.trap, Some(TrapReport { block: 0, thread: 100, code: -1 }));
    assert_eq!(r.events.traps, 1);
}

#[test]
fn unchecked_out_of_range_access_faults() {
    let src = "function w(a)\n i = threadIdx().x\n a[i] = 1\nend";
    let mut config = DeviceTargetConfig::default();
    config.codegen.emit_bounds_checks = false;
    let k = kernel(src, "w", &[arr(Type::I64)], &config);
    let mut dev = DeviceState::default();
    let a = upload_i64(&mut dev, &[0; 4]);
    let e = dev.launch(&k, &LaunchConfig::linear(1, 5), &params(&k, &[Arg::Array(a, 4)])).unwrap_err();
    assert!(matches!(e, VmError::Fault { thread: 4, write: true, .. }), "{e}");
}

#[test]
fn division_by_zero_traps() {
    let src = "function q(a, d)\n i = threadIdx().x\n a[i] = a[i] % d\nend";
    let k = kernel(src, "q", &[arr(Type::I64), Type::I64], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    let a = upload_i64(&mut dev, &[5; 2]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 2), &params(&k, &[Arg::Array(a, 2), Arg::Scalar(Imm::I64(0))])).unwrap();
    assert_eq!(r.trap, Some(TrapReport { block: 0, thread: 0, code: -2 }));
}

#[test]
fn divergent_barrier_is_diagnosed() {
    let partial = "function b(a)\n i = threadIdx().x\n if i <= 2\n sync_threads()\n end\n a[i] = 1\nend";
    let split = "function b(a)\n i = threadIdx().x\n if i <= 4\n sync_threads()\n a[i] = 1\n else\n sync_threads()\n a[i] = 2\n end\nend";
    for (src, block) in [(partial, 4), (split, 8)] {
        let k = kernel(src, "b", &[arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
        let mut errors = Vec::new();
        for _ in 0..2 {
            let mut dev = warp(4);
            let a = upload_i64(&mut dev, &[0; 8]);
            errors.push(dev.launch(&k, &LaunchConfig::linear(1, block), &params(&k, &[Arg::Array(a, 8)])).unwrap_err());
        }
        assert!(matches!(errors[0], VmError::BarrierDivergence { block: 0, .. }), "{}", errors[0]);
        assert_eq!(errors[0], errors[1]);
    }
}

#[test]
fn barrier_orders_shared_memory() {
    let src = "function r(a)\n i = threadIdx().x\n s = shared_array(Int64, 8)\n s[i] = a[i]\n sync_threads()\n a[i] = s[9 - i]\nend";
    let k = kernel(src, "r", &[arr(Type::I64)], &DeviceTargetConfig::default().with_warp_size(4));
    let mut dev = warp(4);
    let a = upload_i64(&mut dev, &[1, 2, 3, 4, 5, 6, 7, 8]);
    let r = dev.launch(&k, &LaunchConfig::linear(1, 8), &params(&k, &[Arg::Array(a, 8)])).unwrap();
    assert_eq!(download_i64(&dev, a, 8), [8, 7, 6, 5, 4, 3, 2, 1]);
    assert_eq!(r.events.barriers, 2);
    assert_eq!(r.events.stores.shared, 8);
    assert_eq!(r.events.loads.shared, 8);
}

#[test]
fn multiple_blocks_and_partial_warps() {
    let src = "function g(a)\n i = (blockIdx().x-1) * blockDim().x + threadIdx().x\n if i <= length(a)\n a[i] = i * 3\n end\nend";
    let k = kernel(src, "g", &[arr(Type::I64)], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    let a = upload_i64(&mut dev, &[0; 70]);
    dev.launch(&k, &LaunchConfig::linear(3, 25), &params(&k, &[Arg::Array(a, 70)])).unwrap();
    assert_eq!(download_i64(&dev, a, 70), (1..=70).map(|i| i * 3).collect::<Vec<_>>());
}

#[test]
fn launches_are_deterministic() {
    let (r1, c1) = vadd_cycles(false);
    let (r2, c2) = vadd_cycles(false);
    assert_eq!(r1, r2);
    assert_eq!(c1, c2);
    assert_eq!(r1.to_json(), r2.to_json());
}

#[test]
fn launch_config_is_validated() {
    let k = kernel("function nop() end", "nop", &[], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    assert!(matches!(dev.launch(&k, &LaunchConfig::linear(0, 1), &[]), Err(VmError::InvalidLaunch(_))));
    assert!(matches!(dev.launch(&k, &LaunchConfig::linear(1, 1025), &[]), Err(VmError::InvalidLaunch(_))));
    let big = LaunchConfig { shared_bytes: 49 * 1024, ..LaunchConfig::linear(1, 1) };
    assert!(matches!(dev.launch(&k, &big, &[]), Err(VmError::InvalidLaunch(_))));
    assert!(matches!(dev.launch(&k, &LaunchConfig::linear(1, 1), &[0]), Err(VmError::ParamSize { .. })));
}

#[test]
fn scalar_params_and_math_intrinsics() {
    let src = "function m(a, x)\n i = threadIdx().x\n a[i] = sqrt(x) + abs(-x) + pow(x, 2.0)\nend";
    let k = kernel(src, "m", &[arr(Type::F64), Type::F64], &DeviceTargetConfig::default());
    let mut dev = DeviceState::default();
    let a = dev.global.alloc(8).unwrap();
    dev.launch(&k, &LaunchConfig::linear(1, 1), &params(&k, &[Arg::Array(a, 1), Arg::Scalar(Imm::F64(4.0))])).unwrap();
    let got = f64::from_le_bytes(dev.global.read(a, 8).unwrap().try_into().unwrap());
    assert_eq!(got, 2.0 + 4.0 + 16.0);
}

#[test]
fn param_layout_follows_the_wrapper() {
    let src = "function vadd(a, b, c)\n i = threadIdx().x\n c[i] = a[i] + b[i]\nend";
    let k = kernel(src, "vadd", &[arr(Type::F32), arr(Type::F32), arr(Type::F32)], &DeviceTargetConfig::default());
    assert_eq!(k.params().len(), 3);
    assert!(k.params().iter().all(|p| p.kind == ParamKind::ByValue && p.size == 16));
    assert_eq!(k.params()[2].offset, 32);
    assert_eq!(k.param_size(), 48);
    assert_eq!(k.params()[0].ty, LirType::structure(vec![LirType::Ptr(kforge_compiler::lir::Space::Global), LirType::I64]));
}
