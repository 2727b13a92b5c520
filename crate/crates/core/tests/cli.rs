use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kernelforge::runtime::HostArray;
use kernelforge::compiler::frontend::Type;
use kernelforge::vm::CostTable;

fn program(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("programs").join(name)
}

fn kf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernelforge")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn devlir_dump_matches_the_golden_file() {
    let vadd = program("vadd.ksl");
    let o = kf(&["compile", path(&vadd), "--target=device", "--dump=devlir"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let golden = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/vadd.devlir")).unwrap();
    assert_eq!(stdout(&o), golden);
    assert_eq!(stdout(&kf(&["compile", path(&vadd), "--target=device", "--dump=devlir"])), golden);
}

#[test]
fn dumps_follow_pipeline_order() {
    let o = kf(&["compile", path(&program("poly.ksl")), "--dump=lir-opt", "--dump=ast", "--dump=hir"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let ast = text.find("(function poly").unwrap();
    let hir = text.find("function poly(x::Float64) -> Float64").unwrap();
    let lir = text.find("define @poly_f64").unwrap();
    assert!(ast < hir && hir < lir);
    assert!(text.contains("define @hvadd_Af32_Af32_Af32"));
}

#[test]
fn instability_is_a_compile_error() {
    let o = kf(&["compile", path(&program("unstable.ksl")), "--target=device"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("unstable.ksl:6:1: type instability in intersect"), "{err}");
    let o = kf(&["compile", path(&program("stable.ksl")), "--target=device"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "compiled shapes(Array{Float64}, Rect{Float64,Float64}, Rect{Float64,Float64})\n");
}

#[test]
fn parse_errors_carry_positions() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ksl");
    std::fs::write(&bad, "function f(x)\n  return (x +\nend\n").unwrap();
    let o = kf(&["compile", path(&bad)]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.starts_with(&format!("{}:", bad.display())), "{err}");
    let pos = err[bad.display().to_string().len() + 1..].split(':').take(2).collect::<Vec<_>>();
    assert!(pos.iter().all(|p| p.parse::<u32>().is_ok()), "{err}");
}

#[test]
fn launch_reads_and_writes_array_files() {
    let dir = tempfile::tempdir().unwrap();
    let a: Vec<f32> = (0..100).map(|i| i as f32 * 0.25).collect();
    let b: Vec<f32> = (0..100).map(|i| 1.0 - i as f32).collect();
    for (name, xs) in [("a.bin", &a), ("b.bin", &b)] {
        HostArray::from_f32(xs).write_to(std::fs::File::create(dir.path().join(name)).unwrap()).unwrap();
    }
    let file = |n: &str| format!("f32[](file:{})", dir.path().join(n).display());
    let out = dir.path().join("c.bin");
    let o = kf(&[
        "launch",
        path(&program("vadd.ksl")),
        "--kernel=vadd",
        "--grid=1",
        "--block=100",
        &format!("--arg={}", file("a.bin")),
        &format!("--arg={}", file("b.bin")),
        "--arg=f32[](zeros:100)",
        &format!("--out=3:{}", out.display()),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("vadd: grid=(1,1,1) block=(100,1,1) cycles="));
    let c = HostArray::read_from(Type::F32, std::fs::File::open(&out).unwrap()).unwrap();
    let want: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    assert_eq!(c.f32s().unwrap(), want);
}

#[test]
fn trapping_launch_exits_with_two() {
    let o = kf(&[
        "launch",
        path(&program("vadd.ksl")),
        "--kernel=vadd",
        "--block=8",
        "--arg=f32[](zeros:4)",
        "--arg=f32[](zeros:4)",
        "--arg=f32[](zeros:4)",
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kernel trapped in block 0 thread 4 with code -1"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_64() {
    let vadd = program("vadd.ksl");
    let cases: Vec<Vec<&str>> = vec![
        vec!["compile", path(&vadd), "--bogus"],
        vec!["compile", path(&vadd), "--dump=devlir"],
        vec!["compile", path(&vadd), "--dump=everything"],
        vec!["launch", path(&vadd)],
        vec!["launch", path(&vadd), "--kernel=vadd", "--arg=f16[](zeros:4)"],
        vec!["launch", path(&vadd), "--kernel=vadd", "--arg=f32[]"],
        vec!["launch", path(&vadd), "--kernel=vadd", "--grid=0"],
        vec!["run", "/nonexistent/file.ksl"],
        vec!["frobnicate"],
        vec![],
    ];
    for args in cases {
        let o = kf(&args);
        assert_eq!(code(&o), 64, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert_eq!(code(&kf(&["--help"])), 0);
}

#[test]
fn run_is_deterministic_for_a_seed() {
    let saxpy = program("saxpy.ksl");
    let one = kf(&["run", path(&saxpy), "--seed=7"]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    assert_eq!(stdout(&one), stdout(&kf(&["run", path(&saxpy), "--seed=7"])));
    assert_ne!(stdout(&one), stdout(&kf(&["run", path(&saxpy), "--seed=8"])));
    assert_eq!(stdout(&one).lines().count(), 2);
}

#[test]
fn bench_prints_the_profile_document() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("profile.json");
    let o = kf(&["bench", path(&program("saxpy.ksl")), "--seed=1", &format!("--profile-out={}", prof.display())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let ops = doc["operations"].as_array().unwrap();
    let kinds: Vec<&str> = ops.iter().map(|op| op["op"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["broadcast", "reduce", "reduce"]);
    let total: u64 = ops.iter().map(|op| op["cycles"].as_u64().unwrap()).sum();
    assert_eq!(doc["total_cycles"].as_u64().unwrap(), total);
    assert_eq!(doc["counters"]["compiles"], 2);
    assert_eq!(doc["counters"]["launches"], 3);
    assert_eq!(std::fs::read_to_string(&prof).unwrap(), stdout(&o));

    let uncached = kf(&["bench", path(&program("saxpy.ksl")), "--seed=1", "--no-cache"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&uncached)).unwrap();
    assert_eq!(doc["counters"]["compiles"], 3);
}

#[test]
fn cost_table_round_trips_and_changes_cycles() {
    let o = kf(&["dump-costs"]);
    assert_eq!(code(&o), 0);
    assert_eq!(CostTable::from_json(&stdout(&o)).unwrap(), CostTable::default());

    let dir = tempfile::tempdir().unwrap();
    let costs = dir.path().join("costs.json");
    let custom = CostTable { generic_surcharge: 50, ..CostTable::default() };
    std::fs::write(&costs, custom.to_json()).unwrap();
    assert_eq!(CostTable::from_json(&stdout(&kf(&["dump-costs", &format!("--cost-table={}", costs.display())]))).unwrap(), custom);

    let cycles = |extra: &[&str]| -> u64 {
        let vadd = program("vadd.ksl");
        let mut args = vec!["launch", path(&vadd), "--kernel=vadd", "--block=32", "--arg=f32[](iota:32)", "--arg=f32[](iota:32)", "--arg=f32[](zeros:32)"];
        args.extend_from_slice(extra);
        let o = kf(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o).trim().rsplit_once("cycles=").unwrap().1.parse().unwrap()
    };
    let table = format!("--cost-table={}", costs.display());
    let tagged = cycles(&[]);
    assert_eq!(cycles(&[&table]), tagged);
    let generic_default = cycles(&["--no-address-spaces"]);
    let generic_custom = cycles(&["--no-address-spaces", &table]);
    // 96 generic memory operations: 64 loads and 32 stores.
    assert_eq!(generic_default - tagged, 20 * 96);
    assert_eq!(generic_custom - tagged, 50 * 96);
}

#[test]
fn script_errors_are_classified() {
    let dir = tempfile::tempdir().unwrap();
    let trap = dir.path().join("trap.ksl");
    std::fs::write(&trap, "function k(a)\n  a[threadIdx().x + 1] = 1\nend\nd = upload(zeros(Int64, 4))\nlaunch(k, 1, 4, d)\n").unwrap();
    let o = kf(&["run", path(&trap)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("trap.ksl:5:1: kernel trapped"), "{}", stderr(&o));
    let unstable = dir.path().join("unstable.ksl");
    std::fs::write(&unstable, "function f(x)\n  if x > 0.0\n    return 1\n  end\n  return 1.0\nend\nd = upload(zeros(Float64, 4))\nbroadcast(f, d)\n").unwrap();
    let o = kf(&["run", path(&unstable)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
