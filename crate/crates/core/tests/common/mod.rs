//! Random SIMT kernels and their per-thread scalar oracle.

#![allow(dead_code)]

use kernelforge::compiler::frontend::{parse, MethodTable, Type, Value};
use kernelforge::run_per_thread;
use kernelforge::runtime::{HostArray, Runtime, RuntimeConfig, RuntimeError};
use kernelforge::vm::{LaunchConfig, VmConfig, VmError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 3] = ["x", "y", "z"];

struct Gen {
    rng: ChaCha8Rng,
    fresh: u32,
    out: String,
}

impl Gen {
    fn leaf(&mut self) -> String {
        match self.rng.gen_range(0..5) {
            0 => self.rng.gen_range(-9..10).to_string(),
            1 => "threadIdx().x".into(),
            2 => "i".into(),
            _ => VARS.choose(&mut self.rng).unwrap().to_string(),
        }
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.leaf();
        }
        let a = self.expr(depth - 1);
        let b = self.expr(depth - 1);
        match self.rng.gen_range(0..6) {
            0 => format!("({a} + {b})"),
            1 => format!("({a} - {b})"),
            2 => format!("({a} * {b})"),
            3 => format!("({a} % {})", self.rng.gen_range(2..9)),
            4 => format!("({a} / {})", self.rng.gen_range(1..5)),
            _ => format!("abs({a})"),
        }
    }

    fn cond(&mut self) -> String {
        let op = ["<", "<=", ">", ">=", "==", "!="].choose(&mut self.rng).unwrap();
        let c = format!("{} {op} {}", self.expr(2), self.expr(1));
        match self.rng.gen_range(0..6) {
            0 => format!("{c} && {}", self.expr(1) + " > 0"),
            1 => format!("{c} || {}", self.expr(1) + " % 3 == 0"),
            _ => c,
        }
    }

    fn line(&mut self, indent: usize, text: &str) {
        self.out.push_str(&"  ".repeat(indent));
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn block(&mut self, indent: usize, depth: u32) {
        for _ in 0..self.rng.gen_range(1..4) {
            self.stmt(indent, depth);
        }
    }

    fn stmt(&mut self, indent: usize, depth: u32) {
        let choice = if depth == 0 { 0 } else { self.rng.gen_range(0..8) };
        match choice {
            0..=2 => {
                let v = VARS.choose(&mut self.rng).unwrap();
                let e = self.expr(2);
                self.line(indent, &format!("{v} = {e} % 10007"));
            }
            3 | 4 => {
                let c = self.cond();
                self.line(indent, &format!("if {c}"));
                self.block(indent + 1, depth - 1);
                if self.rng.gen_bool(0.5) {
                    self.line(indent, "else");
                    self.block(indent + 1, depth - 1);
                }
                self.line(indent, "end");
            }
            5 => {
                self.fresh += 1;
                let c = format!("c{}", self.fresh);
                let bound = self.expr(1);
                self.line(indent, &format!("{c} = 0"));
                self.line(indent, &format!("while {c} < ({bound} % 4 + 4) % 4"));
                self.block(indent + 1, depth - 1);
                self.line(indent + 1, &format!("{c} = {c} + 1"));
                self.line(indent, "end");
            }
            6 => {
                self.fresh += 1;
                let j = format!("j{}", self.fresh);
                let bound = self.expr(1);
                self.line(indent, &format!("for {j} = 1:({bound} % 3)"));
                self.block(indent + 1, depth - 1);
                self.line(indent, "end");
            }
            _ => {
                let c = self.cond();
                self.line(indent, &format!("if {c}"));
                self.line(indent + 1, "out[i] = x - y + z");
                self.line(indent + 1, "return");
                self.line(indent, "end");
            }
        }
    }
}

/// A kernel `k(out, inp)` with thread-dependent branches and loops. Each
/// thread writes only its own element of `out`.
pub fn random_kernel(seed: u64) -> String {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed), fresh: 0, out: String::new() };
    g.line(0, "function k(out, inp)");
    g.line(1, "i = (blockIdx().x - 1) * blockDim().x + threadIdx().x");
    g.line(1, "if i <= length(out)");
    g.line(2, "x = inp[i]");
    g.line(2, "y = i");
    g.line(2, "z = 0");
    g.block(2, 3);
    g.line(2, "out[i] = x + 2 * y + 3 * z");
    g.line(1, "end");
    g.line(0, "end");
    g.out
}

fn runtime(ws: u32) -> Runtime {
    let mut config = RuntimeConfig { vm: VmConfig { warp_size: ws, ..VmConfig::default() }, ..RuntimeConfig::default() };
    config.target = config.target.with_warp_size(ws);
    Runtime::new(config)
}

/// Run a random kernel on the VM and in the per-thread oracle; `Err` describes
/// the first disagreement.
pub fn check_random_kernel(seed: u64, ws: u32) -> Result<(), String> {
    let src = random_kernel(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = rng.gen_range(1..=3 * ws as usize + 5);
    let block = *[ws, 2 * ws, (ws / 2).max(1), 3].choose(&mut rng).unwrap();
    let grid = n.div_ceil(block as usize) as u32;
    let launch = LaunchConfig::linear(grid, block);
    let inp: Vec<i64> = (0..n).map(|_| rng.gen_range(-50..50)).collect();

    let mut table = MethodTable::new();
    table.load(&parse(&src).map_err(|e| format!("{e:?}\n{src}"))?).map_err(|e| format!("{e}\n{src}"))?;

    let mut rt = runtime(ws);
    let ctx = rt.current();
    let d_out = rt.upload(ctx, &HostArray::from_i64(&vec![0; n])).unwrap();
    let d_inp = rt.upload(ctx, &HostArray::from_i64(&inp)).unwrap();
    rt.cuda_launch(ctx, &table, "k", &[(&d_out).into(), (&d_inp).into()], &launch)
        .map_err(|e| format!("VM failed: {e}\n{src}"))?;
    let got = rt.download(ctx, &d_out).unwrap();

    let h_out = Value::array(Type::I64, vec![Value::I64(0); n]);
    let h_inp = HostArray::from_i64(&inp).to_value();
    run_per_thread(&table, "k", &[h_out.clone(), h_inp], &launch, ws).map_err(|e| format!("oracle failed: {e}\n{src}"))?;
    if got.to_value() != h_out {
        return Err(format!("ws={ws} n={n} block={block}\nvm:     {}\noracle: {}\n{src}", got.to_value(), h_out));
    }
    Ok(())
}

/// A kernel whose barrier sits under a condition true for the first `t`
/// threads of every block.
pub fn barrier_kernel(t: u32) -> String {
    format!("function b(out)\n  i = threadIdx().x\n  if i <= {t}\n    sync_threads()\n  end\n  out[i] = i\nend\n")
}

/// Launch [`barrier_kernel`] with one block of `block` threads.
pub fn run_barrier_kernel(t: u32, block: u32, ws: u32) -> Result<Vec<i64>, RuntimeError> {
    let mut table = MethodTable::new();
    table.load(&parse(&barrier_kernel(t)).unwrap()).unwrap();
    let mut rt = runtime(ws);
    let ctx = rt.current();
    let out = rt.upload(ctx, &HostArray::from_i64(&vec![0; block as usize])).unwrap();
    rt.cuda_launch(ctx, &table, "b", &[(&out).into()], &LaunchConfig::linear(1, block))?;
    Ok(rt.download(ctx, &out).unwrap().i64s().unwrap())
}

/// Barrier divergence must be reported, identically on every run, exactly
/// when some but not all threads reach the barrier.
pub fn check_barrier_diagnosis(t: u32, block: u32, ws: u32) -> Result<(), String> {
    let first = run_barrier_kernel(t, block, ws);
    let second = run_barrier_kernel(t, block, ws);
    if first != second {
        return Err(format!("nondeterministic: {first:?} vs {second:?}"));
    }
    let divergent = t > 0 && t < block;
    match first {
        Err(RuntimeError::Vm(VmError::BarrierDivergence { block: 0, .. })) if divergent => Ok(()),
        Ok(v) if !divergent && v == (1..=block as i64).collect::<Vec<_>>() => Ok(()),
        other => Err(format!("t={t} block={block} ws={ws}: {other:?}")),
    }
}
