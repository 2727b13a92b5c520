//! The `kernelforge` command-line driver.
//!
//! Exit codes: 0 success, 1 compile error, 2 runtime trap, 64 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use kforge_compiler::frontend::print::sexpr;
use kforge_compiler::frontend::{parse, MethodTable, Type, TypePattern};
use kforge_device::{compile_kernel_traced, Stage as DeviceStage};
use kforge_runtime::{KernelArg, Runtime, RuntimeConfig, RuntimeError};
use kforge_vm::{CostTable, LaunchConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::argspec::{host_array, parse_arg, ArgValue};
use crate::host::compile_host;
use crate::profile::{OperationProfile, ProfileDocument};
use crate::script::run_script;

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPILE: i32 = 1;
pub const EXIT_TRAP: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "kernelforge", version, about = "Compile, run and profile KSL kernels on a simulated SIMT device")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compile entry points of a KSL file and dump pipeline stages
    Compile(CompileCmd),
    /// Run the top-level statements of a KSL script
    Run(ScriptCmd),
    /// Launch one kernel with arguments from the command line
    Launch(LaunchCmd),
    /// Run a script and print its profile document
    Bench(ScriptCmd),
    /// Print the cycle cost table
    DumpCosts(CostsCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum Target {
    Host,
    Device,
}

/// Pipeline stages in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
enum Dump {
    Ast,
    Hir,
    Lir,
    LirOpt,
    Devlir,
}

#[derive(Debug, Args)]
struct DeviceOpts {
    #[arg(long, default_value_t = 32)]
    warp_size: u32,
    /// JSON cost table replacing the default
    #[arg(long)]
    cost_table: Option<PathBuf>,
    /// Compile on every launch instead of using the kernel cache
    #[arg(long)]
    no_cache: bool,
    /// Leave memory accesses in the generic space
    #[arg(long)]
    no_address_spaces: bool,
    /// Pass aggregates by reference instead of by value
    #[arg(long)]
    no_abi_rewrite: bool,
    #[arg(long)]
    no_bounds_checks: bool,
}

#[derive(Debug, Args)]
struct CompileCmd {
    file: PathBuf,
    #[arg(long, value_enum, default_value = "host")]
    target: Target,
    /// Stage to print; may repeat
    #[arg(long, value_enum)]
    dump: Vec<Dump>,
    /// Entry point; defaults to every method whose parameters are all annotated
    #[arg(long)]
    kernel: Option<String>,
    /// Argument type, e.g. `f32[]`; overrides annotations
    #[arg(long = "arg")]
    args: Vec<String>,
    #[command(flatten)]
    device: DeviceOpts,
}

#[derive(Debug, Args)]
struct ScriptCmd {
    file: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    profile_out: Option<PathBuf>,
    #[command(flatten)]
    device: DeviceOpts,
}

#[derive(Debug, Args)]
struct LaunchCmd {
    file: PathBuf,
    #[arg(long)]
    kernel: String,
    #[arg(long, default_value = "1", value_parser = parse_dim)]
    grid: [u32; 3],
    #[arg(long, default_value = "1", value_parser = parse_dim)]
    block: [u32; 3],
    /// Dynamic shared memory bytes per block
    #[arg(long, default_value_t = 0)]
    shmem: u64,
    /// Kernel argument, e.g. `f32[](file:a.bin)` or `i64(5)`
    #[arg(long = "arg")]
    args: Vec<String>,
    /// Write array argument K (1-based) after the launch: `K:path`
    #[arg(long)]
    out: Vec<String>,
    /// Print every array argument after the launch
    #[arg(long)]
    print: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    profile_out: Option<PathBuf>,
    #[command(flatten)]
    device: DeviceOpts,
}

#[derive(Debug, Args)]
struct CostsCmd {
    #[arg(long)]
    cost_table: Option<PathBuf>,
}

fn parse_dim(s: &str) -> Result<[u32; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.is_empty() || parts.len() > 3 {
        return Err(format!("`{s}` is not a dimension like 4 or 4,2,1"));
    }
    let mut d = [1u32; 3];
    for (i, p) in parts.iter().enumerate() {
        d[i] = p.trim().parse().map_err(|_| format!("`{p}` is not a positive integer"))?;
        if d[i] == 0 {
            return Err("dimensions must be positive".into());
        }
    }
    Ok(d)
}

/// A failure carrying its exit code and the message for the error stream.
struct Failure {
    code: i32,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: format!("error: {}", message.into()) }
}

/// Prefix `message` with the file name; messages that start with a
/// `line:col` position become `file:line:col: ...`.
fn located(file: &Path, message: &str) -> String {
    let head = message.split(':').take(2).collect::<Vec<_>>();
    let positioned = head.len() == 2 && head.iter().all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
    if positioned {
        format!("{}:{message}", file.display())
    } else {
        format!("{}: {message}", file.display())
    }
}

fn fail(code: i32, file: &Path, message: &str) -> Failure {
    Failure { code, message: located(file, message) }
}

fn read_source(file: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(file).map_err(|e| usage(format!("cannot read {}: {e}", file.display())))
}

fn load_table(file: &Path, source: &str) -> Result<(kforge_compiler::frontend::Ast, MethodTable), Failure> {
    let ast = parse(source).map_err(|ds| Failure {
        code: EXIT_COMPILE,
        message: ds.iter().map(|d| located(file, &d.to_string())).collect::<Vec<_>>().join("\n"),
    })?;
    let mut table = MethodTable::new();
    table.load(&ast).map_err(|e| fail(EXIT_COMPILE, file, &e.to_string()))?;
    Ok((ast, table))
}

fn runtime_config(opts: &DeviceOpts) -> Result<RuntimeConfig, Failure> {
    if !(1..=64).contains(&opts.warp_size) {
        return Err(usage(format!("warp size {} is outside 1..=64", opts.warp_size)));
    }
    let mut config = RuntimeConfig::default();
    config.vm.warp_size = opts.warp_size;
    if let Some(path) = &opts.cost_table {
        config.vm.costs = load_costs(path)?;
    }
    config.target = config.target.with_warp_size(opts.warp_size);
    config.target.address_space_inference = !opts.no_address_spaces;
    config.target.abi_rewrite = !opts.no_abi_rewrite;
    config.target.codegen.emit_bounds_checks = !opts.no_bounds_checks;
    config.bypass_cache = opts.no_cache;
    Ok(config)
}

fn load_costs(path: &Path) -> Result<CostTable, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    CostTable::from_json(&text).map_err(|e| usage(format!("{}: bad cost table: {e}", path.display())))
}

fn concrete(p: &TypePattern) -> Option<Type> {
    match p {
        TypePattern::Exact(t) => Some(t.clone()),
        TypePattern::ArrayOf(e) => concrete(e).map(Type::array),
        _ => None,
    }
}

/// Entry points to compile: the requested kernel, or every method whose
/// parameters are all concretely annotated, in definition order.
fn entries(cmd: &CompileCmd, table: &MethodTable) -> Result<Vec<(String, Vec<Type>)>, Failure> {
    if let Some(k) = &cmd.kernel {
        if !cmd.args.is_empty() {
            let types = cmd.args.iter().map(|a| parse_arg(a, table).map(|s| s.ty)).collect::<Result<Vec<_>, _>>();
            return Ok(vec![(k.clone(), types.map_err(|e| usage(e.to_string()))?)]);
        }
        let annotated = table.methods(k).iter().find_map(|m| m.params.iter().map(|p| concrete(&p.constraint)).collect::<Option<Vec<_>>>());
        return match annotated {
            Some(types) => Ok(vec![(k.clone(), types)]),
            None if table.has_methods(k) => Err(usage(format!("cannot determine argument types of `{k}`; pass --arg"))),
            None => Err(usage(format!("no method named `{k}`"))),
        };
    }
    if !cmd.args.is_empty() {
        return Err(usage("--arg needs --kernel"));
    }
    let mut methods: Vec<_> = table.all_methods().cloned().collect();
    methods.sort_by_key(|m| m.id);
    Ok(methods
        .iter()
        .filter_map(|m| {
            let types = m.params.iter().map(|p| concrete(&p.constraint)).collect::<Option<Vec<_>>>()?;
            Some((m.name.clone(), types))
        })
        .collect())
}

fn signature(name: &str, types: &[Type]) -> String {
    let ts: Vec<String> = types.iter().map(|t| t.to_string()).collect();
    format!("{name}({})", ts.join(", "))
}

fn compile(cmd: CompileCmd, out: &mut dyn Write) -> CmdResult {
    let mut dumps = cmd.dump.clone();
    dumps.sort();
    dumps.dedup();
    if cmd.target == Target::Host && dumps.contains(&Dump::Devlir) {
        return Err(usage("--dump=devlir needs --target=device"));
    }
    let source = read_source(&cmd.file)?;
    let (ast, table) = load_table(&cmd.file, &source)?;
    if dumps.contains(&Dump::Ast) {
        write_out(out, &sexpr::ast(&ast));
    }
    let entries = entries(&cmd, &table)?;
    let needs_entry = dumps.iter().any(|d| *d != Dump::Ast);
    if entries.is_empty() && needs_entry {
        return Err(usage("no entry point with annotated parameters; pass --kernel and --arg"));
    }
    let config = runtime_config(&cmd.device)?;
    for (name, types) in &entries {
        let mut stages: Vec<(Dump, String)> = Vec::new();
        match cmd.target {
            Target::Host => {
                let c = compile_host(&table, name, types).map_err(|e| fail(EXIT_COMPILE, &cmd.file, &e.to_string()))?;
                stages.push((Dump::Hir, c.hir.dump()));
                stages.push((Dump::Lir, c.lir.dump()));
                stages.push((Dump::LirOpt, c.optimized.dump()));
            }
            Target::Device => {
                let mut trace = |stage: DeviceStage, text: String| {
                    let d = match stage {
                        DeviceStage::Hir => Dump::Hir,
                        DeviceStage::Lir => Dump::Lir,
                        DeviceStage::LirOpt => Dump::LirOpt,
                        DeviceStage::DevLir => Dump::Devlir,
                    };
                    stages.push((d, text));
                };
                compile_kernel_traced(&table, name, types, &config.target, Some(&mut trace))
                    .map_err(|e| fail(EXIT_COMPILE, &cmd.file, &e.to_string()))?;
            }
        }
        if dumps.is_empty() {
            write_out(out, &format!("compiled {}\n", signature(name, types)));
        }
        for (d, text) in &stages {
            if dumps.contains(d) {
                write_out(out, text);
            }
        }
    }
    Ok(())
}

fn write_out(out: &mut dyn Write, text: &str) {
    let _ = out.write_all(text.as_bytes());
}

fn write_profile(path: &Path, doc: &ProfileDocument) -> CmdResult {
    std::fs::write(path, doc.to_json() + "\n").map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn script(cmd: ScriptCmd, bench: bool, out: &mut dyn Write) -> CmdResult {
    let source = read_source(&cmd.file)?;
    let config = runtime_config(&cmd.device)?;
    let mut outcome = run_script(&source, config, cmd.seed);
    outcome.profile.command = if bench { "bench" } else { "run" }.to_string();
    if bench {
        write_out(out, &(outcome.profile.to_json() + "\n"));
    } else {
        write_out(out, &outcome.output);
    }
    if let Some(path) = &cmd.profile_out {
        write_profile(path, &outcome.profile)?;
    }
    match outcome.error {
        None => Ok(()),
        Some(e) => Err(fail(e.exit_code(), &cmd.file, &e.to_string())),
    }
}

fn launch(cmd: LaunchCmd, out: &mut dyn Write) -> CmdResult {
    let source = read_source(&cmd.file)?;
    let (_, table) = load_table(&cmd.file, &source)?;
    let config = runtime_config(&cmd.device)?;
    let warp_size = config.vm.warp_size;
    let mut rt = Runtime::new(config);
    let ctx = rt.current();
    let mut rng = ChaCha8Rng::seed_from_u64(cmd.seed);
    let mut args = Vec::new();
    for spec in &cmd.args {
        let a = parse_arg(spec, &table).map_err(|e| usage(e.to_string()))?;
        args.push(match (&a.ty, a.value) {
            (Type::Array(elem), Some(ArgValue::Array(src))) => {
                let host = host_array(elem, &src, &mut rng).map_err(|e| usage(e.to_string()))?;
                KernelArg::Array(rt.upload(ctx, &host).map_err(|e| usage(e.to_string()))?)
            }
            (_, Some(ArgValue::Scalar(v))) => KernelArg::Value(v),
            _ => return Err(usage(format!("argument `{spec}` needs a value, e.g. i64(1) or f32[](zeros:8)"))),
        });
    }
    let mut outputs = Vec::new();
    for o in &cmd.out {
        let (k, path) = o.split_once(':').ok_or_else(|| usage(format!("--out `{o}` is not K:path")))?;
        let k: usize = k.parse().map_err(|_| usage(format!("--out `{o}` is not K:path")))?;
        match args.get(k.wrapping_sub(1)) {
            Some(KernelArg::Array(a)) => outputs.push((a.clone(), PathBuf::from(path))),
            _ => return Err(usage(format!("--out {k}: argument {k} is not an array"))),
        }
    }
    let lc = LaunchConfig { grid: cmd.grid, block: cmd.block, shared_bytes: cmd.shmem };
    let result = rt.cuda_launch(ctx, &table, &cmd.kernel, &args, &lc);
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let code = match &e {
                RuntimeError::Compile(_) | RuntimeError::Dispatch(_) => EXIT_COMPILE,
                RuntimeError::Trap { .. } | RuntimeError::Vm(_) => EXIT_TRAP,
                _ => EXIT_USAGE,
            };
            if let (RuntimeError::Trap { report, .. }, Some(path)) = (&e, &cmd.profile_out) {
                let doc = ProfileDocument::new("launch", warp_size, vec![OperationProfile::new("launch", &cmd.kernel, report)], rt.counters());
                write_profile(path, &doc)?;
            }
            return Err(fail(code, &cmd.file, &e.to_string()));
        }
    };
    write_out(
        out,
        &format!(
            "{}: grid=({},{},{}) block=({},{},{}) cycles={}\n",
            cmd.kernel, lc.grid[0], lc.grid[1], lc.grid[2], lc.block[0], lc.block[1], lc.block[2], report.cycles
        ),
    );
    if cmd.print {
        for (i, a) in args.iter().enumerate() {
            if let KernelArg::Array(a) = a {
                let host = rt.download(ctx, a).map_err(|e| usage(e.to_string()))?;
                let vals: Vec<String> = host.values().iter().map(|v| v.to_string()).collect();
                write_out(out, &format!("arg {}: [{}]\n", i + 1, vals.join(", ")));
            }
        }
    }
    for (a, path) in outputs {
        let host = rt.download(ctx, &a).map_err(|e| usage(e.to_string()))?;
        let file = std::fs::File::create(&path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        host.write_to(std::io::BufWriter::new(file)).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &cmd.profile_out {
        let doc = ProfileDocument::new("launch", warp_size, vec![OperationProfile::new("launch", &cmd.kernel, &report)], rt.counters());
        write_profile(path, &doc)?;
    }
    Ok(())
}

fn dump_costs(cmd: CostsCmd, out: &mut dyn Write) -> CmdResult {
    let costs = match &cmd.cost_table {
        Some(p) => load_costs(p)?,
        None => CostTable::default(),
    };
    write_out(out, &(costs.to_json() + "\n"));
    Ok(())
}

/// Run the driver with explicit streams; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write_out(out, &e.render().to_string());
                    EXIT_OK
                }
                _ => {
                    write_out(err, &e.render().to_string());
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Compile(c) => compile(c, out),
        Command::Run(c) => script(c, false, out),
        Command::Bench(c) => script(c, true, out),
        Command::Launch(c) => launch(c, out),
        Command::DumpCosts(c) => dump_costs(c, out),
    };
    let _ = out.flush();
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "{}", f.message);
            f.code
        }
    }
}

pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(parse_dim("4").unwrap(), [4, 1, 1]);
        assert_eq!(parse_dim("4,2").unwrap(), [4, 2, 1]);
        assert!(parse_dim("0").is_err());
        assert!(parse_dim("1,2,3,4").is_err());
    }

    #[test]
    fn locations() {
        assert_eq!(located(Path::new("a.ksl"), "3:4: bad"), "a.ksl:3:4: bad");
        assert_eq!(located(Path::new("a.ksl"), "no method"), "a.ksl: no method");
    }
}
