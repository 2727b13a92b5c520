//! Sequential reference execution of a kernel: every thread of the launch runs
//! to completion in the interpreter, one after another.

use kforge_compiler::frontend::interp::{Interpreter, TableRef, ThreadContext};
use kforge_compiler::frontend::{MethodTable, RuntimeError, Value};
use kforge_compiler::Span;
use kforge_vm::LaunchConfig;

/// Run `name(args...)` once per thread of `launch`, blocks in row-major order
/// and threads of a block in x-fastest order. Array arguments are shared, so
/// their final contents are the result.
///
/// Only meaningful for kernels without barriers or shuffles.
pub fn run_per_thread(table: &MethodTable, name: &str, args: &[Value], launch: &LaunchConfig, warp_size: u32) -> Result<(), RuntimeError> {
    let dims = |d: [u32; 3]| d.map(i64::from);
    let (grid, block) = (dims(launch.grid), dims(launch.block));
    let mut interp = Interpreter::new(TableRef::Borrowed(table));
    for bz in 1..=grid[2] {
        for by in 1..=grid[1] {
            for bx in 1..=grid[0] {
                for tz in 1..=block[2] {
                    for ty in 1..=block[1] {
                        for tx in 1..=block[0] {
                            interp.set_thread(Some(ThreadContext {
                                thread_idx: [tx, ty, tz],
                                block_idx: [bx, by, bz],
                                block_dim: block,
                                grid_dim: grid,
                                warp_size: i64::from(warp_size),
                            }));
                            interp.call(name, args, Span::default())?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
