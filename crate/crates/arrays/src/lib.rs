//! Array operations over device arrays. Each operation synthesizes a KSL
//! kernel, defines it into the caller's method table and launches it through
//! the runtime, so generated kernels share the normal pipeline and cache.

mod broadcast;
mod reduce;

use kforge_compiler::frontend::{TableError, Type};
use kforge_compiler::hir::InferError;
use kforge_runtime::RuntimeError;
use thiserror::Error;

pub use broadcast::{broadcast_apply, broadcast_expr, plan_broadcast, BroadcastPlan, BroadcastRun};
pub use reduce::{reduce, reduce_profiled, reduce_source, ReducePlan, ReduceRun, REDUCE_BLOCK};

/// Block size of generated kernels.
pub const BLOCK_SIZE: u32 = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArrayError {
    #[error("input {index} has {got} elements, expected {expected}")]
    LengthMismatch { index: usize, expected: u64, got: u64 },
    #[error("broadcast needs at least one input")]
    NoInputs,
    #[error("`{name}` is not a valid element function name")]
    BadName { name: String },
    #[error("element function `{name}` returns {ty}, which cannot be stored in a device array")]
    ElementType { name: String, ty: String },
    #[error("neutral element has type {neutral}, array elements are {elem}")]
    NeutralType { neutral: Type, elem: Type },
    #[error("warp size {0} must be a power of two dividing the block size")]
    WarpSize(u32),
    #[error("generated source failed to load: {0}")]
    Generated(String),
    #[error(transparent)]
    Inference(#[from] InferError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

fn is_identifier(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Fragment used to build generated method names.
fn name_word(f: &str) -> Option<String> {
    let w = match f {
        "+" => "add",
        "-" => "sub",
        "*" => "mul",
        "/" => "div",
        "%" => "rem",
        "^" => "pow",
        f if is_identifier(f) => f,
        _ => return None,
    };
    Some(w.to_string())
}

/// Source text applying `f` to `args`, infix for operators.
fn apply(f: &str, args: &[String]) -> String {
    if is_identifier(f) {
        format!("{f}({})", args.join(", "))
    } else if args.len() == 1 {
        format!("({f}{})", args[0])
    } else {
        format!("({})", args.join(&format!(" {f} ")))
    }
}
