//! Compiler for a small dynamically typed kernel language: parser, type
//! inference over a high-level IR, and lowering to a typed SSA IR.

pub mod frontend;
pub mod hir;
pub mod lir;
pub mod span;

pub use span::{Diagnostic, Span};
