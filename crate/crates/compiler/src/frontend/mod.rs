//! Surface language: lexing, parsing, printing, method tables and the
//! reference interpreter.

pub mod ast;
pub mod builtins;
pub mod interp;
pub mod lexer;
pub mod parser;
pub mod print;
pub mod table;
pub mod types;

pub use ast::Ast;
pub use interp::{interpret_reference, RuntimeError, Value};
pub use parser::{parse, parse_expr};
pub use table::{Method, MethodId, MethodTable, TableError};
pub use types::{RecordType, Scalar, Type, TypePattern};
