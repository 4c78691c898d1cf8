//! Checked core calculus: syntax, a dependent type checker with bounds
//! widening, an annotated small-step interpreter, and a check-inserting
//! compiler to an erased target language with its own interpreter.

pub mod ast;
pub mod compile;
pub mod corec;
pub mod sexp;
pub mod semantics;
pub mod syntax;
pub mod typing;

pub use ast::*;
pub use sexp::ParseError;
pub use syntax::{parse_expr, parse_program, parse_word, print_program};
pub use typing::{type_expr, typecheck_program, TypeError};
