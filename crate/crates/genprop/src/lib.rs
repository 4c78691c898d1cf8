//! Random generation of typed programs and the property harness that runs
//! them through the checker, the interpreter and the compiler.

pub mod generator;
pub mod props;
pub mod report;
pub mod shrink;

pub use generator::{generate, term_seed, GenConfig, Generated, Relaxation, Weights};
pub use props::{check_program, Budget, Prop, Verdict};
pub use report::{check_seed, run_properties, PropertyReport, RunOptions};
pub use shrink::shrink;
