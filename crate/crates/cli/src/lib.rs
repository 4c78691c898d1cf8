//! Commands of the `chkc` driver. Each returns its standard output and exit
//! status; the binary only parses arguments and prints.

pub mod checkedc;

use chkc_core::compile::{compile_program, Mutations};
use chkc_core::corec::{parse_cprogram, run_program};
use chkc_core::semantics::{eval, Config, Outcome};
use chkc_core::*;
use chkc_genprop::{run_properties, GenConfig, RunOptions, Weights};

pub use checkedc::emit_checkedc;

/// Output text and exit status of a command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Output {
    pub text: String,
    pub status: i32,
}

impl Output {
    fn ok(text: impl Into<String>) -> Output {
        Output { text: text.into(), status: 0 }
    }

    fn fail(text: impl Into<String>) -> Output {
        Output { text: text.into(), status: 1 }
    }
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

fn load(source: &str) -> Result<Program, Output> {
    parse_program(source).map_err(|e| Output::fail(format!("error: parse: {e}\n")))
}

fn load_checked(source: &str) -> Result<(Program, WordType), Output> {
    let p = load(source)?;
    match typecheck_program(&p) {
        Ok(t) => Ok((p, t)),
        Err(e) => Err(Output::fail(format!("error: type: {e}\n"))),
    }
}

/// Parses and prints the program in canonical form.
pub fn parse(source: &str) -> Output {
    match load(source) {
        Ok(p) => Output::ok(with_newline(print_program(&p))),
        Err(o) => o,
    }
}

/// Prints the type of `main`, or the failing rule.
pub fn typecheck(source: &str) -> Output {
    match load_checked(source) {
        Ok((_, t)) => Output::ok(format!("{t}\n")),
        Err(o) => o,
    }
}

/// Runs the source semantics. Values and the two checked errors (`null`,
/// `bounds`) are results; `stuck` and running out of fuel exit with 1.
pub fn eval_source(source: &str, fuel: usize, trace: bool) -> Output {
    let (p, _) = match load_checked(source) {
        Ok(x) => x,
        Err(o) => return o,
    };
    let run = eval(Config::new(p.main.clone()), &p.funs, &p.structs, fuel);
    let mut text = String::new();
    if trace {
        for line in run.trace_lines() {
            text.push_str(&line);
            text.push('\n');
        }
    }
    text.push_str(&format!("{}\n", run.outcome));
    let status = match run.outcome {
        Outcome::Value(..) | Outcome::Error(_) => 0,
        Outcome::Stuck { .. } | Outcome::OutOfFuel => 1,
    };
    Output { text, status }
}

/// Prints the compiled target program.
pub fn compile(source: &str) -> Output {
    let (p, _) = match load_checked(source) {
        Ok(x) => x,
        Err(o) => return o,
    };
    match compile_program(&p, Mutations::default()) {
        Ok(c) => Output::ok(with_newline(c.to_string())),
        Err(e) => Output::fail(format!("error: {e}\n")),
    }
}

/// Runs a target program, with the same exit convention as [`eval_source`].
pub fn run_corec(source: &str, fuel: usize) -> Output {
    let p = match parse_cprogram(source) {
        Ok(p) => p,
        Err(e) => return Output::fail(format!("error: parse: {e}\n")),
    };
    let run = run_program(&p, fuel);
    let status = match run.outcome {
        chkc_core::corec::COutcome::Value(_) | chkc_core::corec::COutcome::Error(_) => 0,
        _ => 1,
    };
    Output {
        text: format!("{}\n", run.outcome),
        status,
    }
}

/// Settings of the `fuzz` command beyond the generator's.
#[derive(Clone, Debug, Default)]
pub struct FuzzOptions {
    pub weights: Option<String>,
    pub muts: Mutations,
}

/// Runs the property harness and prints the report; status 1 on any FAIL.
pub fn fuzz(mut cfg: GenConfig, opts: FuzzOptions) -> Output {
    if let Some(text) = &opts.weights {
        match Weights::parse(text) {
            Ok(w) => cfg.weights = w,
            Err(e) => return Output::fail(format!("error: weights: {e}\n")),
        }
    }
    let run = RunOptions {
        muts: opts.muts,
        ..Default::default()
    };
    let report = run_properties(&cfg, &run);
    let status = if report.failures() > 0 { 1 } else { 0 };
    Output {
        text: report.to_string(),
        status,
    }
}

/// Prints the program in Checked C surface syntax.
pub fn emit(source: &str) -> Output {
    let p = match load(source) {
        Ok(p) => p,
        Err(o) => return o,
    };
    match emit_checkedc(&p) {
        Ok(c) => Output::ok(c),
        Err(e) => Output::fail(format!("error: {e}\n")),
    }
}
