//! End-to-end checks on the example programs under `programs/`.

use chkc_core::compile::{compile_program, compile_program_shadows, Mutations};
use chkc_core::corec::{run_program, step_corec, CConfig, CHeap, COutcome, CStack, CStep};
use chkc_core::semantics::{eval, step, Config, ErrorKind, Outcome, Step, DEFAULT_FUEL};
use chkc_core::*;

fn load(name: &str) -> Program {
    let path = format!("{}/../../programs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn source_outcome(p: &Program) -> Outcome {
    eval(Config::new(p.main.clone()), &p.funs, &p.structs, DEFAULT_FUEL).outcome
}

/// Upper bound of `x`'s annotation in the last configuration that binds it.
fn last_source_hi(p: &Program, x: &str) -> Option<i64> {
    let mut cfg = Config::new(p.main.clone());
    let mut hi = None;
    for _ in 0..DEFAULT_FUEL {
        if let Some((_, t)) = cfg.stack.get(x) {
            hi = t.as_array_ptr().and_then(|(_, b, _, _)| b.hi.as_const());
        }
        match step(&mut cfg, &p.funs, &p.structs) {
            Step::Stepped { .. } => {}
            _ => break,
        }
    }
    hi
}

/// Last value held by the most recent shadow upper bound created for `x`.
fn compiled_hi(p: &Program, x: &str) -> (COutcome, Option<i64>) {
    let (c, log) = compile_program_shadows(p, Mutations::default()).unwrap();
    let h = log.iter().rev().find(|(v, _, _)| &**v == x).map(|(_, _, h)| h.clone()).unwrap();
    let mut cfg = CConfig {
        stack: CStack::default(),
        heap: CHeap::default(),
        expr: c.main.clone(),
    };
    let mut hi = None;
    for _ in 0..DEFAULT_FUEL {
        if let Some(v) = cfg.stack.vars.get(&h) {
            hi = Some(*v);
        }
        if step_corec(&mut cfg, &c.funs) != CStep::Stepped {
            break;
        }
    }
    (run_program(&c, DEFAULT_FUEL).outcome, hi)
}

#[test]
fn strcat_typechecks_and_concatenates() {
    let p = load("strcat.chkc");
    assert_eq!(typecheck_program(&p).unwrap(), WordType::Int);
    // "ab" ++ "cd" has length 4.
    assert_eq!(source_outcome(&p), Outcome::Value(4, WordType::Int));
    let c = compile_program(&p, Mutations::default()).unwrap();
    assert_eq!(run_program(&c, DEFAULT_FUEL).outcome, COutcome::Value(4));
}

#[test]
fn strcat_without_room_fails_the_length_guard() {
    let p = load("strcat.chkc");
    let text = print_program(&p).replace("(call safe_strcat (lit 5 int) a b)", "(call safe_strcat (lit 4 int) a b)");
    let q = parse_program(&text).unwrap();
    typecheck_program(&q).unwrap();
    assert_eq!(source_outcome(&q), Outcome::Error(ErrorKind::Bounds));
    let c = compile_program(&q, Mutations::default()).unwrap();
    assert_eq!(run_program(&c, DEFAULT_FUEL).outcome, COutcome::Error(ErrorKind::Bounds));
}

#[test]
fn null_deref_is_a_null_error() {
    let p = load("null_deref.chkc");
    assert_eq!(typecheck_program(&p).unwrap(), WordType::Int);
    assert_eq!(source_outcome(&p), Outcome::Error(ErrorKind::Null));
    let c = compile_program(&p, Mutations::default()).unwrap();
    assert_eq!(run_program(&c, DEFAULT_FUEL).outcome, COutcome::Error(ErrorKind::Null));
}

#[test]
fn strlen_widening_example() {
    let p = load("strlen_widen.chkc");
    assert_eq!(typecheck_program(&p).unwrap(), WordType::Int);
    // 'i' is 105; strlen of "hi" is 2.
    assert_eq!(source_outcome(&p), Outcome::Value(105, WordType::Int));
    assert_eq!(last_source_hi(&p, "p"), Some(2));
    assert_eq!(compiled_hi(&p, "p"), (COutcome::Value(105), Some(2)));
}

#[test]
fn dependent_function_example() {
    let p = load("dependent_fn.chkc");
    assert_eq!(typecheck_program(&p).unwrap(), WordType::Int);
    // p0[0] = 7 is nonzero, so the call reads p0[1] = 9.
    assert_eq!(source_outcome(&p), Outcome::Value(9, WordType::Int));
    let c = compile_program(&p, Mutations::default()).unwrap();
    let body = c.funs["deref_array"].body.to_string();
    assert!(body.starts_with("(let $0 0 (let $1 n"), "{body}");
    assert_eq!(run_program(&c, DEFAULT_FUEL).outcome, COutcome::Value(9));
    // The bound is n = 5 and never widens.
    assert_eq!(last_source_hi(&p, "p"), Some(5));
    assert_eq!(compiled_hi(&p, "p"), (COutcome::Value(9), Some(5)));
}

#[test]
fn widened_bound_persists_after_scope() {
    let p = load("shadow_persist.chkc");
    assert_eq!(typecheck_program(&p).unwrap(), WordType::Int);
    assert_eq!(source_outcome(&p), Outcome::Value(105, WordType::Int));
    assert_eq!(compiled_hi(&p, "p"), (COutcome::Value(105), Some(2)));
}

#[test]
fn compiled_examples_are_anf() {
    for name in ["strcat.chkc", "null_deref.chkc", "strlen_widen.chkc", "dependent_fn.chkc", "shadow_persist.chkc"] {
        let c = compile_program(&load(name), Mutations::default()).unwrap();
        assert!(c.main.is_anf(), "{name}");
        assert!(c.funs.values().all(|f| f.body.is_anf()), "{name}");
    }
}

#[test]
fn examples_round_trip_through_the_printer() {
    for name in ["strcat.chkc", "null_deref.chkc", "strlen_widen.chkc", "dependent_fn.chkc", "shadow_persist.chkc"] {
        let p = load(name);
        assert_eq!(parse_program(&print_program(&p)).unwrap(), p, "{name}");
    }
}
