//! Compiling any intermediate configuration of a run and executing the result
//! must end where the source run ends.

use chkc_core::compile::{compile_config, compile_fun, Mutations};
use chkc_core::corec::{exec_corec, COutcome};
use chkc_core::semantics::{step, Config, Outcome, Step, DEFAULT_FUEL};
use chkc_core::*;

fn load(name: &str) -> Program {
    let path = format!("{}/../../programs/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn same_end(source: &Outcome, target: &COutcome) -> bool {
    match (source, target) {
        (Outcome::Value(n, _), COutcome::Value(m)) => n == m,
        (Outcome::Error(a), COutcome::Error(b)) => a == b,
        _ => false,
    }
}

/// Compiles the configuration before every source step and checks that the
/// compiled run reaches the source's final outcome.
fn every_step_agrees(p: &Program) {
    typecheck_program(p).unwrap();
    let funs = compile_fun(&p.funs, &p.structs, Mutations::default()).unwrap();
    let mut cfg = Config::new(p.main.clone());
    let mut configs = Vec::new();
    let outcome = loop {
        configs.push(cfg.clone());
        match step(&mut cfg, &p.funs, &p.structs) {
            Step::Stepped { .. } => {}
            Step::Value => match &cfg.expr {
                Expr::Lit(n, t) => break Outcome::Value(*n, t.clone()),
                e => panic!("value step on {e}"),
            },
            Step::Error { kind, .. } => break Outcome::Error(kind),
            s => panic!("unexpected {s:?}"),
        }
        assert!(configs.len() < DEFAULT_FUEL, "source run did not finish");
    };
    for (k, c) in configs.iter().enumerate() {
        let compiled = compile_config(c, &p.funs, &p.structs, Mutations::default())
            .unwrap_or_else(|e| panic!("step {k}: {e}"));
        let run = exec_corec(compiled, &funs, 1_000_000);
        assert!(same_end(&outcome, &run.outcome), "step {k} of {}: source {outcome}, compiled {}", c.expr, run.outcome);
    }
}

#[test]
fn example_programs_agree_at_every_step() {
    for name in ["strcat.chkc", "null_deref.chkc", "strlen_widen.chkc", "dependent_fn.chkc", "shadow_persist.chkc"] {
        every_step_agrees(&load(name));
    }
}

// A nested call rebinds `p`; the outer frame's shadow bounds must survive
// both returns.
#[test]
fn nested_frames_with_the_same_parameter_names() {
    let p = parse_program(
        "(defs
           (fun f0 ((n int) (p (ptr c (ntarray 0 (+ n 0) int)))) int (lit 0 int))
           (fun f1 ((n int) (p (ptr c (ntarray 0 (+ n 0) int)))) int
             (assign (let v0 (call f0 (lit 0 int) (malloc (ntarray 0 5 int))) (malloc (array 0 4 int)))
                     (deref p)))
           (main (call f1 (lit 0 int) (malloc (ntarray 0 4 int)))))",
    )
    .unwrap();
    every_step_agrees(&p);
}

#[test]
fn widening_inside_a_nested_frame() {
    let p = parse_program(
        "(defs
           (fun g ((n int) (p (ptr c (ntarray 0 (+ n 0) int)))) int
             (if (deref p) (deref (+ p (lit 1 int))) (lit 0 int)))
           (fun f ((n int) (p (ptr c (ntarray 0 (+ n 0) int)))) int
             (+ (call g n p) (let x (strlen p) (lit 0 int))))
           (main (let s (malloc (ntarray 0 2 int))
                   (let a (assign s (lit 5 int))
                     (let b (assign (+ s (lit 1 int)) (lit 6 int))
                       (call f (lit 0 int) (cast (ptr c (ntarray 0 0 int)) s)))))))",
    )
    .unwrap();
    every_step_agrees(&p);
}
