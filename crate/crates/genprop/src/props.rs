//! Executable versions of the metatheory, checked on one program at a time:
//! progress, preservation, blame, simulation of the compiled code, and
//! agreement of the checker with the generator.

use chkc_core::compile::{compile_config, Mutations};
use chkc_core::corec::{exec_corec, COutcome, CRun};
use chkc_core::semantics::{heap_consistent, step, Config, ErrorKind, Step};
use chkc_core::typing::{subtype, type_expr, Ctx, PredEnv, Snapshot};
use chkc_core::*;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Prop {
    /// Generated well-typed programs pass the checker.
    Typing,
    /// Relaxed programs are rejected by the checker.
    Rejection,
    /// Checked programs never get stuck.
    Progress,
    /// Each step keeps a subtype and a consistent heap.
    Preservation,
    /// A stuck run involved unchecked code.
    Blame,
    /// Adjacent configurations compile to joinable target runs.
    Simulation,
    /// A source error shows up as the same error in the compiled run.
    ErrorKind,
    /// Compiled code is in A-normal form.
    Anf,
}

impl Prop {
    pub const ALL: [Prop; 8] = [
        Prop::Typing,
        Prop::Rejection,
        Prop::Progress,
        Prop::Preservation,
        Prop::Blame,
        Prop::Simulation,
        Prop::ErrorKind,
        Prop::Anf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Prop::Typing => "typing",
            Prop::Rejection => "rejection",
            Prop::Progress => "progress",
            Prop::Preservation => "preservation",
            Prop::Blame => "blame",
            Prop::Simulation => "simulation",
            Prop::ErrorKind => "error-kind",
            Prop::Anf => "anf",
        }
    }
}

impl fmt::Display for Prop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail { step: Option<usize>, detail: String },
    Inconclusive,
}

impl Verdict {
    fn fail(step: Option<usize>, detail: impl Into<String>) -> Verdict {
        Verdict::Fail {
            step,
            detail: detail.into(),
        }
    }

    pub fn is_fail(&self) -> bool {
        matches!(self, Verdict::Fail { .. })
    }
}

/// Step budget of a source run, and of each target run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub source: usize,
    pub target: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            source: 10_000,
            target: 1_000_000,
        }
    }
}

/// Final state of a compiled run, with names introduced by the compiler
/// dropped from the stack.
#[derive(Clone, Debug)]
struct TargetEnd {
    run: CRun,
}

fn run_compiled(cfg: &Config, p: &Program, compiled_funs: &chkc_core::corec::CFunEnv, muts: Mutations, fuel: usize) -> Result<(TargetEnd, bool), String> {
    let c = compile_config(cfg, &p.funs, &p.structs, muts).map_err(|e| e.to_string())?;
    let anf = c.expr.is_anf();
    Ok((TargetEnd { run: exec_corec(c, compiled_funs, fuel) }, anf))
}

/// Joinability of the target runs of two adjacent source configurations.
fn joinable(a: &TargetEnd, b: &TargetEnd) -> Result<bool, String> {
    let (ra, rb) = (&a.run, &b.run);
    match (&ra.outcome, &rb.outcome) {
        (COutcome::OutOfFuel, _) | (_, COutcome::OutOfFuel) => return Ok(false),
        (COutcome::Stuck(s), _) | (_, COutcome::Stuck(s)) => return Err(format!("compiled run stuck: {s}")),
        (x, y) if x != y => return Err(format!("compiled runs end in {x} and {y}")),
        _ => {}
    }
    if ra.config.heap != rb.config.heap {
        return Err("compiled runs end with different heaps".into());
    }
    if matches!(ra.outcome, COutcome::Value(_)) {
        for (x, v) in &ra.config.stack.vars {
            if x.contains('$') {
                continue;
            }
            if let Some(w) = rb.config.stack.vars.get(x) {
                if v != w {
                    return Err(format!("compiled runs disagree on `{x}`: {v} vs {w}"));
                }
            }
        }
    }
    Ok(true)
}

fn retype(cfg: &Config, p: &Program) -> Result<WordType, TypeError> {
    let ctx = Ctx {
        funs: &p.funs,
        structs: &p.structs,
        heap: &cfg.heap,
    };
    type_expr(&ctx, &cfg.stack.type_env(), &PredEnv::new(), Mode::Checked, &cfg.expr, &cfg.stack.snapshot())
}

/// Literal probes for heap consistency: stack bindings and constants of the
/// expression.
fn probes(cfg: &Config) -> Vec<(i64, WordType)> {
    let mut out: Vec<(i64, WordType)> = cfg.stack.iter().map(|(_, (n, t))| (*n, t.clone())).collect();
    cfg.expr.visit(&mut |e| {
        if let Expr::Lit(n, t) = e {
            if !t.is_int() {
                out.push((*n, t.clone()));
            }
        }
    });
    out
}

#[derive(Clone, Debug, Default)]
pub struct Checks {
    pub verdicts: Vec<(Prop, Verdict)>,
    /// Final source outcome in printed form, when the run ended.
    pub outcome: Option<String>,
}

impl Checks {
    fn push(&mut self, p: Prop, v: Verdict) {
        self.verdicts.push((p, v));
    }

    pub fn get(&self, p: Prop) -> Option<&Verdict> {
        self.verdicts.iter().find(|(q, _)| *q == p).map(|(_, v)| v)
    }
}

/// Runs every applicable property on a well-typed (or blame-injected)
/// program.
pub fn check_program(p: &Program, injected: bool, muts: Mutations, budget: Budget) -> Checks {
    let mut out = Checks::default();
    let ty0 = match typecheck_program(p) {
        Ok(t) => {
            out.push(Prop::Typing, Verdict::Pass);
            t
        }
        Err(e) => {
            out.push(Prop::Typing, Verdict::fail(None, e.to_string()));
            return out;
        }
    };
    if injected {
        blame_only(p, budget, &mut out);
        return out;
    }

    let compiled_funs = match chkc_core::compile::compile_fun(&p.funs, &p.structs, muts) {
        Ok(f) => f,
        Err(e) => {
            out.push(Prop::Simulation, Verdict::fail(None, e.to_string()));
            return out;
        }
    };
    let structs = &p.structs;
    let mut cfg = Config::new(p.main.clone());
    let mut ty_prev = ty0;
    let mut preservation = Verdict::Pass;
    let mut simulation = Verdict::Pass;
    let mut anf = compiled_funs.values().all(|f| f.body.is_anf());
    let first = run_compiled(&cfg, p, &compiled_funs, muts, budget.target);
    let start = first.as_ref().ok().map(|(t, _)| t.run.outcome.clone());
    let mut prev = match first {
        Ok((t, a)) => {
            anf &= a;
            Some(t)
        }
        Err(e) => {
            simulation = Verdict::fail(Some(0), e);
            None
        }
    };
    let mut progress = Verdict::Inconclusive;
    let mut saw_unchecked = false;
    let mut source_error = None;

    for k in 0..budget.source {
        let before = (cfg.heap.clone(), probes(&cfg));
        match step(&mut cfg, &p.funs, structs) {
            Step::Value => {
                progress = Verdict::Pass;
                out.outcome = Some(match &cfg.expr {
                    Expr::Lit(n, _) => format!("value {n}"),
                    _ => "value".into(),
                });
                break;
            }
            Step::Stepped { mode, .. } => {
                saw_unchecked |= mode == Mode::Unchecked;
                if !preservation.is_fail() {
                    preservation = match retype(&cfg, p) {
                        Err(e) => Verdict::fail(Some(k), format!("step result does not type-check: {e}")),
                        Ok(t) => {
                            let close = |t: &WordType| cfg.stack.close_word(t).unwrap_or_else(|| t.clone());
                            let (now, was) = (close(&t), close(&ty_prev));
                            let heap_ok = heap_consistent(&before.0, &cfg.heap, before.1.iter().map(|(n, t)| (*n, t)), structs);
                            ty_prev = t;
                            if !subtype(&now, &was, &PredEnv::new(), &Snapshot::new(), structs) {
                                Verdict::fail(Some(k), format!("type {now} is not a subtype of {was}"))
                            } else if !heap_ok {
                                Verdict::fail(Some(k), "heap is not consistent with the previous heap")
                            } else {
                                Verdict::Pass
                            }
                        }
                    };
                }
                if !simulation.is_fail() {
                    match run_compiled(&cfg, p, &compiled_funs, muts, budget.target) {
                        Err(e) => simulation = Verdict::fail(Some(k + 1), e),
                        Ok((next, a)) => {
                            anf &= a;
                            if let Some(prev) = &prev {
                                match joinable(prev, &next) {
                                    Err(e) => simulation = Verdict::fail(Some(k), e),
                                    Ok(false) => simulation = Verdict::Inconclusive,
                                    Ok(true) => {}
                                }
                            }
                            prev = Some(next);
                        }
                    }
                }
            }
            Step::Error { mode, kind, .. } => {
                saw_unchecked |= mode == Mode::Unchecked;
                progress = Verdict::Pass;
                source_error = Some(kind);
                out.outcome = Some(kind.to_string());
                if !simulation.is_fail() {
                    if let Some(prev) = &prev {
                        if prev.run.outcome != COutcome::Error(kind) {
                            simulation = Verdict::fail(
                                Some(k),
                                format!("source step raises {kind}, compiled run ends in {}", prev.run.outcome),
                            );
                        }
                    }
                }
                break;
            }
            Step::Stuck { mode, reason, .. } => {
                saw_unchecked |= mode == Mode::Unchecked;
                progress = Verdict::fail(Some(k), format!("stuck: {reason}"));
                out.outcome = Some("stuck".into());
                break;
            }
        }
    }
    if progress == Verdict::Inconclusive && simulation == Verdict::Pass {
        simulation = Verdict::Inconclusive;
    }
    let blame = match &progress {
        Verdict::Fail { step, .. } if !saw_unchecked => Verdict::fail(*step, "stuck without unchecked code"),
        _ => Verdict::Pass,
    };
    out.push(Prop::Progress, progress);
    out.push(Prop::Preservation, preservation);
    out.push(Prop::Blame, blame);
    out.push(Prop::Simulation, simulation);
    if let Some(kind) = source_error {
        out.push(Prop::ErrorKind, error_kind(kind, start.as_ref()));
    }
    out.push(Prop::Anf, if anf { Verdict::Pass } else { Verdict::fail(None, "compiled code is not in A-normal form") });
    out
}

fn error_kind(kind: ErrorKind, compiled: Option<&COutcome>) -> Verdict {
    match compiled {
        Some(COutcome::Error(k)) if *k == kind => Verdict::Pass,
        Some(COutcome::OutOfFuel) => Verdict::Inconclusive,
        Some(o) => Verdict::fail(None, format!("source ends in {kind}, compiled run in {o}")),
        None => Verdict::fail(None, "program does not compile"),
    }
}

fn blame_only(p: &Program, budget: Budget, out: &mut Checks) {
    let mut cfg = Config::new(p.main.clone());
    let mut saw_unchecked = false;
    for k in 0..budget.source {
        match step(&mut cfg, &p.funs, &p.structs) {
            Step::Value => {
                out.outcome = Some("value".into());
                break;
            }
            Step::Stepped { mode, .. } => saw_unchecked |= mode == Mode::Unchecked,
            Step::Error { kind, .. } => {
                out.outcome = Some(kind.to_string());
                break;
            }
            Step::Stuck { mode, reason, .. } => {
                out.outcome = Some("stuck".into());
                let v = if saw_unchecked || mode == Mode::Unchecked {
                    Verdict::Pass
                } else {
                    Verdict::fail(Some(k), format!("stuck in checked code: {reason}"))
                };
                out.push(Prop::Blame, v);
                return;
            }
        }
    }
    out.push(Prop::Blame, Verdict::Pass);
}

/// The checker's verdict on a program generated with one dropped premise.
/// Programs from the string off-by-one are legitimately typable; their
/// acceptance is reported as a flag instead.
pub fn check_relaxed(p: &Program, relaxed: Option<&str>) -> (Verdict, Option<&'static str>) {
    let accepted = typecheck_program(p).is_ok();
    match relaxed {
        Some("G-ASTR") => (Verdict::Pass, Some(if accepted { "astr-accepted" } else { "astr-rejected" })),
        Some(rule) if accepted => (Verdict::fail(None, format!("relaxed {rule} premise was accepted")), None),
        Some(_) => (Verdict::Pass, None),
        None => (Verdict::fail(None, "no relaxation site"), None),
    }
}
