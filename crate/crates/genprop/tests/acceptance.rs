//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use chkc_core::compile::{compile_program, compile_program_shadows, Mutations};
use chkc_core::corec::{run_program, step_corec, CConfig, COutcome, CStep};
use chkc_core::semantics::{eval, step, Config, Outcome, Step, DEFAULT_FUEL};
use chkc_core::*;
use chkc_genprop::*;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn load(name: &str) -> Program {
    let path = format!("{}/../../programs/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_program(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn fails(r: &PropertyReport, props: &[Prop]) -> u64 {
    props.iter().map(|p| r.count(*p).fail).sum()
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(cfg: &GenConfig, muts: Mutations) -> (PropertyReport, Duration) {
    let t = Instant::now();
    let opts = RunOptions {
        muts,
        shrink: 1,
        ..Default::default()
    };
    let r = run_properties(cfg, &opts);
    (r, t.elapsed())
}

fn first_cex(r: &PropertyReport) -> String {
    r.counterexamples
        .first()
        .map(|c| format!("; first: seed={} prop={} {}", c.seed, c.prop, c.detail))
        .unwrap_or_default()
}

/// Simulation at scale: full-size run plus the reduced CI gate.
fn simulation(full: &PropertyReport, full_time: Duration) -> Verdict {
    let gate_cfg = GenConfig {
        count: 2_000,
        depth: 8,
        ..Default::default()
    };
    let (gate, gate_time) = run(&gate_cfg, Mutations::default());
    let core = [Prop::Simulation, Prop::Progress, Prop::Preservation];
    let detail = format!(
        "20000 terms depth 9: {} sim/progress/preservation FAILs, {} FAILs overall, {} inconclusive, {:.1}s; \
         gate 2000 depth 8: {} FAILs, {:.1}s{}",
        fails(full, &core),
        full.failures(),
        full.count(Prop::Simulation).inconclusive,
        full_time.as_secs_f64(),
        gate.failures(),
        gate_time.as_secs_f64(),
        first_cex(full),
    );
    check(
        full.terms == 20_000
            && full.failures() == 0
            && full.count(Prop::Simulation).pass == 20_000
            && gate.failures() == 0
            && gate_time < Duration::from_secs(120),
        detail,
    )
}

fn blame() -> Verdict {
    let cfg = GenConfig {
        count: 5_000,
        depth: 8,
        blame_rate: 0.1,
        seed: 2,
        ..Default::default()
    };
    let (r, _) = run(&cfg, Mutations::default());
    let injected = r.flags.get("unchecked-injected").copied().unwrap_or(0);
    let b = r.count(Prop::Blame);
    check(
        r.terms == 5_000 && b.fail == 0 && b.pass == 5_000 && injected > 0,
        format!("5000 terms, {injected} with injected unchecked code, {} blame violations{}", b.fail, first_cex(&r)),
    )
}

/// Value of the most recent shadow upper bound of `x` while it is bound.
fn compiled_shadow_hi(p: &Program, x: &str) -> Option<i64> {
    let (c, log) = compile_program_shadows(p, Mutations::default()).ok()?;
    let h = log.iter().rev().find(|(v, _, _)| &**v == x)?.2.clone();
    let mut cfg = CConfig {
        stack: Default::default(),
        heap: Default::default(),
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
    hi
}

/// Upper bound of `x`'s annotation in the last source configuration that
/// binds it.
fn source_hi(p: &Program, x: &str) -> Option<i64> {
    let mut cfg = Config::new(p.main.clone());
    let mut hi = None;
    for _ in 0..DEFAULT_FUEL {
        if let Some((_, t)) = cfg.stack.get(x) {
            hi = t.as_array_ptr().and_then(|(_, b, _, _)| b.hi.as_const());
        }
        if !matches!(step(&mut cfg, &p.funs, &p.structs), Step::Stepped { .. }) {
            break;
        }
    }
    hi
}

fn source_value(p: &Program) -> Option<i64> {
    match eval(Config::new(p.main.clone()), &p.funs, &p.structs, DEFAULT_FUEL).outcome {
        Outcome::Value(n, _) => Some(n),
        _ => None,
    }
}

fn compiled_value(p: &Program) -> Option<i64> {
    match run_program(&compile_program(p, Mutations::default()).ok()?, DEFAULT_FUEL).outcome {
        COutcome::Value(n) => Some(n),
        _ => None,
    }
}

fn golden() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["strcat.chkc", "strlen_widen.chkc", "dependent_fn.chkc"] {
        let typed = typecheck_program(&load(name)).is_ok();
        ok &= typed;
        notes.push(format!("{name} typechecks={typed}"));
    }
    // Hand traces: strcat of "ab" and "cd" has length 4; the strlen example
    // reads 'i' (105) after learning length 2; the dependent function reads
    // p0[1] = 9 because p0[0] = 7 is nonzero.
    for (name, value, var, hi) in [
        ("strcat.chkc", 4, None, None),
        ("strlen_widen.chkc", 105, Some("p"), Some(2)),
        ("dependent_fn.chkc", 9, Some("p"), Some(5)),
    ] {
        let p = load(name);
        let (sv, cv) = (source_value(&p), compiled_value(&p));
        let mut line = format!("{name} source={sv:?} compiled={cv:?}");
        ok &= sv == Some(value) && cv == Some(value);
        if let Some(x) = var {
            let (sh, ch) = (source_hi(&p, x), compiled_shadow_hi(&p, x));
            line += &format!(" hi source={sh:?} shadow={ch:?}");
            ok &= sh == hi && ch == hi;
        }
        notes.push(line);
    }
    check(ok, notes.join("; "))
}

fn shadow_persistence() -> Verdict {
    let p = load("shadow_persist.chkc");
    let typed = typecheck_program(&p).is_ok();
    let compiled = compile_program(&p, Mutations::default()).map(|c| run_program(&c, DEFAULT_FUEL).outcome);
    let hi = compiled_shadow_hi(&p, "p");
    let detail = format!("typechecks={typed} compiled outcome={compiled:?} shadow hi={hi:?}");
    check(typed && compiled == Ok(COutcome::Value(105)) && hi == Some(2), detail)
}

fn error_kind(full: &PropertyReport) -> Verdict {
    let e = full.count(Prop::ErrorKind);
    let ending_in_error: u64 = full.outcomes.iter().filter(|(o, _)| *o == "null" || *o == "bounds").map(|(_, n)| n).sum();
    check(
        e.pass >= 2_000 && e.fail == 0 && e.inconclusive == 0 && e.pass == ending_in_error,
        format!("{ending_in_error} error-ending terms, {} same kind, {} different", e.pass, e.fail),
    )
}

fn mutation_sensitivity() -> Verdict {
    let cfg = GenConfig {
        count: 1_000,
        depth: 8,
        ..Default::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, muts) in [
        ("widen_deref", Mutations { widen_deref: false, ..Default::default() }),
        ("check_null", Mutations { check_null: false, ..Default::default() }),
        ("strict_writes", Mutations { strict_writes: false, ..Default::default() }),
    ] {
        let (r, _) = run(&cfg, muts);
        let n = fails(&r, &[Prop::Simulation, Prop::Progress]);
        ok &= n >= 1;
        notes.push(format!("{name} off: {n} FAILs"));
    }
    check(ok, notes.join(", "))
}

fn typing_oracle() -> Verdict {
    let base = GenConfig {
        count: 5_000,
        depth: 9,
        seed: 4,
        ..Default::default()
    };
    let mut well = 0;
    for i in 0..base.count {
        well += typecheck_program(&generate(&base, term_seed(base.seed, i)).program).is_ok() as usize;
    }
    let mut notes = vec![format!("well-typed accepted {well}/5000")];
    let mut ok = well == 5_000;
    for r in [Relaxation::Mode, Relaxation::Cast] {
        let cfg = GenConfig { relax: Some(r), ..base.clone() };
        let mut rejected = 0;
        for i in 0..cfg.count {
            let g = generate(&cfg, term_seed(cfg.seed, i));
            rejected += (g.relaxed.is_some() && typecheck_program(&g.program).is_err()) as usize;
        }
        ok &= rejected == 5_000;
        notes.push(format!("{r} relaxation rejected {rejected}/5000"));
    }
    check(ok, notes.join(", "))
}

fn main() {
    let full_cfg = GenConfig::default();
    let (full, full_time) = run(&full_cfg, Mutations::default());
    let results: Vec<(&str, Verdict)> = vec![
        ("simulation at scale", simulation(&full, full_time)),
        ("blame", blame()),
        ("golden examples", golden()),
        ("shadow persistence", shadow_persistence()),
        ("error-kind fidelity", error_kind(&full)),
        ("mutation sensitivity", mutation_sensitivity()),
        ("typing oracle agreement", typing_oracle()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        match v {
            Ok(d) => println!("CRITERION {} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("CRITERION {} FAIL {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
