use chkc_core::semantics::{eval, Config, DEFAULT_FUEL};
use chkc_core::*;
use chkc_genprop::generator::{RULES, TERMINALS};
use chkc_genprop::*;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn cfg(depth: u32) -> GenConfig {
    GenConfig {
        depth,
        ..Default::default()
    }
}

fn has_unchecked(e: &Expr) -> bool {
    let mut found = false;
    e.visit(&mut |e| found |= matches!(e, Expr::Unchecked(_)));
    found
}

fn depth_of(e: &Expr) -> usize {
    1 + e.children().into_iter().map(depth_of).max().unwrap_or(0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn generated_programs_type_check(seed in any::<u64>(), depth in 1u32..=9) {
        let g = generate(&cfg(depth), seed);
        prop_assert!(typecheck_program(&g.program).is_ok(), "{}", g.program);
        prop_assert!(!has_unchecked(&g.program.main));
        prop_assert!(g.program.funs.values().all(|f| !has_unchecked(&f.body)));
        prop_assert!(g.relaxed.is_none() && !g.injected);
    }

    #[test]
    fn generation_is_replayable(seed in any::<u64>(), depth in 1u32..=9) {
        let (a, b) = (generate(&cfg(depth), seed), generate(&cfg(depth), seed));
        prop_assert_eq!(a.program, b.program);
        prop_assert_eq!(a.fired, b.fired);
    }

    #[test]
    fn injected_programs_still_type_check(seed in any::<u64>()) {
        let c = GenConfig { depth: 6, blame_rate: 1.0, ..Default::default() };
        let g = generate(&c, seed);
        prop_assert!(typecheck_program(&g.program).is_ok());
        prop_assert_eq!(g.injected, has_unchecked(&g.program.main));
    }
}

#[test]
fn depth_one_yields_leaves() {
    for seed in 0..200 {
        let g = generate(&cfg(1), seed);
        let main = &g.program.main;
        assert!(matches!(main, Expr::Lit(..) | Expr::Malloc(_)), "{main}");
    }
}

// Structural depth can exceed the rule depth only through the fixed-shape
// admissible forms (string construction, the read after `if (*x)`, and casts
// added to join branches), so the bound below is generous but finite.
#[test]
fn depth_bounds_term_height() {
    for seed in 0..300 {
        let g = generate(&cfg(4), seed);
        assert!(depth_of(&g.program.main) <= 4 * 4, "{}", g.program.main);
    }
}

#[test]
fn term_seeds_differ() {
    let seeds: std::collections::BTreeSet<u64> = (0..10_000).map(|i| term_seed(42, i)).collect();
    assert_eq!(seeds.len(), 10_000);
    assert_ne!(term_seed(1, 0), term_seed(2, 0));
}

#[test]
fn weights_parse_overrides_and_comments() {
    let w = Weights::parse("# boost strings\nG-ASTR 8\nT-If=3\n\n").unwrap();
    assert_eq!(w.get("G-ASTR"), 8);
    assert_eq!(w.get("T-If"), 3);
    assert_eq!(w.get("T-Let"), 1);
    assert_eq!(Weights::parse("").unwrap(), Weights::default());
}

#[test]
fn weights_parse_rejects_bad_input() {
    assert!(Weights::parse("T-Nope 3").unwrap_err().contains("unknown rule"));
    assert!(Weights::parse("T-If x").unwrap_err().contains("bad weight"));
    assert!(Weights::parse("T-If 1 2").is_err());
    let no_leaves: String = TERMINALS.iter().map(|r| format!("{r} 0\n")).collect();
    assert!(Weights::parse(&no_leaves).is_err());
}

#[test]
fn zero_weight_rules_never_fire() {
    let mut c = cfg(8);
    c.weights.set("T-If", 0).unwrap();
    c.weights.set("G-ASTR", 0).unwrap();
    for seed in 0..300 {
        let g = generate(&c, seed);
        assert_eq!(g.fired.get("T-If"), None);
        assert_eq!(g.fired.get("G-ASTR"), None);
        assert!(typecheck_program(&g.program).is_ok());
    }
}

#[test]
fn every_rule_fires_in_a_default_run() {
    let c = GenConfig::default();
    let mut fired: BTreeMap<&str, u64> = BTreeMap::new();
    for i in 0..c.count {
        for (r, n) in generate(&c, term_seed(c.seed, i)).fired {
            *fired.entry(r).or_default() += n;
        }
    }
    for r in RULES {
        assert!(fired.get(r).copied().unwrap_or(0) > 0, "{r} never fired");
    }
}

#[test]
fn relaxed_programs_are_rejected() {
    for r in [Relaxation::Mode, Relaxation::Cast, Relaxation::Subtype] {
        let c = GenConfig {
            depth: 8,
            relax: Some(r),
            ..Default::default()
        };
        for seed in 0..500 {
            let g = generate(&c, seed);
            assert!(g.relaxed.is_some());
            assert!(typecheck_program(&g.program).is_err(), "{r}: {}", g.program);
        }
    }
}

#[test]
fn short_strings_are_flagged_either_way() {
    let c = GenConfig {
        depth: 8,
        count: 300,
        relax: Some(Relaxation::AstrBound),
        ..Default::default()
    };
    let r = run_properties(&c, &RunOptions::default());
    assert_eq!(r.count(Prop::Rejection).pass, 300);
    let flagged: u64 = ["astr-accepted", "astr-rejected"].iter().map(|f| r.flags.get(f).copied().unwrap_or(0)).sum();
    assert_eq!(flagged, 300);
}

/// Runs whose trace tests `if (*x)` and, of those, runs that took the
/// then-branch at least once.
fn nt_branch_stats(c: &GenConfig, runs: usize) -> (usize, usize) {
    let (mut tested, mut taken) = (0, 0);
    for i in 0..runs {
        let g = generate(c, term_seed(c.seed, i));
        let p = g.program;
        let run = eval(Config::new(p.main.clone()), &p.funs, &p.structs, DEFAULT_FUEL);
        let mut saw = false;
        let mut then_ = false;
        for s in &run.trace {
            if let Expr::If(guard, t, e) = &s.redex {
                if matches!(&**guard, Expr::Deref(v) if matches!(**v, Expr::Var(_))) {
                    saw = true;
                    then_ |= s.result == t.to_string() && t != e;
                }
            }
        }
        tested += saw as usize;
        taken += then_ as usize;
    }
    (tested, taken)
}

#[test]
fn boosted_strings_make_the_then_branch_common() {
    let mut c = cfg(8);
    c.weights = Weights::parse("G-ASTR 8").unwrap();
    let (tested, taken) = nt_branch_stats(&c, 1_000);
    assert!(tested >= 50, "only {tested} runs tested a string");
    let share = taken as f64 / tested as f64;
    assert!(share >= 0.3, "then-branch share {share:.2} over {tested} runs");
}
