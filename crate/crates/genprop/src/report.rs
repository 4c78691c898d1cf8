//! Running the harness over many seeds and the line-oriented report.

use crate::generator::{generate, term_seed, GenConfig, RULES};
use crate::props::{check_program, check_relaxed, Budget, Prop, Verdict};
use crate::shrink::shrink;
use chkc_core::compile::Mutations;
use chkc_core::Program;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub pass: u64,
    pub fail: u64,
    pub inconclusive: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub seed: u64,
    pub prop: Prop,
    pub program: String,
    pub step: Option<usize>,
    pub detail: String,
    pub shrunk: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PropertyReport {
    pub terms: u64,
    pub counts: BTreeMap<Prop, Counts>,
    pub counterexamples: Vec<Counterexample>,
    /// Rule applications across all terms.
    pub rules: BTreeMap<&'static str, u64>,
    /// Named event counters, such as accepted string off-by-ones.
    pub flags: BTreeMap<&'static str, u64>,
    /// Source outcomes by kind.
    pub outcomes: BTreeMap<String, u64>,
}

impl PropertyReport {
    pub fn count(&self, p: Prop) -> Counts {
        self.counts.get(&p).copied().unwrap_or_default()
    }

    pub fn failures(&self) -> u64 {
        self.counts.values().map(|c| c.fail).sum()
    }

    fn record(&mut self, p: Prop, v: &Verdict) {
        let c = self.counts.entry(p).or_default();
        match v {
            Verdict::Pass => c.pass += 1,
            Verdict::Fail { .. } => c.fail += 1,
            Verdict::Inconclusive => c.inconclusive += 1,
        }
    }

    /// Combines two shards; associative, with `self` first.
    pub fn merge(mut self, other: PropertyReport) -> PropertyReport {
        self.terms += other.terms;
        for (p, c) in other.counts {
            let e = self.counts.entry(p).or_default();
            e.pass += c.pass;
            e.fail += c.fail;
            e.inconclusive += c.inconclusive;
        }
        self.counterexamples.extend(other.counterexamples);
        for (r, n) in other.rules {
            *self.rules.entry(r).or_default() += n;
        }
        for (f, n) in other.flags {
            *self.flags.entry(f).or_default() += n;
        }
        for (o, n) in other.outcomes {
            *self.outcomes.entry(o).or_default() += n;
        }
        self
    }
}

fn one_line(p: &Program) -> String {
    p.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Options of a harness run beyond the generator's.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub muts: Mutations,
    pub budget: Budget,
    /// Counterexamples kept in the report.
    pub max_counterexamples: usize,
    /// Counterexamples shrunk before reporting.
    pub shrink: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            muts: Mutations::default(),
            budget: Budget::default(),
            max_counterexamples: 10,
            shrink: 3,
        }
    }
}

/// Generates and checks the term with the given seed.
pub fn check_seed(cfg: &GenConfig, opts: &RunOptions, seed: u64) -> PropertyReport {
    let g = generate(cfg, seed);
    let mut r = PropertyReport {
        terms: 1,
        rules: g.fired.clone(),
        ..Default::default()
    };
    let mut fails = Vec::new();
    if cfg.relax.is_some() {
        let (v, flag) = check_relaxed(&g.program, g.relaxed);
        if let Some(f) = flag {
            *r.flags.entry(f).or_default() += 1;
        }
        r.record(Prop::Rejection, &v);
        fails.push((Prop::Rejection, v));
    } else {
        let checks = check_program(&g.program, g.injected, opts.muts, opts.budget);
        if g.injected {
            *r.flags.entry("unchecked-injected").or_default() += 1;
        }
        if let Some(o) = checks.outcome {
            *r.outcomes.entry(o).or_default() += 1;
        }
        for (p, v) in checks.verdicts {
            r.record(p, &v);
            fails.push((p, v));
        }
    }
    for (prop, v) in fails {
        if let Verdict::Fail { step, detail } = v {
            r.counterexamples.push(Counterexample {
                seed,
                prop,
                program: one_line(&g.program),
                step,
                detail,
                shrunk: None,
            });
        }
    }
    r
}

/// Runs the harness over `cfg.count` seeds derived from `cfg.seed`. The
/// report does not depend on the number of worker threads.
pub fn run_properties(cfg: &GenConfig, opts: &RunOptions) -> PropertyReport {
    let mut report = (0..cfg.count)
        .into_par_iter()
        .map(|i| check_seed(cfg, opts, term_seed(cfg.seed, i)))
        .reduce(PropertyReport::default, PropertyReport::merge);
    report.counterexamples.truncate(opts.max_counterexamples);
    for c in report.counterexamples.iter_mut().take(opts.shrink) {
        if c.prop == Prop::Rejection {
            continue;
        }
        let g = generate(cfg, c.seed);
        let small = shrink(&g.program, c.prop, g.injected, opts.muts, opts.budget);
        c.shrunk = Some(one_line(&small));
    }
    report
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "TERMS {}", self.terms)?;
        for p in Prop::ALL {
            if let Some(c) = self.counts.get(&p) {
                writeln!(f, "PROP {p} PASS {} FAIL {} INCONCLUSIVE {}", c.pass, c.fail, c.inconclusive)?;
            }
        }
        for r in RULES {
            writeln!(f, "RULE {r} {}", self.rules.get(r).copied().unwrap_or(0))?;
        }
        for (o, n) in &self.outcomes {
            writeln!(f, "OUTCOME {o} {n}")?;
        }
        for (flag, n) in &self.flags {
            writeln!(f, "FLAG {flag} {n}")?;
        }
        for c in &self.counterexamples {
            writeln!(f, "CEX seed={} program={}", c.seed, c.program)?;
            let step = c.step.map_or_else(|| "-".to_string(), |s| s.to_string());
            writeln!(f, "  prop={} step={} detail={}", c.prop, step, c.detail)?;
            if let Some(s) = &c.shrunk {
                writeln!(f, "  shrunk={s}")?;
            }
        }
        Ok(())
    }
}
