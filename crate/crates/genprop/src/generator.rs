//! Random programs built by running the typing rules backwards: pick a rule
//! whose conclusion matches the goal type, choose the unknowns so the
//! premises hold, and recurse on the premises.
//!
//! Every generator for a goal returns a term whose type has the goal's shape
//! and flag, with bounds at least as wide as the goal's. That keeps the two
//! branches of a conditional joinable.

use chkc_core::semantics::{subterm_mut, Heap};
use chkc_core::typing::{resolve, subtype, type_expr, Ctx, Pred, PredEnv, Snapshot, TypeEnv};
use chkc_core::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt;

/// Every rule the generator can apply, in report order.
pub const RULES: &[&str] = &[
    "T-Const", "T-Var", "T-Let", "T-LetStr", "T-Add", "T-Def", "T-DefArr", "T-Ind", "T-Assign", "T-AssignArr",
    "T-IndAssign", "T-If", "T-IfNT", "T-Str", "T-Mac", "T-Cast", "T-DynCast", "T-Fun", "T-Struct", "G-ASTR",
];

pub const TERMINALS: &[&str] = &["T-Const", "T-Var"];

/// Rules that act as leaves for pointer goals: allocation has no premises
/// on subterms.
const POINTER_LEAVES: &[&str] = &["T-Mac"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Weights(pub BTreeMap<&'static str, u32>);

impl Default for Weights {
    fn default() -> Self {
        Weights(RULES.iter().map(|r| (*r, 1)).collect())
    }
}

impl Weights {
    pub fn get(&self, rule: &str) -> u32 {
        self.0.get(rule).copied().unwrap_or(0)
    }

    pub fn set(&mut self, rule: &str, w: u32) -> Result<(), String> {
        let Some(r) = RULES.iter().find(|r| **r == rule) else { return Err(format!("unknown rule `{rule}`")) };
        self.0.insert(r, w);
        Ok(())
    }

    /// Reads `RULE WEIGHT` (or `RULE=WEIGHT`) lines over the defaults; `#`
    /// starts a comment.
    pub fn parse(text: &str) -> Result<Weights, String> {
        let mut w = Weights::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(|c: char| c == '=' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            let [rule, weight] = parts[..] else { return Err(format!("line {}: expected `RULE WEIGHT`", i + 1)) };
            let weight = weight.parse().map_err(|_| format!("line {}: bad weight `{weight}`", i + 1))?;
            w.set(rule, weight).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        if TERMINALS.iter().all(|r| w.get(r) == 0) {
            return Err("at least one terminal rule needs a positive weight".into());
        }
        Ok(w)
    }
}

/// A premise the near-ill-typed generator drops at exactly one site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relaxation {
    /// Dereference an unchecked pointer in checked code.
    Mode,
    /// Store a value whose type is not a subtype of the target.
    Subtype,
    /// Cast to a checked pointer from a non-subtype.
    Cast,
    /// Allocate the initialized string one cell short.
    AstrBound,
}

impl Relaxation {
    pub const ALL: [Relaxation; 4] = [Relaxation::Mode, Relaxation::Subtype, Relaxation::Cast, Relaxation::AstrBound];

    pub fn name(self) -> &'static str {
        match self {
            Relaxation::Mode => "mode",
            Relaxation::Subtype => "subtype",
            Relaxation::Cast => "cast",
            Relaxation::AstrBound => "astr-bound",
        }
    }
}

impl fmt::Display for Relaxation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Depth budget: terms have at most `depth` levels.
    pub depth: u32,
    pub count: usize,
    pub weights: Weights,
    pub relax: Option<Relaxation>,
    /// Fraction of terms with an injected `unchecked` region.
    pub blame_rate: f64,
    /// Soft cap on the nodes of one term.
    pub max_nodes: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            depth: 9,
            count: 20_000,
            weights: Weights::default(),
            relax: None,
            blame_rate: 0.0,
            max_nodes: 160,
        }
    }
}

/// Seed of the `index`-th term of a run; a term can be replayed from it
/// alone.
pub fn term_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub seed: u64,
    pub program: Program,
    /// Rule whose premise was dropped, if any.
    pub relaxed: Option<&'static str>,
    /// Whether an `unchecked` region was injected.
    pub injected: bool,
    /// Rule applications, for coverage telemetry.
    pub fired: BTreeMap<&'static str, u64>,
}

/// Goal shapes the generator works with.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Goal {
    Int,
    PtrInt,
    PtrPtr,
    PtrStruct,
    Arr { lo: Bound, hi: Bound, kind: NullTerm },
}

const STRUCT: &str = "pair";
const FIELDS: [&str; 2] = ["fst", "snd"];

fn ptr_int() -> WordType {
    WordType::checked(Type::Word(WordType::Int))
}

impl Goal {
    fn ty(&self) -> WordType {
        match self {
            Goal::Int => WordType::Int,
            Goal::PtrInt => ptr_int(),
            Goal::PtrPtr => WordType::checked(Type::Word(ptr_int())),
            Goal::PtrStruct => WordType::checked(Type::Struct(ident(STRUCT))),
            Goal::Arr { lo, hi, kind } => {
                WordType::array_ptr(Mode::Checked, BoundPair::new(lo.clone(), hi.clone()), WordType::Int, *kind)
            }
        }
    }

    fn arr(lo: i64, hi: i64, kind: NullTerm) -> Goal {
        Goal::Arr {
            lo: Bound::Const(lo),
            hi: Bound::Const(hi),
            kind,
        }
    }
}

#[derive(Clone, Default)]
struct Env {
    /// Binding order, for deterministic choice.
    order: Vec<Ident>,
    gamma: TypeEnv,
    theta: PredEnv,
    snap: Snapshot,
    /// Pointer just widened by `if (*x)`, preferred for array accesses.
    focus: Option<Ident>,
}

impl Env {
    fn bind(&self, x: &Ident, t: WordType) -> Env {
        let mut e = self.clone();
        if !e.gamma.contains_key(x) {
            e.order.push(x.clone());
        }
        e.gamma.insert(x.clone(), t);
        e.theta.remove(x);
        e.snap.remove(x);
        e
    }

    fn vars(&self) -> impl Iterator<Item = (&Ident, &WordType)> {
        self.order.iter().map(|x| (x, &self.gamma[x]))
    }

    fn nt_vars(&self) -> Vec<Ident> {
        self.vars().filter(|(_, t)| t.is_checked_nt_ptr()).map(|(x, _)| x.clone()).collect()
    }

    fn int_vars(&self) -> Vec<Ident> {
        self.vars().filter(|(_, t)| t.is_int()).map(|(x, _)| x.clone()).collect()
    }

    fn array_vars(&self) -> Vec<Ident> {
        self.vars()
            .filter(|(_, t)| matches!(t.as_array_ptr(), Some((Mode::Checked, _, WordType::Int, _))))
            .map(|(x, _)| x.clone())
            .collect()
    }

    fn resolve(&self, b: &Bound) -> Bound {
        resolve(b, &self.snap)
    }
}

pub struct Generator<'w> {
    rng: ChaCha8Rng,
    weights: &'w Weights,
    depth: u32,
    budget: usize,
    counter: usize,
    structs: StructEnv,
    funs: FunEnv,
    relax: Option<Relaxation>,
    relaxed: Option<&'static str>,
    fired: BTreeMap<&'static str, u64>,
}

/// Fixed structure definitions shared by every generated program.
pub fn struct_env() -> StructEnv {
    let mut s = StructEnv::new();
    s.insert(
        ident(STRUCT),
        StructDef {
            name: ident(STRUCT),
            fields: FIELDS.iter().map(|f| (ident(f), WordType::Int)).collect(),
        },
    );
    s
}

/// Generates the term with the given seed.
pub fn generate(cfg: &GenConfig, seed: u64) -> Generated {
    let mut g = Generator::new(cfg, seed);
    let mut program = g.program();
    let mut injected = false;
    if cfg.blame_rate > 0.0 && g.rng.gen_bool(cfg.blame_rate.min(1.0)) {
        injected = inject_unchecked(&mut g.rng, &mut program);
    }
    Generated {
        seed,
        program,
        relaxed: g.relaxed,
        injected,
        fired: g.fired,
    }
}

impl<'w> Generator<'w> {
    pub fn new(cfg: &'w GenConfig, seed: u64) -> Self {
        Generator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weights: &cfg.weights,
            depth: cfg.depth.max(1),
            budget: cfg.max_nodes,
            counter: 0,
            structs: struct_env(),
            funs: FunEnv::new(),
            relax: cfg.relax,
            relaxed: None,
            fired: BTreeMap::new(),
        }
    }

    fn fresh(&mut self, base: &str) -> Ident {
        let x = ident(&format!("{base}{}", self.counter));
        self.counter += 1;
        x
    }

    fn coin(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn type_of(&self, env: &Env, e: &Expr) -> Option<WordType> {
        let heap = Heap::new();
        let ctx = Ctx {
            funs: &self.funs,
            structs: &self.structs,
            heap: &heap,
        };
        type_expr(&ctx, &env.gamma, &env.theta, Mode::Checked, e, &env.snap).ok()
    }

    fn sub(&self, env: &Env, a: &WordType, b: &WordType) -> bool {
        subtype(a, b, &env.theta, &env.snap, &self.structs)
    }

    /// Whether a variable of type `t` can stand for `goal`.
    fn fits(&self, env: &Env, t: &WordType, goal: &Goal) -> bool {
        match goal {
            Goal::Arr { kind, .. } => {
                matches!(t.as_array_ptr(), Some((Mode::Checked, _, WordType::Int, k)) if k == *kind)
                    && self.sub(env, t, &goal.ty())
            }
            _ => *t == goal.ty(),
        }
    }

    fn program(&mut self) -> Program {
        let nfuns = self.rng.gen_range(0..=2);
        for i in 0..nfuns {
            self.function(i);
        }
        self.budget = self.budget.max(8);
        let goal = self.random_goal(&Env::default());
        let mut main = self.gen(&Env::default(), &goal, self.depth);
        if self.relax.is_some() && self.relaxed.is_none() {
            // No site came up: put the relaxed term in a dead binding.
            let site = self.relaxed_term(&Env::default(), &Goal::Int, 1);
            main = Expr::Let(self.fresh("v"), Box::new(site), Box::new(main));
        }
        Program {
            structs: self.structs.clone(),
            funs: self.funs.clone(),
            main,
        }
    }

    fn function(&mut self, i: usize) {
        let n = ident("n");
        let dep = |k| {
            WordType::array_ptr(Mode::Checked, BoundPair::new(Bound::Const(0), Bound::var("n", 0)), WordType::Int, k)
        };
        let (params, ret) = match self.rng.gen_range(0..4) {
            0 => (vec![(n.clone(), WordType::Int), (ident("p"), dep(NullTerm::Nt))], WordType::Int),
            1 => (vec![(n.clone(), WordType::Int), (ident("p"), dep(NullTerm::Plain))], WordType::Int),
            2 => (vec![(ident("a"), WordType::Int), (ident("q"), ptr_int())], WordType::Int),
            _ => (vec![(ident("a"), WordType::Int)], ptr_int()),
        };
        let mut env = Env::default();
        for (x, t) in &params {
            env = env.bind(x, t.clone());
        }
        let goal = if ret.is_int() { Goal::Int } else { Goal::PtrInt };
        let saved = std::mem::replace(&mut self.budget, 40);
        let body = self.gen(&env, &goal, self.depth.min(5));
        self.budget = saved;
        let name = ident(&format!("f{i}"));
        self.funs.insert(
            name.clone(),
            FunDef {
                name,
                params,
                ret,
                body,
            },
        );
    }

    fn random_goal(&mut self, env: &Env) -> Goal {
        let kind = if self.coin(0.5) { NullTerm::Nt } else { NullTerm::Plain };
        match self.rng.gen_range(0..100) {
            0..=34 => Goal::Int,
            35..=54 => Goal::arr(0, 0, NullTerm::Nt),
            55..=74 => {
                let lo = *[0, 0, 0, 0, -1, 1].choose(&mut self.rng).unwrap();
                let hi = self.rng.gen_range(0..=4);
                if !env.int_vars().is_empty() && self.coin(0.1) {
                    let x = env.int_vars().choose(&mut self.rng).unwrap().clone();
                    return Goal::Arr {
                        lo: Bound::Const(0),
                        hi: Bound::VarPlus(x, self.rng.gen_range(0..=2)),
                        kind,
                    };
                }
                Goal::arr(lo, hi, kind)
            }
            75..=84 => Goal::PtrInt,
            85..=92 => Goal::PtrStruct,
            _ => Goal::PtrPtr,
        }
    }

    fn random_arr(&mut self) -> Goal {
        let kind = if self.coin(0.5) { NullTerm::Nt } else { NullTerm::Plain };
        let lo = if self.coin(0.85) { 0 } else { -1 };
        Goal::arr(lo, self.rng.gen_range(0..=4), kind)
    }

    /// Rules whose conclusion can produce `goal` here, with weights.
    fn applicable(&self, env: &Env, goal: &Goal, fuel: u32) -> Vec<(&'static str, u32)> {
        let terminal_only = fuel <= 1 || self.budget == 0;
        let mut rules: Vec<&'static str> = vec!["T-Const"];
        if env.vars().any(|(_, t)| self.fits(env, t, goal)) {
            rules.push("T-Var");
        }
        if terminal_only && *goal != Goal::Int {
            rules.extend(POINTER_LEAVES);
        }
        if !terminal_only {
            let has_nt = !env.nt_vars().is_empty();
            let has_fun = |ret: &Goal| self.funs.values().any(|f| (ret == &Goal::Int) == f.ret.is_int());
            rules.extend(["T-Let", "T-If", "T-Mac", "T-Cast"]);
            if has_nt {
                rules.extend(["T-IfNT", "T-LetStr"]);
            }
            match goal {
                Goal::Int => {
                    rules.extend(["T-Add", "T-Def", "T-DefArr", "T-Ind", "T-Assign", "T-AssignArr", "T-IndAssign"]);
                    rules.retain(|r| *r != "T-Mac");
                    if has_nt {
                        rules.push("T-Str");
                    }
                    if has_fun(goal) {
                        rules.push("T-Fun");
                    }
                }
                Goal::PtrInt => {
                    rules.extend(["T-Def", "T-Assign", "T-Struct"]);
                    if has_fun(goal) {
                        rules.push("T-Fun");
                    }
                }
                Goal::PtrPtr | Goal::PtrStruct => rules.retain(|r| *r != "T-Cast"),
                Goal::Arr { lo, hi, kind } => {
                    rules.push("T-DynCast");
                    let (lo, hi) = (env.resolve(lo), env.resolve(hi));
                    if *kind == NullTerm::Nt && lo.as_const().is_some_and(|l| l >= 0) && hi.as_const().is_some_and(|h| h <= 0)
                    {
                        rules.push("G-ASTR");
                    }
                }
            }
        }
        rules
            .into_iter()
            .map(|r| {
                let w = self.weights.get(r);
                let leaf = TERMINALS.contains(&r) || (*goal != Goal::Int && POINTER_LEAVES.contains(&r));
                let w = if leaf && fuel <= 2 { w * 2 } else { w };
                (r, w)
            })
            .filter(|(_, w)| *w > 0)
            .collect()
    }

    fn gen(&mut self, env: &Env, goal: &Goal, fuel: u32) -> Expr {
        self.budget = self.budget.saturating_sub(1);
        if let Some(r) = self.relax {
            if self.relaxed.is_none() && fuel > 1 && self.site_for(r, goal) && self.coin(0.15) {
                return self.relaxed_term(env, goal, fuel);
            }
        }
        let options = self.applicable(env, goal, fuel);
        for _ in 0..50 {
            let Ok(&(rule, _)) = options.choose_weighted(&mut self.rng, |(_, w)| *w) else { break };
            if let Some(e) = self.apply(rule, env, goal, fuel) {
                *self.fired.entry(rule).or_default() += 1;
                return e;
            }
        }
        if *goal != Goal::Int {
            if let Some(e) = self.apply("T-Mac", env, goal, fuel.max(1)) {
                *self.fired.entry("T-Mac").or_default() += 1;
                return e;
            }
        }
        *self.fired.entry("T-Const").or_default() += 1;
        self.terminal(goal)
    }

    fn terminal(&mut self, goal: &Goal) -> Expr {
        match goal {
            Goal::Int => Expr::int(self.small_int()),
            _ if goal.ty().is_closed() => Expr::Lit(0, goal.ty()),
            Goal::Arr { lo, hi, kind } => {
                Expr::Malloc(Type::Array { bounds: BoundPair::new(lo.clone(), hi.clone()), elem: WordType::Int, kind: *kind })
            }
            _ => unreachable!("only arrays have open types"),
        }
    }

    fn small_int(&mut self) -> i64 {
        if self.coin(0.1) {
            self.rng.gen_range(-2..0)
        } else {
            self.rng.gen_range(0..10)
        }
    }

    fn apply(&mut self, rule: &'static str, env: &Env, goal: &Goal, fuel: u32) -> Option<Expr> {
        let f = fuel.saturating_sub(1);
        let b = Box::new;
        Some(match rule {
            "T-Const" => match goal {
                Goal::Int => Expr::int(self.small_int()),
                // Null pointers end most runs early, so keep them occasional.
                _ if goal.ty().is_closed() && self.coin(0.3) => Expr::Lit(0, goal.ty()),
                _ => return None,
            },
            "T-Var" => {
                let vars: Vec<Ident> = env.vars().filter(|(_, t)| self.fits(env, t, goal)).map(|(x, _)| x.clone()).collect();
                Expr::Var(vars.choose(&mut self.rng)?.clone())
            }
            "T-Let" => self.let_rule(env, goal, f),
            "T-LetStr" => {
                let y = env.nt_vars().choose(&mut self.rng)?.clone();
                let x = self.fresh("v");
                let ty = &env.gamma[&y];
                let (_, bounds, _, _) = ty.as_array_ptr()?;
                let widened = ty.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::var(&x, 0)));
                let mut inner = env.bind(&x, WordType::Int).bind(&y, widened);
                inner.theta.insert(x.clone(), Pred::GeZero);
                let mut body = self.gen(&inner, goal, f);
                if self.type_of(&inner, &body).is_some_and(|t| t.mentions(&x)) {
                    body = Expr::Cast(goal.ty(), b(body));
                }
                Expr::Let(x, b(Expr::Strlen(y)), b(body))
            }
            "T-Add" => Expr::Add(b(self.gen(env, &Goal::Int, f)), b(self.gen(env, &Goal::Int, f))),
            "T-Def" => match goal {
                Goal::Int => Expr::Deref(b(self.pointer_to_int(env, f))),
                Goal::PtrInt => Expr::Deref(b(self.gen(env, &Goal::PtrPtr, f))),
                _ => return None,
            },
            "T-DefArr" => {
                let (a, _) = self.array(env, f);
                Expr::Deref(b(a))
            }
            "T-Ind" => {
                let (a, bounds) = self.array(env, f);
                let i = self.index(env, bounds, f);
                Expr::Deref(b(Expr::Add(b(a), b(i))))
            }
            "T-Assign" => match goal {
                Goal::Int => Expr::Assign(b(self.pointer_to_int(env, f)), b(self.gen(env, &Goal::Int, f))),
                Goal::PtrInt => Expr::Assign(b(self.gen(env, &Goal::PtrPtr, f)), b(self.gen(env, &Goal::PtrInt, f))),
                _ => return None,
            },
            "T-AssignArr" => {
                let (a, _) = self.array(env, f);
                Expr::Assign(b(a), b(self.gen(env, &Goal::Int, f)))
            }
            "T-IndAssign" => {
                let (a, bounds) = self.array(env, f);
                let i = self.index(env, bounds, f);
                Expr::Assign(b(Expr::Add(b(a), b(i))), b(self.gen(env, &Goal::Int, f)))
            }
            "T-If" => {
                let guard = self.gen(env, &Goal::Int, f);
                let (g1, g2) = self.branch_goals(env, goal);
                let (then_, else_) = (self.gen(env, &g1, f), self.gen(env, &g2, f));
                self.cond(env, goal, guard, then_, else_)
            }
            "T-IfNT" => {
                let x = env.nt_vars().choose(&mut self.rng)?.clone();
                let ty = &env.gamma[&x];
                let (_, bounds, _, _) = ty.as_array_ptr()?;
                let mut then_env = if env.resolve(&bounds.hi) == Bound::Const(0) {
                    env.bind(&x, ty.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::Const(1))))
                } else {
                    env.clone()
                };
                let widened = then_env.gamma[&x] != *ty;
                then_env.focus = Some(x.clone());
                let then_ = if widened && f > 0 && self.coin(0.4) {
                    // Read the cell the test just exposed.
                    let v = self.fresh("v");
                    let read = Expr::Deref(b(Expr::plus(Expr::Var(x.clone()), Expr::int(1))));
                    *self.fired.entry("T-Let").or_default() += 1;
                    *self.fired.entry("T-Ind").or_default() += 1;
                    let body = self.gen(&then_env.bind(&v, WordType::Int), goal, f - 1);
                    Expr::Let(v, b(read), b(body))
                } else {
                    self.gen(&then_env, goal, f)
                };
                let else_ = self.gen(env, goal, f);
                self.cond(env, goal, Expr::Deref(b(Expr::Var(x))), then_, else_)
            }
            "T-Str" => Expr::Strlen(env.nt_vars().choose(&mut self.rng)?.clone()),
            "T-Mac" => Expr::Malloc(match goal {
                Goal::Int => return None,
                Goal::PtrInt => Type::Word(WordType::Int),
                Goal::PtrPtr => Type::Word(ptr_int()),
                Goal::PtrStruct => Type::Struct(ident(STRUCT)),
                Goal::Arr { lo, hi, kind } => {
                    if !env.resolve(lo).as_const().is_some_and(|l| l >= 0) {
                        return None;
                    }
                    let hi = match hi {
                        Bound::Const(h) => Bound::Const(h + self.rng.gen_range(0..=2)),
                        b => b.clone(),
                    };
                    Type::Array {
                        bounds: BoundPair::new(Bound::Const(0), hi),
                        elem: WordType::Int,
                        kind: *kind,
                    }
                }
            }),
            "T-Cast" => match goal {
                Goal::Int => {
                    let other = self.random_goal(env);
                    Expr::Cast(WordType::Int, b(self.gen(env, &other, f)))
                }
                Goal::PtrInt => {
                    let kind = if self.coin(0.5) { NullTerm::Nt } else { NullTerm::Plain };
                    let h = self.rng.gen_range(1..=3);
                    Expr::Cast(ptr_int(), b(self.gen(env, &Goal::arr(0, h, kind), f)))
                }
                Goal::Arr { lo, hi, kind } => {
                    let wider = Goal::Arr {
                        lo: lo.clone(),
                        hi: match hi {
                            Bound::Const(h) => Bound::Const(h + 1),
                            Bound::VarPlus(x, k) => Bound::VarPlus(x.clone(), k + 1),
                        },
                        kind: if self.coin(0.5) { NullTerm::Nt } else { *kind },
                    };
                    Expr::Cast(goal.ty(), b(self.gen(env, &wider, f)))
                }
                _ => return None,
            },
            "T-DynCast" => {
                let Goal::Arr { kind, .. } = goal else { return None };
                let lo = if self.coin(0.85) { 0 } else { -1 };
                let src = Goal::arr(lo, self.rng.gen_range(0..=5), *kind);
                Expr::DynCast(goal.ty(), b(self.gen(env, &src, f)))
            }
            "T-Fun" => self.call(env, goal, f)?,
            "T-Struct" => {
                let field = ident(FIELDS.choose(&mut self.rng).unwrap());
                Expr::FieldAddr(b(self.gen(env, &Goal::PtrStruct, f)), field)
            }
            "G-ASTR" => self.astr(false),
            _ => return None,
        })
    }

    fn let_rule(&mut self, env: &Env, goal: &Goal, f: u32) -> Expr {
        let rhs_goal = self.random_goal(env);
        // Bound strings feed `if (*x)` and `strlen`, so build them often.
        let rhs = if rhs_goal == Goal::arr(0, 0, NullTerm::Nt) && self.weights.get("G-ASTR") > 0 && self.coin(0.4) {
            *self.fired.entry("G-ASTR").or_default() += 1;
            self.astr(false)
        } else {
            self.gen(env, &rhs_goal, f)
        };
        let t1 = self.type_of(env, &rhs).unwrap_or_else(|| rhs_goal.ty());
        let x = self.fresh("v");
        let mut inner = env.bind(&x, t1);
        let value = rhs.as_bound().and_then(|b| env.resolve(&b).as_const());
        if let Some(v) = value {
            inner.snap.insert(x.clone(), v);
        }
        // An integer constant lets the body's bounds depend on `x`.
        let body_goal = match (goal, &rhs) {
            (Goal::Arr { lo, hi: Bound::Const(h), kind }, Expr::Lit(k, WordType::Int)) if self.coin(0.5) => Goal::Arr {
                lo: lo.clone(),
                hi: Bound::VarPlus(x.clone(), h - k),
                kind: *kind,
            },
            _ => goal.clone(),
        };
        let body = self.gen(&inner, &body_goal, f);
        Expr::Let(x, Box::new(rhs), Box::new(body))
    }

    /// A conditional meeting `goal`. Arms whose bounds are not comparable
    /// (one constant, one symbolic) have no join, so both get cast to the
    /// goal type they already satisfy.
    fn cond(&self, env: &Env, goal: &Goal, guard: Expr, then_: Expr, else_: Expr) -> Expr {
        let e = Expr::If(Box::new(guard), Box::new(then_), Box::new(else_));
        if !matches!(goal, Goal::Arr { .. }) || self.type_of(env, &e).is_some() {
            return e;
        }
        let Expr::If(guard, then_, else_) = e else { unreachable!() };
        let t = goal.ty();
        Expr::If(guard, Box::new(Expr::Cast(t.clone(), then_)), Box::new(Expr::Cast(t, else_)))
    }

    /// Goals for the two arms of a conditional whose join meets `goal`.
    fn branch_goals(&mut self, env: &Env, goal: &Goal) -> (Goal, Goal) {
        if let Goal::Arr { lo: Bound::Const(l), hi: Bound::Const(h), kind } = goal {
            if self.coin(0.5) {
                let wide_hi = Goal::arr(*l, h + self.rng.gen_range(0..=2), *kind);
                let wide_lo = Goal::arr(l - self.rng.gen_range(0..=1), *h, *kind);
                return if self.coin(0.5) { (wide_hi, wide_lo) } else { (wide_lo, wide_hi) };
            }
        }
        let _ = env;
        (goal.clone(), goal.clone())
    }

    fn pointer_to_int(&mut self, env: &Env, f: u32) -> Expr {
        let vars: Vec<Ident> = env.vars().filter(|(_, t)| **t == ptr_int()).map(|(x, _)| x.clone()).collect();
        if !vars.is_empty() && self.coin(0.5) {
            return Expr::Var(vars.choose(&mut self.rng).unwrap().clone());
        }
        self.gen(env, &Goal::PtrInt, f)
    }

    /// An array pointer and its bounds as far as they are known statically.
    fn array(&mut self, env: &Env, f: u32) -> (Expr, Option<(i64, i64)>) {
        let vars = env.array_vars();
        if let Some(x) = env.focus.clone().filter(|x| vars.contains(x)) {
            if self.coin(0.5) {
                return self.array_var(env, x);
            }
        }
        if !vars.is_empty() && self.coin(0.6) {
            let x = vars.choose(&mut self.rng).unwrap().clone();
            return self.array_var(env, x);
        }
        let goal = self.random_arr();
        let Goal::Arr { lo: Bound::Const(l), hi: Bound::Const(h), .. } = goal else { unreachable!() };
        (self.gen(env, &goal, f), Some((l, h)))
    }

    fn array_var(&self, env: &Env, x: Ident) -> (Expr, Option<(i64, i64)>) {
        let (_, b, _, _) = env.gamma[&x].as_array_ptr().unwrap();
        let known = env.resolve(&b.lo).as_const().zip(env.resolve(&b.hi).as_const());
        (Expr::Var(x), known)
    }

    /// Indices favour the upper bound, where the checks for reads and
    /// writes of null-terminated arrays differ.
    fn index(&mut self, env: &Env, bounds: Option<(i64, i64)>, f: u32) -> Expr {
        match bounds {
            Some((l, h)) if self.coin(0.8) => {
                let i = match self.rng.gen_range(0..20) {
                    0..=6 if l <= h => h,
                    7..=16 if l <= h => self.rng.gen_range(l..=h),
                    _ => *[l - 1, h + 1].choose(&mut self.rng).unwrap(),
                };
                Expr::int(i)
            }
            _ => self.gen(env, &Goal::Int, f),
        }
    }

    fn call(&mut self, env: &Env, goal: &Goal, f: u32) -> Option<Expr> {
        let names: Vec<Ident> = self
            .funs
            .values()
            .filter(|d| (goal == &Goal::Int) == d.ret.is_int() && d.ret == goal.ty())
            .map(|d| d.name.clone())
            .collect();
        let name = names.choose(&mut self.rng)?.clone();
        let def = self.funs[&name].clone();
        let mut map = BoundSubst::new();
        let mut args = Vec::new();
        for (x, t) in &def.params {
            let dependent = def.params.iter().any(|(_, u)| u.mentions(x));
            let arg = if t.is_int() && dependent {
                let ints = env.int_vars();
                let a = if !ints.is_empty() && self.coin(0.2) {
                    Expr::Var(ints.choose(&mut self.rng).unwrap().clone())
                } else {
                    Expr::int(self.rng.gen_range(0..=4))
                };
                map.insert(x.clone(), a.as_bound().unwrap());
                a
            } else {
                let expected = t.subst(&map);
                let g = goal_of(&expected)?;
                self.gen(env, &g, f)
            };
            args.push(arg);
        }
        Some(Expr::Call(name, args))
    }

    /// An initialized null-terminated string of nonzero values, cast to
    /// bounds (0, 0).
    fn astr(&mut self, short: bool) -> Expr {
        let len = self.rng.gen_range(1..=5i64);
        let s = self.fresh("s");
        let alloc_hi = if short { len - 1 } else { len };
        let nt = |hi| WordType::array_ptr(Mode::Checked, BoundPair::consts(0, hi), WordType::Int, NullTerm::Nt);
        let mut body = Expr::Cast(nt(0), Box::new(Expr::Var(s.clone())));
        let values: Vec<i64> = (0..len).map(|_| self.rng.gen_range(1..=9)).collect();
        for (i, v) in values.into_iter().enumerate().rev() {
            let w = self.fresh("w");
            let store = Expr::Assign(Box::new(Expr::plus(Expr::Var(s.clone()), Expr::int(i as i64))), Box::new(Expr::int(v)));
            body = Expr::Let(w, Box::new(store), Box::new(body));
        }
        let alloc = Type::Array {
            bounds: BoundPair::consts(0, alloc_hi),
            elem: WordType::Int,
            kind: NullTerm::Nt,
        };
        Expr::Let(s, Box::new(Expr::Malloc(alloc)), Box::new(body))
    }

    fn site_for(&self, r: Relaxation, goal: &Goal) -> bool {
        match r {
            Relaxation::Mode | Relaxation::Subtype => *goal == Goal::Int,
            Relaxation::Cast => matches!(goal, Goal::Int | Goal::PtrInt),
            Relaxation::AstrBound => *goal == Goal::arr(0, 0, NullTerm::Nt),
        }
    }

    /// A term for `goal` that breaks exactly one premise of the configured
    /// relaxation.
    fn relaxed_term(&mut self, env: &Env, goal: &Goal, fuel: u32) -> Expr {
        let r = self.relax.expect("relaxation configured");
        let f = fuel.saturating_sub(1);
        let b = Box::new;
        let unchecked_int = WordType::ptr(Mode::Unchecked, Type::Word(WordType::Int));
        let (rule, e) = match (r, goal) {
            (Relaxation::Mode, _) => ("T-Def", Expr::Deref(b(Expr::Cast(unchecked_int, b(self.gen(env, &Goal::PtrInt, f)))))),
            (Relaxation::Subtype, _) => {
                ("T-Assign", Expr::Assign(b(self.gen(env, &Goal::PtrInt, f)), b(self.gen(env, &Goal::PtrInt, f))))
            }
            (Relaxation::Cast, Goal::PtrInt) => ("T-Cast", Expr::Cast(ptr_int(), b(self.gen(env, &Goal::Int, f)))),
            (Relaxation::Cast, _) => {
                ("T-Cast", Expr::Deref(b(Expr::Cast(ptr_int(), b(self.gen(env, &Goal::Int, f))))))
            }
            (Relaxation::AstrBound, Goal::Int) => {
                let x = self.fresh("v");
                let body = Expr::int(0);
                ("G-ASTR", Expr::Let(x, b(self.astr(true)), b(body)))
            }
            (Relaxation::AstrBound, _) => ("G-ASTR", self.astr(true)),
        };
        self.relaxed = Some(rule);
        e
    }
}

fn goal_of(t: &WordType) -> Option<Goal> {
    if t.is_int() {
        return Some(Goal::Int);
    }
    if *t == ptr_int() {
        return Some(Goal::PtrInt);
    }
    match t.as_array_ptr()? {
        (Mode::Checked, b, WordType::Int, kind) => Some(Goal::Arr {
            lo: b.lo.clone(),
            hi: b.hi.clone(),
            kind,
        }),
        _ => None,
    }
}

fn paths(e: &Expr, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(prefix.clone());
    for (i, c) in e.children().into_iter().enumerate() {
        prefix.push(i);
        paths(c, prefix, out);
        prefix.pop();
    }
}

/// Puts one random subterm of `main` under `unchecked`, sometimes replacing
/// an integer constant with a read through an arbitrary unchecked pointer.
/// Keeps the program unchanged, returning false, if no attempt type-checks.
pub fn inject_unchecked(rng: &mut ChaCha8Rng, p: &mut Program) -> bool {
    let mut all = Vec::new();
    paths(&p.main, &mut Vec::new(), &mut all);
    for _ in 0..10 {
        let path = all.choose(rng).unwrap().clone();
        let mut candidate = p.clone();
        let slot = subterm_mut(&mut candidate.main, &path);
        let wild = matches!(slot, Expr::Lit(_, WordType::Int)) && rng.gen_bool(0.7);
        let old = std::mem::replace(slot, Expr::int(0));
        *slot = if wild {
            let addr = rng.gen_range(0..40);
            let p = WordType::ptr(Mode::Unchecked, Type::Word(WordType::Int));
            Expr::Unchecked(Box::new(Expr::Deref(Box::new(Expr::Cast(p, Box::new(Expr::int(addr)))))))
        } else {
            Expr::Unchecked(Box::new(old))
        };
        if typecheck_program(&candidate).is_ok() {
            *p = candidate;
            return true;
        }
    }
    false
}
