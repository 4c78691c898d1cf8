//! Small-step semantics over annotated configurations `(stack, heap, expr)`.
//!
//! A step decomposes the expression into an evaluation context and a redex,
//! records the context's mode, and contracts the redex. Null and bounds
//! failures halt the whole program; a redex with no applicable rule is stuck.

use crate::ast::*;
use crate::typing::{self, PredEnv, Snapshot, TypeEnv};
use std::collections::BTreeMap;
use std::fmt;

/// Variable bindings `x ↦ n : τ`. Annotations are closed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stack {
    vars: BTreeMap<Ident, (i64, WordType)>,
}

impl Stack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, x: &str) -> Option<&(i64, WordType)> {
        self.vars.get(x)
    }

    pub fn insert(&mut self, x: Ident, n: i64, t: WordType) {
        self.vars.insert(x, (n, t));
    }

    pub fn remove(&mut self, x: &str) {
        self.vars.remove(x);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, &(i64, WordType))> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn value(&self, x: &str) -> Option<i64> {
        self.vars.get(x).map(|(n, _)| *n)
    }

    /// Integer bindings, used to resolve bounds during subtyping.
    pub fn snapshot(&self) -> Snapshot {
        self.vars
            .iter()
            .filter(|(_, (_, t))| t.is_int())
            .map(|(x, (n, _))| (x.clone(), *n))
            .collect()
    }

    /// The type environment whose entries are the binding annotations.
    pub fn type_env(&self) -> TypeEnv {
        self.vars.iter().map(|(x, (_, t))| (x.clone(), t.clone())).collect()
    }

    fn subst_map(&self) -> BoundSubst {
        self.vars
            .iter()
            .map(|(x, (n, _))| (x.clone(), Bound::Const(*n)))
            .collect()
    }

    /// Applies the stack to a type; `None` if a bound variable is unbound.
    pub fn close_word(&self, t: &WordType) -> Option<WordType> {
        let closed = if t.is_closed() { t.clone() } else { t.subst(&self.subst_map()) };
        closed.is_closed().then_some(closed)
    }

    pub fn close_type(&self, t: &Type) -> Option<Type> {
        let closed = if t.is_closed() { t.clone() } else { t.subst(&self.subst_map()) };
        closed.is_closed().then_some(closed)
    }
}

/// Addressed cells of annotated literals. Addresses start at 1 and grow by
/// a bump cursor; nothing is ever freed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Heap {
    cells: Vec<(i64, WordType)>,
}

impl Heap {
    pub fn new() -> Self {
        Self::default()
    }

    /// A heap whose cells are laid out from address 1.
    pub fn from_cells(cells: Vec<(i64, WordType)>) -> Self {
        Heap { cells }
    }

    fn index(&self, addr: i64) -> Option<usize> {
        (addr >= 1 && addr <= self.cells.len() as i64).then(|| (addr - 1) as usize)
    }

    pub fn get(&self, addr: i64) -> Option<&(i64, WordType)> {
        self.index(addr).map(|i| &self.cells[i])
    }

    pub fn contains(&self, addr: i64) -> bool {
        self.index(addr).is_some()
    }

    pub fn set(&mut self, addr: i64, n: i64, t: WordType) -> bool {
        match self.index(addr) {
            Some(i) => {
                self.cells[i] = (n, t);
                true
            }
            None => false,
        }
    }

    /// The address the next allocation will return.
    pub fn next_addr(&self) -> i64 {
        self.cells.len() as i64 + 1
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &(i64, WordType))> {
        self.cells.iter().enumerate().map(|(i, c)| (i as i64 + 1, c))
    }
}

/// Result of a computation step on a redex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalResult {
    Expr(Expr),
    NullError,
    BoundsError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Null,
    Bounds,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Null => "null",
            ErrorKind::Bounds => "bounds",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stuck {
    pub reason: String,
}

fn stuck<T>(reason: impl Into<String>) -> Result<T, Stuck> {
    Err(Stuck { reason: reason.into() })
}

/// Path from the root to the hole: child indices as numbered by
/// [`Expr::child_mut`].
pub type EvalContext = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub context: EvalContext,
    pub mode: Mode,
}

/// Finds the redex: the leftmost-innermost non-value position allowed by the
/// context grammar. `if (*x) …` is taken whole so that its guard can widen.
pub fn decompose(e: &Expr) -> Option<Decomposition> {
    if e.is_value() {
        return None;
    }
    let mut context = Vec::new();
    let mut mode = Mode::Checked;
    let mut cur = e;
    loop {
        let next = match cur {
            Expr::Let(_, a, _)
            | Expr::Cast(_, a)
            | Expr::DynCast(_, a)
            | Expr::Ret(_, _, a)
            | Expr::Deref(a)
            | Expr::FieldAddr(a, _) => (!a.is_value()).then_some((0, &**a)),
            Expr::Unchecked(a) => {
                if a.is_value() {
                    None
                } else {
                    mode = Mode::Unchecked;
                    Some((0, &**a))
                }
            }
            Expr::Add(a, b) | Expr::Assign(a, b) => {
                if !a.is_value() {
                    Some((0, &**a))
                } else if !b.is_value() {
                    Some((1, &**b))
                } else {
                    None
                }
            }
            Expr::Call(_, args) => args.iter().enumerate().find(|(_, a)| !a.is_value()),
            Expr::If(c, _, _) => match &**c {
                Expr::Deref(inner) if matches!(**inner, Expr::Var(_)) => None,
                c if !c.is_value() => Some((0, c)),
                _ => None,
            },
            Expr::Lit(..) | Expr::Var(_) | Expr::Malloc(_) | Expr::Strlen(_) => None,
        };
        match next {
            Some((i, child)) => {
                context.push(i);
                cur = child;
            }
            None => return Some(Decomposition { context, mode }),
        }
    }
}

pub fn subterm<'e>(e: &'e Expr, path: &[usize]) -> &'e Expr {
    path.iter().fold(e, |cur, &i| cur.children()[i])
}

pub fn subterm_mut<'e>(e: &'e mut Expr, path: &[usize]) -> &'e mut Expr {
    let mut cur = e;
    for &i in path {
        cur = cur.child_mut(i).expect("context path leads into the expression");
    }
    cur
}

/// Writes `r` into the hole of `context`.
pub fn plug(e: &mut Expr, context: &[usize], r: Expr) {
    *subterm_mut(e, context) = r;
}

fn bounds_pair(t: &WordType) -> Option<(Mode, i64, i64, &WordType, NullTerm)> {
    let (m, b, elem, kind) = t.as_array_ptr()?;
    let (lo, hi) = b.as_consts()?;
    Some((m, lo, hi, elem, kind))
}

fn lit(n: i64, t: WordType) -> Result<EvalResult, Stuck> {
    Ok(EvalResult::Expr(Expr::Lit(n, t)))
}

/// Allocates zero-initialized cells for `t`, each annotated with its
/// element or field type, and returns the first address.
pub fn alloc(heap: &mut Heap, t: &Type, structs: &StructEnv) -> Result<i64, ErrorKind> {
    let cell_types: Vec<WordType> = match t {
        Type::Word(w) => vec![w.clone()],
        Type::Array { bounds, elem, kind } => {
            let (lo, hi) = bounds.as_consts().expect("allocation type is closed");
            if lo != 0 || hi <= 0 {
                return Err(ErrorKind::Bounds);
            }
            let n = hi + if *kind == NullTerm::Nt { 1 } else { 0 };
            vec![elem.clone(); n as usize]
        }
        Type::Struct(name) => structs[name].fields.iter().map(|(_, t)| t.clone()).collect(),
    };
    let addr = heap.next_addr();
    heap.cells.extend(cell_types.into_iter().map(|t| (0, t)));
    Ok(addr)
}

/// Contracts one redex. Mutates the stack and heap in place.
pub fn step_computation(
    stack: &mut Stack,
    heap: &mut Heap,
    redex: &Expr,
    funs: &FunEnv,
    structs: &StructEnv,
) -> Result<EvalResult, Stuck> {
    use EvalResult::{BoundsError, NullError};
    match redex {
        Expr::Var(x) => match stack.get(x) {
            Some((n, t)) => lit(*n, t.clone()),
            None => stuck(format!("unbound variable `{x}`")),
        },

        Expr::Deref(a) => {
            let Expr::Lit(n, t) = &**a else { return stuck("deref of a non-value") };
            let Some((m, pointee)) = t.pointee() else { return stuck("deref of an integer") };
            if m == Mode::Checked && *n == 0 {
                return Ok(NullError);
            }
            let elem = match pointee {
                Type::Word(w) => w,
                Type::Array { elem, bounds, kind } => {
                    if m == Mode::Checked {
                        let Some((lo, hi)) = bounds.as_consts() else { return stuck("open bounds") };
                        let ok = match kind {
                            NullTerm::Plain => lo <= 0 && 0 < hi,
                            NullTerm::Nt => lo <= 0 && 0 <= hi,
                        };
                        if !ok {
                            return Ok(BoundsError);
                        }
                    }
                    elem
                }
                Type::Struct(_) => return stuck("deref of a struct pointer"),
            };
            match heap.get(*n) {
                Some((v, _)) => lit(*v, elem.clone()),
                None => stuck(format!("read of unallocated address {n}")),
            }
        }

        Expr::Assign(a, b) => {
            let (Expr::Lit(n, t), Expr::Lit(v, _)) = (&**a, &**b) else {
                return stuck("assignment of non-values");
            };
            let Some((m, pointee)) = t.pointee() else { return stuck("assignment through an integer") };
            if m == Mode::Checked && *n == 0 {
                return Ok(NullError);
            }
            let elem = match pointee {
                Type::Word(w) => w,
                Type::Array { elem, bounds, .. } => {
                    if m == Mode::Checked {
                        let Some((lo, hi)) = bounds.as_consts() else { return stuck("open bounds") };
                        if !(lo <= 0 && 0 < hi) {
                            return Ok(BoundsError);
                        }
                    }
                    elem
                }
                Type::Struct(_) => return stuck("assignment through a struct pointer"),
            };
            if heap.set(*n, *v, elem.clone()) {
                lit(*v, elem.clone())
            } else {
                stuck(format!("write to unallocated address {n}"))
            }
        }

        Expr::Cast(t, a) => {
            let Expr::Lit(n, _) = &**a else { return stuck("cast of a non-value") };
            match stack.close_word(t) {
                Some(t) => lit(*n, t),
                None => stuck("cast target has unbound variables"),
            }
        }

        Expr::DynCast(t, a) => {
            let Expr::Lit(n, src) = &**a else { return stuck("dyncast of a non-value") };
            let Some(target) = stack.close_word(t) else { return stuck("dyncast target has unbound variables") };
            let (Some((_, lo, hi, _, _)), Some((_, tlo, thi, _, _))) = (bounds_pair(src), bounds_pair(&target)) else {
                return stuck("dyncast between non-array pointers");
            };
            if lo <= tlo && thi <= hi {
                lit(*n, target)
            } else {
                Ok(BoundsError)
            }
        }

        Expr::Let(x, a, body) => {
            let Expr::Lit(n, t) = &**a else { return stuck("let of a non-value") };
            let saved = match stack.get(x) {
                Some((v, vt)) => SavedBinding::Value(*v, vt.clone()),
                None => SavedBinding::Absent,
            };
            stack.insert(x.clone(), *n, t.clone());
            Ok(EvalResult::Expr(Expr::Ret(x.clone(), saved, body.clone())))
        }

        Expr::Ret(x, saved, a) => {
            if !a.is_value() {
                return stuck("ret of a non-value");
            }
            match saved {
                SavedBinding::Value(v, t) => stack.insert(x.clone(), *v, t.clone()),
                SavedBinding::Absent => stack.remove(x),
            }
            Ok(EvalResult::Expr((**a).clone()))
        }

        Expr::Call(f, args) => {
            let Some(def) = funs.get(f) else { return stuck(format!("unknown function `{f}`")) };
            if def.params.len() != args.len() {
                return stuck("arity mismatch");
            }
            let mut values = Vec::with_capacity(args.len());
            for a in args {
                let Expr::Lit(n, _) = a else { return stuck("call with non-value arguments") };
                values.push(*n);
            }
            let map: BoundSubst = def
                .params
                .iter()
                .zip(&values)
                .map(|((x, _), n)| (x.clone(), Bound::Const(*n)))
                .collect();
            let mut body = Expr::Cast(def.ret.subst(&map), Box::new(def.body.clone()));
            for ((x, t), n) in def.params.iter().zip(&values).rev() {
                body = Expr::Let(x.clone(), Box::new(Expr::Lit(*n, t.subst(&map))), Box::new(body));
            }
            Ok(EvalResult::Expr(body))
        }

        Expr::Strlen(x) => {
            let Some((n, t)) = stack.get(x).cloned() else { return stuck(format!("unbound variable `{x}`")) };
            let Some((m, lo, hi, _, kind)) = bounds_pair(&t) else { return stuck("strlen of a non-array") };
            if m == Mode::Checked {
                if n == 0 {
                    return Ok(NullError);
                }
                if !(lo <= 0 && 0 <= hi) {
                    return Ok(BoundsError);
                }
            }
            let mut len = 0;
            loop {
                match heap.get(n + len) {
                    Some((0, _)) => break,
                    Some(_) => len += 1,
                    None => return stuck("strlen ran past the end of the heap"),
                }
            }
            if m == Mode::Checked && kind == NullTerm::Nt && len > hi {
                stack.insert(x.clone(), n, t.with_bounds(BoundPair::consts(lo, len)));
            }
            lit(len, WordType::Int)
        }

        Expr::Add(a, b) => {
            let (Expr::Lit(n1, t1), Expr::Lit(n2, WordType::Int)) = (&**a, &**b) else {
                return stuck("addition of non-values");
            };
            match t1 {
                WordType::Int => lit(n1.wrapping_add(*n2), WordType::Int),
                _ => {
                    let Some((m, lo, hi, _, _)) = bounds_pair(t1) else {
                        return stuck("pointer arithmetic on a non-array pointer");
                    };
                    if m == Mode::Checked && *n1 == 0 {
                        return Ok(NullError);
                    }
                    let shifted = BoundPair::consts(lo.wrapping_sub(*n2), hi.wrapping_sub(*n2));
                    lit(n1.wrapping_add(*n2), t1.with_bounds(shifted))
                }
            }
        }

        Expr::Unchecked(a) => match &**a {
            Expr::Lit(..) => Ok(EvalResult::Expr((**a).clone())),
            _ => stuck("unchecked of a non-value"),
        },

        Expr::If(c, then_, else_) => match &**c {
            Expr::Lit(n, _) => Ok(EvalResult::Expr(if *n != 0 { (**then_).clone() } else { (**else_).clone() })),
            Expr::Deref(inner) => {
                let Expr::Var(x) = &**inner else { return stuck("if guard is not a value") };
                let Some((n, t)) = stack.get(x).cloned() else { return stuck(format!("unbound variable `{x}`")) };
                if let Some((Mode::Checked, lo, 0, _, NullTerm::Nt)) = bounds_pair(&t) {
                    if n != 0 && lo <= 0 && heap.get(n).is_some_and(|(v, _)| *v != 0) {
                        stack.insert(x.clone(), n, t.with_bounds(BoundPair::consts(lo, 1)));
                        return Ok(EvalResult::Expr((**then_).clone()));
                    }
                }
                // No widening: read the guard and branch in one step.
                let read = Expr::Deref(Box::new(Expr::Lit(n, t)));
                match step_computation(stack, heap, &read, funs, structs)? {
                    EvalResult::Expr(Expr::Lit(v, _)) => {
                        Ok(EvalResult::Expr(if v != 0 { (**then_).clone() } else { (**else_).clone() }))
                    }
                    EvalResult::Expr(_) => stuck("guard did not read a value"),
                    err => Ok(err),
                }
            }
            _ => stuck("if guard is not a value"),
        },

        Expr::Malloc(t) => {
            let Some(t) = stack.close_type(t) else { return stuck("malloc type has unbound variables") };
            if let Type::Struct(s) = &t {
                if !structs.contains_key(s) {
                    return stuck(format!("unknown struct `{s}`"));
                }
            }
            match alloc(heap, &t, structs) {
                Ok(addr) => lit(addr, WordType::checked(t)),
                Err(_) => Ok(BoundsError),
            }
        }

        Expr::FieldAddr(a, f) => {
            let Expr::Lit(n, t) = &**a else { return stuck("field address of a non-value") };
            let Some((m, Type::Struct(s))) = t.pointee() else { return stuck("field address of a non-struct") };
            let Some(def) = structs.get(s) else { return stuck(format!("unknown struct `{s}`")) };
            let Some(i) = def.field_index(f) else { return stuck(format!("unknown field `{f}`")) };
            if m == Mode::Checked && *n == 0 {
                return Ok(NullError);
            }
            if m == Mode::Checked && *n < 0 {
                return stuck("negative struct address");
            }
            lit(n + i as i64, WordType::ptr(m, Type::Word(def.fields[i].1.clone())))
        }

        Expr::Lit(..) => stuck("a value is not a redex"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    pub stack: Stack,
    pub heap: Heap,
    pub expr: Expr,
}

impl Config {
    pub fn new(expr: Expr) -> Self {
        Config {
            stack: Stack::new(),
            heap: Heap::new(),
            expr,
        }
    }
}

/// What a single step did to the configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    /// The expression is already a value; nothing happened.
    Value,
    Stepped { mode: Mode, redex: Expr },
    Error { mode: Mode, redex: Expr, kind: ErrorKind },
    Stuck { mode: Mode, redex: Expr, reason: String },
}

/// Performs one step in place. On an error or a stuck redex the
/// configuration is left unchanged.
pub fn step(cfg: &mut Config, funs: &FunEnv, structs: &StructEnv) -> Step {
    let Some(d) = decompose(&cfg.expr) else { return Step::Value };
    let redex = subterm(&cfg.expr, &d.context).clone();
    match step_computation(&mut cfg.stack, &mut cfg.heap, &redex, funs, structs) {
        Ok(EvalResult::Expr(r)) => {
            plug(&mut cfg.expr, &d.context, r);
            Step::Stepped { mode: d.mode, redex }
        }
        Ok(EvalResult::NullError) => Step::Error {
            mode: d.mode,
            redex,
            kind: ErrorKind::Null,
        },
        Ok(EvalResult::BoundsError) => Step::Error {
            mode: d.mode,
            redex,
            kind: ErrorKind::Bounds,
        },
        Err(s) => Step::Stuck {
            mode: d.mode,
            redex,
            reason: s.reason,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Value(i64, WordType),
    Error(ErrorKind),
    Stuck { mode: Mode, redex: Expr, reason: String },
    OutOfFuel,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Value(n, _) => write!(f, "value {n}"),
            Outcome::Error(k) => write!(f, "{k}"),
            Outcome::Stuck { .. } => f.write_str("stuck"),
            Outcome::OutOfFuel => f.write_str("fuel"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStep {
    pub mode: Mode,
    pub redex: Expr,
    /// Printed contractum: an expression, `null`, `bounds` or `stuck`.
    pub result: String,
}

#[derive(Clone, Debug)]
pub struct EvalRun {
    pub outcome: Outcome,
    pub config: Config,
    pub trace: Vec<TraceStep>,
}

impl EvalRun {
    /// Whether any step ran in unchecked mode.
    pub fn touched_unchecked(&self) -> bool {
        self.trace.iter().any(|s| s.mode == Mode::Unchecked)
    }

    pub fn trace_lines(&self) -> Vec<String> {
        self.trace
            .iter()
            .enumerate()
            .map(|(k, s)| format!("STEP {k} MODE {} REDEX {} -> {}", s.mode, s.redex, s.result))
            .collect()
    }
}

pub const DEFAULT_FUEL: usize = 10_000;

/// Steps until a value, an error, a stuck redex, or the fuel runs out.
pub fn eval(cfg: Config, funs: &FunEnv, structs: &StructEnv, fuel: usize) -> EvalRun {
    let mut cfg = cfg;
    let mut trace = Vec::new();
    for _ in 0..fuel {
        let before = decompose(&cfg.expr).map(|d| d.context);
        match step(&mut cfg, funs, structs) {
            Step::Value => break,
            Step::Stepped { mode, redex } => {
                let result = subterm(&cfg.expr, before.as_deref().unwrap_or(&[])).to_string();
                trace.push(TraceStep { mode, redex, result });
            }
            Step::Error { mode, redex, kind } => {
                trace.push(TraceStep {
                    mode,
                    redex,
                    result: kind.to_string(),
                });
                return EvalRun {
                    outcome: Outcome::Error(kind),
                    config: cfg,
                    trace,
                };
            }
            Step::Stuck { mode, redex, reason } => {
                trace.push(TraceStep {
                    mode,
                    redex: redex.clone(),
                    result: "stuck".into(),
                });
                return EvalRun {
                    outcome: Outcome::Stuck { mode, redex, reason },
                    config: cfg,
                    trace,
                };
            }
        }
    }
    let outcome = match &cfg.expr {
        Expr::Lit(n, t) => Outcome::Value(*n, t.clone()),
        _ => Outcome::OutOfFuel,
    };
    EvalRun {
        outcome,
        config: cfg,
        trace,
    }
}

/// Stack consistency: every variable with a predicate has a type and a
/// binding whose annotation is a subtype of it.
pub fn stack_consistent(gamma: &TypeEnv, theta: &PredEnv, stack: &Stack, structs: &StructEnv) -> bool {
    let snap = stack.snapshot();
    theta.keys().all(|x| match (gamma.get(x), stack.get(x)) {
        (Some(t), Some((_, t2))) => typing::subtype(t2, t, theta, &snap, structs),
        _ => false,
    })
}

/// Every stack binding is a well-typed literal in the heap.
pub fn stack_heap_consistent(stack: &Stack, heap: &Heap, structs: &StructEnv) -> bool {
    stack
        .iter()
        .all(|(_, (n, t))| typing::type_literal(heap, &mut typing::ScopeSet::new(), *n, t, structs))
}

pub fn check_consistency(gamma: &TypeEnv, theta: &PredEnv, stack: &Stack, heap: &Heap, structs: &StructEnv) -> bool {
    stack_consistent(gamma, theta, stack, structs) && stack_heap_consistent(stack, heap, structs)
}

/// Heap-heap consistency restricted to `probes`: each literal well typed in
/// `before` stays well typed in `after`.
pub fn heap_consistent<'a>(
    before: &Heap,
    after: &Heap,
    probes: impl IntoIterator<Item = (i64, &'a WordType)>,
    structs: &StructEnv,
) -> bool {
    probes.into_iter().all(|(n, t)| {
        !typing::type_literal(before, &mut typing::ScopeSet::new(), n, t, structs)
            || typing::type_literal(after, &mut typing::ScopeSet::new(), n, t, structs)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_expr;

    fn int_ptr(m: Mode) -> WordType {
        WordType::ptr(m, Type::Word(WordType::Int))
    }

    fn arr(lo: i64, hi: i64, kind: NullTerm) -> WordType {
        WordType::array_ptr(Mode::Checked, BoundPair::consts(lo, hi), WordType::Int, kind)
    }

    fn compute(stack: &mut Stack, heap: &mut Heap, e: &str) -> Result<EvalResult, Stuck> {
        step_computation(stack, heap, &parse_expr(e).unwrap(), &FunEnv::new(), &StructEnv::new())
    }

    #[test]
    fn decompose_whole_term() {
        let e = Expr::plus(Expr::int(1), Expr::int(2));
        let d = decompose(&e).unwrap();
        assert!(d.context.is_empty());
        assert_eq!(d.mode, Mode::Checked);
    }

    #[test]
    fn decompose_under_unchecked() {
        let e = Expr::Unchecked(Box::new(Expr::deref(Expr::Lit(5, int_ptr(Mode::Unchecked)))));
        let d = decompose(&e).unwrap();
        assert_eq!(d.context, vec![0]);
        assert_eq!(d.mode, Mode::Unchecked);
    }

    #[test]
    fn decompose_prefers_whole_if() {
        let e = parse_expr("(if (deref p) (+ (lit 1 int) (lit 2 int)) (lit 0 int))").unwrap();
        assert!(decompose(&e).unwrap().context.is_empty());
        let e = parse_expr("(+ (lit 1 int) (if (deref p) (lit 1 int) (lit 0 int)))").unwrap();
        assert_eq!(decompose(&e).unwrap().context, vec![1]);
    }

    #[test]
    fn null_deref() {
        let r = step_computation(
            &mut Stack::new(),
            &mut Heap::new(),
            &Expr::deref(Expr::Lit(0, arr(0, 3, NullTerm::Plain))),
            &FunEnv::new(),
            &StructEnv::new(),
        );
        assert_eq!(r, Ok(EvalResult::NullError));
    }

    #[test]
    fn pointer_arithmetic_shifts_bounds() {
        let r = step_computation(
            &mut Stack::new(),
            &mut Heap::new(),
            &Expr::plus(Expr::Lit(5, arr(0, 3, NullTerm::Plain)), Expr::int(2)),
            &FunEnv::new(),
            &StructEnv::new(),
        );
        assert_eq!(r, Ok(EvalResult::Expr(Expr::Lit(7, arr(-2, 1, NullTerm::Plain)))));
    }

    #[test]
    fn nt_terminator_readable_but_not_writable() {
        let mut heap = Heap::from_cells(vec![(0, WordType::Int); 3]);
        heap.set(4 - 1, 0, WordType::Int);
        let mut heap4 = Heap::from_cells(vec![(0, WordType::Int), (0, WordType::Int), (0, WordType::Int), (7, WordType::Int)]);
        let r = step_computation(
            &mut Stack::new(),
            &mut heap4,
            &Expr::deref(Expr::Lit(4, arr(0, 0, NullTerm::Nt))),
            &FunEnv::new(),
            &StructEnv::new(),
        );
        assert_eq!(r, Ok(EvalResult::Expr(Expr::int(7))));
        let r = step_computation(
            &mut Stack::new(),
            &mut heap,
            &Expr::assign(Expr::Lit(4, arr(0, 0, NullTerm::Nt)), Expr::int(1)),
            &FunEnv::new(),
            &StructEnv::new(),
        );
        assert_eq!(r, Ok(EvalResult::BoundsError));
    }

    #[test]
    fn strlen_widens_upper_bound() {
        let mut stack = Stack::new();
        stack.insert(ident("x"), 1, arr(0, 0, NullTerm::Nt));
        let mut heap = Heap::from_cells(vec![(104, WordType::Int), (105, WordType::Int), (0, WordType::Int)]);
        let r = compute(&mut stack, &mut heap, "(strlen x)");
        assert_eq!(r, Ok(EvalResult::Expr(Expr::int(2))));
        assert_eq!(stack.get("x").unwrap().1, arr(0, 2, NullTerm::Nt));
    }

    #[test]
    fn strlen_checks() {
        let mut stack = Stack::new();
        stack.insert(ident("x"), 0, arr(0, 0, NullTerm::Nt));
        stack.insert(ident("y"), 1, arr(1, 3, NullTerm::Nt));
        let mut heap = Heap::from_cells(vec![(0, WordType::Int)]);
        assert_eq!(compute(&mut stack, &mut heap, "(strlen x)"), Ok(EvalResult::NullError));
        assert_eq!(compute(&mut stack, &mut heap, "(strlen y)"), Ok(EvalResult::BoundsError));
    }

    #[test]
    fn alloc_cases() {
        let mut heap = Heap::new();
        assert_eq!(alloc(&mut heap, &Type::Word(WordType::Int), &StructEnv::new()), Ok(1));
        assert_eq!(heap.get(1), Some(&(0, WordType::Int)));
        let bad = Type::Array {
            bounds: BoundPair::consts(1, 3),
            elem: WordType::Int,
            kind: NullTerm::Plain,
        };
        assert_eq!(alloc(&mut Heap::new(), &bad, &StructEnv::new()), Err(ErrorKind::Bounds));
        let nt = Type::Array {
            bounds: BoundPair::consts(0, 2),
            elem: WordType::Int,
            kind: NullTerm::Nt,
        };
        let mut heap = Heap::new();
        assert_eq!(alloc(&mut heap, &nt, &StructEnv::new()), Ok(1));
        assert_eq!(heap.len(), 3);
        assert!(heap.iter().all(|(_, (v, _))| *v == 0));
    }

    #[test]
    fn let_malloc_deref_evaluates_to_zero() {
        let e = parse_expr("(let x (malloc (array 0 2 int)) (deref x))").unwrap();
        let run = eval(Config::new(e), &FunEnv::new(), &StructEnv::new(), DEFAULT_FUEL);
        assert_eq!(run.outcome, Outcome::Value(0, WordType::Int));
        assert!(run.config.stack.is_empty());
    }

    #[test]
    fn malloc_nt_then_read_terminator() {
        let e = parse_expr("(let x (malloc (ntarray 0 2 int)) (deref (+ x (lit 2 int))))").unwrap();
        let run = eval(Config::new(e), &FunEnv::new(), &StructEnv::new(), DEFAULT_FUEL);
        assert_eq!(run.outcome, Outcome::Value(0, WordType::Int));
    }

    #[test]
    fn dyncast_direction() {
        let mut stack = Stack::new();
        let mut heap = Heap::new();
        let narrow = compute(
            &mut stack,
            &mut heap,
            "(dyncast (ptr c (array 0 3 int)) (lit 1 (ptr c (array 0 5 int))))",
        );
        assert!(matches!(narrow, Ok(EvalResult::Expr(_))));
        let widen = compute(
            &mut stack,
            &mut heap,
            "(dyncast (ptr c (array 0 5 int)) (lit 1 (ptr c (array 0 3 int))))",
        );
        assert_eq!(widen, Ok(EvalResult::BoundsError));
    }

    #[test]
    fn unchecked_null_deref_is_stuck() {
        let e = Expr::Unchecked(Box::new(Expr::deref(Expr::Lit(0, int_ptr(Mode::Unchecked)))));
        let run = eval(Config::new(e), &FunEnv::new(), &StructEnv::new(), DEFAULT_FUEL);
        assert!(matches!(run.outcome, Outcome::Stuck { mode: Mode::Unchecked, .. }));
    }

    #[test]
    fn consistency_examples() {
        let structs = StructEnv::new();
        assert!(check_consistency(&TypeEnv::new(), &PredEnv::new(), &Stack::new(), &Heap::new(), &structs));
        let mut stack = Stack::new();
        stack.insert(ident("x"), 5, WordType::Int);
        let gamma = TypeEnv::from([(ident("x"), WordType::Int)]);
        assert!(check_consistency(&gamma, &PredEnv::new(), &stack, &Heap::new(), &structs));
        let mut stack = Stack::new();
        stack.insert(ident("x"), 3, int_ptr(Mode::Checked));
        assert!(!stack_heap_consistent(&stack, &Heap::new(), &structs));
    }

    #[test]
    fn trace_lines_format() {
        let e = parse_expr("(+ (lit 1 int) (lit 2 int))").unwrap();
        let run = eval(Config::new(e), &FunEnv::new(), &StructEnv::new(), DEFAULT_FUEL);
        assert_eq!(
            run.trace_lines(),
            vec!["STEP 0 MODE c REDEX (+ (lit 1 int) (lit 2 int)) -> (lit 3 int)".to_string()]
        );
    }
}
