//! The typing judgment, subtyping, bound inequality, joins, and typing of
//! heap literals.
//!
//! Every judgment is parameterized by a stack snapshot: integer values of
//! variables that are substituted into bounds before they are compared. Source
//! programs are checked with an empty snapshot and an empty heap.

use crate::ast::*;
use crate::semantics::Heap;
use std::collections::{HashMap, HashSet};
use std::fmt;

pub type TypeEnv = HashMap<Ident, WordType>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pred {
    Top,
    GeZero,
}

pub type PredEnv = HashMap<Ident, Pred>;

/// Known integer values of variables.
pub type Snapshot = HashMap<Ident, i64>;

/// Pointer literals already assumed well typed while checking a cyclic heap.
pub type ScopeSet = HashSet<(i64, WordType)>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeError {
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.message)
    }
}

impl std::error::Error for TypeError {}

fn fail<T>(rule: &'static str, message: impl Into<String>) -> Result<T, TypeError> {
    Err(TypeError {
        rule,
        message: message.into(),
    })
}

pub struct Ctx<'a> {
    pub funs: &'a FunEnv,
    pub structs: &'a StructEnv,
    pub heap: &'a Heap,
}

fn snap_subst(snap: &Snapshot) -> BoundSubst {
    snap.iter().map(|(x, n)| (x.clone(), Bound::Const(*n))).collect()
}

/// Substitutes a known value for the bound variable.
pub fn resolve(b: &Bound, snap: &Snapshot) -> Bound {
    match b {
        Bound::VarPlus(x, k) => match snap.get(x) {
            Some(n) => Bound::Const(n.wrapping_add(*k)),
            None => b.clone(),
        },
        Bound::Const(_) => b.clone(),
    }
}

/// `b1 ≤ b2`, after substituting the snapshot. A constant is below `x + m`
/// when `x` is known non-negative and the constant is at most `m`.
pub fn bound_le(b1: &Bound, b2: &Bound, theta: &PredEnv, snap: &Snapshot) -> bool {
    match (resolve(b1, snap), resolve(b2, snap)) {
        (Bound::Const(n), Bound::Const(m)) => n <= m,
        (Bound::VarPlus(x, n), Bound::VarPlus(y, m)) => x == y && n <= m,
        (Bound::Const(n), Bound::VarPlus(x, m)) => theta.get(&x) == Some(&Pred::GeZero) && n <= m,
        (Bound::VarPlus(..), Bound::Const(_)) => false,
    }
}

fn same_word(a: &WordType, b: &WordType, snap: &Snapshot) -> bool {
    if a == b {
        return true;
    }
    if snap.is_empty() || (a.is_closed() && b.is_closed()) {
        return false;
    }
    let map = snap_subst(snap);
    a.subst(&map) == b.subst(&map)
}

/// `t1 ⊑ t2`.
pub fn subtype(t1: &WordType, t2: &WordType, theta: &PredEnv, snap: &Snapshot, structs: &StructEnv) -> bool {
    if t1 == t2 {
        return true;
    }
    let (WordType::Ptr(m1, p1), WordType::Ptr(m2, p2)) = (t1, t2) else { return false };
    if m1 != m2 {
        return false;
    }
    let le = |a: &Bound, b: &Bound| bound_le(a, b, theta, snap);
    let zero = Bound::Const(0);
    let one = Bound::Const(1);
    match (&**p1, &**p2) {
        (Type::Word(a), Type::Word(b)) => same_word(a, b, snap),
        (
            Type::Word(a),
            Type::Array {
                bounds,
                elem,
                kind: NullTerm::Plain,
            },
        ) => same_word(a, elem, snap) && le(&zero, &bounds.lo) && le(&bounds.hi, &one),
        (Type::Array { bounds, elem, .. }, Type::Word(b)) => {
            same_word(elem, b, snap) && le(&bounds.lo, &zero) && le(&one, &bounds.hi)
        }
        (
            Type::Array {
                bounds: b1,
                elem: e1,
                kind: k1,
            },
            Type::Array {
                bounds: b2,
                elem: e2,
                kind: k2,
            },
        ) => {
            (k1 == k2 || *k2 == NullTerm::Plain)
                && same_word(e1, e2, snap)
                && le(&b1.lo, &b2.lo)
                && le(&b2.hi, &b1.hi)
        }
        (Type::Struct(s1), Type::Struct(s2)) => s1 == s2,
        (Type::Struct(s), Type::Word(WordType::Int)) => first_field_int(s, structs),
        (
            Type::Struct(s),
            Type::Array {
                bounds,
                elem: WordType::Int,
                kind: NullTerm::Plain,
            },
        ) => first_field_int(s, structs) && le(&zero, &bounds.lo) && le(&bounds.hi, &one),
        _ => false,
    }
}

fn first_field_int(s: &str, structs: &StructEnv) -> bool {
    structs
        .get(s)
        .and_then(|d| d.fields.first())
        .is_some_and(|(_, t)| t.is_int())
}

/// Least upper bound of two branch types. Only types of the same shape
/// join: array pointers with the same mode, element and terminator flag
/// join to the intersection of their bounds.
pub fn type_join(t1: &WordType, t2: &WordType, theta: &PredEnv, snap: &Snapshot) -> Option<WordType> {
    if t1 == t2 {
        return Some(t1.clone());
    }
    let (m1, b1, e1, k1) = t1.as_array_ptr()?;
    let (m2, b2, e2, k2) = t2.as_array_ptr()?;
    if m1 != m2 || k1 != k2 || !same_word(e1, e2, snap) {
        return None;
    }
    let le = |a: &Bound, b: &Bound| bound_le(a, b, theta, snap);
    let lo = if le(&b1.lo, &b2.lo) {
        b2.lo.clone()
    } else if le(&b2.lo, &b1.lo) {
        b1.lo.clone()
    } else {
        return None;
    };
    let hi = if le(&b1.hi, &b2.hi) {
        b1.hi.clone()
    } else if le(&b2.hi, &b1.hi) {
        b2.hi.clone()
    } else {
        return None;
    };
    Some(t1.with_bounds(BoundPair::new(lo, hi)))
}

/// Addresses a checked pointer of type `ptr^c ω` at `n` may reach.
fn literal_cells(n: i64, pointee: &Type, structs: &StructEnv) -> Option<std::ops::Range<i64>> {
    match pointee {
        Type::Word(_) => Some(n..n + 1),
        Type::Struct(s) => structs.get(s).map(|d| n..n + d.fields.len() as i64),
        Type::Array { bounds, kind, .. } => {
            let (lo, hi) = bounds.as_consts()?;
            let extra = if *kind == NullTerm::Nt { 1 } else { 0 };
            Some(n.checked_add(lo)?..n.checked_add(hi)?.checked_add(extra)?)
        }
    }
}

/// `H;σ ⊢ n : τ`. Every cell a checked pointer can reach must exist and
/// hold a well-typed literal.
pub fn type_literal(heap: &Heap, scope: &mut ScopeSet, n: i64, t: &WordType, structs: &StructEnv) -> bool {
    let WordType::Ptr(Mode::Checked, pointee) = t else { return true };
    if n == 0 || scope.contains(&(n, t.clone())) {
        return true;
    }
    let Some(cells) = literal_cells(n, pointee, structs) else { return false };
    if cells.start < cells.end && (cells.start < 1 || cells.end - 1 > heap.len() as i64) {
        return false;
    }
    scope.insert((n, t.clone()));
    cells.into_iter().all(|a| match heap.get(a) {
        Some((v, vt)) => type_literal(heap, scope, *v, vt, structs),
        None => false,
    })
}

/// Binds `x` for a body, forgetting predicates and known values of any
/// earlier binding of the same name.
fn rebind(
    rule: &'static str,
    gamma: &TypeEnv,
    theta: &PredEnv,
    snap: &Snapshot,
    x: &Ident,
    t: WordType,
) -> Result<(TypeEnv, PredEnv, Snapshot), TypeError> {
    if let Some((y, _)) = gamma.iter().find(|(y, ty)| *y != x && ty.mentions(x)) {
        return fail(rule, format!("rebinding `{x}` would change the bounds of `{y}`"));
    }
    if t.mentions(x) {
        return fail(rule, format!("type of `{x}` refers to an outer `{x}`"));
    }
    let mut g = gamma.clone();
    g.insert(x.clone(), t);
    let mut th = theta.clone();
    th.remove(x);
    let mut sn = snap.clone();
    sn.remove(x);
    Ok((g, th, sn))
}

fn require_mode(rule: &'static str, m: Mode, pointer: Mode) -> Result<(), TypeError> {
    if m <= pointer {
        Ok(())
    } else {
        fail(rule, "m ≤ m' violated: unchecked pointer used in checked mode")
    }
}

fn array_parts(t: &WordType) -> Option<(Mode, &WordType)> {
    t.as_array_ptr().map(|(m, _, elem, _)| (m, elem))
}

/// `Γ;Θ ⊢_m e : τ`.
pub fn type_expr(
    ctx: &Ctx,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: Mode,
    e: &Expr,
    snap: &Snapshot,
) -> Result<WordType, TypeError> {
    let ty = |e: &Expr| type_expr(ctx, gamma, theta, m, e, snap);
    let sub = |a: &WordType, b: &WordType| subtype(a, b, theta, snap, ctx.structs);
    match e {
        Expr::Lit(n, t) => {
            if !t.is_closed() {
                return fail("T-Const", format!("literal annotation {t} has free variables"));
            }
            if !wf_word(&TypeEnv::new(), t, ctx.structs) {
                return fail("T-Const", format!("literal annotation {t} is ill-formed"));
            }
            if !type_literal(ctx.heap, &mut ScopeSet::new(), *n, t, ctx.structs) {
                return fail("T-Const", format!("{n} is not a valid literal of type {t} in this heap"));
            }
            Ok(t.clone())
        }

        Expr::Var(x) => match gamma.get(x) {
            Some(t) => Ok(t.clone()),
            None => fail("T-Var", format!("unbound variable `{x}`")),
        },

        Expr::Malloc(w) => {
            if !wf_type(gamma, w, ctx.structs) {
                return fail("T-Mac", format!("allocation type {} is ill-formed", WordType::checked(w.clone())));
            }
            Ok(WordType::checked(w.clone()))
        }

        Expr::Let(x, rhs, body) => {
            if let Expr::Strlen(y) = &**rhs {
                if y != x {
                    if let Some(t) = type_let_strlen(ctx, gamma, theta, m, x, y, body, snap) {
                        return Ok(t);
                    }
                }
            }
            let t1 = ty(rhs)?;
            let shape = rhs.as_bound();
            let (g, th, mut sn) = rebind("T-Let", gamma, theta, snap, x, t1)?;
            if let Some(b) = &shape {
                if let Some(v) = resolve(b, snap).as_const() {
                    sn.insert(x.clone(), v);
                }
            }
            let t2 = type_expr(ctx, &g, &th, m, body, &sn)?;
            if !t2.mentions(x) {
                return Ok(t2);
            }
            match shape {
                Some(b) => Ok(t2.subst(&BoundSubst::from([(x.clone(), b)]))),
                None => fail(
                    "T-Let",
                    format!("body type {t2} depends on `{x}` but the bound expression is not a bound"),
                ),
            }
        }

        Expr::Cast(t, inner) => {
            let t1 = ty(inner)?;
            if !wf_word(gamma, t, ctx.structs) {
                return fail("T-Cast", format!("cast target {t} is ill-formed"));
            }
            if m == Mode::Checked && t.is_checked_ptr() && !sub(&t1, t) {
                return fail(
                    "T-Cast",
                    format!("checked cast to {t} requires a subtype, found {t1}"),
                );
            }
            Ok(t.clone())
        }

        Expr::DynCast(t, inner) => {
            let t1 = ty(inner)?;
            let (Some((mt, _, et, kt)), Some((ms, _, es, ks))) = (t.as_array_ptr(), t1.as_array_ptr()) else {
                return fail("T-DynCast", format!("dynamic cast from {t1} to {t} needs array pointers"));
            };
            if mt != m || ms != m || kt != ks || !same_word(et, es, snap) {
                return fail("T-DynCast", format!("cannot dynamically cast {t1} to {t}"));
            }
            if !wf_word(gamma, t, ctx.structs) {
                return fail("T-DynCast", format!("cast target {t} is ill-formed"));
            }
            Ok(t.clone())
        }

        Expr::Call(f, args) => {
            let Some(def) = ctx.funs.get(f) else { return fail("T-Fun", format!("unknown function `{f}`")) };
            if def.params.len() != args.len() {
                return fail(
                    "T-Fun",
                    format!("`{f}` expects {} arguments, got {}", def.params.len(), args.len()),
                );
            }
            let mut map = BoundSubst::new();
            for ((x, _), a) in def.params.iter().zip(args) {
                let dependent = def.params.iter().any(|(_, t)| t.mentions(x)) || def.ret.mentions(x);
                match a.as_bound() {
                    Some(b) => {
                        map.insert(x.clone(), b);
                    }
                    None if dependent => {
                        return fail("T-Fun", format!("argument for dependent parameter `{x}` is not a bound"));
                    }
                    None => {}
                }
            }
            for ((x, t), a) in def.params.iter().zip(args) {
                let ta = ty(a)?;
                let expected = t.subst(&map);
                if !sub(&ta, &expected) {
                    return fail("T-Fun", format!("argument `{x}` has type {ta}, expected {expected}"));
                }
            }
            Ok(def.ret.subst(&map))
        }

        Expr::Strlen(x) => match gamma.get(x) {
            Some(t) if t.as_array_ptr().is_some_and(|(_, _, _, k)| k == NullTerm::Nt) => {
                let (mp, ..) = t.as_array_ptr().unwrap();
                require_mode("T-Str", m, mp)?;
                Ok(WordType::Int)
            }
            Some(t) => fail("T-Str", format!("strlen of `{x}` with type {t}")),
            None => fail("T-Str", format!("unbound variable `{x}`")),
        },

        Expr::Add(a, b) => {
            let (ta, tb) = (ty(a)?, ty(b)?);
            if ta.is_int() && tb.is_int() {
                Ok(WordType::Int)
            } else {
                fail("T-Add", format!("cannot add {ta} and {tb}"))
            }
        }

        Expr::Deref(inner) => {
            if let Expr::Add(a, b) = &**inner {
                let ta = ty(a)?;
                if let Some((mp, elem)) = array_parts(&ta) {
                    let tb = ty(b)?;
                    if !tb.is_int() {
                        return fail("T-Ind", format!("index has type {tb}"));
                    }
                    require_mode("T-Ind", m, mp)?;
                    return Ok(elem.clone());
                }
            }
            let t = ty(inner)?;
            match t.pointee() {
                Some((mp, Type::Word(w))) => {
                    require_mode("T-Def", m, mp)?;
                    Ok(w.clone())
                }
                Some((mp, Type::Array { elem, .. })) => {
                    require_mode("T-DefArr", m, mp)?;
                    Ok(elem.clone())
                }
                _ => fail("T-Def", format!("cannot dereference {t}")),
            }
        }

        Expr::Assign(lhs, rhs) => {
            if let Expr::Add(a, b) = &**lhs {
                let ta = ty(a)?;
                if let Some((mp, elem)) = array_parts(&ta) {
                    let tb = ty(b)?;
                    if !tb.is_int() {
                        return fail("T-IndAssign", format!("index has type {tb}"));
                    }
                    let tv = ty(rhs)?;
                    if !sub(&tv, elem) {
                        return fail("T-IndAssign", format!("cannot store {tv} into {elem}"));
                    }
                    require_mode("T-IndAssign", m, mp)?;
                    return Ok(elem.clone());
                }
            }
            let t = ty(lhs)?;
            let tv = ty(rhs)?;
            let (rule, mp, target) = match t.pointee() {
                Some((mp, Type::Word(w))) => ("T-Assign", mp, w),
                Some((mp, Type::Array { elem, .. })) => ("T-AssignArr", mp, elem),
                _ => return fail("T-Assign", format!("cannot assign through {t}")),
            };
            if !sub(&tv, target) {
                return fail(rule, format!("cannot store {tv} into {target}"));
            }
            require_mode(rule, m, mp)?;
            Ok(target.clone())
        }

        Expr::Unchecked(inner) => type_expr(ctx, gamma, theta, Mode::Unchecked, inner, snap),

        Expr::If(guard, then_, else_) => {
            if let Expr::Deref(g) = &**guard {
                if let Expr::Var(x) = &**g {
                    if let Some(t) = gamma.get(x) {
                        if let Some((Mode::Checked, bounds, _, NullTerm::Nt)) = t.as_array_ptr() {
                            if resolve(&bounds.hi, snap) == Bound::Const(0) {
                                let widened = t.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::Const(1)));
                                let mut g1 = gamma.clone();
                                g1.insert(x.clone(), widened);
                                let t1 = type_expr(ctx, &g1, theta, m, then_, snap)?;
                                let t2 = ty(else_)?;
                                return type_join(&t1, &t2, theta, snap).map_or_else(
                                    || fail("T-IfNT", format!("branch types {t1} and {t2} have no join")),
                                    Ok,
                                );
                            }
                        }
                    }
                }
            }
            ty(guard)?;
            let t1 = ty(then_)?;
            let t2 = ty(else_)?;
            type_join(&t1, &t2, theta, snap)
                .map_or_else(|| fail("T-If", format!("branch types {t1} and {t2} have no join")), Ok)
        }

        Expr::FieldAddr(inner, f) => {
            let t = ty(inner)?;
            let Some((mp, Type::Struct(s))) = t.pointee() else {
                return fail("T-Struct", format!("field access on {t}"));
            };
            require_mode("T-Struct", m, mp)?;
            let Some(def) = ctx.structs.get(s) else { return fail("T-Struct", format!("unknown struct `{s}`")) };
            match def.field_index(f) {
                Some(i) => Ok(WordType::ptr(mp, Type::Word(def.fields[i].1.clone()))),
                None => fail("T-Struct", format!("struct `{s}` has no field `{f}`")),
            }
        }

        Expr::Ret(x, _, body) => {
            if !gamma.contains_key(x) {
                return fail("T-Ret", format!("`{x}` is not bound"));
            }
            let t = ty(body)?;
            match snap.get(x) {
                Some(v) if t.mentions(x) => Ok(t.subst(&BoundSubst::from([(x.clone(), Bound::Const(*v))]))),
                _ => Ok(t),
            }
        }
    }
}

/// `let x = strlen(y) in body`, with `y`'s upper bound rebound to `x` and
/// `x ≥ 0` in the body. `None` when the rule does not apply.
#[allow(clippy::too_many_arguments)]
fn type_let_strlen(
    ctx: &Ctx,
    gamma: &TypeEnv,
    theta: &PredEnv,
    m: Mode,
    x: &Ident,
    y: &Ident,
    body: &Expr,
    snap: &Snapshot,
) -> Option<WordType> {
    let ty_y = gamma.get(y)?;
    let (Mode::Checked, bounds, _, NullTerm::Nt) = ty_y.as_array_ptr()? else { return None };
    let widened = ty_y.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::var(x, 0)));
    let (mut g, mut th, sn) = rebind("T-LetStr", gamma, theta, snap, x, WordType::Int).ok()?;
    g.insert(y.clone(), widened);
    th.insert(x.clone(), Pred::GeZero);
    let t = type_expr(ctx, &g, &th, m, body, &sn).ok()?;
    (!t.mentions(x)).then_some(t)
}

/// Checks a closed source program: well-formed definitions and a main
/// expression typed in checked mode.
pub fn typecheck_program(p: &Program) -> Result<WordType, TypeError> {
    wf_fun(&p.funs, &p.structs).map_err(|e| TypeError {
        rule: "WF-Fun",
        message: e.to_string(),
    })?;
    let heap = Heap::new();
    let ctx = Ctx {
        funs: &p.funs,
        structs: &p.structs,
        heap: &heap,
    };
    type_expr(&ctx, &TypeEnv::new(), &PredEnv::new(), Mode::Checked, &p.main, &Snapshot::new())
}
