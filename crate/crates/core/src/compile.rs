//! Type-directed compilation to the erased target: A-normal form, explicit
//! null and bounds checks, and shadow variables that carry the live bounds of
//! array pointers whose runtime bounds can differ from their static type.
//!
//! A compiled expression is a closure (a sequence of `let` frames whose
//! scope extends to the end of the program) plus the atom holding its value.

use crate::ast::*;
use crate::corec::{Atom, BinOp, CConfig, CExpr, CFun, CFunEnv, CProgram};
use crate::semantics::Config;
use crate::typing::{resolve, type_join, Pred, PredEnv, Snapshot, TypeEnv};
use std::collections::HashMap;
use std::fmt;

/// Switches for deliberately broken compilers, used to check that the
/// property harness notices missing checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mutations {
    /// Emit the upper-bound widening in the then-branch of `if (*x)`.
    pub widen_deref: bool,
    /// Emit null checks.
    pub check_null: bool,
    /// Writes through null-terminated pointers may not touch the terminator.
    pub strict_writes: bool,
}

impl Default for Mutations {
    fn default() -> Self {
        Mutations {
            widen_deref: true,
            check_null: true,
            strict_writes: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileError {
    pub message: String,
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "compile: {}", self.message)
    }
}

impl std::error::Error for CompileError {}

fn err<T>(message: impl Into<String>) -> Result<T, CompileError> {
    Err(CompileError {
        message: message.into(),
    })
}

/// `let` frames, outermost first.
pub type Closure = Vec<(Ident, CExpr)>;

/// Shadow pairs `(x, lower, upper)` in the order they were introduced.
pub type ShadowLog = Vec<(Ident, Ident, Ident)>;

/// Fills the hole of `closure` with `e`.
pub fn plug(closure: Closure, e: CExpr) -> CExpr {
    closure
        .into_iter()
        .rev()
        .fold(e, |body, (x, c)| CExpr::let_(x, c, body))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Compiled {
    pub closure: Closure,
    pub atom: Atom,
    pub ty: WordType,
    /// Live bounds when the runtime annotation may differ from `ty`.
    pub bounds: Option<(Atom, Atom)>,
}

/// Bindings of one name that a scope saves and restores.
struct Saved {
    gamma: Option<WordType>,
    theta: Option<Pred>,
    snap: Option<i64>,
    rho: Option<(Ident, Ident)>,
    name: Option<Ident>,
}

pub struct Compiler<'a> {
    funs: &'a FunEnv,
    structs: &'a StructEnv,
    muts: Mutations,
    counter: usize,
    gamma: TypeEnv,
    theta: PredEnv,
    snap: Snapshot,
    /// Shadow bound variables of tracked array pointers.
    rho: HashMap<Ident, (Ident, Ident)>,
    /// Target names of source variables renamed to avoid capture.
    names: HashMap<Ident, Ident>,
    out: Closure,
    /// Every shadow pair created, as (source variable, lo, hi).
    pub shadow_log: Vec<(Ident, Ident, Ident)>,
}

impl<'a> Compiler<'a> {
    pub fn new(funs: &'a FunEnv, structs: &'a StructEnv, muts: Mutations) -> Self {
        Compiler {
            funs,
            structs,
            muts,
            counter: 0,
            gamma: TypeEnv::new(),
            theta: PredEnv::new(),
            snap: Snapshot::new(),
            rho: HashMap::new(),
            names: HashMap::new(),
            out: Vec::new(),
            shadow_log: Vec::new(),
        }
    }

    fn fresh(&mut self) -> Ident {
        let x = ident(&format!("${}", self.counter));
        self.counter += 1;
        x
    }

    fn emit(&mut self, c: CExpr) -> Atom {
        let x = self.fresh();
        self.out.push((x.clone(), c));
        Atom::Var(x)
    }

    fn emit_as(&mut self, x: Ident, c: CExpr) {
        self.out.push((x, c));
    }

    fn name(&self, x: &Ident) -> Ident {
        self.names.get(x).cloned().unwrap_or_else(|| x.clone())
    }

    fn save(&self, x: &Ident) -> Saved {
        Saved {
            gamma: self.gamma.get(x).cloned(),
            theta: self.theta.get(x).copied(),
            snap: self.snap.get(x).copied(),
            rho: self.rho.get(x).cloned(),
            name: self.names.get(x).cloned(),
        }
    }

    fn restore(&mut self, x: &Ident, s: Saved) {
        fn put<V>(m: &mut HashMap<Ident, V>, x: &Ident, v: Option<V>) {
            match v {
                Some(v) => {
                    m.insert(x.clone(), v);
                }
                None => {
                    m.remove(x);
                }
            }
        }
        put(&mut self.gamma, x, s.gamma);
        put(&mut self.theta, x, s.theta);
        put(&mut self.snap, x, s.snap);
        put(&mut self.rho, x, s.rho);
        put(&mut self.names, x, s.name);
    }

    /// Compiles a subexpression into a fresh closure, leaving the current
    /// one untouched.
    fn detached(&mut self, e: &Expr) -> Result<Compiled, CompileError> {
        let outer = std::mem::take(&mut self.out);
        let r = self.expr(e);
        let inner = std::mem::replace(&mut self.out, outer);
        r.map(|mut c| {
            c.closure = inner;
            c
        })
    }

    /// Atom for a static bound, evaluated at this point of the program.
    fn bound_atom(&mut self, b: &Bound) -> Atom {
        match b {
            Bound::Const(n) => Atom::Num(*n),
            Bound::VarPlus(y, 0) => Atom::Var(self.name(y)),
            Bound::VarPlus(y, k) => {
                let y = self.name(y);
                self.emit(CExpr::Binop(BinOp::Add, Atom::Var(y), Atom::Num(*k)))
            }
        }
    }

    fn bounds_of(&mut self, c: &Compiled) -> (Atom, Atom) {
        if let Some(b) = &c.bounds {
            return b.clone();
        }
        let (_, bounds, _, _) = c.ty.as_array_ptr().expect("bounds of an array pointer");
        let bounds = bounds.clone();
        (self.bound_atom(&bounds.lo), self.bound_atom(&bounds.hi))
    }

    fn check_null(&mut self, a: &Atom, m: Mode) {
        if m == Mode::Checked && self.muts.check_null {
            self.emit(CExpr::if_(a.clone(), CExpr::num(0), CExpr::NullFail));
        }
    }

    /// `lo ≤ a` must hold.
    fn check_le(&mut self, lo: &Atom, a: &Atom) {
        let c = self.emit(CExpr::Binop(BinOp::Le, lo.clone(), a.clone()));
        self.emit(CExpr::if_(c, CExpr::num(0), CExpr::BoundsFail));
    }

    /// `a < hi` must hold.
    fn check_lt(&mut self, a: &Atom, hi: &Atom) {
        let c = self.emit(CExpr::Binop(BinOp::Le, hi.clone(), a.clone()));
        self.emit(CExpr::if_(c, CExpr::BoundsFail, CExpr::num(0)));
    }

    /// Read access at offset `a`: the terminator of a null-terminated array
    /// is readable.
    fn check_bounds(&mut self, (lo, hi): &(Atom, Atom), kind: NullTerm, a: &Atom) {
        self.check_le(lo, a);
        match kind {
            NullTerm::Nt => self.check_le(a, hi),
            NullTerm::Plain => self.check_lt(a, hi),
        }
    }

    fn check_bounds_w(&mut self, bounds: &(Atom, Atom), kind: NullTerm, a: &Atom) {
        let kind = if self.muts.strict_writes { NullTerm::Plain } else { kind };
        self.check_bounds(bounds, kind, a);
    }

    /// Binds fresh shadow variables for `x` holding the given bounds.
    fn track(&mut self, x: &Ident, (lo, hi): (Atom, Atom)) {
        let (xl, xh) = (self.fresh(), self.fresh());
        self.emit_as(xl.clone(), CExpr::Atom(lo));
        self.emit_as(xh.clone(), CExpr::Atom(hi));
        self.shadow_log.push((x.clone(), xl.clone(), xh.clone()));
        self.rho.insert(x.clone(), (xl, xh));
    }

    /// Shadows for a checked null-terminated pointer, from its static type.
    fn extend_rho(&mut self, x: &Ident, t: &WordType) {
        if let Some((Mode::Checked, bounds, _, NullTerm::Nt)) = t.as_array_ptr() {
            let bounds = bounds.clone();
            let b = (self.bound_atom(&bounds.lo), self.bound_atom(&bounds.hi));
            self.track(x, b);
        } else {
            self.rho.remove(x);
        }
    }

    fn widen_deref(&mut self, x: &Ident) {
        if let Some((_, xh)) = self.rho.get(x).cloned() {
            self.emit(CExpr::if_(
                Atom::Var(xh.clone()),
                CExpr::num(0),
                CExpr::StackAssign(xh, Atom::Num(1)),
            ));
        }
    }

    fn widen_strlen(&mut self, x: &Ident, len: &Atom) {
        if let Some((_, xh)) = self.rho.get(x).cloned() {
            let c = self.emit(CExpr::Binop(BinOp::Le, len.clone(), Atom::Var(xh.clone())));
            self.emit(CExpr::if_(c, CExpr::num(0), CExpr::StackAssign(xh, len.clone())));
        }
    }

    fn done(&mut self, atom: Atom, ty: WordType) -> Result<Compiled, CompileError> {
        Ok(Compiled {
            closure: Vec::new(),
            atom,
            ty,
            bounds: None,
        })
    }

    /// Compiles `e`, appending its frames to the current closure.
    pub fn expr(&mut self, e: &Expr) -> Result<Compiled, CompileError> {
        match e {
            Expr::Lit(n, t) => self.done(Atom::Num(*n), t.clone()),

            Expr::Var(x) => {
                let Some(t) = self.gamma.get(x).cloned() else { return err(format!("unbound variable `{x}`")) };
                let atom = Atom::Var(self.name(x));
                // Copy the shadows: later widening must not affect this read.
                let bounds = self.rho.get(x).cloned().map(|(xl, xh)| {
                    (self.emit(CExpr::Atom(Atom::Var(xl))), self.emit(CExpr::Atom(Atom::Var(xh))))
                });
                Ok(Compiled {
                    closure: Vec::new(),
                    atom,
                    ty: t,
                    bounds,
                })
            }

            Expr::Malloc(w) => {
                let size = match w {
                    Type::Word(_) => Atom::Num(1),
                    Type::Struct(s) => match self.structs.get(s) {
                        Some(d) => Atom::Num(d.fields.len() as i64),
                        None => return err(format!("unknown struct `{s}`")),
                    },
                    Type::Array { bounds, kind, .. } => {
                        let lo = self.bound_atom(&bounds.lo);
                        let hi = self.bound_atom(&bounds.hi);
                        if lo != Atom::Num(0) {
                            self.emit(CExpr::if_(lo, CExpr::BoundsFail, CExpr::num(0)));
                        }
                        if !matches!(hi, Atom::Num(h) if h > 0) {
                            let c = self.emit(CExpr::Binop(BinOp::Le, hi.clone(), Atom::Num(0)));
                            self.emit(CExpr::if_(c, CExpr::BoundsFail, CExpr::num(0)));
                        }
                        match (kind, &hi) {
                            (NullTerm::Plain, _) => hi,
                            (NullTerm::Nt, Atom::Num(h)) => Atom::Num(h + 1),
                            (NullTerm::Nt, _) => self.emit(CExpr::Binop(BinOp::Add, hi, Atom::Num(1))),
                        }
                    }
                };
                let a = self.emit(CExpr::Malloc(size));
                self.done(a, WordType::checked(w.clone()))
            }

            Expr::Let(x, rhs, body) => {
                if let Expr::Strlen(y) = &**rhs {
                    if y != x && self.gamma.get(y).is_some_and(WordType::is_checked_nt_ptr) {
                        let mark = (self.out.len(), self.counter);
                        match self.let_strlen(x, y, body) {
                            Ok(c) => return Ok(c),
                            Err(_) => {
                                self.out.truncate(mark.0);
                                self.counter = mark.1;
                            }
                        }
                    }
                }
                self.let_(x, rhs, body)
            }

            Expr::Cast(t, inner) => {
                let c = self.expr(inner)?;
                self.done(c.atom, t.clone())
            }

            Expr::DynCast(t, inner) => {
                let c = self.expr(inner)?;
                if c.ty.as_array_ptr().is_none() {
                    return err(format!("dynamic cast from {}", c.ty));
                }
                let Some((_, target, _, _)) = t.as_array_ptr() else { return err(format!("dynamic cast to {t}")) };
                let target = target.clone();
                let (sl, sh) = self.bounds_of(&c);
                let tl = self.bound_atom(&target.lo);
                let th = self.bound_atom(&target.hi);
                self.check_le(&sl, &tl);
                self.check_le(&th, &sh);
                self.done(c.atom, t.clone())
            }

            Expr::Call(f, args) => {
                let Some(def) = self.funs.get(f) else { return err(format!("unknown function `{f}`")) };
                if def.params.len() != args.len() {
                    return err(format!("arity mismatch calling `{f}`"));
                }
                let mut atoms = Vec::with_capacity(args.len());
                for a in args {
                    atoms.push(self.expr(a)?.atom);
                }
                let map: BoundSubst = def
                    .params
                    .iter()
                    .zip(args)
                    .filter_map(|((x, _), a)| a.as_bound().map(|b| (x.clone(), b)))
                    .collect();
                let ret = def.ret.subst(&map);
                let r = self.emit(CExpr::Call(f.clone(), atoms));
                self.done(r, ret)
            }

            Expr::Strlen(x) => {
                let Some(t) = self.gamma.get(x).cloned() else { return err(format!("unbound variable `{x}`")) };
                let Some((m, bounds, _, kind)) = t.as_array_ptr() else { return err(format!("strlen of {t}")) };
                let a = Atom::Var(self.name(x));
                self.check_null(&a, m);
                if m == Mode::Checked {
                    let b = match self.rho.get(x).cloned() {
                        Some((xl, xh)) => (Atom::Var(xl), Atom::Var(xh)),
                        None => {
                            let bounds = bounds.clone();
                            (self.bound_atom(&bounds.lo), self.bound_atom(&bounds.hi))
                        }
                    };
                    self.check_bounds(&b, kind, &Atom::Num(0));
                }
                let len = self.emit(CExpr::Strlen(a));
                if m == Mode::Checked && kind == NullTerm::Nt {
                    self.widen_strlen(x, &len);
                }
                self.done(len, WordType::Int)
            }

            Expr::Add(a, b) => {
                let c1 = self.expr(a)?;
                let c2 = self.expr(b)?;
                if !c1.ty.is_int() || !c2.ty.is_int() {
                    return err(format!("cannot add {} and {}", c1.ty, c2.ty));
                }
                let r = self.emit(CExpr::Binop(BinOp::Add, c1.atom, c2.atom));
                self.done(r, WordType::Int)
            }

            Expr::Deref(inner) => {
                if let Expr::Add(a, b) = &**inner {
                    let c1 = self.expr(a)?;
                    if let Some((m, _, elem, kind)) = c1.ty.as_array_ptr() {
                        let (elem, b1) = (elem.clone(), c1.bounds.clone());
                        let c2 = self.expr(b)?;
                        self.check_null(&c1.atom, m);
                        let addr = self.emit(CExpr::Binop(BinOp::Add, c1.atom.clone(), c2.atom.clone()));
                        self.check_null(&addr, m);
                        if m == Mode::Checked {
                            let bounds = match b1 {
                                Some(b) => b,
                                None => self.bounds_of(&c1),
                            };
                            self.check_bounds(&bounds, kind, &c2.atom);
                        }
                        let r = self.emit(CExpr::Deref(addr));
                        return self.done(r, elem);
                    }
                    let c2 = self.expr(b)?;
                    return err(format!("cannot dereference {} + {}", c1.ty, c2.ty));
                }
                let c = self.expr(inner)?;
                let (m, elem) = match c.ty.pointee() {
                    Some((m, Type::Word(w))) => (m, w.clone()),
                    Some((m, Type::Array { elem, kind, .. })) => {
                        let (elem, kind) = (elem.clone(), *kind);
                        self.check_null(&c.atom, m);
                        if m == Mode::Checked {
                            let bounds = self.bounds_of(&c);
                            self.check_bounds(&bounds, kind, &Atom::Num(0));
                        }
                        let r = self.emit(CExpr::Deref(c.atom));
                        return self.done(r, elem);
                    }
                    _ => return err(format!("cannot dereference {}", c.ty)),
                };
                self.check_null(&c.atom, m);
                let r = self.emit(CExpr::Deref(c.atom));
                self.done(r, elem)
            }

            Expr::Assign(lhs, rhs) => {
                if let Expr::Add(a, b) = &**lhs {
                    let c1 = self.expr(a)?;
                    if let Some((m, _, elem, kind)) = c1.ty.as_array_ptr() {
                        let elem = elem.clone();
                        let c2 = self.expr(b)?;
                        self.check_null(&c1.atom, m);
                        let addr = self.emit(CExpr::Binop(BinOp::Add, c1.atom.clone(), c2.atom.clone()));
                        let c3 = self.expr(rhs)?;
                        self.check_null(&addr, m);
                        if m == Mode::Checked {
                            let bounds = self.bounds_of(&c1);
                            self.check_bounds_w(&bounds, kind, &c2.atom);
                        }
                        let r = self.emit(CExpr::Assign(addr, c3.atom));
                        return self.done(r, elem);
                    }
                    return err(format!("cannot assign through {}", c1.ty));
                }
                let c1 = self.expr(lhs)?;
                let c2 = self.expr(rhs)?;
                let elem = match c1.ty.pointee() {
                    Some((m, Type::Word(w))) => {
                        let w = w.clone();
                        self.check_null(&c1.atom, m);
                        w
                    }
                    Some((m, Type::Array { elem, kind, .. })) => {
                        let (elem, kind) = (elem.clone(), *kind);
                        self.check_null(&c1.atom, m);
                        if m == Mode::Checked {
                            let bounds = self.bounds_of(&c1);
                            self.check_bounds_w(&bounds, kind, &Atom::Num(0));
                        }
                        elem
                    }
                    _ => return err(format!("cannot assign through {}", c1.ty)),
                };
                let r = self.emit(CExpr::Assign(c1.atom, c2.atom));
                self.done(r, elem)
            }

            Expr::Unchecked(inner) => self.expr(inner),

            Expr::If(guard, then_, else_) => self.if_(guard, then_, else_),

            Expr::FieldAddr(inner, f) => {
                let c = self.expr(inner)?;
                let Some((m, Type::Struct(s))) = c.ty.pointee() else {
                    return err(format!("field access on {}", c.ty));
                };
                let Some(def) = self.structs.get(s) else { return err(format!("unknown struct `{s}`")) };
                let Some(i) = def.field_index(f) else { return err(format!("unknown field `{f}`")) };
                let ft = def.fields[i].1.clone();
                self.check_null(&c.atom, m);
                let r = self.emit(CExpr::Binop(BinOp::Add, c.atom, Atom::Num(i as i64)));
                self.done(r, WordType::ptr(m, Type::Word(ft)))
            }

            Expr::Ret(x, saved, body) => self.ret(x, saved, body),
        }
    }

    fn let_strlen(&mut self, x: &Ident, y: &Ident, body: &Expr) -> Result<Compiled, CompileError> {
        let len = self.expr(&Expr::Strlen(y.clone()))?;
        let (sx, sy) = (self.save(x), self.save(y));
        let target = self.bind_name(x);
        self.emit_as(target, CExpr::Atom(len.atom));
        let ty_y = self.gamma[y].clone();
        let (_, bounds, _, _) = ty_y.as_array_ptr().unwrap();
        let widened = ty_y.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::var(x, 0)));
        self.gamma.insert(x.clone(), WordType::Int);
        self.gamma.insert(y.clone(), widened);
        self.theta.insert(x.clone(), Pred::GeZero);
        self.snap.remove(x);
        self.rho.remove(x);
        let r = self.expr(body);
        self.restore(y, sy);
        self.restore(x, sx);
        let c = r?;
        if c.ty.mentions(x) {
            return err(format!("result type {} depends on `{x}`", c.ty));
        }
        Ok(c)
    }

    /// Target name for a new binding of `x`; renamed when `x` is already in
    /// scope so the leaked scope of the closure cannot capture outer uses.
    fn bind_name(&mut self, x: &Ident) -> Ident {
        let target = if self.gamma.contains_key(x) {
            let k = self.counter;
            self.counter += 1;
            ident(&format!("{x}${k}"))
        } else {
            x.clone()
        };
        self.names.insert(x.clone(), target.clone());
        target
    }

    fn let_(&mut self, x: &Ident, rhs: &Expr, body: &Expr) -> Result<Compiled, CompileError> {
        let c1 = self.expr(rhs)?;
        let sx = self.save(x);
        match (&c1.bounds, c1.ty.as_array_ptr()) {
            (Some(b), Some((Mode::Checked, ..))) => self.track(x, b.clone()),
            _ => self.extend_rho(x, &c1.ty),
        }
        let target = self.bind_name(x);
        self.emit_as(target, CExpr::Atom(c1.atom));
        let shape = rhs.as_bound();
        let value = shape.as_ref().and_then(|b| resolve(b, &self.snap).as_const());
        self.gamma.insert(x.clone(), c1.ty);
        self.theta.remove(x);
        self.snap.remove(x);
        if let Some(v) = value {
            self.snap.insert(x.clone(), v);
        }
        let r = self.expr(body);
        self.restore(x, sx);
        let mut c = r?;
        if c.ty.mentions(x) {
            match shape {
                Some(b) => c.ty = c.ty.subst(&BoundSubst::from([(x.clone(), b)])),
                None => return err(format!("result type {} depends on `{x}`", c.ty)),
            }
        }
        Ok(c)
    }

    fn if_(&mut self, guard: &Expr, then_: &Expr, else_: &Expr) -> Result<Compiled, CompileError> {
        let nt_var = match guard {
            Expr::Deref(g) => match &**g {
                Expr::Var(x) if self.gamma.get(x).is_some_and(WordType::is_checked_nt_ptr) => Some(x.clone()),
                _ => None,
            },
            _ => None,
        };
        let g = self.expr(guard)?;

        let mut then_c = match &nt_var {
            Some(x) => {
                let sx = self.gamma.get(x).cloned();
                let t = sx.clone().unwrap();
                let (_, bounds, _, _) = t.as_array_ptr().unwrap();
                if resolve(&bounds.hi, &self.snap) == Bound::Const(0) {
                    let widened = t.with_bounds(BoundPair::new(bounds.lo.clone(), Bound::Const(1)));
                    self.gamma.insert(x.clone(), widened);
                }
                let outer = std::mem::take(&mut self.out);
                if self.muts.widen_deref {
                    self.widen_deref(x);
                }
                let r = self.expr(then_);
                let frames = std::mem::replace(&mut self.out, outer);
                self.gamma.insert(x.clone(), t);
                let mut c = r?;
                c.closure = frames;
                c
            }
            None => self.detached(then_)?,
        };
        let mut else_c = self.detached(else_)?;

        let Some(ty) = type_join(&then_c.ty, &else_c.ty, &self.theta, &self.snap) else {
            return err(format!("branch types {} and {} have no join", then_c.ty, else_c.ty));
        };
        let mut bounds = None;
        if let Some((Mode::Checked, joined, _, _)) = ty.as_array_ptr() {
            let differs = |c: &Compiled| c.bounds.is_some() || c.ty.as_array_ptr().map(|p| p.1) != Some(joined);
            if differs(&then_c) || differs(&else_c) {
                let (rl, rh) = (self.fresh(), self.fresh());
                self.emit_as(rl.clone(), CExpr::num(0));
                self.emit_as(rh.clone(), CExpr::num(0));
                for branch in [&mut then_c, &mut else_c] {
                    self.transport(branch, &rl, &rh);
                }
                bounds = Some((Atom::Var(rl), Atom::Var(rh)));
            }
        }
        let then_e = plug(std::mem::take(&mut then_c.closure), CExpr::Atom(then_c.atom));
        let else_e = plug(std::mem::take(&mut else_c.closure), CExpr::Atom(else_c.atom));
        let r = self.emit(CExpr::if_(g.atom, then_e, else_e));
        Ok(Compiled {
            closure: Vec::new(),
            atom: r,
            ty,
            bounds,
        })
    }

    /// Appends to a detached closure the assignments that copy its live
    /// bounds into `rl`/`rh`.
    fn transport(&mut self, c: &mut Compiled, rl: &Ident, rh: &Ident) {
        let outer = std::mem::replace(&mut self.out, std::mem::take(&mut c.closure));
        let (lo, hi) = self.bounds_of(c);
        self.emit(CExpr::StackAssign(rl.clone(), lo));
        self.emit(CExpr::StackAssign(rh.clone(), hi));
        c.closure = std::mem::replace(&mut self.out, outer);
    }

    fn ret(&mut self, x: &Ident, saved: &SavedBinding, body: &Expr) -> Result<Compiled, CompileError> {
        if !self.gamma.contains_key(x) {
            return err(format!("`{x}` is not bound"));
        }
        let rho_before = self.rho.clone();
        let mut c = self.detached(body)?;
        // Shadows rebound inside the frame (by a nested return) are scoped to
        // it; copy their final values out to variables that outlive it.
        let mut escaping: Vec<(Ident, (Ident, Ident))> = self
            .rho
            .iter()
            .filter(|(y, s)| *y != x && rho_before.get(*y) != Some(*s))
            .map(|(y, s)| (y.clone(), s.clone()))
            .collect();
        escaping.sort();
        for (y, (yl, yh)) in escaping {
            let (ol, oh) = (self.fresh(), self.fresh());
            self.emit_as(ol.clone(), CExpr::num(0));
            self.emit_as(oh.clone(), CExpr::num(0));
            c.closure.push((self.fresh(), CExpr::StackAssign(ol.clone(), Atom::Var(yl))));
            c.closure.push((self.fresh(), CExpr::StackAssign(oh.clone(), Atom::Var(yh))));
            self.shadow_log.push((y.clone(), ol.clone(), oh.clone()));
            self.rho.insert(y, (ol, oh));
        }
        let mu = match saved {
            SavedBinding::Value(n, _) => Some(*n),
            SavedBinding::Absent => None,
        };
        let mut ty = c.ty.clone();
        if let Some(v) = self.snap.get(x) {
            if ty.mentions(x) {
                ty = ty.subst(&BoundSubst::from([(x.clone(), Bound::Const(*v))]));
            }
        }
        let mut bounds = None;
        if matches!(c.ty.as_array_ptr(), Some((Mode::Checked, ..))) && (c.bounds.is_some() || c.ty.mentions(x)) {
            let (rl, rh) = (self.fresh(), self.fresh());
            self.emit_as(rl.clone(), CExpr::num(0));
            self.emit_as(rh.clone(), CExpr::num(0));
            self.transport(&mut c, &rl, &rh);
            bounds = Some((Atom::Var(rl), Atom::Var(rh)));
        }
        let inner = plug(std::mem::take(&mut c.closure), CExpr::Atom(c.atom));
        let r = self.emit(CExpr::Ret(x.clone(), mu, Box::new(inner)));
        // The binding in force after the frame pops.
        match saved {
            SavedBinding::Value(n, t) => {
                self.gamma.insert(x.clone(), t.clone());
                self.snap.remove(x);
                if t.is_int() {
                    self.snap.insert(x.clone(), *n);
                }
                self.extend_rho(x, t);
            }
            SavedBinding::Absent => {
                self.gamma.remove(x);
                self.snap.remove(x);
                self.rho.remove(x);
            }
        }
        Ok(Compiled {
            closure: Vec::new(),
            atom: r,
            ty,
            bounds,
        })
    }

    /// Compiles `e` and returns the whole target term.
    pub fn finish(&mut self, e: &Expr) -> Result<CExpr, CompileError> {
        let c = self.expr(e)?;
        Ok(plug(std::mem::take(&mut self.out), CExpr::Atom(c.atom)))
    }
}

/// Compiles a source expression with an empty environment.
pub fn compile_expr(e: &Expr, funs: &FunEnv, structs: &StructEnv, muts: Mutations) -> Result<CExpr, CompileError> {
    Compiler::new(funs, structs, muts).finish(e)
}

/// Compiles every function body under its parameters; null-terminated
/// parameters get shadow bounds initialized from their declared types.
pub fn compile_fun(funs: &FunEnv, structs: &StructEnv, muts: Mutations) -> Result<CFunEnv, CompileError> {
    compile_funs_from(funs, structs, muts, 0).map(|(out, _, _)| out)
}

/// Compiles every function with fresh names numbered from `start`, returning
/// the next free number and the shadow pairs created.
fn compile_funs_from(
    funs: &FunEnv,
    structs: &StructEnv,
    muts: Mutations,
    start: usize,
) -> Result<(CFunEnv, usize, ShadowLog), CompileError> {
    let mut out = CFunEnv::new();
    let mut counter = start;
    let mut log = Vec::new();
    for f in funs.values() {
        let mut c = Compiler::new(funs, structs, muts);
        c.counter = counter;
        for (x, t) in &f.params {
            c.gamma.insert(x.clone(), t.clone());
        }
        for (x, t) in &f.params {
            c.extend_rho(x, t);
        }
        let body = c.finish(&f.body).map_err(|e| CompileError {
            message: format!("in `{}`: {}", f.name, e.message),
        })?;
        counter = c.counter;
        log.append(&mut c.shadow_log);
        out.insert(
            f.name.clone(),
            CFun {
                name: f.name.clone(),
                params: f.params.iter().map(|(x, _)| x.clone()).collect(),
                body,
            },
        );
    }
    Ok((out, counter, log))
}

pub fn compile_program(p: &Program, muts: Mutations) -> Result<CProgram, CompileError> {
    compile_program_shadows(p, muts).map(|(c, _)| c)
}

/// Like [`compile_program`], also returning every shadow pair created, as
/// (source variable, lo, hi). Fresh names are unique across the program, so
/// each pair can be followed through a run.
pub fn compile_program_shadows(
    p: &Program,
    muts: Mutations,
) -> Result<(CProgram, ShadowLog), CompileError> {
    let (funs, next, mut log) = compile_funs_from(&p.funs, &p.structs, muts, 0)?;
    let mut c = Compiler::new(&p.funs, &p.structs, muts);
    c.counter = next;
    let main = c.finish(&p.main)?;
    log.append(&mut c.shadow_log);
    Ok((CProgram { funs, main }, log))
}

/// Compiles a runtime configuration: the environment comes from the stack
/// annotations, null-terminated stack variables get shadows holding their
/// current bounds, and the stack and heap are erased.
pub fn compile_config(cfg: &Config, funs: &FunEnv, structs: &StructEnv, muts: Mutations) -> Result<CConfig, CompileError> {
    let mut c = Compiler::new(funs, structs, muts);
    c.gamma = cfg.stack.type_env();
    c.snap = cfg.stack.snapshot();
    let nt_vars: Vec<(Ident, WordType)> = cfg
        .stack
        .iter()
        .filter(|(_, (_, t))| t.is_checked_nt_ptr())
        .map(|(x, (_, t))| (x.clone(), t.clone()))
        .collect();
    for (x, t) in &nt_vars {
        c.extend_rho(x, t);
    }
    let expr = c.finish(&cfg.expr)?;
    let (stack, heap) = crate::corec::erase(&cfg.stack, &cfg.heap);
    Ok(CConfig { stack, heap, expr })
}
