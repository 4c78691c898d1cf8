//! Syntax of the checked calculus: modes, bounds, types, expressions, and the
//! function and struct environments a program carries.

use indexmap::IndexMap;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use thiserror::Error;

pub type Ident = Arc<str>;

pub fn ident(s: &str) -> Ident {
    Arc::from(s)
}

/// Pointer and evaluation mode. `Unchecked < Checked`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Unchecked,
    Checked,
}

/// An array bound: a constant or an integer variable plus a constant offset.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Bound {
    Const(i64),
    VarPlus(Ident, i64),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoundPair {
    pub lo: Bound,
    pub hi: Bound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NullTerm {
    Plain,
    Nt,
}

/// Types of values that fit in one word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum WordType {
    Int,
    Ptr(Mode, Box<Type>),
}

/// Pointee types.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Word(WordType),
    Array {
        bounds: BoundPair,
        elem: WordType,
        kind: NullTerm,
    },
    Struct(Ident),
}

/// The value a `ret` frame restores when its body finishes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SavedBinding {
    Value(i64, WordType),
    Absent,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(i64, WordType),
    Var(Ident),
    Malloc(Type),
    Let(Ident, Box<Expr>, Box<Expr>),
    Cast(WordType, Box<Expr>),
    DynCast(WordType, Box<Expr>),
    Call(Ident, Vec<Expr>),
    Strlen(Ident),
    Add(Box<Expr>, Box<Expr>),
    Deref(Box<Expr>),
    Assign(Box<Expr>, Box<Expr>),
    Unchecked(Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    FieldAddr(Box<Expr>, Ident),
    /// Runtime-only: restores the saved binding of the variable once the body is a value.
    Ret(Ident, SavedBinding, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunDef {
    pub name: Ident,
    pub params: Vec<(Ident, WordType)>,
    pub ret: WordType,
    pub body: Expr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructDef {
    pub name: Ident,
    pub fields: Vec<(Ident, WordType)>,
}

impl StructDef {
    pub fn field_index(&self, f: &str) -> Option<usize> {
        self.fields.iter().position(|(g, _)| &**g == f)
    }
}

pub type FunEnv = IndexMap<Ident, FunDef>;
pub type StructEnv = IndexMap<Ident, StructDef>;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Program {
    pub structs: StructEnv,
    pub funs: FunEnv,
    pub main: Expr,
}

impl Default for Expr {
    fn default() -> Self {
        Expr::Lit(0, WordType::Int)
    }
}

pub type BoundSubst = HashMap<Ident, Bound>;

impl Bound {
    pub fn var(x: &str, n: i64) -> Bound {
        Bound::VarPlus(ident(x), n)
    }

    pub fn offset(&self, k: i64) -> Bound {
        match self {
            Bound::Const(n) => Bound::Const(n.wrapping_add(k)),
            Bound::VarPlus(x, n) => Bound::VarPlus(x.clone(), n.wrapping_add(k)),
        }
    }

    pub fn subst(&self, map: &BoundSubst) -> Bound {
        match self {
            Bound::VarPlus(x, k) => match map.get(x) {
                Some(b) => b.offset(*k),
                None => self.clone(),
            },
            Bound::Const(_) => self.clone(),
        }
    }

    pub fn as_const(&self) -> Option<i64> {
        match self {
            Bound::Const(n) => Some(*n),
            Bound::VarPlus(..) => None,
        }
    }

    pub fn var_name(&self) -> Option<&Ident> {
        match self {
            Bound::VarPlus(x, _) => Some(x),
            Bound::Const(_) => None,
        }
    }

    /// Evaluates the bound with `lookup` supplying variable values.
    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<i64>) -> Option<i64> {
        match self {
            Bound::Const(n) => Some(*n),
            Bound::VarPlus(x, k) => lookup(x).map(|v| v.wrapping_add(*k)),
        }
    }
}

impl BoundPair {
    pub fn new(lo: Bound, hi: Bound) -> Self {
        BoundPair { lo, hi }
    }

    pub fn consts(lo: i64, hi: i64) -> Self {
        BoundPair::new(Bound::Const(lo), Bound::Const(hi))
    }

    pub fn subst(&self, map: &BoundSubst) -> BoundPair {
        BoundPair::new(self.lo.subst(map), self.hi.subst(map))
    }

    pub fn as_consts(&self) -> Option<(i64, i64)> {
        Some((self.lo.as_const()?, self.hi.as_const()?))
    }
}

impl WordType {
    pub fn ptr(m: Mode, t: Type) -> WordType {
        WordType::Ptr(m, Box::new(t))
    }

    pub fn checked(t: Type) -> WordType {
        WordType::ptr(Mode::Checked, t)
    }

    /// `ptr^m [ (lo,hi) elem ]^kind`
    pub fn array_ptr(m: Mode, bounds: BoundPair, elem: WordType, kind: NullTerm) -> WordType {
        WordType::ptr(m, Type::Array { bounds, elem, kind })
    }

    pub fn is_int(&self) -> bool {
        matches!(self, WordType::Int)
    }

    pub fn is_checked_ptr(&self) -> bool {
        matches!(self, WordType::Ptr(Mode::Checked, _))
    }

    pub fn pointee(&self) -> Option<(Mode, &Type)> {
        match self {
            WordType::Ptr(m, t) => Some((*m, t)),
            WordType::Int => None,
        }
    }

    /// Mode, bounds, element type and kind when this is an array pointer.
    pub fn as_array_ptr(&self) -> Option<(Mode, &BoundPair, &WordType, NullTerm)> {
        match self {
            WordType::Ptr(m, t) => match &**t {
                Type::Array { bounds, elem, kind } => Some((*m, bounds, elem, *kind)),
                _ => None,
            },
            WordType::Int => None,
        }
    }

    pub fn is_checked_nt_ptr(&self) -> bool {
        matches!(self.as_array_ptr(), Some((Mode::Checked, _, _, NullTerm::Nt)))
    }

    pub fn subst(&self, map: &BoundSubst) -> WordType {
        if map.is_empty() {
            return self.clone();
        }
        match self {
            WordType::Int => WordType::Int,
            WordType::Ptr(m, t) => WordType::Ptr(*m, Box::new(t.subst(map))),
        }
    }

    pub fn free_vars_into(&self, out: &mut BTreeSet<Ident>) {
        if let WordType::Ptr(_, t) = self {
            t.free_vars_into(out);
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Ident> {
        let mut out = BTreeSet::new();
        self.free_vars_into(&mut out);
        out
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            WordType::Int => false,
            WordType::Ptr(_, t) => t.mentions(x),
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            WordType::Int => true,
            WordType::Ptr(_, t) => t.is_closed(),
        }
    }

    /// Replaces the array bounds of an array pointer.
    pub fn with_bounds(&self, bounds: BoundPair) -> WordType {
        match self.as_array_ptr() {
            Some((m, _, elem, kind)) => WordType::array_ptr(m, bounds, elem.clone(), kind),
            None => self.clone(),
        }
    }
}

impl Type {
    pub fn subst(&self, map: &BoundSubst) -> Type {
        match self {
            Type::Word(w) => Type::Word(w.subst(map)),
            Type::Array { bounds, elem, kind } => Type::Array {
                bounds: bounds.subst(map),
                elem: elem.subst(map),
                kind: *kind,
            },
            Type::Struct(t) => Type::Struct(t.clone()),
        }
    }

    pub fn free_vars_into(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Type::Word(w) => w.free_vars_into(out),
            Type::Array { bounds, elem, .. } => {
                for b in [&bounds.lo, &bounds.hi] {
                    if let Bound::VarPlus(x, _) = b {
                        out.insert(x.clone());
                    }
                }
                elem.free_vars_into(out);
            }
            Type::Struct(_) => {}
        }
    }

    pub fn mentions(&self, x: &str) -> bool {
        match self {
            Type::Word(w) => w.mentions(x),
            Type::Array { bounds, elem, .. } => {
                bounds.lo.var_name().is_some_and(|y| &**y == x)
                    || bounds.hi.var_name().is_some_and(|y| &**y == x)
                    || elem.mentions(x)
            }
            Type::Struct(_) => false,
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Type::Word(w) => w.is_closed(),
            Type::Array { bounds, elem, .. } => bounds.as_consts().is_some() && elem.is_closed(),
            Type::Struct(_) => true,
        }
    }
}

/// Substitutes into `ω`; `VarPlus(y,k)[y ↦ Const m] = Const(m+k)`.
pub fn subst_type(t: &Type, map: &BoundSubst) -> Type {
    t.subst(map)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SizeError {
    #[error("unresolved bound variable `{0}`")]
    Unresolved(Ident),
    #[error("negative size {0}")]
    Negative(i64),
    #[error("unknown struct `{0}`")]
    UnknownStruct(Ident),
}

/// Number of cells an object of type `t` occupies. Bound variables are
/// resolved through `lookup`.
pub fn type_size(
    t: &Type,
    structs: &StructEnv,
    lookup: &dyn Fn(&str) -> Option<i64>,
) -> Result<i64, SizeError> {
    match t {
        Type::Word(_) => Ok(1),
        Type::Struct(name) => structs
            .get(name)
            .map(|s| s.fields.len() as i64)
            .ok_or_else(|| SizeError::UnknownStruct(name.clone())),
        Type::Array { bounds, kind, .. } => {
            let resolve = |b: &Bound| {
                b.eval(lookup)
                    .ok_or_else(|| SizeError::Unresolved(b.var_name().cloned().unwrap_or_else(|| ident("?"))))
            };
            let lo = resolve(&bounds.lo)?;
            let hi = resolve(&bounds.hi)?;
            let n = hi - lo + if *kind == NullTerm::Nt { 1 } else { 0 };
            if n < 0 {
                Err(SizeError::Negative(n))
            } else {
                Ok(n)
            }
        }
    }
}

/// Every bound variable is an `int` in `gamma` and every struct is defined.
pub fn wf_type(gamma: &crate::typing::TypeEnv, t: &Type, structs: &StructEnv) -> bool {
    match t {
        Type::Word(w) => wf_word(gamma, w, structs),
        Type::Array { bounds, elem, .. } => {
            let ok_bound = |b: &Bound| match b {
                Bound::Const(_) => true,
                Bound::VarPlus(x, _) => matches!(gamma.get(x), Some(WordType::Int)),
            };
            ok_bound(&bounds.lo) && ok_bound(&bounds.hi) && wf_word(gamma, elem, structs)
        }
        Type::Struct(name) => structs.contains_key(name),
    }
}

pub fn wf_word(gamma: &crate::typing::TypeEnv, w: &WordType, structs: &StructEnv) -> bool {
    match w {
        WordType::Int => true,
        WordType::Ptr(_, t) => wf_type(gamma, t, structs),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("function `{fun}`: {message}")]
pub struct WfError {
    pub fun: Ident,
    pub message: String,
}

/// Checks struct definitions and every function: parameter and return types
/// are well formed under the preceding parameters and the body checks in
/// checked mode at a subtype of the declared return type.
pub fn wf_fun(funs: &FunEnv, structs: &StructEnv) -> Result<(), WfError> {
    use crate::typing::{self, PredEnv, Snapshot, TypeEnv};
    let empty_gamma = TypeEnv::new();
    for s in structs.values() {
        let mut seen = BTreeSet::new();
        for (f, t) in &s.fields {
            if !seen.insert(f.clone()) || !wf_word(&empty_gamma, t, structs) || !t.is_closed() {
                return Err(WfError {
                    fun: s.name.clone(),
                    message: format!("bad field `{f}` in struct"),
                });
            }
        }
        if s.fields.is_empty() {
            return Err(WfError {
                fun: s.name.clone(),
                message: "struct has no fields".into(),
            });
        }
    }
    let heap = crate::semantics::Heap::new();
    for f in funs.values() {
        let err = |message: String| WfError {
            fun: f.name.clone(),
            message,
        };
        let mut gamma = TypeEnv::new();
        for (x, t) in &f.params {
            if gamma.contains_key(x) {
                return Err(err(format!("duplicate parameter `{x}`")));
            }
            if !wf_word(&gamma, t, structs) {
                return Err(err(format!("parameter `{x}` has an ill-formed type")));
            }
            gamma.insert(x.clone(), t.clone());
        }
        if !wf_word(&gamma, &f.ret, structs) {
            return Err(err("return type is ill-formed".into()));
        }
        let ctx = typing::Ctx {
            funs,
            structs,
            heap: &heap,
        };
        let t = typing::type_expr(&ctx, &gamma, &PredEnv::new(), Mode::Checked, &f.body, &Snapshot::new())
            .map_err(|e| err(e.to_string()))?;
        if !typing::subtype(&t, &f.ret, &PredEnv::new(), &Snapshot::new(), structs) {
            return Err(err(format!("body type {t} is not a subtype of {}", f.ret)));
        }
    }
    Ok(())
}

impl Expr {
    pub fn is_value(&self) -> bool {
        matches!(self, Expr::Lit(..))
    }

    pub fn int(n: i64) -> Expr {
        Expr::Lit(n, WordType::Int)
    }

    pub fn var(x: &str) -> Expr {
        Expr::Var(ident(x))
    }

    pub fn let_(x: &str, e1: Expr, e2: Expr) -> Expr {
        Expr::Let(ident(x), Box::new(e1), Box::new(e2))
    }

    pub fn plus(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn deref(a: Expr) -> Expr {
        Expr::Deref(Box::new(a))
    }

    pub fn assign(a: Expr, b: Expr) -> Expr {
        Expr::Assign(Box::new(a), Box::new(b))
    }

    pub fn if_(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::If(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn cast(t: WordType, e: Expr) -> Expr {
        Expr::Cast(t, Box::new(e))
    }

    /// Matches the syntactic shape of a bound: `n`, `x`, or `x + n`.
    pub fn as_bound(&self) -> Option<Bound> {
        match self {
            Expr::Lit(n, WordType::Int) => Some(Bound::Const(*n)),
            Expr::Var(x) => Some(Bound::VarPlus(x.clone(), 0)),
            Expr::Add(a, b) => match (&**a, &**b) {
                (Expr::Var(x), Expr::Lit(n, WordType::Int)) => Some(Bound::VarPlus(x.clone(), *n)),
                _ => None,
            },
            _ => None,
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Lit(..) | Expr::Var(_) | Expr::Malloc(_) | Expr::Strlen(_) => vec![],
            Expr::Let(_, a, b) | Expr::Add(a, b) | Expr::Assign(a, b) => vec![a, b],
            Expr::Cast(_, a)
            | Expr::DynCast(_, a)
            | Expr::Deref(a)
            | Expr::Unchecked(a)
            | Expr::FieldAddr(a, _)
            | Expr::Ret(_, _, a) => vec![a],
            Expr::Call(_, args) => args.iter().collect(),
            Expr::If(c, a, b) => vec![c, a, b],
        }
    }

    pub fn child_mut(&mut self, i: usize) -> Option<&mut Expr> {
        match self {
            Expr::Lit(..) | Expr::Var(_) | Expr::Malloc(_) | Expr::Strlen(_) => None,
            Expr::Let(_, a, b) | Expr::Add(a, b) | Expr::Assign(a, b) => match i {
                0 => Some(a),
                1 => Some(b),
                _ => None,
            },
            Expr::Cast(_, a)
            | Expr::DynCast(_, a)
            | Expr::Deref(a)
            | Expr::Unchecked(a)
            | Expr::FieldAddr(a, _)
            | Expr::Ret(_, _, a) => (i == 0).then_some(&mut **a),
            Expr::Call(_, args) => args.get_mut(i),
            Expr::If(c, a, b) => match i {
                0 => Some(c),
                1 => Some(a),
                2 => Some(b),
                _ => None,
            },
        }
    }

    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn contains_unchecked(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Unchecked(_)));
        found
    }

    pub fn contains_ret(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Ret(..)));
        found
    }

    /// Free program variables (not bound by an enclosing `let`).
    pub fn free_vars(&self) -> BTreeSet<Ident> {
        fn go(e: &Expr, bound: &mut Vec<Ident>, out: &mut BTreeSet<Ident>) {
            match e {
                Expr::Var(x) | Expr::Strlen(x) => {
                    if !bound.contains(x) {
                        out.insert(x.clone());
                    }
                }
                Expr::Let(x, a, b) => {
                    go(a, bound, out);
                    bound.push(x.clone());
                    go(b, bound, out);
                    bound.pop();
                }
                _ => {
                    for c in e.children() {
                        go(c, bound, out);
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nt(lo: Bound, hi: Bound) -> Type {
        Type::Array {
            bounds: BoundPair::new(lo, hi),
            elem: WordType::Int,
            kind: NullTerm::Nt,
        }
    }

    #[test]
    fn subst_replaces_variable_bound() {
        let t = nt(Bound::Const(0), Bound::var("x", 0));
        let map = BoundSubst::from([(ident("x"), Bound::Const(10))]);
        assert_eq!(subst_type(&t, &map), nt(Bound::Const(0), Bound::Const(10)));
    }

    #[test]
    fn subst_composes_offsets() {
        let t = Type::Array {
            bounds: BoundPair::new(Bound::var("y", 1), Bound::var("x", 2)),
            elem: WordType::Int,
            kind: NullTerm::Plain,
        };
        let map = BoundSubst::from([(ident("x"), Bound::Const(3))]);
        let Type::Array { bounds, .. } = subst_type(&t, &map) else { unreachable!() };
        assert_eq!(bounds, BoundPair::new(Bound::var("y", 1), Bound::Const(5)));
        assert_eq!(subst_type(&Type::Word(WordType::Int), &map), Type::Word(WordType::Int));
    }

    #[test]
    fn sizes() {
        let none = |_: &str| None;
        let structs = StructEnv::from([(
            ident("T"),
            StructDef {
                name: ident("T"),
                fields: vec![(ident("a"), WordType::Int), (ident("b"), WordType::Int)],
            },
        )]);
        assert_eq!(type_size(&Type::Word(WordType::Int), &structs, &none), Ok(1));
        assert_eq!(type_size(&nt(Bound::Const(0), Bound::Const(3)), &structs, &none), Ok(4));
        assert_eq!(type_size(&Type::Struct(ident("T")), &structs, &none), Ok(2));
        assert!(type_size(&nt(Bound::Const(0), Bound::var("n", 0)), &structs, &none).is_err());
        let n_is_2 = |x: &str| (x == "n").then_some(2);
        assert_eq!(type_size(&nt(Bound::Const(0), Bound::var("n", 0)), &structs, &n_is_2), Ok(3));
    }

    #[test]
    fn well_formedness_of_bounds() {
        let mut gamma = crate::typing::TypeEnv::new();
        let t = Type::Array {
            bounds: BoundPair::new(Bound::Const(0), Bound::var("x", 0)),
            elem: WordType::Int,
            kind: NullTerm::Plain,
        };
        let structs = StructEnv::new();
        assert!(!wf_type(&gamma, &t, &structs));
        gamma.insert(ident("x"), WordType::Int);
        assert!(wf_type(&gamma, &t, &structs));
        assert!(wf_type(&crate::typing::TypeEnv::new(), &Type::Word(WordType::Int), &structs));
        gamma.insert(ident("x"), WordType::checked(Type::Word(WordType::Int)));
        assert!(!wf_type(&gamma, &t, &structs));
    }

    #[test]
    fn bound_shaped_expressions() {
        assert_eq!(Expr::int(4).as_bound(), Some(Bound::Const(4)));
        assert_eq!(Expr::var("n").as_bound(), Some(Bound::var("n", 0)));
        assert_eq!(Expr::plus(Expr::var("n"), Expr::int(2)).as_bound(), Some(Bound::var("n", 2)));
        assert_eq!(Expr::plus(Expr::int(2), Expr::var("n")).as_bound(), None);
    }
}
