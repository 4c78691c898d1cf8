//! Checked C surface syntax for source programs, for cross-checking with an
//! external Checked C compiler. This tool never runs one.
//!
//! The encoding is ours, not normative:
//! - `let` is a block-scoped declaration; `if` and `unchecked` are
//!   statements. A compound expression in operand position is hoisted into a
//!   fresh temporary `_tK` declared just before it.
//! - Bounds are emitted as `count(hi)`. A nonzero lower bound is kept in a
//!   comment because `count` cannot express it.
//! - Allocation uses zeroed `calloc`, with one extra cell for the terminator
//!   of a null-terminated array.
//! - `strlen` on integer strings calls the `nt_len` helper in the prelude.
//! - `main` becomes `entry`, called from a C `main`.

use chkc_core::semantics::Heap;
use chkc_core::typing::{resolve, type_expr, Ctx, Pred, PredEnv, Snapshot, TypeEnv};
use chkc_core::*;
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmitError(pub String);

impl std::fmt::Display for EmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "emit-checkedc: {}", self.0)
    }
}

impl std::error::Error for EmitError {}

const PRELUDE: &str = "#include <stdchecked.h>
#include <stdlib_checked.h>

static int nt_len(nt_array_ptr<int> p : count(0)) {
  int n = 0;
  nt_array_ptr<int> q : count(0) = p;
  while (*q) {
    q = q + 1;
    n = n + 1;
  }
  return n;
}
";

const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum", "extern",
    "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return", "short", "signed",
    "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while", "main",
    "ptr", "array_ptr", "nt_array_ptr", "checked", "unchecked", "count", "bounds", "malloc", "calloc", "entry",
    "nt_len",
];

/// A C identifier for a source name. Names starting with `_` are left to the
/// emitter's temporaries.
pub fn c_name(x: &str) -> String {
    let mut s: String = x.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '_') || C_KEYWORDS.contains(&s.as_str()) {
        s = format!("v_{s}");
    }
    s
}

fn bound(b: &Bound) -> String {
    match b {
        Bound::Const(n) => n.to_string(),
        Bound::VarPlus(x, 0) => c_name(x),
        Bound::VarPlus(x, k) if *k < 0 => format!("{} - {}", c_name(x), -k),
        Bound::VarPlus(x, k) => format!("{} + {k}", c_name(x)),
    }
}

fn pointee(t: &Type) -> String {
    match t {
        Type::Word(w) => plain(w),
        Type::Struct(s) => format!("struct {}", c_name(s)),
        Type::Array { elem, .. } => plain(elem),
    }
}

/// The type without a bounds declaration, as used in casts and type
/// arguments.
fn plain(w: &WordType) -> String {
    match w {
        WordType::Int => "int".into(),
        WordType::Ptr(Mode::Unchecked, t) => format!("{} *", pointee(t)),
        WordType::Ptr(Mode::Checked, t) => match &**t {
            Type::Array { elem, kind: NullTerm::Nt, .. } => format!("nt_array_ptr<{}>", plain(elem)),
            Type::Array { elem, kind: NullTerm::Plain, .. } => format!("array_ptr<{}>", plain(elem)),
            t => format!("ptr<{}>", pointee(t)),
        },
    }
}

/// The bounds declaration of a checked array pointer, if any.
fn bounds_decl(w: &WordType) -> Option<String> {
    let (Mode::Checked, b, _, _) = w.as_array_ptr()? else { return None };
    let lo = match &b.lo {
        Bound::Const(0) => String::new(),
        lo => format!(" /* lower bound {} */", bound(lo)),
    };
    Some(format!("count({}){lo}", bound(&b.hi)))
}

/// `T x : count(n)` for a declaration of `x`.
fn decl(w: &WordType, x: &str) -> String {
    match bounds_decl(w) {
        Some(b) => format!("{} {x} : {b}", plain(w)),
        None => format!("{} {x}", plain(w)),
    }
}

fn cells(t: &Type) -> (String, String) {
    match t {
        Type::Word(w) => (plain(w), "1".into()),
        Type::Struct(s) => (format!("struct {}", c_name(s)), "1".into()),
        Type::Array { bounds, elem, kind } => {
            let n = match (kind, &bounds.hi) {
                (NullTerm::Nt, Bound::Const(h)) => (h + 1).to_string(),
                (NullTerm::Nt, h) => format!("{} + 1", bound(h)),
                (NullTerm::Plain, h) => bound(h),
            };
            (plain(elem), n)
        }
    }
}

#[derive(Clone)]
struct Env {
    gamma: TypeEnv,
    theta: PredEnv,
    snap: Snapshot,
    mode: Mode,
}

/// Where the value of a statement-level expression goes.
#[derive(Clone)]
enum Dest {
    Return,
    Assign(String),
}

struct Emitter<'p> {
    p: &'p Program,
    heap: Heap,
    out: String,
    indent: usize,
    temps: usize,
}

impl<'p> Emitter<'p> {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn type_of(&self, env: &Env, e: &Expr) -> Result<WordType, EmitError> {
        let ctx = Ctx {
            funs: &self.p.funs,
            structs: &self.p.structs,
            heap: &self.heap,
        };
        type_expr(&ctx, &env.gamma, &env.theta, env.mode, e, &env.snap).map_err(|e| EmitError(e.to_string()))
    }

    fn temp(&mut self) -> String {
        self.temps += 1;
        format!("_t{}", self.temps - 1)
    }

    /// Declares a temporary holding `e` and returns its name.
    fn hoist(&mut self, env: &Env, e: &Expr) -> Result<String, EmitError> {
        let t = self.type_of(env, e)?;
        let x = self.temp();
        self.line(&format!("{} = 0;", decl(&t, &x)));
        self.stmt(env, e, &Dest::Assign(x.clone()))?;
        Ok(x)
    }

    fn finish(&mut self, dest: &Dest, value: String) {
        match dest {
            Dest::Return => self.line(&format!("return {value};")),
            Dest::Assign(x) => self.line(&format!("{x} = {value};")),
        }
    }

    fn stmt(&mut self, env: &Env, e: &Expr, dest: &Dest) -> Result<(), EmitError> {
        match e {
            Expr::Let(x, rhs, body) => {
                let inner = self.let_env(env, x, rhs, body)?;
                let t = inner.gamma[x].clone();
                let init = self.expr(env, rhs)?;
                self.line("{");
                self.indent += 1;
                self.line(&format!("{} = {init};", decl(&t, &c_name(x))));
                self.stmt(&inner, body, dest)?;
                self.indent -= 1;
                self.line("}");
            }
            Expr::If(guard, then_, else_) => {
                let g = self.expr(env, guard)?;
                let then_env = nt_then_env(env, guard);
                self.line(&format!("if ({g}) {{"));
                self.indent += 1;
                self.stmt(&then_env, then_, dest)?;
                self.indent -= 1;
                self.line("} else {");
                self.indent += 1;
                self.stmt(env, else_, dest)?;
                self.indent -= 1;
                self.line("}");
            }
            Expr::Unchecked(inner) => {
                let env = Env {
                    mode: Mode::Unchecked,
                    ..env.clone()
                };
                self.line("unchecked {");
                self.indent += 1;
                self.stmt(&env, inner, dest)?;
                self.indent -= 1;
                self.line("}");
            }
            _ => {
                let v = self.expr(env, e)?;
                self.finish(dest, v);
            }
        }
        Ok(())
    }

    /// The environment for the body of `let x = rhs in body`.
    fn let_env(&self, env: &Env, x: &Ident, rhs: &Expr, body: &Expr) -> Result<Env, EmitError> {
        if let Expr::Strlen(y) = rhs {
            if let Some(ty) = env.gamma.get(y).filter(|t| t.is_checked_nt_ptr() && y != x) {
                let (_, b, _, _) = ty.as_array_ptr().unwrap();
                let mut inner = env.clone();
                inner.gamma.insert(x.clone(), WordType::Int);
                inner.gamma.insert(y.clone(), ty.with_bounds(BoundPair::new(b.lo.clone(), Bound::var(x, 0))));
                inner.theta.insert(x.clone(), Pred::GeZero);
                inner.snap.remove(x);
                if self.type_of(&inner, body).is_ok_and(|t| !t.mentions(x)) {
                    return Ok(inner);
                }
            }
        }
        let t = self.type_of(env, rhs)?;
        let mut inner = env.clone();
        inner.gamma.insert(x.clone(), t);
        inner.theta.remove(x);
        inner.snap.remove(x);
        if let Some(v) = rhs.as_bound().and_then(|b| resolve(&b, &env.snap).as_const()) {
            inner.snap.insert(x.clone(), v);
        }
        Ok(inner)
    }

    /// C expressions for operands evaluated left to right. C leaves operand
    /// order unspecified, so when any operand has effects, each non-trivial
    /// one is bound to a temporary first.
    fn operands(&mut self, env: &Env, es: &[&Expr]) -> Result<Vec<String>, EmitError> {
        let ordered = es.len() > 1 && es.iter().any(|e| effectful(e));
        let mut out = Vec::new();
        for e in es {
            out.push(if ordered { self.atom(env, e)? } else { self.expr(env, e)? });
        }
        Ok(out)
    }

    /// A side-effect-free C expression for `e`, with its effects emitted as
    /// statements first. Pointer arithmetic stays inline since a temporary
    /// for `p + i` would need bounds relative to `p`.
    fn atom(&mut self, env: &Env, e: &Expr) -> Result<String, EmitError> {
        if let Expr::Add(a, i) = e {
            if self.type_of(env, a)?.as_array_ptr().is_some() {
                let a = self.atom(env, a)?;
                let i = self.atom(env, i)?;
                return Ok(format!("{a} + {i}"));
            }
        }
        let v = self.expr(env, e)?;
        if matches!(e, Expr::Lit(..) | Expr::Var(_)) || v.starts_with("_t") {
            return Ok(v);
        }
        let t = self.type_of(env, e)?;
        let x = self.temp();
        self.line(&format!("{} = {v};", decl(&t, &x)));
        Ok(x)
    }

    /// A C expression for `e`, hoisting statement-shaped parts.
    fn expr(&mut self, env: &Env, e: &Expr) -> Result<String, EmitError> {
        let b = |s: String| {
            if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                s
            } else {
                format!("({s})")
            }
        };
        Ok(match e {
            Expr::Lit(n, WordType::Int) => n.to_string(),
            Expr::Lit(n, t) => {
                let x = self.temp();
                let v = if *n == 0 { "0".to_string() } else { format!("({}){n}", plain(t)) };
                self.line(&format!("{} = {v};", decl(t, &x)));
                x
            }
            Expr::Var(x) => c_name(x),
            Expr::Malloc(t) => {
                let (elem, n) = cells(t);
                format!("calloc<{elem}>({n}, sizeof({elem}))")
            }
            Expr::Cast(t, a) => {
                let a = self.expr(env, a)?;
                format!("({}){}", plain(t), b(a))
            }
            Expr::DynCast(t, a) => {
                let a = self.expr(env, a)?;
                let hi = t.as_array_ptr().map_or_else(|| "1".to_string(), |(_, bs, _, _)| bound(&bs.hi));
                format!("dyn_bounds_cast<{}>({a}, count({hi}))", plain(t))
            }
            Expr::Call(f, args) => {
                let args: Vec<&Expr> = args.iter().collect();
                let args = self.operands(env, &args)?;
                format!("{}({})", c_name(f), args.join(", "))
            }
            Expr::Strlen(x) => format!("nt_len({})", c_name(x)),
            Expr::Add(x, y) => {
                let v = self.operands(env, &[x, y])?;
                format!("{} + {}", v[0], v[1])
            }
            Expr::Deref(a) => {
                let a = self.expr(env, a)?;
                format!("*{}", b(a))
            }
            Expr::Assign(x, y) => {
                // `*p = v` has the value of `v`; keep it in a temporary so the
                // value can be reused without evaluating `v` twice.
                let atom = matches!(**y, Expr::Lit(_, WordType::Int) | Expr::Var(_));
                let v = self.operands(env, &[x, y])?;
                let (x, y) = (&v[0], &v[1]);
                if atom {
                    self.line(&format!("*{} = {y};", b(x.clone())));
                    return Ok(y.clone());
                }
                let t = self.temp();
                let ty = self.type_of(env, e)?;
                self.line(&format!("{} = {y};", decl(&ty, &t)));
                self.line(&format!("*{} = {t};", b(x.clone())));
                t
            }
            Expr::FieldAddr(a, f) => {
                let a = self.expr(env, a)?;
                format!("&{}->{}", b(a), c_name(f))
            }
            Expr::Let(..) | Expr::If(..) | Expr::Unchecked(_) => self.hoist(env, e)?,
            Expr::Ret(..) => return Err(EmitError("runtime `ret` frames have no surface syntax".into())),
        })
    }
}

fn effectful(e: &Expr) -> bool {
    let mut found = false;
    e.visit(&mut |e| found |= matches!(e, Expr::Assign(..) | Expr::Call(..) | Expr::Malloc(_)));
    found
}

fn nt_then_env(env: &Env, guard: &Expr) -> Env {
    let mut then_env = env.clone();
    if let Expr::Deref(g) = guard {
        if let Expr::Var(x) = &**g {
            if let Some(t) = env.gamma.get(x) {
                if let Some((Mode::Checked, b, _, NullTerm::Nt)) = t.as_array_ptr() {
                    if resolve(&b.hi, &env.snap) == Bound::Const(0) {
                        then_env.gamma.insert(x.clone(), t.with_bounds(BoundPair::new(b.lo.clone(), Bound::Const(1))));
                    }
                }
            }
        }
    }
    then_env
}

/// Checked C text for a type-correct program.
pub fn emit_checkedc(p: &Program) -> Result<String, EmitError> {
    let main_ty = typecheck_program(p).map_err(|e| EmitError(e.to_string()))?;
    let mut em = Emitter {
        p,
        heap: Heap::new(),
        out: String::new(),
        indent: 0,
        temps: 0,
    };
    em.out.push_str(PRELUDE);
    for s in p.structs.values() {
        em.line("");
        em.line(&format!("struct {} {{", c_name(&s.name)));
        for (f, t) in &s.fields {
            em.line(&format!("  {};", decl(t, &c_name(f))));
        }
        em.line("};");
    }
    for f in p.funs.values() {
        em.line("");
        let params: Vec<String> = f.params.iter().map(|(x, t)| decl(t, &c_name(x))).collect();
        let ret = match bounds_decl(&f.ret) {
            Some(b) => format!("{} {}({}) : {b}", plain(&f.ret), c_name(&f.name), params.join(", ")),
            None => format!("{} {}({})", plain(&f.ret), c_name(&f.name), params.join(", ")),
        };
        em.line(&format!("{ret} {{"));
        em.indent += 1;
        let env = Env {
            gamma: f.params.iter().cloned().collect(),
            theta: PredEnv::new(),
            snap: Snapshot::new(),
            mode: Mode::Checked,
        };
        em.temps = 0;
        em.stmt(&env, &f.body, &Dest::Return)?;
        em.indent -= 1;
        em.line("}");
    }
    em.line("");
    let ret = match bounds_decl(&main_ty) {
        Some(b) => format!("static {} entry(void) : {b} {{", plain(&main_ty)),
        None => format!("static {} entry(void) {{", plain(&main_ty)),
    };
    em.line(&ret);
    em.indent += 1;
    em.temps = 0;
    let env = Env {
        gamma: TypeEnv::new(),
        theta: PredEnv::new(),
        snap: Snapshot::new(),
        mode: Mode::Checked,
    };
    em.stmt(&env, &p.main, &Dest::Return)?;
    em.indent -= 1;
    em.line("}");
    em.line("");
    if main_ty.is_int() {
        em.line("int main(void) {\n  return entry();\n}");
    } else {
        em.line("int main(void) {\n  entry();\n  return 0;\n}");
    }
    let mut text = em.out;
    if !text.ends_with('\n') {
        let _ = writeln!(text);
    }
    Ok(text)
}
