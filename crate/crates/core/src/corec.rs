//! The erased target language: A-normal-form terms over atoms, with explicit
//! bounds and null failures. Runtime state holds only integers, so a failed
//! access that no inserted check caught is stuck.

use crate::ast::{ident, Ident};
use crate::semantics::{ErrorKind, Heap, Stack};
use crate::sexp::{read_one, ParseError, Sexp};
use indexmap::IndexMap;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Atom {
    Num(i64),
    Var(Ident),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Le,
}

/// Target terms. Operands are atoms; only `let` right-hand sides, `ret`
/// bodies and `if` arms hold nested terms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CExpr {
    Atom(Atom),
    Strlen(Atom),
    Malloc(Atom),
    Call(Ident, Vec<Atom>),
    Binop(BinOp, Atom, Atom),
    Deref(Atom),
    Assign(Atom, Atom),
    StackAssign(Ident, Atom),
    If(Atom, Box<CExpr>, Box<CExpr>),
    BoundsFail,
    NullFail,
    Let(Ident, Box<CExpr>, Box<CExpr>),
    Ret(Ident, Option<i64>, Box<CExpr>),
}

impl Default for CExpr {
    fn default() -> Self {
        CExpr::Atom(Atom::Num(0))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CFun {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub body: CExpr,
}

pub type CFunEnv = IndexMap<Ident, CFun>;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CProgram {
    pub funs: CFunEnv,
    pub main: CExpr,
}

impl Atom {
    pub fn var(x: &str) -> Atom {
        Atom::Var(ident(x))
    }
}

impl CExpr {
    pub fn num(n: i64) -> CExpr {
        CExpr::Atom(Atom::Num(n))
    }

    pub fn let_(x: Ident, c: CExpr, body: CExpr) -> CExpr {
        CExpr::Let(x, Box::new(c), Box::new(body))
    }

    pub fn if_(a: Atom, t: CExpr, e: CExpr) -> CExpr {
        CExpr::If(a, Box::new(t), Box::new(e))
    }

    pub fn as_num(&self) -> Option<i64> {
        match self {
            CExpr::Atom(Atom::Num(n)) => Some(*n),
            _ => None,
        }
    }

    /// Node count.
    pub fn size(&self) -> usize {
        match self {
            CExpr::If(_, a, b) | CExpr::Let(_, a, b) => 1 + a.size() + b.size(),
            CExpr::Ret(_, _, a) => 1 + a.size(),
            _ => 1,
        }
    }

    /// Structural A-normal-form check: `let` never nests in a right-hand side.
    pub fn is_anf(&self) -> bool {
        match self {
            CExpr::Let(_, c, body) => !matches!(**c, CExpr::Let(..)) && c.is_anf() && body.is_anf(),
            CExpr::If(_, a, b) => a.is_anf() && b.is_anf(),
            CExpr::Ret(_, _, a) => a.is_anf(),
            _ => true,
        }
    }

    /// Every variable name bound or referenced in the term.
    pub fn names(&self, out: &mut std::collections::BTreeSet<Ident>) {
        let atom = |a: &Atom, out: &mut std::collections::BTreeSet<Ident>| {
            if let Atom::Var(x) = a {
                out.insert(x.clone());
            }
        };
        match self {
            CExpr::Atom(a) | CExpr::Strlen(a) | CExpr::Malloc(a) | CExpr::Deref(a) => atom(a, out),
            CExpr::Call(_, args) => args.iter().for_each(|a| atom(a, out)),
            CExpr::Binop(_, a, b) | CExpr::Assign(a, b) => {
                atom(a, out);
                atom(b, out);
            }
            CExpr::StackAssign(x, a) => {
                out.insert(x.clone());
                atom(a, out);
            }
            CExpr::If(a, t, e) => {
                atom(a, out);
                t.names(out);
                e.names(out);
            }
            CExpr::BoundsFail | CExpr::NullFail => {}
            CExpr::Let(x, c, b) => {
                out.insert(x.clone());
                c.names(out);
                b.names(out);
            }
            CExpr::Ret(x, _, b) => {
                out.insert(x.clone());
                b.names(out);
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Num(n) => write!(f, "{n}"),
            Atom::Var(x) => write!(f, "{x}"),
        }
    }
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Le => "<=",
        })
    }
}

impl fmt::Display for CExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CExpr::Atom(a) => write!(f, "{a}"),
            CExpr::Strlen(a) => write!(f, "(strlen {a})"),
            CExpr::Malloc(a) => write!(f, "(malloc {a})"),
            CExpr::Call(g, args) => {
                write!(f, "(call {g}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            CExpr::Binop(op, a, b) => write!(f, "({op} {a} {b})"),
            CExpr::Deref(a) => write!(f, "(deref {a})"),
            CExpr::Assign(a, b) => write!(f, "(assign {a} {b})"),
            CExpr::StackAssign(x, a) => write!(f, "(stackassign {x} {a})"),
            CExpr::If(a, t, e) => write!(f, "(if {a} {t} {e})"),
            CExpr::BoundsFail => f.write_str("(boundsfail)"),
            CExpr::NullFail => f.write_str("(nullfail)"),
            CExpr::Let(x, c, b) => write!(f, "(let {x} {c} {b})"),
            CExpr::Ret(x, None, b) => write!(f, "(ret {x} none {b})"),
            CExpr::Ret(x, Some(n), b) => write!(f, "(ret {x} {n} {b})"),
        }
    }
}

/// Multi-line rendering: one `let` per line.
pub fn pretty(e: &CExpr) -> String {
    fn go(e: &CExpr, indent: usize, out: &mut String) {
        let pad = " ".repeat(indent);
        match e {
            CExpr::Let(x, c, b) => {
                match &**c {
                    CExpr::If(..) => {
                        out.push_str(&format!("{pad}(let {x}\n"));
                        go(c, indent + 2, out);
                        out.push('\n');
                    }
                    _ => out.push_str(&format!("{pad}(let {x} {c}\n")),
                }
                go(b, indent + 2, out);
                out.push(')');
            }
            CExpr::If(a, t, f) => {
                out.push_str(&format!("{pad}(if {a}\n"));
                go(t, indent + 2, out);
                out.push('\n');
                go(f, indent + 2, out);
                out.push(')');
            }
            CExpr::Ret(x, mu, b) => {
                match mu {
                    Some(n) => out.push_str(&format!("{pad}(ret {x} {n}\n")),
                    None => out.push_str(&format!("{pad}(ret {x} none\n")),
                }
                go(b, indent + 2, out);
                out.push(')');
            }
            other => out.push_str(&format!("{pad}{other}")),
        }
    }
    let mut out = String::new();
    go(e, 0, &mut out);
    out
}

impl fmt::Display for CProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "(defs")?;
        for g in self.funs.values() {
            let params: Vec<String> = g.params.iter().map(|p| p.to_string()).collect();
            writeln!(f, "  (fun {} ({})", g.name, params.join(" "))?;
            for line in pretty(&g.body).lines() {
                writeln!(f, "    {line}")?;
            }
            writeln!(f, "  )")?;
        }
        writeln!(f, "  (main")?;
        for line in pretty(&self.main).lines() {
            writeln!(f, "    {line}")?;
        }
        write!(f, "  ))")
    }
}

fn is_cident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

fn parse_name(s: &Sexp) -> Result<Ident, ParseError> {
    let a = s.expect_atom("name")?;
    if is_cident(a) {
        Ok(ident(a))
    } else {
        Err(ParseError::at(s.pos(), format!("`{a}` is not a valid name")))
    }
}

fn parse_atom(s: &Sexp) -> Result<Atom, ParseError> {
    let a = s.expect_atom("atom")?;
    if let Ok(n) = a.parse() {
        Ok(Atom::Num(n))
    } else {
        parse_name(s).map(Atom::Var)
    }
}

pub fn parse_cexpr_sexp(s: &Sexp) -> Result<CExpr, ParseError> {
    let Some(items) = s.list() else { return parse_atom(s).map(CExpr::Atom) };
    let head = s
        .head()
        .ok_or_else(|| ParseError::at(s.pos(), "expected a form"))?;
    let want = |n: usize| {
        if items.len() == n {
            Ok(())
        } else {
            Err(ParseError::at(s.pos(), format!("`{head}` expects {} operand(s)", n - 1)))
        }
    };
    let e = match head {
        "strlen" => {
            want(2)?;
            CExpr::Strlen(parse_atom(&items[1])?)
        }
        "malloc" => {
            want(2)?;
            CExpr::Malloc(parse_atom(&items[1])?)
        }
        "call" => {
            if items.len() < 2 {
                return Err(ParseError::at(s.pos(), "`call` needs a function name"));
            }
            CExpr::Call(
                parse_name(&items[1])?,
                items[2..].iter().map(parse_atom).collect::<Result<_, _>>()?,
            )
        }
        "+" | "-" | "<=" => {
            want(3)?;
            let op = match head {
                "+" => BinOp::Add,
                "-" => BinOp::Sub,
                _ => BinOp::Le,
            };
            CExpr::Binop(op, parse_atom(&items[1])?, parse_atom(&items[2])?)
        }
        "deref" => {
            want(2)?;
            CExpr::Deref(parse_atom(&items[1])?)
        }
        "assign" => {
            want(3)?;
            CExpr::Assign(parse_atom(&items[1])?, parse_atom(&items[2])?)
        }
        "stackassign" => {
            want(3)?;
            CExpr::StackAssign(parse_name(&items[1])?, parse_atom(&items[2])?)
        }
        "if" => {
            want(4)?;
            CExpr::if_(
                parse_atom(&items[1])?,
                parse_cexpr_sexp(&items[2])?,
                parse_cexpr_sexp(&items[3])?,
            )
        }
        "boundsfail" => {
            want(1)?;
            CExpr::BoundsFail
        }
        "nullfail" => {
            want(1)?;
            CExpr::NullFail
        }
        "let" => {
            want(4)?;
            CExpr::let_(
                parse_name(&items[1])?,
                parse_cexpr_sexp(&items[2])?,
                parse_cexpr_sexp(&items[3])?,
            )
        }
        "ret" => {
            want(4)?;
            let mu = match items[2].expect_atom("saved value")? {
                "none" => None,
                _ => Some(items[2].expect_int()?),
            };
            CExpr::Ret(parse_name(&items[1])?, mu, Box::new(parse_cexpr_sexp(&items[3])?))
        }
        other => return Err(ParseError::at(s.pos(), format!("unknown form `{other}`"))),
    };
    Ok(e)
}

pub fn parse_cexpr(text: &str) -> Result<CExpr, ParseError> {
    parse_cexpr_sexp(&read_one(text)?)
}

/// Parses `(defs (fun f (x …) e)… (main e))` or a bare term.
pub fn parse_cprogram(text: &str) -> Result<CProgram, ParseError> {
    let s = read_one(text)?;
    if s.head() != Some("defs") {
        return Ok(CProgram {
            funs: CFunEnv::new(),
            main: parse_cexpr_sexp(&s)?,
        });
    }
    let items = s.list().unwrap();
    let mut p = CProgram::default();
    let mut main = None;
    for d in &items[1..] {
        let parts = d.expect_list("definition")?;
        match d.head() {
            Some("fun") if parts.len() == 4 => {
                let name = parse_name(&parts[1])?;
                let params = parts[2]
                    .expect_list("parameter list")?
                    .iter()
                    .map(parse_name)
                    .collect::<Result<_, _>>()?;
                let body = parse_cexpr_sexp(&parts[3])?;
                if p.funs.contains_key(&name) {
                    return Err(ParseError::at(d.pos(), format!("duplicate function `{name}`")));
                }
                p.funs.insert(name.clone(), CFun { name, params, body });
            }
            Some("main") if parts.len() == 2 && main.is_none() => main = Some(parse_cexpr_sexp(&parts[1])?),
            _ => return Err(ParseError::at(d.pos(), "expected `(fun f (x …) e)` or `(main e)`")),
        }
    }
    p.main = main.ok_or_else(|| ParseError::at(s.pos(), "missing `(main e)`"))?;
    Ok(p)
}

/// Erased stack: variable values only.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CStack {
    pub vars: BTreeMap<Ident, i64>,
}

/// Erased heap: address `a` lives at index `a - 1`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CHeap {
    pub cells: Vec<i64>,
}

impl CHeap {
    pub fn get(&self, addr: i64) -> Option<i64> {
        (addr >= 1 && addr <= self.cells.len() as i64).then(|| self.cells[(addr - 1) as usize])
    }

    fn set(&mut self, addr: i64, v: i64) -> bool {
        if addr >= 1 && addr <= self.cells.len() as i64 {
            self.cells[(addr - 1) as usize] = v;
            true
        } else {
            false
        }
    }
}

/// Drops annotations pointwise.
pub fn erase(stack: &Stack, heap: &Heap) -> (CStack, CHeap) {
    (
        CStack {
            vars: stack.iter().map(|(x, (n, _))| (x.clone(), *n)).collect(),
        },
        CHeap {
            cells: heap.iter().map(|(_, (n, _))| *n).collect(),
        },
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CConfig {
    pub stack: CStack,
    pub heap: CHeap,
    pub expr: CExpr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CStep {
    Value,
    Stepped,
    Error(ErrorKind),
    Stuck(String),
}

fn hole(e: &mut CExpr) -> &mut CExpr {
    let mut cur = e;
    loop {
        let descend = match cur {
            CExpr::Let(_, c, _) => !matches!(**c, CExpr::Atom(Atom::Num(_))),
            CExpr::Ret(_, _, b) => !matches!(**b, CExpr::Atom(Atom::Num(_))),
            _ => false,
        };
        if !descend {
            return cur;
        }
        cur = match cur {
            CExpr::Let(_, c, _) => c,
            CExpr::Ret(_, _, b) => b,
            _ => unreachable!(),
        };
    }
}

/// One step in place.
pub fn step_corec(cfg: &mut CConfig, funs: &CFunEnv) -> CStep {
    if cfg.expr.as_num().is_some() {
        return CStep::Value;
    }
    let stack = &mut cfg.stack;
    let heap = &mut cfg.heap;
    let redex = hole(&mut cfg.expr);
    let val = |a: &Atom, stack: &CStack| match a {
        Atom::Num(n) => Some(*n),
        Atom::Var(x) => stack.vars.get(x).copied(),
    };
    macro_rules! get {
        ($a:expr) => {
            match val($a, stack) {
                Some(v) => v,
                None => return CStep::Stuck(format!("unbound variable `{}`", $a)),
            }
        };
    }
    let result = match redex {
        CExpr::Atom(a) => CExpr::num(get!(a)),
        CExpr::Binop(op, a, b) => {
            let (x, y) = (get!(a), get!(b));
            CExpr::num(match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Le => (x <= y) as i64,
            })
        }
        CExpr::Deref(a) => {
            let n = get!(a);
            match heap.get(n) {
                Some(v) => CExpr::num(v),
                None => return CStep::Stuck(format!("read of unallocated address {n}")),
            }
        }
        CExpr::Assign(a, b) => {
            let (n, v) = (get!(a), get!(b));
            if !heap.set(n, v) {
                return CStep::Stuck(format!("write to unallocated address {n}"));
            }
            CExpr::num(v)
        }
        CExpr::StackAssign(x, a) => {
            let v = get!(a);
            match stack.vars.get_mut(x) {
                Some(slot) => *slot = v,
                None => return CStep::Stuck(format!("assignment to unbound `{x}`")),
            }
            CExpr::num(v)
        }
        CExpr::Strlen(a) => {
            let n = get!(a);
            let mut len = 0;
            loop {
                match heap.get(n + len) {
                    Some(0) => break,
                    Some(_) => len += 1,
                    None => return CStep::Stuck("strlen ran past the end of the heap".into()),
                }
            }
            CExpr::num(len)
        }
        CExpr::Malloc(a) => {
            let size = get!(a);
            if size <= 0 {
                return CStep::Stuck(format!("allocation of {size} cells"));
            }
            let addr = heap.cells.len() as i64 + 1;
            heap.cells.resize(heap.cells.len() + size as usize, 0);
            CExpr::num(addr)
        }
        CExpr::Call(f, args) => {
            let Some(def) = funs.get(f) else { return CStep::Stuck(format!("unknown function `{f}`")) };
            if def.params.len() != args.len() {
                return CStep::Stuck("arity mismatch".into());
            }
            let mut values = Vec::with_capacity(args.len());
            for a in args.iter() {
                values.push(get!(a));
            }
            let mut body = def.body.clone();
            for (x, v) in def.params.iter().zip(values).rev() {
                body = CExpr::let_(x.clone(), CExpr::num(v), body);
            }
            body
        }
        CExpr::If(a, t, e) => {
            let c = get!(a);
            std::mem::take(if c != 0 { &mut **t } else { &mut **e })
        }
        CExpr::BoundsFail => return CStep::Error(ErrorKind::Bounds),
        CExpr::NullFail => return CStep::Error(ErrorKind::Null),
        CExpr::Let(x, c, body) => {
            let n = c.as_num().expect("hole stops at a let with a value");
            let saved = stack.vars.insert(x.clone(), n);
            CExpr::Ret(x.clone(), saved, std::mem::take(body))
        }
        CExpr::Ret(x, saved, body) => {
            match saved {
                Some(v) => stack.vars.insert(x.clone(), *v),
                None => stack.vars.remove(x),
            };
            std::mem::take(&mut **body)
        }
    };
    *redex = result;
    CStep::Stepped
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum COutcome {
    Value(i64),
    Error(ErrorKind),
    Stuck(String),
    OutOfFuel,
}

impl fmt::Display for COutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            COutcome::Value(n) => write!(f, "value {n}"),
            COutcome::Error(k) => write!(f, "{k}"),
            COutcome::Stuck(_) => f.write_str("stuck"),
            COutcome::OutOfFuel => f.write_str("fuel"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CRun {
    pub outcome: COutcome,
    pub config: CConfig,
    pub steps: usize,
}

pub fn eval_corec(cfg: CConfig, funs: &CFunEnv, fuel: usize) -> CRun {
    let mut cfg = cfg;
    for steps in 0..=fuel {
        let outcome = match step_corec(&mut cfg, funs) {
            CStep::Stepped if steps < fuel => continue,
            CStep::Stepped => COutcome::OutOfFuel,
            CStep::Value => COutcome::Value(cfg.expr.as_num().unwrap()),
            CStep::Error(k) => COutcome::Error(k),
            CStep::Stuck(s) => COutcome::Stuck(s),
        };
        return CRun {
            outcome,
            config: cfg,
            steps,
        };
    }
    unreachable!()
}

enum Halt {
    Error(ErrorKind),
    Stuck(String),
    Fuel,
}

struct Machine<'a> {
    stack: &'a mut CStack,
    heap: &'a mut CHeap,
    funs: &'a CFunEnv,
    fuel: usize,
    steps: usize,
}

impl Machine<'_> {
    fn tick(&mut self) -> Result<(), Halt> {
        if self.steps >= self.fuel {
            return Err(Halt::Fuel);
        }
        self.steps += 1;
        Ok(())
    }

    fn atom(&self, a: &Atom) -> Result<i64, Halt> {
        match a {
            Atom::Num(n) => Ok(*n),
            Atom::Var(x) => self.stack.vars.get(x).copied().ok_or_else(|| Halt::Stuck(format!("unbound variable `{x}`"))),
        }
    }

    /// Evaluates `body` with `binds` pushed; bindings are popped only on
    /// normal return, so a halted run keeps the stack it halted with.
    fn scoped(&mut self, binds: Vec<(Ident, i64)>, body: &CExpr) -> Result<i64, Halt> {
        let mut saved = Vec::with_capacity(binds.len());
        for (x, v) in binds {
            self.tick()?;
            saved.push((x.clone(), self.stack.vars.insert(x, v)));
        }
        let v = self.run(body)?;
        self.pop(saved)?;
        Ok(v)
    }

    fn pop(&mut self, saved: Vec<(Ident, Option<i64>)>) -> Result<(), Halt> {
        for (x, old) in saved.into_iter().rev() {
            self.tick()?;
            match old {
                Some(v) => self.stack.vars.insert(x, v),
                None => self.stack.vars.remove(&x),
            };
        }
        Ok(())
    }

    fn run(&mut self, e: &CExpr) -> Result<i64, Halt> {
        // Walk let spines iteratively so long closures do not recurse.
        let mut saved = Vec::new();
        let mut cur = e;
        while let CExpr::Let(x, c, body) = cur {
            let v = self.run(c)?;
            self.tick()?;
            saved.push((x.clone(), self.stack.vars.insert(x.clone(), v)));
            cur = body;
        }
        let v = self.redex(cur)?;
        self.pop(saved)?;
        Ok(v)
    }

    fn redex(&mut self, e: &CExpr) -> Result<i64, Halt> {
        if let CExpr::Atom(Atom::Num(n)) = e {
            return Ok(*n);
        }
        self.tick()?;
        match e {
            CExpr::Atom(a) => self.atom(a),
            CExpr::Binop(op, a, b) => {
                let (x, y) = (self.atom(a)?, self.atom(b)?);
                Ok(match op {
                    BinOp::Add => x.wrapping_add(y),
                    BinOp::Sub => x.wrapping_sub(y),
                    BinOp::Le => (x <= y) as i64,
                })
            }
            CExpr::Deref(a) => {
                let n = self.atom(a)?;
                self.heap.get(n).ok_or_else(|| Halt::Stuck(format!("read of unallocated address {n}")))
            }
            CExpr::Assign(a, b) => {
                let (n, v) = (self.atom(a)?, self.atom(b)?);
                if !self.heap.set(n, v) {
                    return Err(Halt::Stuck(format!("write to unallocated address {n}")));
                }
                Ok(v)
            }
            CExpr::StackAssign(x, a) => {
                let v = self.atom(a)?;
                match self.stack.vars.get_mut(x) {
                    Some(slot) => *slot = v,
                    None => return Err(Halt::Stuck(format!("assignment to unbound `{x}`"))),
                }
                Ok(v)
            }
            CExpr::Strlen(a) => {
                let n = self.atom(a)?;
                let mut len = 0;
                loop {
                    match self.heap.get(n + len) {
                        Some(0) => return Ok(len),
                        Some(_) => len += 1,
                        None => return Err(Halt::Stuck("strlen ran past the end of the heap".into())),
                    }
                }
            }
            CExpr::Malloc(a) => {
                let size = self.atom(a)?;
                if size <= 0 {
                    return Err(Halt::Stuck(format!("allocation of {size} cells")));
                }
                let addr = self.heap.cells.len() as i64 + 1;
                self.heap.cells.resize(self.heap.cells.len() + size as usize, 0);
                Ok(addr)
            }
            CExpr::Call(f, args) => {
                let funs = self.funs;
                let Some(def) = funs.get(f) else { return Err(Halt::Stuck(format!("unknown function `{f}`"))) };
                if def.params.len() != args.len() {
                    return Err(Halt::Stuck("arity mismatch".into()));
                }
                let values = args.iter().map(|a| self.atom(a)).collect::<Result<Vec<_>, _>>()?;
                self.scoped(def.params.iter().cloned().zip(values).collect(), &def.body)
            }
            CExpr::If(a, t, f) => {
                let c = self.atom(a)?;
                self.run(if c != 0 { t } else { f })
            }
            CExpr::BoundsFail => Err(Halt::Error(ErrorKind::Bounds)),
            CExpr::NullFail => Err(Halt::Error(ErrorKind::Null)),
            CExpr::Ret(x, old, body) => {
                let v = self.run(body)?;
                self.pop(vec![(x.clone(), *old)])?;
                Ok(v)
            }
            CExpr::Let(..) => self.run(e),
        }
    }
}

/// Big-step evaluation agreeing with [`eval_corec`] on outcome, final stack
/// and heap, in time linear in the number of steps. Step counts differ, so
/// fuel exhaustion is only comparable between runs of the same evaluator.
pub fn exec_corec(cfg: CConfig, funs: &CFunEnv, fuel: usize) -> CRun {
    let CConfig { mut stack, mut heap, expr } = cfg;
    let mut m = Machine {
        stack: &mut stack,
        heap: &mut heap,
        funs,
        fuel,
        steps: 0,
    };
    let r = m.run(&expr);
    let steps = m.steps;
    let (outcome, expr) = match r {
        Ok(v) => (COutcome::Value(v), CExpr::num(v)),
        Err(Halt::Error(k)) => (
            COutcome::Error(k),
            match k {
                ErrorKind::Bounds => CExpr::BoundsFail,
                ErrorKind::Null => CExpr::NullFail,
            },
        ),
        Err(Halt::Stuck(s)) => (COutcome::Stuck(s), expr),
        Err(Halt::Fuel) => (COutcome::OutOfFuel, expr),
    };
    CRun {
        outcome,
        config: CConfig { stack, heap, expr },
        steps,
    }
}

/// Runs a program from an empty stack and heap.
pub fn run_program(p: &CProgram, fuel: usize) -> CRun {
    eval_corec(
        CConfig {
            stack: CStack::default(),
            heap: CHeap::default(),
            expr: p.main.clone(),
        },
        &p.funs,
        fuel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{Type, WordType};
    use crate::semantics::alloc;

    fn run(src: &str) -> CRun {
        run_program(&parse_cprogram(src).unwrap(), 1000)
    }

    #[test]
    fn deref_null_is_stuck() {
        assert!(matches!(run("(deref 0)").outcome, COutcome::Stuck(_)));
    }

    #[test]
    fn comparisons_are_zero_or_one() {
        assert_eq!(run("(<= 3 5)").outcome, COutcome::Value(1));
        assert_eq!(run("(<= 5 3)").outcome, COutcome::Value(0));
        assert_eq!(run("(- 5 3)").outcome, COutcome::Value(2));
    }

    #[test]
    fn failures_are_terminal() {
        assert_eq!(run("(let x (boundsfail) 3)").outcome, COutcome::Error(ErrorKind::Bounds));
        assert_eq!(run("(let x (nullfail) 3)").outcome, COutcome::Error(ErrorKind::Null));
    }

    #[test]
    fn let_scoping_and_stackassign() {
        let r = run("(let x 1 (let y (stackassign x 7) (+ x y)))");
        assert_eq!(r.outcome, COutcome::Value(14));
        assert!(r.config.stack.vars.is_empty());
        let r = run("(let x 1 (let z (let x 5 x) (+ x z)))");
        assert_eq!(r.outcome, COutcome::Value(6));
    }

    #[test]
    fn malloc_strlen_and_calls() {
        let r = run(
            "(defs (fun len (p) (strlen p)) \
               (main (let p (malloc 3) (let a (assign p 104) (let q (+ p 1) (let b (assign q 105) (call len p)))))))",
        );
        assert_eq!(r.outcome, COutcome::Value(2));
        assert_eq!(r.config.heap.cells, vec![104, 105, 0]);
    }

    #[test]
    fn erase_drops_annotations() {
        let mut stack = Stack::new();
        stack.insert(ident("x"), 5, WordType::Int);
        let mut heap = Heap::new();
        alloc(&mut heap, &Type::Word(WordType::Int), &Default::default()).unwrap();
        heap.set(1, 0, WordType::Int);
        let mut h2 = heap.clone();
        alloc(&mut h2, &Type::Word(WordType::checked(Type::Word(WordType::Int))), &Default::default()).unwrap();
        h2.set(2, 9, WordType::checked(Type::Word(WordType::Int)));
        let (s, h) = erase(&stack, &h2);
        assert_eq!(s.vars.get("x"), Some(&5));
        assert_eq!(h.cells, vec![0, 9]);
        assert_eq!(erase(&Stack::new(), &Heap::new()), (CStack::default(), CHeap::default()));
    }

    #[test]
    fn print_parse_roundtrip() {
        let src = "(let $0 (if x 0 (nullfail)) (let $1 (<= 0 $h) (ret y none (stackassign $h 1))))";
        let e = parse_cexpr(src).unwrap();
        assert_eq!(e.to_string(), src);
        assert!(e.is_anf());
        let p = parse_cprogram("(defs (fun f (a b) (+ a b)) (main (call f 1 2)))").unwrap();
        assert_eq!(parse_cprogram(&p.to_string()).unwrap(), p);
        assert_eq!(run_program(&p, 100).outcome, COutcome::Value(3));
    }

    #[test]
    fn fuel_runs_out() {
        let r = run_program(&parse_cprogram("(let x 1 (let y 2 (+ x y)))").unwrap(), 2);
        assert_eq!(r.outcome, COutcome::OutOfFuel);
    }
}
