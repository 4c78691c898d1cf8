//! Concrete syntax: a parenthesized prefix grammar for programs, types and
//! expressions, with a printer whose output parses back to the same tree.

use crate::ast::*;
use crate::sexp::{read_one, ParseError, Sexp};
use std::fmt;

const KEYWORDS: &[&str] = &[
    "lit", "malloc", "let", "cast", "dyncast", "call", "strlen", "+", "deref", "assign", "unchecked",
    "if", "fieldaddr", "ret", "int", "ptr", "array", "ntarray", "struct", "defs", "fun", "main", "none",
];

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !KEYWORDS.contains(&s)
}

fn parse_ident(s: &Sexp, what: &str) -> Result<Ident, ParseError> {
    let a = s.expect_atom(what)?;
    if !is_ident(a) {
        return Err(ParseError::at(s.pos(), format!("`{a}` is not a valid {what}")));
    }
    Ok(ident(a))
}

fn arity(s: &Sexp, items: &[Sexp], n: usize) -> Result<(), ParseError> {
    if items.len() != n {
        let head = s.head().unwrap_or("form");
        return Err(ParseError::at(
            s.pos(),
            format!("`{head}` expects {} operand(s), found {}", n - 1, items.len() - 1),
        ));
    }
    Ok(())
}

pub fn parse_mode(s: &Sexp) -> Result<Mode, ParseError> {
    match s.expect_atom("mode")? {
        "c" => Ok(Mode::Checked),
        "u" => Ok(Mode::Unchecked),
        other => Err(ParseError::at(s.pos(), format!("unknown mode `{other}`"))),
    }
}

pub fn parse_bound(s: &Sexp) -> Result<Bound, ParseError> {
    match s {
        Sexp::Atom(..) => Ok(Bound::Const(s.expect_int()?)),
        Sexp::List(items, _) => {
            if s.head() != Some("+") {
                return Err(ParseError::at(s.pos(), "expected bound `n` or `(+ x n)`"));
            }
            arity(s, items, 3)?;
            Ok(Bound::VarPlus(parse_ident(&items[1], "variable")?, items[2].expect_int()?))
        }
    }
}

pub fn parse_word_type(s: &Sexp) -> Result<WordType, ParseError> {
    match s {
        Sexp::Atom(a, _) if a == "int" => Ok(WordType::Int),
        Sexp::List(items, _) if s.head() == Some("ptr") => {
            arity(s, items, 3)?;
            Ok(WordType::Ptr(parse_mode(&items[1])?, Box::new(parse_type(&items[2])?)))
        }
        _ => Err(ParseError::at(s.pos(), "expected word type `int` or `(ptr m ω)`")),
    }
}

pub fn parse_type(s: &Sexp) -> Result<Type, ParseError> {
    match s.head() {
        Some(h @ ("array" | "ntarray")) => {
            let items = s.list().unwrap();
            arity(s, items, 4)?;
            Ok(Type::Array {
                bounds: BoundPair::new(parse_bound(&items[1])?, parse_bound(&items[2])?),
                elem: parse_word_type(&items[3])?,
                kind: if h == "ntarray" { NullTerm::Nt } else { NullTerm::Plain },
            })
        }
        Some("struct") => {
            let items = s.list().unwrap();
            arity(s, items, 2)?;
            Ok(Type::Struct(parse_ident(&items[1], "struct name")?))
        }
        _ => Ok(Type::Word(parse_word_type(s)?)),
    }
}

fn boxed(s: &Sexp) -> Result<Box<Expr>, ParseError> {
    parse_expr_sexp(s).map(Box::new)
}

pub fn parse_expr_sexp(s: &Sexp) -> Result<Expr, ParseError> {
    let items = match s {
        Sexp::Atom(a, _) => {
            if a.parse::<i64>().is_ok() {
                return Err(ParseError::at(s.pos(), "bare integer; write `(lit n τ)`"));
            }
            return Ok(Expr::Var(parse_ident(s, "variable")?));
        }
        Sexp::List(items, _) => items,
    };
    let head = s
        .head()
        .ok_or_else(|| ParseError::at(s.pos(), "expected expression form"))?;
    let e = match head {
        "lit" => {
            arity(s, items, 3)?;
            Expr::Lit(items[1].expect_int()?, parse_word_type(&items[2])?)
        }
        "malloc" => {
            arity(s, items, 2)?;
            Expr::Malloc(parse_type(&items[1])?)
        }
        "let" => {
            arity(s, items, 4)?;
            Expr::Let(parse_ident(&items[1], "variable")?, boxed(&items[2])?, boxed(&items[3])?)
        }
        "cast" => {
            arity(s, items, 3)?;
            Expr::Cast(parse_word_type(&items[1])?, boxed(&items[2])?)
        }
        "dyncast" => {
            arity(s, items, 3)?;
            Expr::DynCast(parse_word_type(&items[1])?, boxed(&items[2])?)
        }
        "call" => {
            if items.len() < 2 {
                return Err(ParseError::at(s.pos(), "`call` needs a function name"));
            }
            let args = items[2..].iter().map(parse_expr_sexp).collect::<Result<_, _>>()?;
            Expr::Call(parse_ident(&items[1], "function name")?, args)
        }
        "strlen" => {
            arity(s, items, 2)?;
            Expr::Strlen(parse_ident(&items[1], "variable")?)
        }
        "+" => {
            arity(s, items, 3)?;
            Expr::Add(boxed(&items[1])?, boxed(&items[2])?)
        }
        "deref" => {
            arity(s, items, 2)?;
            Expr::Deref(boxed(&items[1])?)
        }
        "assign" => {
            arity(s, items, 3)?;
            Expr::Assign(boxed(&items[1])?, boxed(&items[2])?)
        }
        "unchecked" => {
            arity(s, items, 2)?;
            Expr::Unchecked(boxed(&items[1])?)
        }
        "if" => {
            arity(s, items, 4)?;
            Expr::If(boxed(&items[1])?, boxed(&items[2])?, boxed(&items[3])?)
        }
        "fieldaddr" => {
            arity(s, items, 3)?;
            Expr::FieldAddr(boxed(&items[1])?, parse_ident(&items[2], "field name")?)
        }
        "ret" => {
            arity(s, items, 4)?;
            let saved = match &items[2] {
                Sexp::Atom(a, _) if a == "none" => SavedBinding::Absent,
                other => match parse_expr_sexp(other)? {
                    Expr::Lit(n, t) => SavedBinding::Value(n, t),
                    _ => return Err(ParseError::at(other.pos(), "saved binding must be `none` or a literal")),
                },
            };
            Expr::Ret(parse_ident(&items[1], "variable")?, saved, boxed(&items[3])?)
        }
        other => return Err(ParseError::at(s.pos(), format!("unknown expression form `{other}`"))),
    };
    Ok(e)
}

fn parse_field(s: &Sexp) -> Result<(Ident, WordType), ParseError> {
    let items = s.expect_list("`(name type)` pair")?;
    if items.len() != 2 {
        return Err(ParseError::at(s.pos(), "expected `(name type)` pair"));
    }
    Ok((parse_ident(&items[0], "name")?, parse_word_type(&items[1])?))
}

fn parse_def(s: &Sexp, prog: &mut Program) -> Result<(), ParseError> {
    let items = s.expect_list("definition")?;
    match s.head() {
        Some("struct") => {
            if items.len() < 2 {
                return Err(ParseError::at(s.pos(), "`struct` needs a name"));
            }
            let name = parse_ident(&items[1], "struct name")?;
            let fields = items[2..].iter().map(parse_field).collect::<Result<_, _>>()?;
            if prog.structs.contains_key(&name) {
                return Err(ParseError::at(s.pos(), format!("duplicate struct `{name}`")));
            }
            prog.structs.insert(name.clone(), StructDef { name, fields });
        }
        Some("fun") => {
            arity(s, items, 5)?;
            let name = parse_ident(&items[1], "function name")?;
            let params = items[2]
                .expect_list("parameter list")?
                .iter()
                .map(parse_field)
                .collect::<Result<_, _>>()?;
            let ret = parse_word_type(&items[3])?;
            let body = parse_expr_sexp(&items[4])?;
            if prog.funs.contains_key(&name) {
                return Err(ParseError::at(s.pos(), format!("duplicate function `{name}`")));
            }
            prog.funs.insert(name.clone(), FunDef { name, params, ret, body });
        }
        _ => return Err(ParseError::at(s.pos(), "expected `(struct …)`, `(fun …)` or `(main e)`")),
    }
    Ok(())
}

/// Parses `(defs … (main e))`. A bare expression is accepted as a program
/// with no definitions.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let s = read_one(text)?;
    if s.head() != Some("defs") {
        return Ok(Program {
            main: parse_expr_sexp(&s)?,
            ..Program::default()
        });
    }
    let items = s.list().unwrap();
    let mut prog = Program::default();
    let (last, defs) = items[1..]
        .split_last()
        .ok_or_else(|| ParseError::at(s.pos(), "missing `(main e)`"))?;
    for d in defs {
        parse_def(d, &mut prog)?;
    }
    match last.list() {
        Some([head, e]) if head.atom() == Some("main") => prog.main = parse_expr_sexp(e)?,
        _ => return Err(ParseError::at(last.pos(), "the last definition must be `(main e)`")),
    }
    Ok(prog)
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    parse_expr_sexp(&read_one(text)?)
}

pub fn parse_word(text: &str) -> Result<WordType, ParseError> {
    parse_word_type(&read_one(text)?)
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Checked => "c",
            Mode::Unchecked => "u",
        })
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Const(n) => write!(f, "{n}"),
            Bound::VarPlus(x, n) => write!(f, "(+ {x} {n})"),
        }
    }
}

impl fmt::Display for WordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WordType::Int => f.write_str("int"),
            WordType::Ptr(m, t) => write!(f, "(ptr {m} {t})"),
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Word(w) => write!(f, "{w}"),
            Type::Array { bounds, elem, kind } => {
                let head = match kind {
                    NullTerm::Plain => "array",
                    NullTerm::Nt => "ntarray",
                };
                write!(f, "({head} {} {} {elem})", bounds.lo, bounds.hi)
            }
            Type::Struct(t) => write!(f, "(struct {t})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(n, t) => write!(f, "(lit {n} {t})"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::Malloc(t) => write!(f, "(malloc {t})"),
            Expr::Let(x, a, b) => write!(f, "(let {x} {a} {b})"),
            Expr::Cast(t, e) => write!(f, "(cast {t} {e})"),
            Expr::DynCast(t, e) => write!(f, "(dyncast {t} {e})"),
            Expr::Call(g, args) => {
                write!(f, "(call {g}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            Expr::Strlen(x) => write!(f, "(strlen {x})"),
            Expr::Add(a, b) => write!(f, "(+ {a} {b})"),
            Expr::Deref(a) => write!(f, "(deref {a})"),
            Expr::Assign(a, b) => write!(f, "(assign {a} {b})"),
            Expr::Unchecked(a) => write!(f, "(unchecked {a})"),
            Expr::If(c, a, b) => write!(f, "(if {c} {a} {b})"),
            Expr::FieldAddr(a, g) => write!(f, "(fieldaddr {a} {g})"),
            Expr::Ret(x, saved, e) => match saved {
                SavedBinding::Absent => write!(f, "(ret {x} none {e})"),
                SavedBinding::Value(n, t) => write!(f, "(ret {x} (lit {n} {t}) {e})"),
            },
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(defs")?;
        for s in self.structs.values() {
            write!(f, "\n  (struct {}", s.name)?;
            for (g, t) in &s.fields {
                write!(f, " ({g} {t})")?;
            }
            f.write_str(")")?;
        }
        for d in self.funs.values() {
            write!(f, "\n  (fun {} (", d.name)?;
            for (i, (x, t)) in d.params.iter().enumerate() {
                if i > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "({x} {t})")?;
            }
            write!(f, ") {} {})", d.ret, d.body)?;
        }
        write!(f, "\n  (main {}))", self.main)
    }
}

pub fn print_program(p: &Program) -> String {
    p.to_string()
}
