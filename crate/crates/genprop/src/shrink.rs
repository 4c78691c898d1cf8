//! Greedy reduction of failing programs.

use crate::props::{check_program, Budget, Prop};
use chkc_core::compile::Mutations;
use chkc_core::semantics::{subterm, subterm_mut};
use chkc_core::*;

fn paths(e: &Expr, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(prefix.clone());
    for (i, c) in e.children().into_iter().enumerate() {
        prefix.push(i);
        paths(c, prefix, out);
        prefix.pop();
    }
}

/// Smaller replacements for one subterm, most aggressive first.
fn candidates(e: &Expr) -> Vec<Expr> {
    let mut out = Vec::new();
    match e {
        Expr::Lit(n, t) if *n != 0 => {
            out.push(Expr::Lit(0, t.clone()));
            if n.abs() > 1 {
                out.push(Expr::Lit(n / 2, t.clone()));
            }
        }
        Expr::Lit(..) => {}
        _ => out.push(Expr::int(0)),
    }
    if let Expr::Let(x, _, body) = e {
        if !body.free_vars().contains(x) {
            out.push((**body).clone());
        }
    }
    out.extend(e.children().into_iter().cloned());
    out
}

fn measure(p: &Program) -> (usize, i64) {
    let mut ints = 0i64;
    for e in std::iter::once(&p.main).chain(p.funs.values().map(|f| &f.body)) {
        e.visit(&mut |e| {
            if let Expr::Lit(n, _) = e {
                ints = ints.saturating_add(n.abs());
            }
        });
    }
    let funs: usize = p.funs.values().map(|f| f.body.size() + f.params.len() + 1).sum();
    (p.main.size() + funs, ints)
}

/// Expressions the shrinker may rewrite: `main` and each function body.
#[derive(Clone)]
enum Site {
    Main,
    Fun(Ident),
}

fn body<'p>(p: &'p Program, s: &Site) -> &'p Expr {
    match s {
        Site::Main => &p.main,
        Site::Fun(f) => &p.funs[f].body,
    }
}

fn body_mut<'p>(p: &'p mut Program, s: &Site) -> &'p mut Expr {
    match s {
        Site::Main => &mut p.main,
        Site::Fun(f) => &mut p.funs.get_mut(f).expect("function exists").body,
    }
}

/// Shrinks `p` while `prop` keeps failing. Returns a local minimum; `p`
/// itself if nothing smaller fails.
pub fn shrink(p: &Program, prop: Prop, injected: bool, muts: Mutations, budget: Budget) -> Program {
    let fails = |q: &Program| {
        typecheck_program(q).is_ok()
            && check_program(q, injected, muts, budget).get(prop).is_some_and(|v| v.is_fail())
    };
    let mut best = p.clone();
    let mut tries = 0;
    'outer: loop {
        // Unused functions go first.
        for name in best.funs.keys().cloned().collect::<Vec<_>>() {
            let mut q = best.clone();
            q.funs.shift_remove(&name);
            if fails(&q) {
                best = q;
                continue 'outer;
            }
        }
        let sites = std::iter::once(Site::Main).chain(best.funs.keys().cloned().map(Site::Fun));
        let mut all = Vec::new();
        for site in sites {
            let mut ps = Vec::new();
            paths(body(&best, &site), &mut Vec::new(), &mut ps);
            all.extend(ps.into_iter().map(|path| (site.clone(), path)));
        }
        for (site, path) in all {
            for c in candidates(subterm(body(&best, &site), &path)) {
                tries += 1;
                if tries > 2_000 {
                    break 'outer;
                }
                let mut q = best.clone();
                *subterm_mut(body_mut(&mut q, &site), &path) = c;
                if measure(&q) < measure(&best) && fails(&q) {
                    best = q;
                    continue 'outer;
                }
            }
        }
        break;
    }
    best
}
