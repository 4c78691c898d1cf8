//! Algebraic properties of the syntax, subtyping, joins and substitution.

use chkc_core::semantics::Heap;
use chkc_core::typing::{subtype, type_join, Ctx, Pred, PredEnv, Snapshot, TypeEnv};
use chkc_core::*;
use proptest::prelude::*;

const NAMES: &[&str] = &["x", "y", "n", "p"];

fn name() -> impl Strategy<Value = Ident> {
    prop::sample::select(NAMES).prop_map(ident)
}

fn bound() -> impl Strategy<Value = Bound> {
    prop_oneof![(-3i64..6).prop_map(Bound::Const), (name(), -2i64..3).prop_map(|(x, n)| Bound::VarPlus(x, n))]
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Checked), Just(Mode::Unchecked)]
}

fn kind() -> impl Strategy<Value = NullTerm> {
    prop_oneof![Just(NullTerm::Plain), Just(NullTerm::Nt)]
}

fn word() -> impl Strategy<Value = WordType> {
    Just(WordType::Int).prop_recursive(3, 8, 1, |inner| {
        let pointee = prop_oneof![
            inner.clone().prop_map(Type::Word),
            (bound(), bound(), inner, kind()).prop_map(|(lo, hi, elem, kind)| Type::Array {
                bounds: BoundPair::new(lo, hi),
                elem,
                kind,
            }),
            Just(Type::Struct(ident("S"))),
        ];
        (mode(), pointee).prop_map(|(m, t)| WordType::Ptr(m, Box::new(t)))
    })
}

fn pointee() -> impl Strategy<Value = Type> {
    prop_oneof![
        word().prop_map(Type::Word),
        (bound(), bound(), word(), kind()).prop_map(|(lo, hi, elem, kind)| Type::Array {
            bounds: BoundPair::new(lo, hi),
            elem,
            kind,
        }),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5i64..100, word()).prop_map(|(n, t)| Expr::Lit(n, t)),
        name().prop_map(Expr::Var),
        pointee().prop_map(Expr::Malloc),
        name().prop_map(Expr::Strlen),
    ];
    leaf.prop_recursive(4, 24, 3, |e| {
        let b = || e.clone().prop_map(Box::new);
        prop_oneof![
            (name(), b(), b()).prop_map(|(x, a, c)| Expr::Let(x, a, c)),
            (word(), b()).prop_map(|(t, a)| Expr::Cast(t, a)),
            (word(), b()).prop_map(|(t, a)| Expr::DynCast(t, a)),
            prop::collection::vec(e.clone(), 0..3).prop_map(|args| Expr::Call(ident("f"), args)),
            (b(), b()).prop_map(|(a, c)| Expr::Add(a, c)),
            b().prop_map(Expr::Deref),
            (b(), b()).prop_map(|(a, c)| Expr::Assign(a, c)),
            b().prop_map(Expr::Unchecked),
            (b(), b(), b()).prop_map(|(a, c, d)| Expr::If(a, c, d)),
            (b(), name()).prop_map(|(a, f)| Expr::FieldAddr(a, f)),
            (name(), prop::option::of((-3i64..9, word())), b()).prop_map(|(x, v, a)| {
                let saved = match v {
                    Some((n, t)) => SavedBinding::Value(n, t),
                    None => SavedBinding::Absent,
                };
                Expr::Ret(x, saved, a)
            }),
        ]
    })
}

fn closed_array(k: NullTerm) -> impl Strategy<Value = WordType> {
    (-2i64..4, -2i64..4).prop_map(move |(lo, hi)| WordType::array_ptr(Mode::Checked, BoundPair::consts(lo, hi), WordType::Int, k))
}

fn structs() -> StructEnv {
    let mut s = StructEnv::new();
    s.insert(
        ident("S"),
        StructDef {
            name: ident("S"),
            fields: vec![(ident("a"), WordType::Int), (ident("b"), WordType::Int)],
        },
    );
    s
}

fn sub(a: &WordType, b: &WordType) -> bool {
    subtype(a, b, &PredEnv::new(), &Snapshot::new(), &structs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn expressions_round_trip(e in expr()) {
        let text = e.to_string();
        prop_assert_eq!(parse_expr(&text).unwrap(), e);
    }

    #[test]
    fn types_round_trip(t in word()) {
        prop_assert_eq!(parse_word(&t.to_string()).unwrap(), t);
    }

    #[test]
    fn subtyping_is_reflexive(t in word()) {
        prop_assert!(sub(&t, &t));
    }

    #[test]
    fn subtyping_is_transitive(
        a in closed_array(NullTerm::Nt),
        b in prop_oneof![closed_array(NullTerm::Nt), closed_array(NullTerm::Plain)],
        c in prop_oneof![closed_array(NullTerm::Plain), Just(WordType::checked(Type::Word(WordType::Int)))],
    ) {
        if sub(&a, &b) && sub(&b, &c) {
            prop_assert!(sub(&a, &c), "{} ⊑ {} ⊑ {}", a, b, c);
        }
    }

    /// The join is an upper bound below every other same-shape upper bound,
    /// checked against exhaustive enumeration of small closed bounds.
    #[test]
    fn join_is_least_upper_bound(k in kind(), l1 in -2i64..4, h1 in -2i64..4, l2 in -2i64..4, h2 in -2i64..4) {
        let arr = |l, h| WordType::array_ptr(Mode::Checked, BoundPair::consts(l, h), WordType::Int, k);
        let (t1, t2) = (arr(l1, h1), arr(l2, h2));
        let j = type_join(&t1, &t2, &PredEnv::new(), &Snapshot::new()).expect("closed bounds always join");
        prop_assert!(sub(&t1, &j) && sub(&t2, &j));
        for l in -3..5 {
            for h in -3..5 {
                let u = arr(l, h);
                if sub(&t1, &u) && sub(&t2, &u) {
                    prop_assert!(sub(&j, &u), "{} is not below {}", j, u);
                }
            }
        }
    }

    #[test]
    fn substitution_is_idempotent(t in word(), v in -3i64..5) {
        let map: BoundSubst = NAMES.iter().map(|x| (ident(x), Bound::Const(v))).collect();
        let once = t.subst(&map);
        prop_assert!(once.is_closed());
        prop_assert_eq!(once.subst(&map), once);
    }

    #[test]
    fn well_formedness_survives_weakening(t in pointee()) {
        let gamma: TypeEnv = ["x", "y"].iter().map(|x| (ident(x), WordType::Int)).collect();
        if wf_type(&gamma, &t, &structs()) {
            let mut wider = gamma.clone();
            wider.insert(ident("n"), WordType::Int);
            wider.insert(ident("p"), WordType::Int);
            prop_assert!(wf_type(&wider, &t, &structs()));
        }
    }

    /// Adding a binding for a variable the expression never mentions does not
    /// change its type.
    #[test]
    fn typing_ignores_unrelated_snapshot_entries(e in expr(), v in -3i64..5) {
        let gamma: TypeEnv = [("x", WordType::Int), ("n", WordType::Int)].iter().map(|(x, t)| (ident(x), t.clone())).collect();
        let theta: PredEnv = [(ident("n"), Pred::GeZero)].into_iter().collect();
        let heap = Heap::new();
        let (funs, s) = (FunEnv::new(), structs());
        let ctx = Ctx { funs: &funs, structs: &s, heap: &heap };
        let base = type_expr(&ctx, &gamma, &theta, Mode::Checked, &e, &Snapshot::new());
        let mut snap = Snapshot::new();
        snap.insert(ident("unused"), v);
        let extended = type_expr(&ctx, &gamma, &theta, Mode::Checked, &e, &snap);
        prop_assert_eq!(base.ok(), extended.ok());
    }
}
