use heightinterp::formula::{
    assignment_from_json, assignment_to_json, check_witness, example_pm, parse, satisfied_bindings, Assignment,
    Formula, FormulaError, Term,
};
use heightinterp::heights::parse_rational;
use heightinterp::Integer;
use proptest::prelude::*;

fn w(pairs: &[(&str, &str)]) -> Assignment {
    pairs.iter().map(|(k, v)| (k.to_string(), parse_rational(v).unwrap())).collect()
}

#[test]
fn pm_witness() {
    // x2^2 = x1^5 + a at (2, 6) with a = 4, and t (64 - 4) = 1
    let good = w(&[("a", "4"), ("x1", "2"), ("x2", "6"), ("t", "1/60")]);
    assert!(check_witness(&example_pm(1), &good).unwrap());
    // H(16) = 16 > H(2, 6) = 6
    assert!(!check_witness(&example_pm(2), &good).unwrap());
    let bad_t = w(&[("a", "4"), ("x1", "2"), ("x2", "6"), ("t", "1/61")]);
    assert!(!check_witness(&example_pm(1), &bad_t).unwrap());
}

#[test]
fn witnesses_must_be_total() {
    let f = parse("(exists (x y) (= x (+ 1 1)))").unwrap();
    assert!(matches!(check_witness(&f, &w(&[("x", "2")])), Err(FormulaError::MissingVariable(_))));
    assert!(check_witness(&f, &w(&[("x", "2"), ("y", "7/3")])).unwrap());
}

#[test]
fn satisfied_path_names_the_live_binders() {
    let f = parse("(or (exists (x) (= x 0)) (exists (y) (= y 1)))").unwrap();
    let live = satisfied_bindings(&f, &w(&[("x", "5"), ("y", "1")])).unwrap();
    assert_eq!(live, Some(vec!["y".to_string()]));
    assert_eq!(satisfied_bindings(&f, &w(&[("x", "5"), ("y", "5")])).unwrap(), None);
}

#[test]
fn large_literals_evaluate() {
    let n = Integer::from(Integer::u_pow_u(10, 40)) + 7u32;
    let t = Term::int(&n);
    assert_eq!(*t.eval(&Assignment::new()).unwrap().numer(), n);
    let f = Formula::eq(Term::var("x"), t);
    assert_eq!(parse(&f.render()).unwrap(), f);
}

#[test]
fn json_witnesses() {
    let a = w(&[("x", "-3/4"), ("y", "0")]);
    assert_eq!(assignment_from_json(&assignment_to_json(&a)).unwrap(), a);
    let v: serde_json::Value = serde_json::from_str(r#"{"x": 3, "y": "1/2"}"#).unwrap();
    assert_eq!(assignment_from_json(&v).unwrap(), w(&[("x", "3"), ("y", "1/2")]));
    let bad: serde_json::Value = serde_json::from_str(r#"{"x": [1]}"#).unwrap();
    assert!(assignment_from_json(&bad).is_err());
}

fn var() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_.]{0,4}".prop_filter("not a keyword", |s| !matches!(s.as_str(), "and" | "or" | "exists" | "H"))
}

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![Just(Term::Zero), Just(Term::One), var().prop_map(Term::Var)];
    leaf.prop_recursive(4, 20, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::add(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Term::mul(a, b)),
            any::<u128>().prop_map(|n| Term::int(&Integer::from(n))),
        ]
    })
}

fn formula() -> impl Strategy<Value = Formula> {
    let atom = prop_oneof![
        (term(), term()).prop_map(|(a, b)| Formula::eq(a, b)),
        (prop::collection::vec(term(), 1..4), prop::collection::vec(term(), 1..4)).prop_map(|(a, b)| Formula::h(a, b)),
    ];
    atom.prop_recursive(4, 20, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::or(a, b)),
            (prop::collection::vec(var(), 1..3), inner).prop_map(|(vs, b)| Formula::exists(vs, b)),
        ]
    })
}

proptest! {
    #[test]
    fn parse_inverts_render(f in formula()) {
        prop_assert_eq!(parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn closed_terms_evaluate_like_integers(a in 0u64..1_000_000, b in 0u64..1_000_000) {
        let t = Term::add(Term::mul(Term::from_u64(a), Term::from_u64(b)), Term::One);
        let v = t.eval(&Assignment::new()).unwrap();
        prop_assert_eq!(v, a as u128 * b as u128 + 1);
    }
}
