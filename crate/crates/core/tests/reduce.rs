use heightinterp::formula::{check_witness, Term};
use heightinterp::interp::{build_profile, encode, Profile};
use heightinterp::reduce::{
    compile, eliminate_mul, flatten, nat_assignment_from_json, nat_assignment_to_json, nat_check, nat_eval,
    parse_nat, witness_down, witness_up, witness_up_compiled, NatAssignment, NatFormula, ReduceError,
};
use proptest::prelude::*;
use std::sync::OnceLock;

fn profile() -> &'static Profile {
    static P: OnceLock<Profile> = OnceLock::new();
    P.get_or_init(|| build_profile(30, 8).unwrap())
}

fn nat(s: &str) -> NatFormula {
    parse_nat(s).unwrap()
}

fn pins(xs: &[(&str, u64)]) -> NatAssignment {
    xs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn closed_sum_compiles_to_true_sentence() {
    let f = nat("(= (+ (+ 1 1) (+ 1 1 1)) (+ 1 1 1 1 1))");
    let out = compile(&f, profile()).unwrap();
    let w = witness_up_compiled(&out, &NatAssignment::new(), profile()).unwrap();
    assert!(check_witness(&out.sentence, &w).unwrap());
}

#[test]
fn free_zero_maps_to_one() {
    let f = nat("(= x 0)");
    let w = witness_up(&f, &pins(&[("x", 0)]), profile()).unwrap();
    assert_eq!(w["x"], 1);
    assert_eq!(encode(0, profile()).unwrap().q, 1);
    let out = compile(&f, profile()).unwrap();
    assert_eq!(witness_down(&w, &out, profile()).unwrap(), pins(&[("x", 0)]));
}

#[test]
fn false_sentence_compiles_but_is_refused() {
    let f = nat("(= 1 0)");
    assert!(compile(&f, profile()).is_ok());
    assert!(matches!(witness_up(&f, &NatAssignment::new(), profile()), Err(ReduceError::Refused)));
    let g = nat("(= x 1)");
    assert!(matches!(witness_up(&g, &pins(&[("x", 2)]), profile()), Err(ReduceError::Refused)));
}

#[test]
fn values_above_m_max_are_out_of_range() {
    let f = nat("(= x (+ 1 1 1 1 1 1 1 1 1))");
    assert!(matches!(witness_up(&f, &pins(&[("x", 9)]), profile()), Err(ReduceError::Range { .. })));
}

#[test]
fn oracle_examples() {
    assert!(nat_eval(&nat("(exists (x) (= (* x x) (+ 1 1 1 1)))"), 2).unwrap());
    assert!(!nat_eval(&nat("(exists (x) (= (* x x) (+ 1 1 1)))"), 3).unwrap());
    assert!(nat_eval(&nat("(exists (x) (B x (+ 1 1 1 1)))"), 4).unwrap());
    assert!(!nat_eval(&nat("(exists (x) (B x (+ 1 1 1)))"), 10).unwrap());
    assert!(!nat_eval(&nat("(exists (x) (= (+ x 1) 0))"), 20).unwrap());
    // the bound matters only for source variables
    assert!(!nat_eval(&nat("(exists (x) (= x (+ 1 1 1)))"), 2).unwrap());
}

#[test]
fn names_are_checked() {
    assert!(matches!(compile(&nat("(exists (_q) (= _q 0))"), profile()), Err(ReduceError::ReservedName(_))));
    assert!(matches!(
        compile(&nat("(exists (x) (exists (x) (= x 0)))"), profile()),
        Err(ReduceError::Shadowed(_))
    ));
    assert!(matches!(
        compile(&nat("(and (= x 0) (exists (x) (= x 0)))"), profile()),
        Err(ReduceError::Shadowed(_))
    ));
    assert!(matches!(
        witness_up(&nat("(= x 0)"), &pins(&[("y", 0)]), profile()),
        Err(ReduceError::UnknownVariable(_))
    ));
}

#[test]
fn round_trips_on_small_sentences() {
    for s in [
        "(exists (x) (= (+ x 1) (+ 1 1)))",
        "(exists (x y) (and (= (+ x y) (+ 1 1 1)) (= y 1)))",
        "(exists (x) (or (= x 0) (= x 1)))",
        "(exists (x) (B 1 x))",
    ] {
        let out = compile(&nat(s), profile()).unwrap();
        let w = witness_up_compiled(&out, &NatAssignment::new(), profile()).unwrap();
        assert!(check_witness(&out.sentence, &w).unwrap(), "{s}");
        let a = witness_down(&w, &out, profile()).unwrap();
        assert!(nat_check(&flatten(&out.source), &a, profile().m_max).unwrap(), "{s}: {a:?}");
    }
}

#[test]
fn assignment_json() {
    let a = pins(&[("x", 3), ("y", 0)]);
    assert_eq!(nat_assignment_from_json(&nat_assignment_to_json(&a)).unwrap(), a);
    let bad: serde_json::Value = serde_json::from_str(r#"{"x": -1}"#).unwrap();
    assert!(nat_assignment_from_json(&bad).is_err());
}

fn small_term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        Just(Term::var("x")),
        Just(Term::var("y")),
        (0u64..4).prop_map(Term::from_u64),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::add(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Term::mul(a, b)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn products_eliminated_faithfully(a in small_term(), b in small_term(), x in 0u64..5, y in 0u64..5) {
        let f = NatFormula::eq(a, b);
        let g = eliminate_mul(&f);
        prop_assert!(!g.has_mul());
        let pin = |h: &NatFormula| -> NatAssignment {
            // a product by zero can drop a variable from the rewritten formula
            [("x", x), ("y", y)]
                .into_iter()
                .filter(|(v, _)| h.all_vars().contains(*v))
                .map(|(v, n)| (v.to_string(), n))
                .collect()
        };
        prop_assert_eq!(nat_check(&f, &pin(&f), 0).unwrap(), nat_check(&g, &pin(&g), 0).unwrap(), "{}", f.render());
    }
}
