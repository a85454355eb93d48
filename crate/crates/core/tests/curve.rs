use heightinterp::curve::{self, canonical_height, gamma_point, generator, height_gap, on_curve, parse_point, pi, scalar_mul, Point};
use heightinterp::heights::{log_integer, parse_rational};
use heightinterp::{Integer, Rational};
use proptest::prelude::*;

/// Chord and tangent on y^2 = x^3 + 2, written out directly.
fn oracle_add(p: &Option<(Rational, Rational)>, q: &Option<(Rational, Rational)>) -> Option<(Rational, Rational)> {
    let (Some((x1, y1)), Some((x2, y2))) = (p, q) else {
        return p.clone().or_else(|| q.clone());
    };
    if x1 == x2 && Rational::from(y1 + y2) == 0 {
        return None;
    }
    let lambda = if x1 == x2 {
        Rational::from(x1 * x1) * 3u32 / Rational::from(y1 * 2u32)
    } else {
        Rational::from(y2 - y1) / Rational::from(x2 - x1)
    };
    let x3 = Rational::from(&lambda * &lambda) - x1 - x2;
    let y3 = lambda * Rational::from(x1 - &x3) - y1;
    Some((x3, y3))
}

fn oracle_mul(n: i64) -> Option<(Rational, Rational)> {
    let p = Some((Rational::from(-1), Rational::from(1)));
    let mut acc = None;
    for _ in 0..n.unsigned_abs() {
        acc = oracle_add(&acc, &p);
    }
    if n < 0 {
        acc.map(|(x, y)| (x, -y))
    } else {
        acc
    }
}

fn to_point(p: Option<(Rational, Rational)>) -> Point {
    match p {
        Some((x, y)) => Point::affine(x, y),
        None => Point::Infinity,
    }
}

fn mul(n: i64) -> Point {
    scalar_mul(&Integer::from(n), &generator()).unwrap()
}

#[test]
fn frozen_multiples() {
    assert_eq!(mul(2), parse_point("(17/4, -71/8)").unwrap());
    assert_eq!(mul(3), parse_point("(127/441, 13175/9261)").unwrap());
    assert_eq!(mul(4), parse_point("(66113/80656, -36583777/22906304)").unwrap());
    assert_eq!(mul(0), Point::Infinity);
}

#[test]
fn multiples_match_repeated_addition() {
    for n in -25..=25 {
        assert_eq!(mul(n), to_point(oracle_mul(n)), "[{n}]P");
    }
}

#[test]
fn gamma_points_are_multiples_of_n() {
    for (k, n) in [(1, 2u64), (3, 2), (-2, 5), (4, 3)] {
        assert_eq!(gamma_point(k, n), mul(k * n as i64));
    }
}

#[test]
fn rejects_points_off_the_curve() {
    let bad = Point::affine(Rational::from(1), Rational::from(1));
    assert!(!on_curve(&bad));
    assert!(curve::add(&bad, &generator()).is_err());
    assert!(pi(&Point::Infinity).is_err());
}

#[test]
fn canonical_height_intervals_shrink_and_nest() {
    let reference = parse_rational("7545769/10000000").unwrap();
    let mut prev = canonical_height(&generator(), 1).unwrap();
    for k in 2..=9 {
        let iv = canonical_height(&generator(), k).unwrap();
        assert!(iv.contains(&reference), "k = {k}: {iv}");
        assert!(iv.lo >= prev.lo && iv.hi <= prev.hi);
        prev = iv;
    }
    assert_eq!(canonical_height(&Point::Infinity, 4).unwrap().width(), 0);
}

#[test]
fn gap_is_computed_from_the_naive_height() {
    let hhat = canonical_height(&generator(), 9).unwrap();
    let g = height_gap(&generator(), 2, &hhat).unwrap();
    // [2]P1 has x = 17/4
    let log17 = log_integer(&Integer::from(17), &Rational::from((1, 1u64 << 40)));
    let expect = hhat.scale(&Rational::from(4)).sub(&log17);
    assert!(g.lo <= expect.hi && expect.lo <= g.hi);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_law_is_associative_and_commutative(a in -12i64..12, b in -12i64..12, c in -12i64..12) {
        let (pa, pb, pc) = (mul(a), mul(b), mul(c));
        let left = curve::add(&curve::add(&pa, &pb).unwrap(), &pc).unwrap();
        let right = curve::add(&pa, &curve::add(&pb, &pc).unwrap()).unwrap();
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(curve::add(&pa, &pb).unwrap(), curve::add(&pb, &pa).unwrap());
        prop_assert_eq!(left, mul(a + b + c));
    }

    #[test]
    fn negation_inverts(n in -30i64..30) {
        prop_assert_eq!(curve::add(&mul(n), &mul(n).neg()).unwrap(), Point::Infinity);
    }
}
