use heightinterp::heights::{height, log_integer, log_le, mult_height, parse_rational, product_formula_check};
use heightinterp::{Integer, Rational};
use proptest::prelude::*;

/// `H` of a tuple from the definition: scale to integers by the lcm of the
/// denominators, divide out the gcd of everything, take the largest entry.
fn height_oracle(xs: &[(i128, i128)]) -> u128 {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let reduced: Vec<(i128, u128)> = xs
        .iter()
        .map(|&(n, d)| {
            let g = gcd(n.unsigned_abs(), d.unsigned_abs()).max(1);
            let s = if d < 0 { -1 } else { 1 };
            (s * n / g as i128, d.unsigned_abs() / g)
        })
        .collect();
    let l = reduced.iter().fold(1u128, |l, &(_, d)| l / gcd(l, d) * d);
    let mut entries: Vec<u128> = reduced.iter().map(|&(n, d)| n.unsigned_abs() * (l / d)).collect();
    entries.push(l);
    let g = entries.iter().fold(0u128, |g, &e| gcd(g, e));
    entries.into_iter().max().unwrap() / g
}

fn rat(n: i128, d: i128) -> Rational {
    Rational::from((Integer::from(n), Integer::from(d)))
}

/// Bounds on `ln n` from `ln n = j ln 2 + 2 atanh((r-1)/(r+1))`, `r = n / 2^j`
/// in `[1, 2)`, summing the series in exact rationals.
fn ln_oracle(n: &Integer, terms: u32) -> (Rational, Rational) {
    fn atanh(x: &Rational, terms: u32) -> (Rational, Rational) {
        let x2 = Rational::from(x * x);
        let mut pow = x.clone();
        let mut sum = Rational::new();
        for k in 0..terms {
            sum += Rational::from(&pow / (2 * k + 1));
            pow *= &x2;
        }
        // tail <= x^{2K+1} / ((2K+1)(1 - x^2))
        let tail = Rational::from(&pow / (2 * terms + 1)) / (Rational::from(1) - x2);
        let hi = Rational::from(&sum + &tail);
        (sum, hi)
    }
    let j = n.significant_bits() - 1;
    let r = Rational::from((n.clone(), Integer::from(1) << j));
    let x = Rational::from(&r - 1u32) / Rational::from(&r + 1u32);
    let (alo, ahi) = atanh(&x, terms);
    let (llo, lhi) = atanh(&Rational::from((1, 3)), terms);
    (Rational::from(&llo * (2 * j)) + alo * 2u32, Rational::from(&lhi * (2 * j)) + ahi * 2u32)
}

#[test]
fn frozen_heights() {
    let q = |s: &str| parse_rational(s).unwrap();
    assert_eq!(*height(&q("7/6")).value(), 7);
    assert_eq!(*height(&q("-12/8")).value(), 3);
    assert_eq!(*height(&q("0")).value(), 1);
    assert_eq!(*mult_height(&[q("1/2"), q("3")]).unwrap().value(), 6);
    assert_eq!(*mult_height(&[q("1/2"), q("1/3")]).unwrap().value(), 6);
    assert_eq!(*mult_height(&[q("2/3"), q("5/7"), q("10/21")]).unwrap().value(), 21);
}

#[test]
fn log_matches_series_oracle() {
    let eps = Rational::from((1, 1u64 << 50));
    for n in [2u64, 3, 7, 10, 1000, 65_537, 999_999_999_989, u64::MAX] {
        let n = Integer::from(n);
        let iv = log_integer(&n, &eps);
        let (lo, hi) = ln_oracle(&n, 40);
        assert!(iv.lo <= hi && lo <= iv.hi, "ln {n}: {iv} vs [{}, {}]", lo.to_f64(), hi.to_f64());
        assert!(iv.width() <= eps);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn height_sum_identity(a in -(10i64.pow(18))..10i64.pow(18), b in 1i64..10i64.pow(18),
                           c in -(10i64.pow(18))..10i64.pow(18), d in 1i64..10i64.pow(18)) {
        let (x, y) = (rat(a as i128, b as i128), rat(c as i128, d as i128));
        let lhs = Integer::from(height(&x).value() * height(&y).value());
        let xy = Rational::from(&x * &y);
        prop_assert_eq!(lhs, mult_height(&[x, y, xy]).unwrap().into_value());
    }

    #[test]
    fn tuple_height_matches_definition(xs in prop::collection::vec((-10_000i128..10_000, 1i128..10_000), 1..5)) {
        let qs: Vec<Rational> = xs.iter().map(|&(n, d)| rat(n, d)).collect();
        prop_assert_eq!(mult_height(&qs).unwrap().value().clone(), Integer::from(height_oracle(&xs)));
    }

    #[test]
    fn height_invariant_under_inverse_and_sign(n in 1i64..1_000_000, d in 1i64..1_000_000) {
        let q = rat(n as i128, d as i128);
        let inv = Rational::from(1) / q.clone();
        prop_assert_eq!(height(&q), height(&inv));
        prop_assert_eq!(height(&q), height(&Rational::from(-&q)));
    }

    #[test]
    fn log_le_against_series(a in 1u64..u64::MAX, b in 1u64..u64::MAX, c in -20i32..20) {
        let (a, b) = (Integer::from(a), Integer::from(b));
        let c = Rational::from(c) / 4u32;
        let (alo, ahi) = ln_oracle(&a, 30);
        let (blo, bhi) = ln_oracle(&b, 30);
        let got = log_le(&a, &b, &c);
        if ahi < Rational::from(&blo + &c) {
            prop_assert!(got);
        }
        if alo > Rational::from(&bhi + &c) {
            prop_assert!(!got);
        }
    }

    #[test]
    fn product_formula(n in -100_000i64..100_000, d in 1i64..100_000) {
        prop_assert!(product_formula_check(&rat(n as i128, d as i128)).unwrap());
    }
}
