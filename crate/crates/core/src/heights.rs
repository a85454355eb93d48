//! Exact rationals, multiplicative heights and certified logarithms.

use std::cmp::Ordering;
use std::fmt;

use rug::float::Round;
use rug::integer::IsPrime;
use rug::ops::Pow;
use rug::{Float, Integer, Rational};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum HeightError {
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("malformed rational `{0}`")]
    Malformed(String),
    #[error("empty tuple")]
    EmptyTuple,
    #[error("product formula is undefined at 0")]
    Zero,
}

pub fn make_rational(a: impl Into<Integer>, b: impl Into<Integer>) -> Result<Rational, HeightError> {
    let b = b.into();
    if b == 0 {
        return Err(HeightError::ZeroDenominator);
    }
    Ok(Rational::from((a.into(), b)))
}

/// Parses `a/b` or `a`. Whitespace around the parts is allowed.
pub fn parse_rational(s: &str) -> Result<Rational, HeightError> {
    let bad = || HeightError::Malformed(s.to_string());
    let (a, b) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s.trim(), "1"),
    };
    let a: Integer = a.parse().map_err(|_| bad())?;
    let b: Integer = b.parse().map_err(|_| bad())?;
    make_rational(a, b)
}

/// `max(d, |d q_1|, ..., |d q_m|)` with `d` the least common denominator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultHeight(Integer);

impl MultHeight {
    pub fn value(&self) -> &Integer {
        &self.0
    }

    pub fn into_value(self) -> Integer {
        self.0
    }

    pub fn one() -> Self {
        MultHeight(Integer::from(1))
    }
}

impl fmt::Display for MultHeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn mult_height(q: &[Rational]) -> Result<MultHeight, HeightError> {
    if q.is_empty() {
        return Err(HeightError::EmptyTuple);
    }
    Ok(tuple_height(q.iter()))
}

pub(crate) fn tuple_height<'a>(q: impl Iterator<Item = &'a Rational> + Clone) -> MultHeight {
    let mut d = Integer::from(1);
    for x in q.clone() {
        if *x.denom() != 1 {
            d.lcm_mut(x.denom());
        }
    }
    let mut best = d.clone();
    for x in q {
        let scaled = Integer::from(x.numer().abs_ref()) * Integer::from(&d / x.denom());
        if scaled > best {
            best = scaled;
        }
    }
    MultHeight(best)
}

/// Height of a single rational, `max(|a|, b)`.
pub fn height(q: &Rational) -> MultHeight {
    let a = Integer::from(q.numer().abs_ref());
    if a > *q.denom() {
        MultHeight(a)
    } else {
        MultHeight(q.denom().clone())
    }
}

/// `h_m(x) <= h_n(y)`.
pub fn holds_h(x: &[Rational], y: &[Rational]) -> Result<bool, HeightError> {
    Ok(mult_height(x)? <= mult_height(y)?)
}

pub fn holds_e(x: &[Rational], y: &[Rational]) -> Result<bool, HeightError> {
    Ok(mult_height(x)? == mult_height(y)?)
}

/// `h(x) + h(y) = h(z)`.
pub fn holds_s(x: &Rational, y: &Rational, z: &Rational) -> bool {
    Integer::from(height(x).value() * height(y).value()) == *height(z).value()
}

/// Factors `n >= 1` into primes, ascending.
pub fn factor(n: &Integer) -> Vec<(Integer, u32)> {
    assert!(*n >= 1, "factor expects a positive integer");
    let mut n = n.clone();
    let mut out = Vec::new();
    for p in [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let e = n.remove_factor_mut(&Integer::from(p));
        if e > 0 {
            out.push((Integer::from(p), e));
        }
    }
    let mut stack = vec![n];
    let mut primes: Vec<Integer> = Vec::new();
    while let Some(m) = stack.pop() {
        if m == 1 {
            continue;
        }
        if m.is_probably_prime(30) != IsPrime::No {
            primes.push(m);
            continue;
        }
        let d = rho(&m);
        let other = Integer::from(&m / &d);
        stack.push(d);
        stack.push(other);
    }
    primes.sort();
    for p in primes {
        match out.last_mut() {
            Some((q, e)) if *q == p => *e += 1,
            _ => out.push((p, 1)),
        }
    }
    out
}

// Brent's variant; `n` is composite and coprime to the small primes above.
fn rho(n: &Integer) -> Integer {
    if n.is_perfect_square() {
        return n.clone().sqrt();
    }
    let mut c = Integer::from(1);
    loop {
        let f = |x: &Integer| -> Integer { (Integer::from(x * x) + &c) % n };
        let mut y = Integer::from(2);
        let mut r: u64 = 1;
        let mut q = Integer::from(1);
        let mut g = Integer::from(1);
        let mut x = y.clone();
        let mut ys = y.clone();
        while g == 1 {
            x = y.clone();
            for _ in 0..r {
                y = f(&y);
            }
            let mut k = 0;
            while k < r && g == 1 {
                ys = y.clone();
                for _ in 0..(128.min(r - k)) {
                    y = f(&y);
                    q = (q * Integer::from(&x - &y).abs()) % n;
                }
                g = q.clone().gcd(n);
                k += 128;
            }
            r *= 2;
        }
        if g == *n {
            loop {
                ys = f(&ys);
                g = Integer::from(&x - &ys).abs().gcd(n);
                if g > 1 {
                    break;
                }
            }
        }
        if g != *n {
            return g;
        }
        c += 1;
    }
}

/// Multiplies the archimedean and all p-adic absolute values of `q` and
/// checks the product is exactly 1.
pub fn product_formula_check(q: &Rational) -> Result<bool, HeightError> {
    if *q == 0 {
        return Err(HeightError::Zero);
    }
    let mut prod = Rational::from(q.abs_ref());
    for (p, e) in factor(&Integer::from(q.numer().abs_ref())) {
        prod /= Rational::from(p.pow(e));
    }
    for (p, e) in factor(q.denom()) {
        prod *= Rational::from(p.pow(e));
    }
    Ok(prod == 1)
}

/// A real number known to lie in `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CertifiedReal {
    pub lo: Rational,
    pub hi: Rational,
}

impl CertifiedReal {
    pub fn new(lo: Rational, hi: Rational) -> Self {
        assert!(lo <= hi, "empty interval");
        CertifiedReal { lo, hi }
    }

    pub fn exact(x: Rational) -> Self {
        CertifiedReal { lo: x.clone(), hi: x }
    }

    pub fn width(&self) -> Rational {
        Rational::from(&self.hi - &self.lo)
    }

    pub fn contains(&self, x: &Rational) -> bool {
        self.lo <= *x && *x <= self.hi
    }

    pub fn mid(&self) -> Rational {
        Rational::from(&self.lo + &self.hi) / 2
    }

    pub fn add(&self, o: &CertifiedReal) -> CertifiedReal {
        CertifiedReal { lo: Rational::from(&self.lo + &o.lo), hi: Rational::from(&self.hi + &o.hi) }
    }

    pub fn sub(&self, o: &CertifiedReal) -> CertifiedReal {
        CertifiedReal { lo: Rational::from(&self.lo - &o.hi), hi: Rational::from(&self.hi - &o.lo) }
    }

    pub fn shift(&self, c: &Rational) -> CertifiedReal {
        CertifiedReal { lo: Rational::from(&self.lo + c), hi: Rational::from(&self.hi + c) }
    }

    pub fn scale(&self, c: &Rational) -> CertifiedReal {
        let a = Rational::from(&self.lo * c);
        let b = Rational::from(&self.hi * c);
        if a <= b {
            CertifiedReal { lo: a, hi: b }
        } else {
            CertifiedReal { lo: b, hi: a }
        }
    }

    pub fn intersect(&self, o: &CertifiedReal) -> Option<CertifiedReal> {
        let lo = self.lo.clone().max(o.lo.clone());
        let hi = self.hi.clone().min(o.hi.clone());
        (lo <= hi).then_some(CertifiedReal { lo, hi })
    }

    /// `Some(Less)` if every point is below every point of `o`, and so on;
    /// `None` when the intervals overlap.
    pub fn compare(&self, o: &CertifiedReal) -> Option<Ordering> {
        if self.hi < o.lo {
            Some(Ordering::Less)
        } else if self.lo > o.hi {
            Some(Ordering::Greater)
        } else if self.lo == self.hi && o.lo == o.hi && self.lo == o.lo {
            Some(Ordering::Equal)
        } else {
            None
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.mid().to_f64()
    }
}

impl fmt::Display for CertifiedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.12}, {:.12}]", self.lo.to_f64(), self.hi.to_f64())
    }
}

/// Interval of width at most `eps` around `log H`, by directed rounding.
pub fn log_height(h: &MultHeight, eps: &Rational) -> CertifiedReal {
    log_integer(h.value(), eps)
}

pub fn log_integer(n: &Integer, eps: &Rational) -> CertifiedReal {
    assert!(*n >= 1, "log of a non-positive integer");
    assert!(*eps > 0, "eps must be positive");
    if *n == 1 {
        return CertifiedReal::exact(Rational::new());
    }
    let want = (-eps.to_f64().log2()).max(0.0) as u32;
    let mag = 64 - (n.significant_bits() as u64).leading_zeros();
    let mut prec = 64 + want + mag;
    loop {
        let (mut lo, _) = Float::with_val_round(prec, n, Round::Down);
        lo.ln_round(Round::Down);
        let (mut hi, _) = Float::with_val_round(prec, n, Round::Up);
        hi.ln_round(Round::Up);
        let lo = lo.to_rational().expect("finite");
        let hi = hi.to_rational().expect("finite");
        if Rational::from(&hi - &lo) <= *eps {
            return CertifiedReal { lo, hi };
        }
        prec *= 2;
    }
}

/// Certified `log |q|_height` for a rational.
pub fn log_height_of(q: &Rational, eps: &Rational) -> CertifiedReal {
    log_height(&height(q), eps)
}

/// Decides `log a <= log b + c` for positive integers. For rational `c != 0`
/// equality would make `e^c` rational, so refining the intervals terminates.
pub fn log_le(a: &Integer, b: &Integer, c: &Rational) -> bool {
    if *c == 0 {
        return a <= b;
    }
    let mut eps = Rational::from((1, 1u64 << 32));
    loop {
        let la = log_integer(a, &eps);
        let lb = log_integer(b, &eps).shift(c);
        match la.compare(&lb) {
            Some(Ordering::Greater) => return false,
            Some(_) => return true,
            None => eps /= Rational::from(1u64 << 32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn normalizes() {
        assert_eq!(make_rational(6, 4).unwrap(), q("3/2"));
        assert_eq!(make_rational(0, 5).unwrap().to_string(), "0");
        assert_eq!(make_rational(-6, -4).unwrap(), q("3/2"));
        assert_eq!(make_rational(1, 0), Err(HeightError::ZeroDenominator));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }

    #[test]
    fn heights_of_small_tuples() {
        assert_eq!(mult_height(&[q("3/2")]).unwrap().value(), &3);
        assert_eq!(mult_height(&[q("7/6")]).unwrap().value(), &7);
        assert_eq!(mult_height(&[q("2/3"), q("5/7"), q("10/21")]).unwrap().value(), &21);
        assert_eq!(mult_height(&[q("0")]).unwrap().value(), &1);
        assert!(mult_height(&[]).is_err());
    }

    #[test]
    fn relations() {
        assert!(!holds_h(&[q("7")], &[q("1/2"), q("3")]).unwrap());
        assert!(holds_h(&[q("1")], &[q("-5/3")]).unwrap());
        assert!(holds_e(&[q("3/2")], &[q("3")]).unwrap());
        assert!(holds_e(&[q("0")], &[q("1")]).unwrap());
        assert!(!holds_e(&[q("2")], &[q("3")]).unwrap());
        assert!(holds_s(&q("2/3"), &q("5/7"), &q("21")));
        assert!(holds_s(&q("1"), &q("9/4"), &q("9/4")));
        assert!(!holds_s(&q("2"), &q("2"), &q("5")));
    }

    #[test]
    fn product_formula() {
        for s in ["-6/5", "8/3", "1", "1000000007/999999999989", "-18446744073709551617/12"] {
            assert!(product_formula_check(&q(s)).unwrap(), "{s}");
        }
        assert_eq!(product_formula_check(&q("0")), Err(HeightError::Zero));
    }

    #[test]
    fn factors_semiprimes() {
        let p = Integer::from(1_000_000_007u64);
        let r = Integer::from(998_244_353u64);
        let n = Integer::from(&p * &r) * &p;
        assert_eq!(factor(&n), vec![(r, 1), (p, 2)]);
        assert_eq!(factor(&Integer::from(1)), vec![]);
        assert_eq!(factor(&Integer::from(360)), vec![(2.into(), 3), (3.into(), 2), (5.into(), 1)]);
    }

    #[test]
    fn logs_are_tight() {
        let eps = q("1/1000");
        assert_eq!(log_integer(&Integer::from(1), &eps), CertifiedReal::exact(Rational::new()));
        let l3 = log_integer(&Integer::from(3), &eps);
        assert!(l3.width() <= eps);
        assert!(l3.lo < q("10987/10000") && l3.hi > q("10986/10000"));
        let big = Integer::from(10).pow(5000);
        let l = log_integer(&big, &q("1/1000000000000"));
        assert!((l.to_f64() - 5000.0 * 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn log_comparisons() {
        let one = Rational::from(1);
        assert!(log_le(&Integer::from(8), &Integer::from(3), &one));
        assert!(!log_le(&Integer::from(9), &Integer::from(3), &one));
        assert!(log_le(&Integer::from(1), &Integer::from(25001), &Rational::from(-10)));
        assert!(!log_le(&Integer::from(1), &Integer::from(50001), &Rational::from(-11)));
        assert!(log_le(&Integer::from(5), &Integer::from(5), &Rational::new()));
    }

    #[test]
    fn interval_compare() {
        let a = CertifiedReal::new(q("1"), q("2"));
        let b = CertifiedReal::new(q("3"), q("4"));
        assert_eq!(a.compare(&b), Some(Ordering::Less));
        assert_eq!(b.compare(&a), Some(Ordering::Greater));
        assert_eq!(a.compare(&a), None);
        assert_eq!(a.intersect(&b), None);
        assert_eq!(a.scale(&q("-1")), CertifiedReal::new(q("-2"), q("-1")));
    }
}
