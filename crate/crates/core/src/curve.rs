//! The curve y^2 = x^3 + 2 over Q: group law, naive and canonical heights.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use rug::{Integer, Rational};

use crate::heights::{height, log_height, parse_rational, CertifiedReal, HeightError, MultHeight};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CurveError {
    #[error("point {0} is not on the curve")]
    OffCurve(String),
    #[error("the point at infinity has no x-coordinate")]
    Infinity,
    #[error("malformed point `{0}`")]
    Malformed(String),
    #[error(transparent)]
    Height(#[from] HeightError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Point {
    Infinity,
    Affine(Rational, Rational),
}

impl Point {
    pub fn affine(x: Rational, y: Rational) -> Self {
        Point::Affine(x, y)
    }

    pub fn is_infinity(&self) -> bool {
        matches!(self, Point::Infinity)
    }

    pub fn neg(&self) -> Point {
        match self {
            Point::Infinity => Point::Infinity,
            Point::Affine(x, y) => Point::Affine(x.clone(), Rational::from(-y)),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Infinity => f.write_str("inf"),
            Point::Affine(x, y) => write!(f, "({x}, {y})"),
        }
    }
}

pub fn parse_point(s: &str) -> Result<Point, CurveError> {
    let t = s.trim();
    if t == "inf" {
        return Ok(Point::Infinity);
    }
    let bad = || CurveError::Malformed(s.to_string());
    let inner = t.strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
    let (a, b) = inner.split_once(',').ok_or_else(bad)?;
    Ok(Point::Affine(parse_rational(a)?, parse_rational(b)?))
}

/// Trusted constants for this curve.
#[derive(Clone, Debug)]
pub struct CurveConstants {
    pub gap_lower: Rational,
    pub gap_upper: Rational,
    pub c_e: Rational,
    pub hhat_p1_reference: Rational,
}

pub fn constants() -> CurveConstants {
    CurveConstants {
        gap_lower: Rational::from((-3192, 1000)),
        gap_upper: Rational::from((3384, 1000)),
        c_e: Rational::from(4),
        hhat_p1_reference: Rational::from((7_545_769, 10_000_000)),
    }
}

pub fn generator() -> Point {
    Point::Affine(Rational::from(-1), Rational::from(1))
}

pub fn on_curve(p: &Point) -> bool {
    match p {
        Point::Infinity => true,
        Point::Affine(x, y) => {
            let lhs = Rational::from(y * y);
            let rhs = Rational::from(x * x) * x + 2u32;
            lhs == rhs
        }
    }
}

fn require(p: &Point) -> Result<(), CurveError> {
    if on_curve(p) {
        Ok(())
    } else {
        Err(CurveError::OffCurve(p.to_string()))
    }
}

pub fn add(p: &Point, q: &Point) -> Result<Point, CurveError> {
    require(p)?;
    require(q)?;
    Ok(add_unchecked(p, q))
}

pub(crate) fn add_unchecked(p: &Point, q: &Point) -> Point {
    let (x1, y1, x2, y2) = match (p, q) {
        (Point::Infinity, _) => return q.clone(),
        (_, Point::Infinity) => return p.clone(),
        (Point::Affine(a, b), Point::Affine(c, d)) => (a, b, c, d),
    };
    let lambda = if x1 == x2 {
        if *y1 == Rational::from(-y2) {
            return Point::Infinity;
        }
        return double_unchecked(p);
    } else {
        Rational::from(y2 - y1) / Rational::from(x2 - x1)
    };
    chord(&lambda, x1, y1, x2)
}

fn chord(lambda: &Rational, x1: &Rational, y1: &Rational, x2: &Rational) -> Point {
    let x3 = Rational::from(lambda * lambda) - x1 - x2;
    let y3 = Rational::from(x1 - &x3) * lambda - y1;
    Point::Affine(x3, y3)
}

pub(crate) fn double_unchecked(p: &Point) -> Point {
    match p {
        Point::Infinity => Point::Infinity,
        Point::Affine(x, y) => {
            // x^3 = -2 has no rational root, so y never vanishes
            debug_assert!(*y != 0);
            let lambda = Rational::from(x * x) * 3u32 / Rational::from(y * 2u32);
            chord(&lambda, x, y, x)
        }
    }
}

pub fn scalar_mul(n: &Integer, p: &Point) -> Result<Point, CurveError> {
    require(p)?;
    Ok(scalar_mul_unchecked(n, p))
}

pub(crate) fn scalar_mul_unchecked(n: &Integer, p: &Point) -> Point {
    let base = if *n < 0 { p.neg() } else { p.clone() };
    let m = Integer::from(n.abs_ref());
    let mut acc = Point::Infinity;
    for i in (0..m.significant_bits()).rev() {
        acc = double_unchecked(&acc);
        if m.get_bit(i) {
            acc = add_unchecked(&acc, &base);
        }
    }
    acc
}

pub fn pi(p: &Point) -> Result<Rational, CurveError> {
    match p {
        Point::Infinity => Err(CurveError::Infinity),
        Point::Affine(x, _) => Ok(x.clone()),
    }
}

pub fn naive_height(p: &Point) -> MultHeight {
    match p {
        Point::Infinity => MultHeight::one(),
        Point::Affine(x, _) => height(x),
    }
}

struct Doubling {
    last: Point,
    logs: Vec<CertifiedReal>,
}

fn doubling_cache() -> &'static Mutex<HashMap<Point, Doubling>> {
    static C: OnceLock<Mutex<HashMap<Point, Doubling>>> = OnceLock::new();
    C.get_or_init(Default::default)
}

fn log_eps() -> Rational {
    Rational::from((1, 1u64 << 40))
}

/// Certified naive log heights of `[2^j]P` for `j = 0..=k`.
fn doubling_logs(p: &Point, k: u32) -> Vec<CertifiedReal> {
    let (mut logs, mut last) = {
        let cache = doubling_cache().lock().unwrap();
        match cache.get(p) {
            Some(d) if d.logs.len() > k as usize => return d.logs[..=k as usize].to_vec(),
            Some(d) => (d.logs.clone(), d.last.clone()),
            None => (Vec::new(), p.clone()),
        }
    };
    let eps = log_eps();
    if logs.is_empty() {
        logs.push(log_height(&naive_height(&last), &eps));
    }
    while logs.len() <= k as usize {
        last = double_unchecked(&last);
        logs.push(log_height(&naive_height(&last), &eps));
    }
    doubling_cache()
        .lock()
        .unwrap()
        .insert(p.clone(), Doubling { last, logs: logs.clone() });
    logs
}

/// Interval for the canonical height from `k` doublings, using the
/// difference bound `c_E` between canonical and naive height.
pub fn canonical_height(p: &Point, k: u32) -> Result<CertifiedReal, CurveError> {
    require(p)?;
    if p.is_infinity() {
        return Ok(CertifiedReal::exact(Rational::new()));
    }
    let c = constants().c_e;
    let mut acc: Option<CertifiedReal> = None;
    for (j, l) in doubling_logs(p, k).into_iter().enumerate() {
        let scale = Rational::from((1, Integer::from(1) << (2 * j as u32)));
        let iv = CertifiedReal::new(
            Rational::from(&l.lo - &c) * &scale,
            Rational::from(&l.hi + &c) * &scale,
        );
        acc = Some(match acc {
            None => iv,
            Some(a) => a.intersect(&iv).expect("canonical height bounds are consistent"),
        });
    }
    let mut iv = acc.expect("at least one level");
    if iv.lo < 0 {
        iv.lo = Rational::new();
    }
    Ok(iv)
}

/// `k^2 hhat(P) - h_pi([k]P)` for an interval `hhat` around `hhat(P)`.
pub fn height_gap(p: &Point, k: i64, hhat: &CertifiedReal) -> Result<CertifiedReal, CurveError> {
    let kp = scalar_mul(&Integer::from(k), p)?;
    let naive = log_height(&naive_height(&kp), &log_eps());
    Ok(hhat.scale(&Rational::from(k * k)).sub(&naive))
}

fn gamma_cache() -> &'static Mutex<HashMap<(u64, i64), Point>> {
    static C: OnceLock<Mutex<HashMap<(u64, i64), Point>>> = OnceLock::new();
    C.get_or_init(Default::default)
}

/// `Q_k = [N k] P_1`, memoized on `(N, k)`.
pub fn gamma_point(k: i64, n: u64) -> Point {
    assert!(n >= 1, "N must be positive");
    if k == 0 {
        return Point::Infinity;
    }
    if k < 0 {
        return gamma_point(-k, n).neg();
    }
    if let Some(p) = gamma_cache().lock().unwrap().get(&(n, k)) {
        return p.clone();
    }
    let p = if k == 1 {
        scalar_mul_unchecked(&Integer::from(n), &generator())
    } else {
        add_unchecked(&gamma_point(k - 1, n), &gamma_point(1, n))
    };
    gamma_cache().lock().unwrap().insert((n, k), p.clone());
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> Rational {
        parse_rational(s).unwrap()
    }

    fn pt(s: &str) -> Point {
        parse_point(s).unwrap()
    }

    #[test]
    fn membership() {
        assert!(on_curve(&generator()));
        assert!(on_curve(&Point::Infinity));
        assert!(!on_curve(&Point::Affine(q("0"), q("1"))));
    }

    #[test]
    fn small_multiples() {
        let p = generator();
        assert_eq!(add(&p, &p).unwrap(), pt("(17/4, -71/8)"));
        assert_eq!(scalar_mul(&Integer::from(2), &p).unwrap(), pt("(17/4, -71/8)"));
        assert_eq!(scalar_mul(&Integer::from(3), &p).unwrap(), pt("(127/441, 13175/9261)"));
        assert_eq!(scalar_mul(&Integer::from(0), &p).unwrap(), Point::Infinity);
        assert_eq!(add(&p, &p.neg()).unwrap(), Point::Infinity);
        assert_eq!(add(&p, &Point::Infinity).unwrap(), p);
        assert!(add(&p, &Point::Affine(q("0"), q("1"))).is_err());
    }

    #[test]
    fn projections_and_heights() {
        assert_eq!(pi(&generator()).unwrap(), q("-1"));
        assert_eq!(pi(&Point::Infinity), Err(CurveError::Infinity));
        assert_eq!(naive_height(&Point::Infinity).value(), &1);
        assert_eq!(naive_height(&generator()).value(), &1);
        assert_eq!(naive_height(&pt("(17/4, -71/8)")).value(), &17);
    }

    #[test]
    fn gamma_points() {
        assert_eq!(gamma_point(0, 2), Point::Infinity);
        assert_eq!(gamma_point(1, 2), pt("(17/4, -71/8)"));
        assert_eq!(gamma_point(-1, 2), pt("(17/4, 71/8)"));
        assert_eq!(gamma_point(3, 5), scalar_mul(&Integer::from(15), &generator()).unwrap());
    }

    #[test]
    fn point_text_round_trip() {
        for s in ["inf", "(17/4, -71/8)", "(-1, 1)"] {
            assert_eq!(pt(s).to_string(), s);
        }
        assert!(parse_point("(1 2)").is_err());
    }

    #[test]
    fn canonical_height_small_k() {
        assert_eq!(canonical_height(&Point::Infinity, 3).unwrap(), CertifiedReal::exact(Rational::new()));
        let iv = canonical_height(&generator(), 6).unwrap();
        assert!(iv.contains(&constants().hhat_p1_reference));
        assert!(iv.width() < q("1/100"));
        let two = canonical_height(&pt("(17/4, -71/8)"), 6).unwrap();
        assert!(two.contains(&(constants().hhat_p1_reference * Rational::from(4))));
    }
}
