//! Sums of four squares over Z and Q, and membership certificates for
//! the interval J = [1, 2].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rug::integer::IsPrime;
use rug::{Integer, Rational};

use super::GadgetError;

/// Inputs up to this size get the lexicographically largest decomposition.
pub const EXHAUSTIVE_LIMIT: u64 = 1_000_000;

/// `n = k1^2 + k2^2 + k3^2 + k4^2` with `k1 >= k2 >= k3 >= k4 >= 0`.
///
/// Up to [`EXHAUSTIVE_LIMIT`] this is the lexicographically largest such
/// tuple. Larger inputs use a deterministic search that strips two squares
/// greedily and writes the remainder as a prime `p = 1 mod 4`, which is a
/// sum of two squares.
pub fn four_squares(n: &Integer) -> [Integer; 4] {
    assert!(*n >= 0, "four_squares expects n >= 0");
    if let Some(small) = n.to_u64().filter(|&m| m <= EXHAUSTIVE_LIMIT) {
        return exhaustive(small).map(Integer::from);
    }
    let mut k = large(n);
    k.sort_by(|a, b| b.cmp(a));
    debug_assert_eq!(k.iter().map(|x| Integer::from(x * x)).sum::<Integer>(), *n);
    k
}

fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

fn exhaustive(n: u64) -> [u64; 4] {
    for k1 in (0..=isqrt(n)).rev() {
        let r1 = n - k1 * k1;
        if r1 > 3 * k1 * k1 {
            break;
        }
        for k2 in (0..=isqrt(r1).min(k1)).rev() {
            let r2 = r1 - k2 * k2;
            if r2 > 2 * k2 * k2 {
                break;
            }
            for k3 in (0..=isqrt(r2).min(k2)).rev() {
                let r3 = r2 - k3 * k3;
                if r3 > k3 * k3 {
                    break;
                }
                let k4 = isqrt(r3);
                if k4 * k4 == r3 {
                    return [k1, k2, k3, k4];
                }
            }
        }
    }
    unreachable!("every natural number is a sum of four squares")
}

fn large(n: &Integer) -> [Integer; 4] {
    let zero = Integer::new;
    // the search below needs n - x^2 = 1 or 2 mod 4 for some x
    if n.is_divisible_u(4) {
        let quarter = Integer::from(n >> 2u32);
        return four_squares(&quarter).map(|k| k << 1u32);
    }
    let x = n.clone().sqrt();
    let r = Integer::from(n - &x * &x);
    if r == 0 {
        return [x, zero(), zero(), zero()];
    }
    let y = r.clone().sqrt();
    let r2 = Integer::from(&r - &y * &y);
    if r2.is_perfect_square() {
        return [x, y, r2.sqrt(), zero()];
    }

    let mut x = x;
    loop {
        let r = Integer::from(n - &x * &x);
        // p = r - y^2 must be 1 mod 4, which fixes the parity of y
        let want_odd = match r.mod_u(4) {
            1 => false,
            2 => true,
            _ => {
                x -= 1;
                continue;
            }
        };
        let mut y = r.clone().sqrt();
        if y.is_odd() != want_odd {
            y -= 1;
        }
        if y >= 0 {
            if let Some([y, a, b]) = search_y(&r, &y) {
                return [x, y, a, b];
            }
        }
        x -= 1;
    }
}

const Y_WINDOW: usize = 1 << 15;
const SIEVE_BOUND: u64 = 1 << 20;
const SIEVE_MIN_BITS: u32 = 256;

/// Tries `y = y0, y0 - 2, ...` until `r - y^2` is 1 or a prime `1 mod 4`.
fn search_y(r: &Integer, y0: &Integer) -> Option<[Integer; 3]> {
    let count = y0.to_usize().map_or(Y_WINDOW, |v| (v / 2 + 1).min(Y_WINDOW));
    let alive = if r.significant_bits() >= SIEVE_MIN_BITS {
        sieve(r, y0, count)
    } else {
        vec![true; count]
    };
    let mut y = y0.clone();
    for ok in alive {
        let p = Integer::from(r - &y * &y);
        if p == 1 {
            return Some([y, Integer::from(1), Integer::new()]);
        }
        if ok && p.is_probably_prime(25) != IsPrime::No {
            if let Some((a, b)) = two_squares_prime(&p) {
                return Some([y, a, b]);
            }
        }
        y -= 2;
    }
    None
}

fn small_primes() -> &'static [u64] {
    static P: OnceLock<Vec<u64>> = OnceLock::new();
    P.get_or_init(|| {
        let n = SIEVE_BOUND as usize;
        let mut comp = vec![false; n + 1];
        let mut out = Vec::new();
        for i in 3..=n {
            if i % 2 == 1 && !comp[i] {
                out.push(i as u64);
                for j in (i * i..=n).step_by(2 * i) {
                    comp[j] = true;
                }
            }
        }
        out
    })
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    acc
}

/// Square root of `a` modulo an odd prime `l < 2^32` (Tonelli-Shanks).
fn sqrt_mod(a: u64, l: u64) -> Option<u64> {
    if a == 0 {
        return Some(0);
    }
    if pow_mod(a, (l - 1) / 2, l) != 1 {
        return None;
    }
    let (mut q, mut s) = (l - 1, 0);
    while q % 2 == 0 {
        q /= 2;
        s += 1;
    }
    let z = (2..l).find(|&z| pow_mod(z, (l - 1) / 2, l) == l - 1)?;
    let (mut m, mut c, mut t, mut x) = (s, pow_mod(z, q, l), pow_mod(a, q, l), pow_mod(a, (q + 1) / 2, l));
    while t != 1 {
        let mut i = 0;
        let mut tt = t;
        while tt != 1 {
            tt = tt * tt % l;
            i += 1;
        }
        let b = pow_mod(c, 1 << (m - i - 1), l);
        m = i;
        c = b * b % l;
        t = t * c % l;
        x = x * b % l;
    }
    Some(x)
}

/// `alive[t]` is false when a small odd prime divides `r - (y0 - 2t)^2`.
fn sieve(r: &Integer, y0: &Integer, count: usize) -> Vec<bool> {
    let mut alive = vec![true; count];
    for &l in small_primes() {
        let s = match sqrt_mod(r.mod_u(l as u32) as u64, l) {
            Some(s) => s,
            None => continue,
        };
        let y = y0.mod_u(l as u32) as u64;
        let half = (l + 1) / 2;
        for root in [s, (l - s) % l] {
            // y0 - 2t = root (mod l)
            let start = ((y + l - root) % l) * half % l;
            for t in (start as usize..count).step_by(l as usize) {
                alive[t] = false;
            }
            if s == 0 {
                break;
            }
        }
    }
    alive
}

/// Writes a prime `p = 1 mod 4` as `a^2 + b^2` (Hermite-Serret descent).
/// Returns `None` if `p` turns out not to be such a prime.
pub fn two_squares_prime(p: &Integer) -> Option<(Integer, Integer)> {
    if p.mod_u(4) != 1 {
        return None;
    }
    let mut c = Integer::from(2);
    while c.jacobi(p) != -1 {
        c += 1;
        if c > 1000 {
            return None;
        }
    }
    let e = Integer::from(p - 1u32) >> 2;
    let t = c.pow_mod(&e, p).ok()?;
    let (mut a, mut b) = (p.clone(), t);
    while Integer::from(&b * &b) > *p {
        let r = Integer::from(&a % &b);
        a = b;
        b = r;
    }
    let rest = Integer::from(p - &b * &b);
    if rest.is_perfect_square() {
        Some((b, rest.sqrt()))
    } else {
        None
    }
}

/// Euler's four-square identity.
fn euler(a: &[Integer; 4], b: &[Integer; 4]) -> [Integer; 4] {
    let m = |i: usize, j: usize| Integer::from(&a[i] * &b[j]);
    [
        m(0, 0) - m(1, 1) - m(2, 2) - m(3, 3),
        m(0, 1) + m(1, 0) + m(2, 3) - m(3, 2),
        m(0, 2) - m(1, 3) + m(2, 0) + m(3, 1),
        m(0, 3) + m(1, 2) - m(2, 1) + m(3, 0),
    ]
}

/// Rationals `r_1 >= ... >= r_4 >= 0` with `sum r_j^2 = q`, from
/// `q = ab / b^2`.
pub fn rational_four_squares(q: &Rational) -> Result<[Rational; 4], GadgetError> {
    if *q < 0 {
        return Err(GadgetError::NegativeSquareSum(q.to_string()));
    }
    let (a, b) = (q.numer(), q.denom());
    let (ks, d): ([Integer; 4], Integer) = if b.is_perfect_square() {
        (four_squares(a), b.clone().sqrt())
    } else {
        let ab = Integer::from(a * b);
        let ks = if ab <= EXHAUSTIVE_LIMIT {
            four_squares(&ab)
        } else {
            euler(&four_squares(a), &four_squares(b))
        };
        (ks, b.clone())
    };
    let mut rs = ks.map(|k| Rational::from((k.abs(), d.clone())));
    rs.sort_by(|x, y| y.cmp(x));
    Ok(rs)
}

/// A certificate that `q` lies in [1, 2]: `q - 1 = sum r^2`, `2 - q = sum s^2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JCert {
    pub q: Rational,
    pub r: [Rational; 4],
    pub s: [Rational; 4],
}

impl JCert {
    pub fn for_value(q: &Rational) -> Result<JCert, GadgetError> {
        if *q < 1 || *q > 2 {
            return Err(GadgetError::OutsideJ(q.to_string()));
        }
        Ok(JCert {
            q: q.clone(),
            r: rational_four_squares(&Rational::from(q - 1u32))?,
            s: rational_four_squares(&Rational::from(2u32 - q))?,
        })
    }
}

/// Heights below this many bits use `v / (v - 1)` for the point of J.
pub const SMALL_BITS: u32 = 100;

/// An element of J whose height is exactly `v`.
///
/// Small heights use `v/(v-1)`. Heights of the form `2a^2 + 1` use
/// `v/(a^2+1)`, whose squares are immediate. Other large heights use `v/u^2`
/// with `u` near `sqrt(v)`, so only `2u^2 - v` needs a real decomposition.
pub fn j_point(v: &Integer) -> Rational {
    assert!(*v >= 1, "heights are positive");
    if *v == 1 {
        return Rational::from(1);
    }
    if v.significant_bits() <= SMALL_BITS {
        return Rational::from((v.clone(), Integer::from(v - 1u32)));
    }
    if v.is_odd() {
        let half = Integer::from(v - 1u32) >> 1u32;
        if half.is_perfect_square() {
            return Rational::from((v.clone(), half + 1u32));
        }
    }
    let mut u = v.clone().sqrt();
    while Integer::from(&u * &u) == *v || u.clone().gcd(v) != 1 {
        u -= 1;
    }
    Rational::from((v.clone(), u.square()))
}

/// The smallest height `2a^2 + 1` that is at least `t`.
pub fn cheap_height_above(t: &Integer) -> Integer {
    let mut a = (Integer::from(t - 1u32) >> 1u32).sqrt();
    loop {
        let h = Integer::from(&a * &a) * 2u32 + 1u32;
        if h >= *t {
            return h;
        }
        a += 1;
    }
}

fn cache() -> &'static Mutex<HashMap<Integer, Arc<JCert>>> {
    static C: OnceLock<Mutex<HashMap<Integer, Arc<JCert>>>> = OnceLock::new();
    C.get_or_init(Default::default)
}

/// Certificate for `j_point(v)`, cached by `v`.
pub fn j_cert_for_height(v: &Integer) -> Arc<JCert> {
    if let Some(c) = cache().lock().unwrap().get(v) {
        return c.clone();
    }
    let cert = Arc::new(JCert::for_value(&j_point(v)).expect("j_point lies in J"));
    cache().lock().unwrap().insert(v.clone(), cert.clone());
    cert
}
