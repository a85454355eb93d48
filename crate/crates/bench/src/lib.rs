//! Inputs shared by the benchmarks.

use heightinterp::formula::Assignment;
use heightinterp::gadgets::{gadget_em, witness_em, GadgetInstance};
use heightinterp::{Integer, Rational};

/// `(p/q, r/s)` pairs with 60-digit parts, fixed so runs compare.
pub fn rational_pairs(n: usize) -> Vec<(Rational, Rational)> {
    let base = Integer::from(Integer::u_pow_u(10, 60));
    (0..n as u32)
        .map(|i| {
            let a = Rational::from((Integer::from(&base + (7 * i + 1)), Integer::from(&base - (3 * i + 1))));
            let b = Rational::from((Integer::from(&base * 3u32) + i, Integer::from(&base + (11 * i + 5))));
            (a, b)
        })
        .collect()
}

/// An `E^4` instance and an accepted witness for it.
pub fn em_instance() -> (GadgetInstance, Assignment) {
    let x = Rational::from((123_456_789u64, 1000u32));
    let y = Rational::from((987_654_321u64, 7u32));
    (gadget_em(4), witness_em(4, &x, &y).expect("heights are close"))
}
