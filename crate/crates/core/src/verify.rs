//! Invariant suites over heights, the curve, the gadgets, the
//! interpretation and the reduction. Each check reports how many cases it
//! ran and how many failed; the CLI and the acceptance tests share them.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::{Integer, Rational};
use serde_json::{json, Value};

use crate::curve::{self, canonical_height, generator, height_gap, on_curve, scalar_mul};
use crate::formula::{check_witness, parse, Assignment};
use crate::gadgets::{self, fill_a, fill_am, fill_em, fill_l, zero_fill, GadgetInstance};
use crate::heights::{height, log_le, mult_height, product_formula_check};
use crate::interp::{self, encode, encoding_error, slack_analysis, Profile};
use crate::reduce::{eliminate_mul, nat_eval, nat_solutions, parse_nat, NatAssignment};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: String,
}

impl Check {
    fn new(name: &str) -> Check {
        Check { name: name.into(), cases: 0, failures: 0, detail: String::new() }
    }

    fn record(&mut self, ok: bool, case: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            if self.failures == 0 {
                self.detail = case();
            }
            self.failures += 1;
        }
    }

    pub fn ok(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(Check::ok)
    }
}

pub fn report_to_json(r: &SuiteReport) -> Value {
    json!({
        "suite": r.suite,
        "ok": r.ok(),
        "seconds": r.seconds,
        "checks": r.checks.iter().map(|c| json!({
            "name": c.name,
            "cases": c.cases,
            "failures": c.failures,
            "ok": c.ok(),
            "detail": c.detail,
        })).collect::<Vec<_>>(),
    })
}

fn timed(suite: &str, f: impl FnOnce() -> Vec<Check>) -> SuiteReport {
    let t = Instant::now();
    let checks = f();
    SuiteReport { suite: suite.into(), checks, seconds: t.elapsed().as_secs_f64() }
}

/// A rational with numerator and denominator drawn up to `max`.
pub fn random_rational(rng: &mut impl Rng, max: u64) -> Rational {
    let num = rng.gen_range(0..=max);
    let den = rng.gen_range(1..=max);
    let q = Rational::from((Integer::from(num), Integer::from(den)));
    if rng.gen() {
        -q
    } else {
        q
    }
}

/// A rational of height exactly `t`.
pub fn rational_with_height(rng: &mut impl Rng, t: u64) -> Rational {
    let t = t.max(1);
    let other = loop {
        let b = rng.gen_range(1..=t);
        if Integer::from(b).gcd(&Integer::from(t)) == 1 {
            break b;
        }
    };
    let q = if rng.gen() { Rational::from((t, other)) } else { Rational::from((other, t)) };
    if rng.gen() {
        -q
    } else {
        q
    }
}

// ---- heights ----

pub fn suite_heights(samples: usize, seed: u64) -> SuiteReport {
    timed("heights", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = Check::new("height-sum identity H(a)H(b) = H(a, b, ab)");
        let mut tuple = Check::new("max H(x_i) <= H(x) <= prod H(x_i)");
        let mut prod = Check::new("product formula");
        let mut quotient = Check::new("H(n/(n-1)) = n");
        let mut le = Check::new("log_le agrees with integer order");
        let big = 1_000_000_000_000_000_000u64;
        for _ in 0..samples {
            let (a, b) = (random_rational(&mut rng, big), random_rational(&mut rng, big));
            let lhs = Integer::from(height(&a).value() * height(&b).value());
            let rhs = mult_height(&[a.clone(), b.clone(), Rational::from(&a * &b)]).expect("finite");
            sum.record(&lhs == rhs.value(), || format!("{a}, {b}"));

            let xs: Vec<Rational> = (0..rng.gen_range(1..5)).map(|_| random_rational(&mut rng, 1_000_000)).collect();
            let hs: Vec<Integer> = xs.iter().map(|x| height(x).into_value()).collect();
            let h = mult_height(&xs).expect("finite").into_value();
            let ok = hs.iter().all(|hi| *hi <= h) && h <= hs.iter().product::<Integer>();
            tuple.record(ok, || format!("{xs:?}"));

            let (ha, hb) = (height(&a).into_value(), height(&b).into_value());
            le.record(log_le(&ha, &hb, &Rational::new()) == (ha <= hb), || format!("{ha}, {hb}"));
        }
        for _ in 0..samples.min(200) {
            let q = random_rational(&mut rng, 1_000_000);
            prod.record(product_formula_check(&q).unwrap_or(false), || q.to_string());
        }
        for n in 2..(samples as u64).max(3) + 2 {
            let q = Rational::from((n, n - 1));
            quotient.record(*height(&q).value() == n, || n.to_string());
        }
        vec![sum, tuple, prod, quotient, le]
    })
}

// ---- curve ----

pub fn suite_curve(k: u32) -> SuiteReport {
    timed("curve", || {
        let p = generator();
        let mut group = Check::new("[i]P + [j]P = [i+j]P on the curve");
        for i in -6i64..=6 {
            for j in -6i64..=6 {
                let lhs = curve::add(&scalar_mul(&Integer::from(i), &p).unwrap(), &scalar_mul(&Integer::from(j), &p).unwrap()).unwrap();
                let rhs = scalar_mul(&Integer::from(i + j), &p).unwrap();
                group.record(lhs == rhs && on_curve(&lhs), || format!("{i}, {j}"));
            }
        }
        let consts = curve::constants();
        let hhat = canonical_height(&p, k).expect("on curve");
        let mut reference = Check::new(&format!("canonical height interval at k = {k} contains 0.7545769"));
        reference.record(hhat.contains(&consts.hhat_p1_reference), || hhat.to_string());
        let mut gap = Check::new("k^2 hhat(P1) - h([k]P1) inside (-3.192, 3.384)");
        for j in 1..=12i64 {
            let g = height_gap(&p, j, &hhat).expect("on curve");
            gap.record(g.lo > consts.gap_lower && g.hi < consts.gap_upper, || format!("k = {j}: {g}"));
        }
        vec![group, reference, gap]
    })
}

// ---- gadgets ----

#[derive(Clone, Copy, Debug)]
enum Kind {
    A,
    Am(u32),
    Em(u32),
    L,
}

impl Kind {
    fn instance(self) -> GadgetInstance {
        match self {
            Kind::A => gadgets::gadget_a(),
            Kind::Am(m) => gadgets::gadget_am(m),
            Kind::Em(m) => gadgets::gadget_em(m),
            Kind::L => gadgets::gadget_l(),
        }
    }

    fn fill(self, x: &Rational, y: &Rational, w: &mut Assignment, check: bool) -> bool {
        match self {
            Kind::A => fill_a(x, y, "", w, check),
            Kind::Am(m) => fill_am(x, y, "", m, w, check),
            Kind::Em(m) => fill_em(x, y, "", m, w, check),
            Kind::L => fill_l(x, y, "", w, check),
        }
        .is_ok()
    }
}

fn e_pow(c: i32) -> f64 {
    (c as f64).exp()
}

/// A pair meeting the completeness hypothesis of `kind`.
fn complete_pair(kind: Kind, g: &GadgetInstance, rng: &mut ChaCha8Rng) -> (Rational, Rational) {
    let guarantee = g.guarantee.as_ref().expect("guaranteed gadget");
    loop {
        let (lo, hi, hy) = match kind {
            Kind::A | Kind::Am(_) => {
                let c = guarantee.complete.to_f64() as i32;
                let hy = rng.gen_range(1u64..1_000_000_000);
                (1.0, hy as f64 * e_pow(c), hy)
            }
            Kind::Em(m) => {
                let hy = rng.gen_range(1u64..1_000_000_000);
                (hy as f64 * e_pow(-(m as i32)), hy as f64 * e_pow(m as i32), hy)
            }
            Kind::L => {
                let hy = rng.gen_range(100_000u64..1_000_000_000_000);
                (1.0, hy as f64 * e_pow(-11), hy)
            }
        };
        let (lo, hi) = (lo.max(1.0).ceil() as u64, hi.floor() as u64);
        if lo > hi {
            continue;
        }
        let hx = rng.gen_range(lo..=hi);
        let x = rational_with_height(rng, hx);
        let y = rational_with_height(rng, hy);
        if guarantee.completeness_hypothesis(&x, &y) {
            return (x, y);
        }
    }
}

/// An arbitrary pair whose heights straddle the gadget's thresholds.
fn probe_pair(rng: &mut ChaCha8Rng) -> (Rational, Rational) {
    let hy = rng.gen_range(1u64..1_000_000_000_000);
    let factor = rng.gen_range(-20.0f64..20.0).exp();
    let hx = ((hy as f64) * factor).clamp(1.0, 1e17) as u64;
    let x = rational_with_height(rng, hx);
    let y = rational_with_height(rng, hy);
    (x, y)
}

fn pair(x: &Rational, y: &Rational) -> Assignment {
    Assignment::from([("x".to_string(), x.clone()), ("y".to_string(), y.clone())])
}

/// For each of A, A^M (M <= 4), E^M (M <= 4) and L: built witnesses for
/// pairs meeting the completeness hypothesis are accepted, and every pair
/// accepted (including forced witnesses for arbitrary pairs) meets the
/// soundness conclusion.
pub fn suite_gadgets(samples: usize, seed: u64) -> SuiteReport {
    timed("gadgets", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kinds = vec![Kind::A];
        kinds.extend((1..=4).map(Kind::Am));
        kinds.extend((1..=4).map(Kind::Em));
        kinds.push(Kind::L);
        let mut out = Vec::new();
        for kind in kinds {
            let g = kind.instance();
            let guarantee = g.guarantee.clone().expect("guaranteed gadget");
            let mut complete = Check::new(&format!("{} completeness", g.name));
            let mut sound = Check::new(&format!("{} soundness", g.name));
            for _ in 0..samples {
                let (x, y) = complete_pair(kind, &g, &mut rng);
                let mut w = pair(&x, &y);
                let built = kind.fill(&x, &y, &mut w, true);
                zero_fill(&g.formula, &mut w);
                let accepted = built && check_witness(&g.formula, &w).unwrap_or(false);
                complete.record(accepted, || format!("{x}, {y}"));
                if accepted {
                    sound.record(guarantee.soundness_conclusion(&x, &y), || format!("{x}, {y}"));
                }

                let (x, y) = probe_pair(&mut rng);
                let mut w = pair(&x, &y);
                kind.fill(&x, &y, &mut w, false);
                zero_fill(&g.formula, &mut w);
                if check_witness(&g.formula, &w).unwrap_or(false) {
                    sound.record(guarantee.soundness_conclusion(&x, &y), || format!("forced {x}, {y}"));
                }
            }
            out.push(complete);
            out.push(sound);
        }
        out
    })
}

// ---- interpretation ----

/// Round trip `decode(encode(m).q) = m` with `|h - mD| <= 4 c_E` for
/// `m <= profile.m_max`, the slack constraints, and the relation gadgets on
/// values up to `relations`.
pub fn suite_interp(profile: &Profile, relations: u64) -> SuiteReport {
    timed("interp", || {
        let mut slack = Check::new("slack constraints at c_E");
        let report = slack_analysis(&profile.c_e);
        for c in &report.completeness {
            slack.record(c.ok(), || c.name.clone());
        }
        slack.record(profile.d.lo > report.d_min, || format!("D = {} <= D_min = {}", profile.d, report.d_min));

        let mut trip = Check::new(&format!("decode(encode(m)) = m, |h - mD| <= 4 c_E, m <= {}", profile.m_max));
        let bound = Rational::from(&profile.c_e * 4u32);
        let mut certs = Vec::new();
        for m in 0..=profile.m_max {
            let ok = match encode(m, profile) {
                Ok(c) => {
                    let err = encoding_error(&c.q, &Integer::from(m), profile);
                    let ok = interp::decode(&c.q, profile) == Ok(m) && err.lo >= Rational::from(-&bound) && err.hi <= bound;
                    if m <= relations {
                        certs.push(c);
                    }
                    ok
                }
                Err(_) => false,
            };
            trip.record(ok, || m.to_string());
        }

        let mut rel = Check::new(&format!("relation gadgets on values <= {relations}"));
        let accepts = |g: &GadgetInstance, w: Result<Assignment, interp::InterpError>| {
            w.map(|w| check_witness(&g.formula, &w).unwrap_or(false)).unwrap_or(false)
        };
        let r = certs.len() as u64;
        if r > 0 {
            rel.record(accepts(&interp::gadget_zero(profile), interp::witness_zero(&certs[0], profile)), || "zero".into());
        }
        if r > 1 {
            rel.record(accepts(&interp::gadget_one(profile), interp::witness_one(&certs[1], profile)), || "one".into());
            rel.record(interp::witness_one(&certs[0], profile).is_err(), || "one refuses 0".into());
        }
        for a in 0..r {
            let c = &certs[a as usize];
            rel.record(accepts(&interp::gadget_eq(profile), interp::witness_eq(c, c, profile)), || format!("eq {a}"));
            for b in 0..r - a {
                let (x, y, z) = (c, &certs[b as usize], &certs[(a + b) as usize]);
                rel.record(accepts(&interp::gadget_add(profile), interp::witness_add(x, y, z, profile)), || format!("add {a} {b}"));
            }
        }
        for k in 0..r {
            if (k + 1) * (k + 1) < r {
                let (x, y) = (&certs[(k * k) as usize], &certs[((k + 1) * (k + 1)) as usize]);
                rel.record(accepts(&interp::gadget_b(profile), interp::witness_b(x, y, profile)), || format!("B {k}"));
            }
        }
        if r > 2 {
            rel.record(interp::witness_add(&certs[1], &certs[1], &certs[1], profile).is_err(), || "add refuses 1+1=1".into());
            // an honest add witness with z swapped for a wrong value
            let g = interp::gadget_add(profile);
            if let Ok(mut w) = interp::witness_add(&certs[1], &certs[0], &certs[1], profile) {
                interp::fill_member("z", &certs[2], profile, &mut w);
                rel.record(!check_witness(&g.formula, &w).unwrap_or(true), || "perturbed add accepted".into());
            }
        }
        let mut out = vec![slack, trip];
        if r > 0 {
            out.push(rel);
        }
        out
    })
}

// ---- reduction ----

/// True sentences used by the end-to-end checks, each with the values
/// its witnesses use kept small.
pub const CORPUS: &[&str] = &[
    "(= (+ 1 1) (+ 1 1))",
    "(exists (x) (= (+ x x) (+ 1 1 1 1)))",
    "(= (+ (+ 1 1) (+ 1 1 1)) (+ 1 1 1 1 1))",
    "(exists (x) (= x 0))",
    "(exists (x y) (and (= (+ x y) 3) (= y 2)))",
    "(B 4 9)",
    "(exists (x) (B x 4))",
    "(exists (x) (B 0 x))",
    "(exists (x) (= (* x x) 1))",
    "(exists (x) (= (* x x) 4))",
    "(exists (x) (= (* x 2) 4))",
    "(exists (x) (or (= x 2) (= x 3)))",
];

/// `mult` agrees with integer multiplication for `0 <= x, y <= n`.
pub fn check_mult_oracle(n: u64) -> Check {
    let mut c = Check::new(&format!("x*y = z via B agrees with multiplication, x, y <= {n}"));
    let f = eliminate_mul(&parse_nat("(= (* x y) z)").expect("valid"));
    for x in 0..=n {
        for y in 0..=n {
            let pins = NatAssignment::from([("x".to_string(), x), ("y".to_string(), y)]);
            let sols = nat_solutions(&f, &pins, n * n).unwrap_or_default();
            let zs: Vec<u128> = sols.iter().map(|s| s["z"]).collect();
            c.record(zs == [(x * y) as u128], || format!("{x} * {y} -> {zs:?}"));
        }
    }
    c
}

pub fn suite_reduce(bound: u64) -> SuiteReport {
    timed("reduce", || {
        let mut equiv = Check::new(&format!("eliminate_mul preserves truth, bounds <= {bound}"));
        let mut trip = Check::new("parse(render(f)) = f on the corpus");
        let mut truth = Check::new("corpus sentences are true");
        for s in CORPUS {
            let f = parse_nat(s).expect("corpus parses");
            trip.record(parse_nat(&f.render()).as_ref() == Ok(&f), || s.to_string());
            let g = eliminate_mul(&f);
            trip.record(parse_nat(&g.render()).as_ref() == Ok(&g), || g.render());
            truth.record(nat_eval(&f, 30) == Ok(true), || s.to_string());
            for b in 0..=bound {
                equiv.record(nat_eval(&f, b) == nat_eval(&g, b), || format!("{s} at {b}"));
            }
        }
        for s in ["(= 1 0)", "(exists (x) (= (* x x) (+ 1 1)))", "(exists (x) (B x 5))"] {
            let f = parse_nat(s).expect("valid");
            truth.record(nat_eval(&f, 30) == Ok(false), || s.to_string());
            for b in 0..=bound {
                equiv.record(nat_eval(&f, b) == nat_eval(&eliminate_mul(&f), b), || format!("{s} at {b}"));
            }
        }
        vec![check_mult_oracle(30), equiv, trip, truth]
    })
}

/// Parser round trip on every gadget of both catalogs.
pub fn check_catalog_round_trip(profile: &Profile) -> Check {
    let mut c = Check::new("parse(render(g)) = g on the gadget catalogs");
    for g in gadgets::catalog().into_iter().chain(interp::catalog(profile)) {
        c.record(parse(&g.formula.render()).as_ref() == Ok(&g.formula), || g.name.clone());
    }
    c
}

pub const SUITES: &[&str] = &["heights", "curve", "gadgets", "interp", "reduce"];

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub samples: usize,
    pub seed: u64,
    pub hhat_k: u32,
    /// Largest value the interp suite feeds to the relation gadgets.
    pub relations: u64,
    pub bound: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { samples: 1000, seed: 1, hhat_k: 10, relations: 2, bound: 12 }
    }
}

/// `None` for an unknown suite, or for interp without a profile.
pub fn run_suite(name: &str, profile: Option<&Profile>, opts: &SuiteOptions) -> Option<SuiteReport> {
    Some(match name {
        "heights" => suite_heights(opts.samples, opts.seed),
        "curve" => suite_curve(opts.hhat_k),
        "gadgets" => suite_gadgets(opts.samples, opts.seed),
        "interp" => {
            let profile = profile?;
            let mut r = suite_interp(profile, opts.relations);
            r.checks.push(check_catalog_round_trip(profile));
            r
        }
        "reduce" => suite_reduce(opts.bound),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for r in [suite_heights(50, 3), suite_gadgets(5, 3), suite_reduce(4)] {
            for c in &r.checks {
                assert!(c.ok(), "{}: {} ({} / {})", c.name, c.detail, c.failures, c.cases);
            }
        }
    }

    #[test]
    fn exact_height_rationals() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [1u64, 2, 12, 97, 1000] {
            let q = rational_with_height(&mut rng, t);
            assert_eq!(*height(&q).value(), t);
        }
    }
}
