//! Definable height relations: J, A, A^M, E^M, L, plus E_{1,1} and S.
//!
//! Every template takes its interface terms and a name prefix; bound
//! variables are named `prefix.local` so instances can be nested without
//! clashes. Each template has a `fill_*` companion that writes witness values
//! for its bound variables into an [`Assignment`].

pub mod squares;

use rug::{Integer, Rational};

use crate::formula::{Assignment, Formula, Term};
use crate::heights::{height, log_le};

pub use squares::{
    cheap_height_above, four_squares, j_cert_for_height, j_point, rational_four_squares, two_squares_prime, JCert,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum GadgetError {
    #[error("{0} is negative, so not a sum of squares")]
    NegativeSquareSum(String),
    #[error("{0} is outside [1, 2]")]
    OutsideJ(String),
    #[error("precondition of {gadget} fails for ({x}, {y})")]
    Precondition { gadget: String, x: String, y: String },
    #[error("M must be at least 1")]
    BadM,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GuaranteeKind {
    /// `h(x) <= h(y) + c`
    UpperBound,
    /// `|h(x) - h(y)| <= c`
    AbsDiff,
    /// `h(x) + c <= h(y)`
    StrictGap,
}

/// The hypothesis under which witnesses exist (`complete`) and the
/// conclusion every accepted pair satisfies (`sound`), as constants `c` in
/// the relation named by `kind`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Guarantee {
    pub kind: GuaranteeKind,
    pub complete: Rational,
    pub sound: Rational,
}

impl Guarantee {
    pub fn holds_with(&self, c: &Rational, hx: &Integer, hy: &Integer) -> bool {
        match self.kind {
            GuaranteeKind::UpperBound => log_le(hx, hy, c),
            GuaranteeKind::AbsDiff => log_le(hx, hy, c) && log_le(hy, hx, c),
            GuaranteeKind::StrictGap => log_le(hx, hy, &Rational::from(-c)),
        }
    }

    pub fn completeness_hypothesis(&self, x: &Rational, y: &Rational) -> bool {
        self.holds_with(&self.complete, height(x).value(), height(y).value())
    }

    pub fn soundness_conclusion(&self, x: &Rational, y: &Rational) -> bool {
        self.holds_with(&self.sound, height(x).value(), height(y).value())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GadgetInstance {
    pub name: String,
    pub formula: Formula,
    pub interface: Vec<String>,
    pub guarantee: Option<Guarantee>,
}

impl GadgetInstance {
    /// Catalog form: a comment line with the name, then the interface
    /// variables and the formula.
    pub fn catalog_entry(&self) -> String {
        format!("; {}\n({}) {}\n", self.name, self.interface.join(" "), self.formula.render())
    }
}

pub fn name(prefix: &str, local: &str) -> String {
    if prefix.is_empty() {
        local.to_string()
    } else {
        format!("{prefix}.{local}")
    }
}

fn var(prefix: &str, local: &str) -> Term {
    Term::Var(name(prefix, local))
}

fn ratio(c: u32) -> Rational {
    Rational::from(c)
}

/// Assigns 0 to every bound variable of `f` that `w` leaves open, so a
/// witness that only fills the satisfied disjuncts becomes total.
pub fn zero_fill(f: &Formula, w: &mut Assignment) {
    for v in f.bound_vars() {
        w.entry(v).or_insert_with(Rational::new);
    }
}

// ---- J ----

pub fn j_formula(q: Term, p: &str) -> Formula {
    let rs: Vec<String> = (1..=4).map(|i| name(p, &format!("r{i}"))).collect();
    let ss: Vec<String> = (1..=4).map(|i| name(p, &format!("s{i}"))).collect();
    let squares = |vs: &[String]| Term::sum(vs.iter().map(|v| Term::mul(Term::var(v), Term::var(v))).collect());
    let lower = Formula::eq(q.clone(), Term::add(Term::One, squares(&rs)));
    let upper = Formula::eq(Term::add(q, squares(&ss)), Term::two());
    Formula::exists([rs, ss].concat(), Formula::and(lower, upper))
}

pub fn fill_j_cert(cert: &JCert, p: &str, w: &mut Assignment) {
    for i in 0..4 {
        w.insert(name(p, &format!("r{}", i + 1)), cert.r[i].clone());
        w.insert(name(p, &format!("s{}", i + 1)), cert.s[i].clone());
    }
}

pub fn gadget_j() -> GadgetInstance {
    GadgetInstance {
        name: "J".into(),
        formula: j_formula(Term::var("q"), "j"),
        interface: vec!["q".into()],
        guarantee: None,
    }
}

pub fn witness_j(q: &Rational) -> Result<Assignment, GadgetError> {
    let cert = JCert::for_value(q)?;
    let mut w = Assignment::new();
    w.insert("q".into(), q.clone());
    fill_j_cert(&cert, "j", &mut w);
    Ok(w)
}

// ---- A ----

pub fn a_formula(x: Term, y: Term, p: &str) -> Formula {
    let q = var(p, "q");
    let shifted = Term::add(q.clone(), Term::from_u64(5));
    Formula::exists(
        vec![name(p, "q")],
        Formula::and_all(vec![j_formula(q.clone(), &name(p, "j")), Formula::e11(y, q), Formula::h(vec![x], vec![shifted])]),
    )
}

fn refuse(gadget: &str, x: &Rational, y: &Rational) -> GadgetError {
    GadgetError::Precondition { gadget: gadget.into(), x: x.to_string(), y: y.to_string() }
}

/// Witness for `A(x, y)` given the height `hy` of `y`.
fn fill_a_height(hy: &Integer, p: &str, w: &mut Assignment) {
    let cert = j_cert_for_height(hy);
    w.insert(name(p, "q"), cert.q.clone());
    fill_j_cert(&cert, &name(p, "j"), w);
}

pub fn fill_a(x: &Rational, y: &Rational, p: &str, w: &mut Assignment, check: bool) -> Result<(), GadgetError> {
    let hy = height(y).into_value();
    if check && !log_le(height(x).value(), &hy, &ratio(1)) {
        return Err(refuse("A", x, y));
    }
    fill_a_height(&hy, p, w);
    Ok(())
}

pub fn gadget_a() -> GadgetInstance {
    GadgetInstance {
        name: "A".into(),
        formula: a_formula(Term::var("x"), Term::var("y"), ""),
        interface: vec!["x".into(), "y".into()],
        guarantee: Some(Guarantee { kind: GuaranteeKind::UpperBound, complete: ratio(1), sound: ratio(2) }),
    }
}

fn pair(x: &Rational, y: &Rational) -> Assignment {
    let mut w = Assignment::new();
    w.insert("x".into(), x.clone());
    w.insert("y".into(), y.clone());
    w
}

pub fn witness_a(x: &Rational, y: &Rational) -> Result<Assignment, GadgetError> {
    let mut w = pair(x, y);
    fill_a(x, y, "", &mut w, true)?;
    Ok(w)
}

// ---- A^M ----

pub fn am_formula(x: Term, y: Term, p: &str, m: u32) -> Formula {
    assert!(m >= 1, "M must be positive");
    if m == 1 {
        return a_formula(x, y, p);
    }
    let ts: Vec<String> = (1..2 * m).map(|j| name(p, &format!("t{j}"))).collect();
    let mut chain = Vec::with_capacity(2 * m as usize);
    let mut prev = x;
    for (j, t) in ts.iter().enumerate() {
        chain.push(a_formula(prev, Term::var(t), &name(p, &format!("a{}", j + 1))));
        prev = Term::var(t);
    }
    chain.push(a_formula(prev, y, &name(p, &format!("a{}", 2 * m))));
    Formula::exists(ts, Formula::and_all(chain))
}

/// Heights of the chain `t_1, ..., t_{2M-1}` for a target of height `v`:
/// `2^{2M-j} v` when small, otherwise the nearest height of the form
/// `2a^2 + 1` above it (consecutive ratios stay below 3).
pub fn chain_heights(v: &Integer, m: u32) -> Vec<Integer> {
    let small = v.significant_bits() + 2 * m <= squares::SMALL_BITS;
    (1..2 * m)
        .map(|j| {
            let t = Integer::from(v << (2 * m - j));
            if small {
                t
            } else {
                cheap_height_above(&t)
            }
        })
        .collect()
}

pub fn fill_am(
    x: &Rational,
    y: &Rational,
    p: &str,
    m: u32,
    w: &mut Assignment,
    check: bool,
) -> Result<(), GadgetError> {
    if m == 0 {
        return Err(GadgetError::BadM);
    }
    if m == 1 {
        return fill_a(x, y, p, w, check);
    }
    let hy = height(y).into_value();
    if check && !log_le(height(x).value(), &hy, &ratio(m)) {
        return Err(refuse(&format!("A^{m}"), x, y));
    }
    let ts = chain_heights(&hy, m);
    for (j, t) in ts.iter().enumerate() {
        w.insert(name(p, &format!("t{}", j + 1)), Rational::from(t));
        fill_a_height(t, &name(p, &format!("a{}", j + 1)), w);
    }
    fill_a_height(&hy, &name(p, &format!("a{}", 2 * m)), w);
    Ok(())
}

pub fn gadget_am(m: u32) -> GadgetInstance {
    GadgetInstance {
        name: format!("A^{m}"),
        formula: am_formula(Term::var("x"), Term::var("y"), "", m),
        interface: vec!["x".into(), "y".into()],
        guarantee: Some(Guarantee { kind: GuaranteeKind::UpperBound, complete: ratio(m), sound: ratio(4 * m) }),
    }
}

pub fn witness_am(m: u32, x: &Rational, y: &Rational) -> Result<Assignment, GadgetError> {
    let mut w = pair(x, y);
    fill_am(x, y, "", m, &mut w, true)?;
    Ok(w)
}

// ---- E^M ----

pub fn em_formula(x: Term, y: Term, p: &str, m: u32) -> Formula {
    Formula::and(am_formula(x.clone(), y.clone(), &name(p, "xy"), m), am_formula(y, x, &name(p, "yx"), m))
}

pub fn fill_em(
    x: &Rational,
    y: &Rational,
    p: &str,
    m: u32,
    w: &mut Assignment,
    check: bool,
) -> Result<(), GadgetError> {
    if check {
        let (hx, hy) = (height(x).into_value(), height(y).into_value());
        if !(log_le(&hx, &hy, &ratio(m)) && log_le(&hy, &hx, &ratio(m))) {
            return Err(refuse(&format!("E^{m}"), x, y));
        }
    }
    fill_am(x, y, &name(p, "xy"), m, w, false)?;
    fill_am(y, x, &name(p, "yx"), m, w, false)
}

pub fn gadget_em(m: u32) -> GadgetInstance {
    GadgetInstance {
        name: format!("E^{m}"),
        formula: em_formula(Term::var("x"), Term::var("y"), "", m),
        interface: vec!["x".into(), "y".into()],
        guarantee: Some(Guarantee { kind: GuaranteeKind::AbsDiff, complete: ratio(m), sound: ratio(4 * m) }),
    }
}

pub fn witness_em(m: u32, x: &Rational, y: &Rational) -> Result<Assignment, GadgetError> {
    let mut w = pair(x, y);
    fill_em(x, y, "", m, &mut w, true)?;
    Ok(w)
}

// ---- L ----

/// Offset in the strict-inequality gadget; `log(50000/2 + 1) > 10`.
pub const L_SHIFT: u64 = 50_000;

pub fn l_formula(x: Term, y: Term, p: &str) -> Formula {
    let q = var(p, "q");
    let shifted = Term::add(q.clone(), Term::from_u64(L_SHIFT));
    Formula::exists(
        vec![name(p, "q")],
        Formula::and_all(vec![j_formula(q.clone(), &name(p, "j")), Formula::e11(x, q), Formula::h(vec![shifted], vec![y])]),
    )
}

/// The reconstructed witness: `q = j_point(H(x))`, so `E_{1,1}(x, q)` holds
/// and `H(q + 50000) <= 50001 H(x) < e^11 H(x) <= H(y)`.
pub fn fill_l(x: &Rational, y: &Rational, p: &str, w: &mut Assignment, check: bool) -> Result<(), GadgetError> {
    let hx = height(x).into_value();
    if check && !log_le(&hx, height(y).value(), &Rational::from(-11)) {
        return Err(refuse("L", x, y));
    }
    let cert = j_cert_for_height(&hx);
    w.insert(name(p, "q"), cert.q.clone());
    fill_j_cert(&cert, &name(p, "j"), w);
    Ok(())
}

pub fn gadget_l() -> GadgetInstance {
    GadgetInstance {
        name: "L".into(),
        formula: l_formula(Term::var("x"), Term::var("y"), ""),
        interface: vec!["x".into(), "y".into()],
        guarantee: Some(Guarantee { kind: GuaranteeKind::StrictGap, complete: ratio(11), sound: ratio(10) }),
    }
}

pub fn witness_l(x: &Rational, y: &Rational) -> Result<Assignment, GadgetError> {
    let mut w = pair(x, y);
    fill_l(x, y, "", &mut w, true)?;
    Ok(w)
}

// ---- E_{1,1} and S ----

pub fn gadget_e11() -> GadgetInstance {
    GadgetInstance {
        name: "E_{1,1}".into(),
        formula: Formula::e11(Term::var("x"), Term::var("y")),
        interface: vec!["x".into(), "y".into()],
        guarantee: Some(Guarantee { kind: GuaranteeKind::AbsDiff, complete: Rational::new(), sound: Rational::new() }),
    }
}

pub fn gadget_s() -> GadgetInstance {
    GadgetInstance {
        name: "S".into(),
        formula: Formula::s(Term::var("x"), Term::var("y"), Term::var("z")),
        interface: vec!["x".into(), "y".into(), "z".into()],
        guarantee: None,
    }
}

/// All fixed gadgets of this module, for catalogs and round-trip tests.
pub fn catalog() -> Vec<GadgetInstance> {
    let mut out = vec![gadget_j(), gadget_a(), gadget_l(), gadget_e11(), gadget_s()];
    for m in 1..=4 {
        out.push(gadget_am(m));
        out.push(gadget_em(m));
    }
    out
}
