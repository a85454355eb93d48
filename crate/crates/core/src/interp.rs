//! The interpretation of (N; 0, 1, +, B) in Q: profiles, the sets X and X_n,
//! the encoding theta on X_4 and the relation gadgets.

use rug::{Integer, Rational};
use serde_json::{json, Value};

use crate::curve::{self, canonical_height, constants, gamma_point, generator, scalar_mul_unchecked, Point};
use crate::formula::{Assignment, Formula, Term};
use crate::gadgets::{self, em_formula, fill_em, fill_l, four_squares, l_formula, name, GadgetError, GadgetInstance};
use crate::heights::{height, log_height_of, parse_rational, CertifiedReal};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum InterpError {
    #[error("profile rejected: D lies in [{lo}, {hi}], not above D_min = {d_min}")]
    Rejected { lo: String, hi: String, d_min: String },
    #[error("profile rejected: completeness needs {0}")]
    Incomplete(String),
    #[error("could not certify D tightly enough with up to {0} doublings")]
    ProfilePrecision(u32),
    #[error("bad profile parameters: {0}")]
    BadParameters(String),
    #[error("{m} exceeds m_max = {m_max}")]
    Range { m: String, m_max: u64 },
    #[error("encoder bound |h(q) - mD| <= 4 c_E not certified for m = {0}")]
    EncoderBound(String),
    #[error("height interval too wide to decode {0}")]
    Precision(String),
    #[error("{0} is not within the decoding window of any m")]
    NotInX4(String),
    #[error("{relation} does not hold for ({args})")]
    Relation { relation: String, args: String },
    #[error("malformed certificate: {0}")]
    Certificate(String),
    #[error(transparent)]
    Gadget(#[from] GadgetError),
}

/// Thresholds of the E^M gadgets used by the relation gadgets.
pub const M_ZERO: u32 = 16;
pub const M_ONE: u32 = 32;
pub const M_EQ: u32 = 32;
pub const M_ADD: u32 = 48;
pub const M_B: u32 = 20;

/// Doublings tried when certifying D.
pub const HHAT_K_MIN: u32 = 6;
pub const HHAT_K_MAX: u32 = 14;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Profile {
    pub n: u64,
    pub c_e: Rational,
    /// `N^2 hhat(P_1)`
    pub d: CertifiedReal,
    pub m_max: u64,
    pub b_dec: Rational,
    /// Decoding accepts `m` when `|h(q) - mD|` is certified to be at most this.
    pub window: Rational,
    pub hhat_k: u32,
    /// `encode(1).q`, the height of `pi(Q_1)`.
    pub q1: Integer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlackConstraint {
    pub name: String,
    pub source: String,
    /// Bound on the intermediate height difference, when the step has one.
    pub intermediate: Option<Rational>,
    /// `D` must strictly exceed this.
    pub requires: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompletenessCheck {
    pub name: String,
    /// Largest height difference the witness builder may face.
    pub needed: Rational,
    /// What the gadget tolerates.
    pub allowed: Rational,
}

impl CompletenessCheck {
    pub fn ok(&self) -> bool {
        self.needed <= self.allowed
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlackReport {
    pub c_e: Rational,
    pub constraints: Vec<SlackConstraint>,
    pub completeness: Vec<CompletenessCheck>,
    pub b_dec: Rational,
    pub d_min: Rational,
}

fn r(n: u32) -> Rational {
    Rational::from(n)
}

/// Walks the soundness argument of each relation gadget and records how
/// large `D` must be for it to go through. `eps = 4 c_E` bounds
/// `|h(q) - theta(q) D|` on X_4.
pub fn slack_analysis(c_e: &Rational) -> SlackReport {
    let c = c_e.clone();
    let eps = Rational::from(&c * 4u32);
    let sound = |m: u32| r(4 * m);
    let mut cs = Vec::new();
    fn add_to(cs: &mut Vec<SlackConstraint>, name: &str, source: &str, intermediate: Option<Rational>, requires: Rational) {
        cs.push(SlackConstraint { name: name.into(), source: source.into(), intermediate, requires });
    }
    let mut push = |name: &str, source: &str, intermediate: Option<Rational>, requires: Rational| {
        add_to(&mut cs, name, source, intermediate, requires)
    };
    // h(x) <= 64 and theta(x) D <= h(x) + eps
    push("zero", "E^16(0, x) on X_4", Some(sound(M_ZERO)), sound(M_ZERO) + &eps);
    // |h(x) - D| <= 128 + eps, then |theta(x) - 1| D <= 128 + 2 eps
    let one_mid = sound(M_ONE) + &eps;
    push("one", "E^32(q_1, x) on X_4", Some(one_mid.clone()), one_mid + &eps);
    let eq = sound(M_EQ) + Rational::from(&eps * 2u32);
    push("eq", "E^32(x, y) on X_4", Some(eq.clone()), eq);
    let add = sound(M_ADD) + Rational::from(&eps * 3u32);
    push("add", "E^48(w, z) with S(x, y, w)", Some(add.clone()), add);
    // |h(x) - k^2 D| <= 80 + c, then |theta(x) - k^2| D <= 80 + c + eps
    let b_mid = sound(M_B) + &c;
    push("B", "E^20(x, gamma) with gamma = pi(Q_k)", Some(b_mid.clone()), b_mid + &eps);
    // h(Q_{k+1}) - h(Q_k) must exceed 11 for the k = 0 and k = -1 cases
    push("L-gap", "L(gamma, delta) on consecutive multiples", None, Rational::from(&c * 2u32) + 11u32);
    push("uniqueness", "two values of theta at one height", None, Rational::from(&eps * 2u32) + 1u32);
    let b_dec = cs.iter().filter_map(|k| k.intermediate.clone()).max().expect("nonempty");
    add_to(&mut cs, "decode window", "decoding window B_dec on both sides", None, Rational::from(&b_dec * 2u32));
    let d_min = cs.iter().map(|k| k.requires.clone()).max().expect("nonempty");

    let check = |name: &str, needed: Rational, m: u32| CompletenessCheck { name: name.into(), needed, allowed: r(m) };
    let completeness = vec![
        check("zero: h(x) <= eps", eps.clone(), M_ZERO),
        check("one: |h(x) - h(q_1)| <= 2 eps", Rational::from(&eps * 2u32), M_ONE),
        check("eq: |h(x) - h(y)| <= 2 eps", Rational::from(&eps * 2u32), M_EQ),
        check("add: |h(w) - h(z)| <= 3 eps", Rational::from(&eps * 3u32), M_ADD),
        check("B: |h(x) - h(gamma)| <= eps + c_E", Rational::from(&eps + &c), M_B),
    ];
    SlackReport { c_e: c, constraints: cs, completeness, b_dec, d_min }
}

pub fn build_profile(n: u64, m_max: u64) -> Result<Profile, InterpError> {
    build_profile_with(n, m_max, &constants().c_e)
}

/// Certifies `D = N^2 hhat(P_1)` with the fewest doublings that make the
/// decoding margin and the encoder check hold for all `m <= m_max`.
pub fn build_profile_with(n: u64, m_max: u64, c_e: &Rational) -> Result<Profile, InterpError> {
    if n == 0 || m_max == 0 {
        return Err(InterpError::BadParameters("N and m_max must be at least 1".into()));
    }
    if *c_e <= 0 {
        return Err(InterpError::BadParameters("c_E must be positive".into()));
    }
    let report = slack_analysis(c_e);
    if let Some(bad) = report.completeness.iter().find(|c| !c.ok()) {
        return Err(InterpError::Incomplete(format!("{} (needs {}, allows {})", bad.name, bad.needed, bad.allowed)));
    }
    let n2 = Rational::from(Integer::from(n) * n);
    let two_b = Rational::from(&report.b_dec * 2u32);
    for k in HHAT_K_MIN..=HHAT_K_MAX {
        let d = canonical_height(&generator(), k).expect("P_1 lies on the curve").scale(&n2);
        if d.hi <= report.d_min {
            return Err(InterpError::Rejected {
                lo: d.lo.to_string(),
                hi: d.hi.to_string(),
                d_min: report.d_min.to_string(),
            });
        }
        if d.lo <= report.d_min {
            continue;
        }
        let spread = d.width() * Rational::from(m_max);
        let margin = Rational::from(&d.lo - &two_b) / 4u32;
        if spread < margin && spread <= Rational::from(c_e / 4u32) {
            let q1 = height(&curve::pi(&gamma_point(1, n)).expect("Q_1 is affine")).into_value();
            return Ok(Profile {
                n,
                c_e: c_e.clone(),
                d,
                m_max,
                b_dec: report.b_dec.clone(),
                window: report.b_dec,
                hhat_k: k,
                q1,
            });
        }
    }
    Err(InterpError::ProfilePrecision(HHAT_K_MAX))
}

pub fn profile_to_json(p: &Profile) -> Value {
    json!({
        "N": p.n,
        "c_E": p.c_e.to_string(),
        "D": [p.d.lo.to_string(), p.d.hi.to_string()],
        "D_approx": p.d.to_f64(),
        "m_max": p.m_max,
        "B_dec": p.b_dec.to_string(),
        "window": p.window.to_string(),
        "hhat_k": p.hhat_k,
    })
}

pub fn slack_to_json(s: &SlackReport) -> Value {
    json!({
        "c_E": s.c_e.to_string(),
        "constraints": s.constraints.iter().map(|c| json!({
            "name": c.name,
            "source": c.source,
            "intermediate": c.intermediate.as_ref().map(|x| x.to_string()),
            "requires": c.requires.to_string(),
        })).collect::<Vec<_>>(),
        "completeness": s.completeness.iter().map(|c| json!({
            "name": c.name,
            "needed": c.needed.to_string(),
            "allowed": c.allowed.to_string(),
            "ok": c.ok(),
        })).collect::<Vec<_>>(),
        "B_dec": s.b_dec.to_string(),
        "D_min": s.d_min.to_string(),
    })
}

// ---- X and X_n ----

fn coords(p: &Point) -> (Rational, Rational) {
    match p {
        Point::Affine(x, y) => (x.clone(), y.clone()),
        Point::Infinity => panic!("chain points are affine"),
    }
}

fn on_curve_formula(u: &Term, v: &Term) -> Formula {
    let cube = Term::mul(Term::mul(u.clone(), u.clone()), u.clone());
    Formula::eq(Term::mul(v.clone(), v.clone()), Term::add(cube, Term::two()))
}

/// `(x, y) = [2](cx, cy)` with slope `l`.
fn doubling_eqs(cx: &Term, cy: &Term, l: &Term, x: &Term, y: &Term) -> Vec<Formula> {
    vec![
        Formula::eq(Term::mul(Term::mul(Term::two(), cy.clone()), l.clone()), Term::mul(Term::mul(Term::from_u64(3), cx.clone()), cx.clone())),
        Formula::eq(Term::add(x.clone(), Term::mul(Term::two(), cx.clone())), Term::mul(l.clone(), l.clone())),
        Formula::eq(Term::add(Term::add(y.clone(), cy.clone()), Term::mul(l.clone(), x.clone())), Term::mul(l.clone(), cx.clone())),
    ]
}

/// `(x, y) = (cx, cy) + (u, v)` for distinct x-coordinates, with slope `l`
/// and `t = 1/(u - cx)`.
#[allow(clippy::too_many_arguments)]
fn addition_eqs(cx: &Term, cy: &Term, u: &Term, v: &Term, l: &Term, t: &Term, x: &Term, y: &Term) -> Vec<Formula> {
    vec![
        Formula::eq(Term::add(Term::mul(u.clone(), l.clone()), cy.clone()), Term::add(Term::mul(cx.clone(), l.clone()), v.clone())),
        Formula::eq(Term::mul(t.clone(), u.clone()), Term::add(Term::mul(t.clone(), cx.clone()), Term::One)),
        Formula::eq(Term::add(Term::add(x.clone(), cx.clone()), u.clone()), Term::mul(l.clone(), l.clone())),
        Formula::eq(Term::add(Term::add(y.clone(), cy.clone()), Term::mul(l.clone(), x.clone())), Term::mul(l.clone(), cx.clone())),
    ]
}

/// Bits of `n` below the leading one, most significant first.
fn chain_bits(n: u64) -> impl Iterator<Item = bool> {
    let top = 63 - n.leading_zeros();
    (0..top).rev().map(move |i| (n >> i) & 1 == 1)
}

/// Conjuncts saying `out = x([n](u, v))`, unrolled as double-and-add, and
/// the variables they introduce.
fn mul_chain(n: u64, u: &Term, v: &Term, out: Term, p: &str) -> (Vec<String>, Vec<Formula>) {
    let (mut vars, mut eqs) = (Vec::new(), Vec::new());
    let (mut cx, mut cy) = (u.clone(), v.clone());
    for (i, bit) in chain_bits(n).enumerate() {
        let step = i + 1;
        let [l, x, y] = ["l", "x", "y"].map(|s| name(p, &format!("d{step}.{s}")));
        eqs.extend(doubling_eqs(&cx, &cy, &Term::var(&l), &Term::var(&x), &Term::var(&y)));
        vars.extend([l, x.clone(), y.clone()]);
        (cx, cy) = (Term::var(x), Term::var(y));
        if bit {
            let [l, t, x, y] = ["l", "t", "x", "y"].map(|s| name(p, &format!("a{step}.{s}")));
            eqs.extend(addition_eqs(&cx, &cy, u, v, &Term::var(&l), &Term::var(&t), &Term::var(&x), &Term::var(&y)));
            vars.extend([l, t, x.clone(), y.clone()]);
            (cx, cy) = (Term::var(x), Term::var(y));
        }
    }
    eqs.push(Formula::eq(out, cx));
    (vars, eqs)
}

/// Evaluates the chain on `s` and records every intermediate value.
/// Returns `x([n] s)`.
fn fill_chain(n: u64, s: &Point, p: &str, w: &mut Assignment) -> Rational {
    let (u, v) = coords(s);
    let (mut cx, mut cy) = (u.clone(), v.clone());
    for (i, bit) in chain_bits(n).enumerate() {
        let step = i + 1;
        assert!(cy != 0, "no 2-torsion on this curve");
        let l = Rational::from(&cx * &cx) * 3u32 / Rational::from(&cy * 2u32);
        let x = Rational::from(&l * &l) - Rational::from(&cx * 2u32);
        let y = Rational::from(&cx - &x) * &l - &cy;
        for (s, val) in [("l", l), ("x", x.clone()), ("y", y.clone())] {
            w.insert(name(p, &format!("d{step}.{s}")), val);
        }
        (cx, cy) = (x, y);
        if bit {
            let dx = Rational::from(&u - &cx);
            // [a]S = [1]S only for a = 1 when S is not torsion
            assert!(dx != 0, "double-and-add chain degenerates");
            let l = Rational::from(&v - &cy) / &dx;
            let t = Rational::from(dx.recip_ref());
            let x = Rational::from(&l * &l) - &cx - &u;
            let y = Rational::from(&cx - &x) * &l - &cy;
            for (s, val) in [("l", l), ("t", t), ("x", x.clone()), ("y", y.clone())] {
                w.insert(name(p, &format!("a{step}.{s}")), val);
            }
            (cx, cy) = (x, y);
        }
    }
    cx
}

/// `g = 0` or `g = x([N] S)` for a rational point `S`.
pub fn x_formula(g: Term, p: &str, n: u64) -> Formula {
    let (u, v) = (name(p, "u"), name(p, "v"));
    let (tu, tv) = (Term::var(&u), Term::var(&v));
    let (chain_vars, chain) = mul_chain(n, &tu, &tv, g.clone(), &name(p, "c"));
    let mut conj = vec![on_curve_formula(&tu, &tv)];
    conj.extend(chain);
    let mut vars = vec![u, v];
    vars.extend(chain_vars);
    Formula::or(Formula::eq(g, Term::Zero), Formula::exists(vars, Formula::and_all(conj)))
}

/// Witness for `x_formula` from a preimage `S` with `g = x([N] S)`, or the
/// left disjunct for `None`.
pub fn fill_x(pre: Option<&Point>, p: &str, n: u64, w: &mut Assignment) -> Rational {
    match pre {
        None => Rational::new(),
        Some(s) => {
            let (u, v) = coords(s);
            w.insert(name(p, "u"), u);
            w.insert(name(p, "v"), v);
            fill_chain(n, s, &name(p, "c"), w)
        }
    }
}

/// X_1(q): `h(q) = h(g)` for some `g` in X. X_{n+1}(q): `h(q) = h(a) + h(b)`
/// with `a` in X_n and `b` in X_1.
pub fn xn_formula(q: Term, p: &str, count: usize, n: u64) -> Formula {
    assert!(count >= 1);
    if count == 1 {
        let g = name(p, "g");
        return Formula::exists(
            vec![g.clone()],
            Formula::and(x_formula(Term::var(&g), &name(p, "x"), n), Formula::e11(q, Term::var(g))),
        );
    }
    let (a, b) = (name(p, "a"), name(p, "b"));
    Formula::exists(
        vec![a.clone(), b.clone()],
        Formula::and_all(vec![
            xn_formula(Term::var(&a), &name(p, "l"), count - 1, n),
            xn_formula(Term::var(&b), &name(p, "r"), 1, n),
            Formula::s(Term::var(a), Term::var(b), q),
        ]),
    )
}

/// Preimage `[k] P_1` of `pi(Q_k)` under `[N]`, or `None` for `k = 0`.
fn preimage(k: i64) -> Option<Point> {
    (k != 0).then(|| scalar_mul_unchecked(&Integer::from(k), &generator()))
}

/// Witness for `xn_formula` with summands `pi(Q_{k_j})` (0 when `k_j = 0`).
pub fn fill_xn(ks: &[i64], p: &str, n: u64, w: &mut Assignment) {
    let count = ks.len();
    assert!(count >= 1);
    if count == 1 {
        let g = fill_x(preimage(ks[0]).as_ref(), &name(p, "x"), n, w);
        w.insert(name(p, "g"), g);
        return;
    }
    let a: Integer = ks[..count - 1].iter().map(|&k| summand_height(k, n)).product();
    w.insert(name(p, "a"), Rational::from(a));
    w.insert(name(p, "b"), summand(ks[count - 1], n));
    fill_xn(&ks[..count - 1], &name(p, "l"), n, w);
    fill_xn(&ks[count - 1..], &name(p, "r"), n, w);
}

fn summand(k: i64, n: u64) -> Rational {
    if k == 0 {
        Rational::new()
    } else {
        curve::pi(&gamma_point(k, n)).expect("Q_k is affine for k != 0")
    }
}

fn summand_height(k: i64, n: u64) -> Integer {
    height(&summand(k, n)).into_value()
}

pub fn gadget_x(profile: &Profile) -> GadgetInstance {
    GadgetInstance {
        name: "X".into(),
        formula: x_formula(Term::var("g"), "", profile.n),
        interface: vec!["g".into()],
        guarantee: None,
    }
}

/// Witness that `pi(Q_k)` (or 0 for `k = 0`) lies in X.
pub fn witness_x(k: i64, profile: &Profile) -> Assignment {
    let mut w = Assignment::new();
    let g = fill_x(preimage(k).as_ref(), "", profile.n, &mut w);
    w.insert("g".into(), g);
    gadgets::zero_fill(&gadget_x(profile).formula, &mut w);
    w
}

pub fn gadget_xn(count: usize, profile: &Profile) -> GadgetInstance {
    assert!((1..=4).contains(&count), "X_n is built for 1 <= n <= 4");
    GadgetInstance {
        name: format!("X_{count}"),
        formula: xn_formula(Term::var("q"), "", count, profile.n),
        interface: vec!["q".into()],
        guarantee: None,
    }
}

/// Witness that `prod_j H(pi(Q_{k_j}))` lies in X_n, `n = ks.len()`.
pub fn witness_xn(ks: &[i64], profile: &Profile) -> Assignment {
    let g = gadget_xn(ks.len(), profile);
    let q: Integer = ks.iter().map(|&k| summand_height(k, profile.n)).product();
    let mut w = Assignment::new();
    w.insert("q".into(), Rational::from(q));
    fill_xn(ks, "", profile.n, &mut w);
    gadgets::zero_fill(&g.formula, &mut w);
    w
}

// ---- theta ----

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct X4Certificate {
    pub k: [i64; 4],
    pub u: [Rational; 4],
    pub r: [Integer; 4],
    pub q: Rational,
}

impl X4Certificate {
    /// `theta(q) = sum k_j^2`.
    pub fn m(&self) -> Integer {
        self.k.iter().map(|&k| Integer::from(k) * k).sum()
    }
}

fn log_eps() -> Rational {
    Rational::from((1, 1u64 << 40))
}

/// Certified interval for `h(q) - mD`.
pub fn encoding_error(q: &Rational, m: &Integer, profile: &Profile) -> CertifiedReal {
    log_height_of(q, &log_eps()).sub(&profile.d.scale(&Rational::from(m)))
}

pub fn encode(m: u64, profile: &Profile) -> Result<X4Certificate, InterpError> {
    if m > profile.m_max {
        return Err(InterpError::Range { m: m.to_string(), m_max: profile.m_max });
    }
    let ks = four_squares(&Integer::from(m)).map(|k| k.to_i64().expect("k_j^2 <= m"));
    encode_with(ks, profile)
}

/// Certificate for an explicit decomposition `m = sum k_j^2`.
pub fn encode_with(k: [i64; 4], profile: &Profile) -> Result<X4Certificate, InterpError> {
    let m: Integer = k.iter().map(|&x| Integer::from(x) * x).sum();
    if m > profile.m_max {
        return Err(InterpError::Range { m: m.to_string(), m_max: profile.m_max });
    }
    let u = k.map(|kj| summand(kj, profile.n));
    let r = u.clone().map(|uj| height(&uj).into_value());
    let q = Rational::from(r.iter().product::<Integer>());
    let err = encoding_error(&q, &m, profile);
    let bound = Rational::from(&profile.c_e * 4u32);
    if err.hi > bound || err.lo < Rational::from(-&bound) {
        return Err(InterpError::EncoderBound(m.to_string()));
    }
    Ok(X4Certificate { k, u, r, q })
}

/// `theta(q)` for a caller-certified element of X_4.
pub fn decode(q: &Rational, profile: &Profile) -> Result<u64, InterpError> {
    let h = log_height_of(q, &log_eps());
    let m = Rational::from(h.mid() / profile.d.mid()).round().numer().clone();
    let m = m.max(Integer::new());
    let err = h.sub(&profile.d.scale(&Rational::from(&m)));
    let (lo, hi) = (Rational::from(-&profile.window), &profile.window);
    if err.lo >= lo && err.hi <= *hi {
        // the window is below D/2, so no other m can qualify
        return m.to_u64().ok_or_else(|| InterpError::NotInX4(q.to_string()));
    }
    if err.hi < lo || err.lo > *hi {
        return Err(InterpError::NotInX4(q.to_string()));
    }
    Err(InterpError::Precision(q.to_string()))
}

pub fn certificate_to_json(c: &X4Certificate) -> Value {
    json!({
        "k": c.k.to_vec(),
        "u": c.u.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
        "r": c.r.iter().map(|x| x.to_string()).collect::<Vec<_>>(),
        "q": c.q.to_string(),
    })
}

/// Parses a certificate and checks its internal arithmetic: `r_j = H(u_j)`
/// and `q = r_1 r_2 r_3 r_4`. Whether `u_j = pi(Q_{k_j})` needs a profile;
/// see [`validate_certificate`].
pub fn certificate_from_json(v: &Value) -> Result<X4Certificate, InterpError> {
    let bad = |m: &str| InterpError::Certificate(m.to_string());
    let arr = |key: &str| -> Result<Vec<Value>, InterpError> {
        match v.get(key) {
            Some(Value::Array(a)) if a.len() == 4 => Ok(a.clone()),
            _ => Err(bad(&format!("`{key}` must be an array of four entries"))),
        }
    };
    let text = |x: &Value| -> Result<String, InterpError> {
        match x {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(bad("expected a number or a string")),
        }
    };
    let mut k = [0i64; 4];
    for (i, x) in arr("k")?.iter().enumerate() {
        k[i] = x.as_i64().ok_or_else(|| bad("`k` entries must be integers"))?;
    }
    let mut u: [Rational; 4] = Default::default();
    for (i, x) in arr("u")?.iter().enumerate() {
        u[i] = parse_rational(&text(x)?).map_err(|e| bad(&e.to_string()))?;
    }
    let mut rr: [Integer; 4] = Default::default();
    for (i, x) in arr("r")?.iter().enumerate() {
        rr[i] = Integer::from_str_radix(&text(x)?, 10).map_err(|e| bad(&e.to_string()))?;
    }
    let q = parse_rational(&text(v.get("q").ok_or_else(|| bad("missing `q`"))?)?).map_err(|e| bad(&e.to_string()))?;
    for j in 0..4 {
        if *height(&u[j]).value() != rr[j] {
            return Err(bad(&format!("r_{} is not the height of u_{}", j + 1, j + 1)));
        }
    }
    if q != Rational::from(rr.iter().product::<Integer>()) {
        return Err(bad("q is not the product of the r_j"));
    }
    Ok(X4Certificate { k, u, r: rr, q })
}

/// Checks `u_j = pi(Q_{k_j})` (or 0) against the profile's N.
pub fn validate_certificate(c: &X4Certificate, profile: &Profile) -> Result<(), InterpError> {
    for j in 0..4 {
        if c.u[j] != summand(c.k[j], profile.n) {
            return Err(InterpError::Certificate(format!("u_{} is not pi(Q_{})", j + 1, c.k[j])));
        }
    }
    Ok(())
}

// ---- relation gadgets ----

pub fn zero_formula(x: Term, p: &str) -> Formula {
    em_formula(Term::Zero, x, p, M_ZERO)
}

pub fn one_formula(x: Term, p: &str, profile: &Profile) -> Formula {
    em_formula(Term::int(&profile.q1), x, p, M_ONE)
}

pub fn eq_formula(x: Term, y: Term, p: &str) -> Formula {
    em_formula(x, y, p, M_EQ)
}

pub fn add_formula(x: Term, y: Term, z: Term, p: &str) -> Formula {
    let w = name(p, "w");
    Formula::exists(
        vec![w.clone()],
        Formula::and(em_formula(Term::var(&w), z, &name(p, "e"), M_ADD), Formula::s(x, y, Term::var(w))),
    )
}

/// `gamma = x([N] S)` and `delta = x([N] S')` with `S' = S + P_1`, where
/// either `S` and `P_1` have distinct x-coordinates or `S = P_1`.
fn c_formula(g: Term, d: Term, p: &str, n: u64) -> Formula {
    let [u, v, u2, v2] = ["u", "v", "u2", "v2"].map(|s| name(p, s));
    let [tu, tv, tu2, tv2] = [&u, &v, &u2, &v2].map(Term::var);
    let (l, t) = (name(p, "g.l"), name(p, "g.t"));
    let (tl, tt) = (Term::var(&l), Term::var(&t));
    let generic = Formula::exists(
        vec![l, t],
        Formula::and_all(vec![
            Formula::eq(tv.clone(), Term::add(Term::add(Term::One, tl.clone()), Term::mul(tu.clone(), tl.clone()))),
            Formula::eq(Term::add(Term::add(Term::mul(tt.clone(), tu.clone()), tt), Term::One), Term::Zero),
            Formula::eq(Term::add(tu2.clone(), tu.clone()), Term::add(Term::mul(tl.clone(), tl.clone()), Term::One)),
            Formula::eq(
                Term::add(Term::add(tv2.clone(), tv.clone()), Term::mul(tl.clone(), tu2.clone())),
                Term::mul(tl, tu.clone()),
            ),
        ]),
    );
    let dl = name(p, "k.l");
    let mut k1 = is_p1(&tu, &tv);
    k1.extend(doubling_eqs(&tu, &tv, &Term::var(&dl), &tu2, &tv2));
    let k1 = Formula::exists(vec![dl], Formula::and_all(k1));
    let (va, ca) = mul_chain(n, &tu, &tv, g, &name(p, "cq"));
    let (vb, cb) = mul_chain(n, &tu2, &tv2, d, &name(p, "cr"));
    let mut conj = vec![on_curve_formula(&tu, &tv), Formula::or(generic, k1)];
    conj.extend(ca);
    conj.extend(cb);
    let mut vars = vec![u, v, u2, v2];
    vars.extend(va);
    vars.extend(vb);
    Formula::exists(vars, Formula::and_all(conj))
}

fn is_p1(u: &Term, v: &Term) -> Vec<Formula> {
    vec![Formula::eq(Term::add(u.clone(), Term::One), Term::Zero), Formula::eq(v.clone(), Term::One)]
}

/// `out = x([N] P_1)`, with `P_1` pinned by equations.
fn from_p1(out: Term, p: &str, n: u64) -> (Vec<String>, Vec<Formula>) {
    let (u, v) = (name(p, "u"), name(p, "v"));
    let (tu, tv) = (Term::var(&u), Term::var(&v));
    let (cv, chain) = mul_chain(n, &tu, &tv, out, &name(p, "c"));
    let mut conj = is_p1(&tu, &tv);
    conj.extend(chain);
    let mut vars = vec![u, v];
    vars.extend(cv);
    (vars, conj)
}

/// C extended by the cases `k = -1` (`delta = 0`) and `k = 0` (`gamma = 0`),
/// up to equal heights.
fn c_prime_formula(g: Term, d: Term, p: &str, n: u64) -> Formula {
    let (gg, dd) = (name(p, "gg"), name(p, "dd"));
    let (tg, td) = (Term::var(&gg), Term::var(&dd));
    let (vm, mut cm) = from_p1(tg.clone(), &name(p, "m"), n);
    cm.push(Formula::eq(td.clone(), Term::Zero));
    let (vz, mut cz) = from_p1(td.clone(), &name(p, "z"), n);
    cz.insert(0, Formula::eq(tg.clone(), Term::Zero));
    let cases = Formula::or(
        c_formula(tg.clone(), td.clone(), &name(p, "c"), n),
        Formula::or(Formula::exists(vm, Formula::and_all(cm)), Formula::exists(vz, Formula::and_all(cz))),
    );
    Formula::exists(
        vec![gg, dd],
        Formula::and_all(vec![Formula::e11(g, tg), Formula::e11(d, td), cases]),
    )
}

pub fn b_formula(x: Term, y: Term, p: &str, profile: &Profile) -> Formula {
    let (g, d) = (name(p, "g"), name(p, "d"));
    let (tg, td) = (Term::var(&g), Term::var(&d));
    Formula::exists(
        vec![g, d],
        Formula::and_all(vec![
            c_prime_formula(tg.clone(), td.clone(), &name(p, "c"), profile.n),
            l_formula(tg.clone(), td.clone(), &name(p, "l")),
            em_formula(x, tg, &name(p, "ex"), M_B),
            em_formula(y, td, &name(p, "ey"), M_B),
        ]),
    )
}

// Witness builders for the relation gadgets. Each writes only the gadget's
// own bound variables; `check` verifies the completeness hypotheses first.

pub fn fill_zero(x: &Rational, p: &str, w: &mut Assignment, check: bool) -> Result<(), InterpError> {
    Ok(fill_em(&Rational::new(), x, p, M_ZERO, w, check)?)
}

pub fn fill_one(x: &Rational, p: &str, profile: &Profile, w: &mut Assignment, check: bool) -> Result<(), InterpError> {
    Ok(fill_em(&Rational::from(&profile.q1), x, p, M_ONE, w, check)?)
}

pub fn fill_eq(x: &Rational, y: &Rational, p: &str, w: &mut Assignment, check: bool) -> Result<(), InterpError> {
    Ok(fill_em(x, y, p, M_EQ, w, check)?)
}

/// Uses `w = H(x) H(y)`, so `S(x, y, w)` holds exactly.
pub fn fill_add(
    x: &Rational,
    y: &Rational,
    z: &Rational,
    p: &str,
    w: &mut Assignment,
    check: bool,
) -> Result<(), InterpError> {
    let prod = Rational::from(height(x).into_value() * height(y).into_value());
    fill_em(&prod, z, &name(p, "e"), M_ADD, w, check)?;
    w.insert(name(p, "w"), prod);
    Ok(())
}

/// Witness for `B(x, y)` when `theta(x) = k^2` and `theta(y) = (k+1)^2`.
pub fn fill_b(
    k: u64,
    x: &Rational,
    y: &Rational,
    p: &str,
    profile: &Profile,
    w: &mut Assignment,
    check: bool,
) -> Result<(), InterpError> {
    let n = profile.n;
    let k = i64::try_from(k).map_err(|_| InterpError::Range { m: k.to_string(), m_max: profile.m_max })?;
    let gamma = summand(k, n);
    let delta = summand(k + 1, n);
    fill_em(x, &gamma, &name(p, "ex"), M_B, w, check)?;
    fill_em(y, &delta, &name(p, "ey"), M_B, w, check)?;
    fill_l(&gamma, &delta, &name(p, "l"), w, check)?;
    w.insert(name(p, "g"), gamma.clone());
    w.insert(name(p, "d"), delta.clone());

    let cp = name(p, "c");
    w.insert(name(&cp, "gg"), gamma);
    w.insert(name(&cp, "dd"), delta);
    if k == 0 {
        let zp = name(&cp, "z");
        w.insert(name(&zp, "u"), Rational::from(-1));
        w.insert(name(&zp, "v"), Rational::from(1));
        fill_chain(n, &generator(), &name(&zp, "c"), w);
        return Ok(());
    }
    let c = name(&cp, "c");
    let s = scalar_mul_unchecked(&Integer::from(k), &generator());
    let s2 = scalar_mul_unchecked(&Integer::from(k + 1), &generator());
    let ((su, sv), (su2, sv2)) = (coords(&s), coords(&s2));
    if k == 1 {
        let l = Rational::from(&su * &su) * 3u32 / Rational::from(&sv * 2u32);
        w.insert(name(&c, "k.l"), l);
    } else {
        let dx = Rational::from(-1 - &su);
        w.insert(name(&c, "g.l"), Rational::from(1 - &sv) / &dx);
        w.insert(name(&c, "g.t"), Rational::from(dx.recip_ref()));
    }
    for (s, val) in [("u", su), ("v", sv), ("u2", su2), ("v2", sv2)] {
        w.insert(name(&c, s), val);
    }
    fill_chain(n, &s, &name(&c, "cq"), w);
    fill_chain(n, &s2, &name(&c, "cr"), w);
    Ok(())
}

// Public gadgets: the relation on the interface variables together with
// X_4 membership of each of them.

fn member(v: &str, profile: &Profile) -> Formula {
    xn_formula(Term::var(v), &format!("m{v}"), 4, profile.n)
}

fn relation_instance(name: &str, vars: &[&str], core: Formula, profile: &Profile) -> GadgetInstance {
    let mut conj: Vec<Formula> = vars.iter().map(|v| member(v, profile)).collect();
    conj.push(core);
    GadgetInstance {
        name: name.into(),
        formula: Formula::and_all(conj),
        interface: vars.iter().map(|v| v.to_string()).collect(),
        guarantee: None,
    }
}

pub fn gadget_zero(profile: &Profile) -> GadgetInstance {
    relation_instance("zero", &["x"], zero_formula(Term::var("x"), "z"), profile)
}

pub fn gadget_one(profile: &Profile) -> GadgetInstance {
    relation_instance("one", &["x"], one_formula(Term::var("x"), "o", profile), profile)
}

pub fn gadget_eq(profile: &Profile) -> GadgetInstance {
    relation_instance("eq", &["x", "y"], eq_formula(Term::var("x"), Term::var("y"), "e"), profile)
}

pub fn gadget_add(profile: &Profile) -> GadgetInstance {
    relation_instance(
        "add",
        &["x", "y", "z"],
        add_formula(Term::var("x"), Term::var("y"), Term::var("z"), "a"),
        profile,
    )
}

pub fn gadget_b(profile: &Profile) -> GadgetInstance {
    relation_instance("B", &["x", "y"], b_formula(Term::var("x"), Term::var("y"), "b", profile), profile)
}

/// Fills the X_4 membership witness of `v` from its certificate.
pub fn fill_member(v: &str, c: &X4Certificate, profile: &Profile, w: &mut Assignment) {
    w.insert(v.to_string(), c.q.clone());
    fill_xn(&c.k, &format!("m{v}"), profile.n, w);
}

fn finish(g: &GadgetInstance, mut w: Assignment) -> Assignment {
    gadgets::zero_fill(&g.formula, &mut w);
    w
}

fn relation_error(relation: &str, cs: &[&X4Certificate]) -> InterpError {
    InterpError::Relation {
        relation: relation.into(),
        args: cs.iter().map(|c| c.m().to_string()).collect::<Vec<_>>().join(", "),
    }
}

pub fn witness_zero(x: &X4Certificate, profile: &Profile) -> Result<Assignment, InterpError> {
    if x.m() != 0 {
        return Err(relation_error("theta(x) = 0", &[x]));
    }
    let mut w = Assignment::new();
    fill_member("x", x, profile, &mut w);
    fill_zero(&x.q, "z", &mut w, true)?;
    Ok(finish(&gadget_zero(profile), w))
}

pub fn witness_one(x: &X4Certificate, profile: &Profile) -> Result<Assignment, InterpError> {
    if x.m() != 1 {
        return Err(relation_error("theta(x) = 1", &[x]));
    }
    let mut w = Assignment::new();
    fill_member("x", x, profile, &mut w);
    fill_one(&x.q, "o", profile, &mut w, true)?;
    Ok(finish(&gadget_one(profile), w))
}

pub fn witness_eq(x: &X4Certificate, y: &X4Certificate, profile: &Profile) -> Result<Assignment, InterpError> {
    if x.m() != y.m() {
        return Err(relation_error("theta(x) = theta(y)", &[x, y]));
    }
    let mut w = Assignment::new();
    fill_member("x", x, profile, &mut w);
    fill_member("y", y, profile, &mut w);
    fill_eq(&x.q, &y.q, "e", &mut w, true)?;
    Ok(finish(&gadget_eq(profile), w))
}

pub fn witness_add(
    x: &X4Certificate,
    y: &X4Certificate,
    z: &X4Certificate,
    profile: &Profile,
) -> Result<Assignment, InterpError> {
    if x.m() + y.m() != z.m() {
        return Err(relation_error("theta(x) + theta(y) = theta(z)", &[x, y, z]));
    }
    let mut w = Assignment::new();
    for (v, c) in [("x", x), ("y", y), ("z", z)] {
        fill_member(v, c, profile, &mut w);
    }
    fill_add(&x.q, &y.q, &z.q, "a", &mut w, true)?;
    Ok(finish(&gadget_add(profile), w))
}

pub fn witness_b(x: &X4Certificate, y: &X4Certificate, profile: &Profile) -> Result<Assignment, InterpError> {
    let (mx, my) = (x.m(), y.m());
    let k = mx.clone().sqrt();
    if Integer::from(&k * &k) != mx || Integer::from(&k + 1u32).square() != my {
        return Err(relation_error("B(theta(x), theta(y))", &[x, y]));
    }
    let mut w = Assignment::new();
    fill_member("x", x, profile, &mut w);
    fill_member("y", y, profile, &mut w);
    let k = k.to_u64().expect("k^2 <= m_max");
    fill_b(k, &x.q, &y.q, "b", profile, &mut w, true)?;
    Ok(finish(&gadget_b(profile), w))
}

/// Gadgets of this module at a profile, for catalogs and round trips.
pub fn catalog(profile: &Profile) -> Vec<GadgetInstance> {
    let mut out = vec![gadget_x(profile)];
    out.extend((1..=4).map(|n| gadget_xn(n, profile)));
    out.extend([gadget_zero(profile), gadget_one(profile), gadget_eq(profile), gadget_add(profile), gadget_b(profile)]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::check_witness;
    use std::sync::OnceLock;

    fn test_profile() -> &'static Profile {
        static P: OnceLock<Profile> = OnceLock::new();
        P.get_or_init(|| build_profile(30, 16).unwrap())
    }

    fn accepts(g: &GadgetInstance, w: &Assignment) -> bool {
        check_witness(&g.formula, w).unwrap()
    }

    #[test]
    fn slack_at_four() {
        let s = slack_analysis(&Rational::from(4));
        let mids: Vec<_> = s.constraints.iter().filter_map(|c| c.intermediate.clone()).collect();
        for b in [64, 144, 160, 240, 84] {
            assert!(mids.contains(&Rational::from(b)), "{b}");
        }
        assert_eq!(s.b_dec, 240);
        assert_eq!(s.d_min, 480);
        assert!(s.completeness.iter().all(|c| c.ok()));
        assert!(slack_analysis(&Rational::from(5)).completeness.iter().any(|c| !c.ok()));
    }

    #[test]
    fn profiles() {
        let p = test_profile();
        assert!((p.d.to_f64() - 679.12).abs() < 0.01, "{}", p.d);
        assert!(matches!(build_profile(5, 10), Err(InterpError::Rejected { .. })));
        assert!(matches!(build_profile(0, 10), Err(InterpError::BadParameters(_))));
        assert!(matches!(build_profile_with(30, 10, &Rational::from(6)), Err(InterpError::Incomplete(_))));
    }

    #[test]
    fn x_membership() {
        let p = test_profile();
        let g = gadget_x(p);
        for k in 0..=3 {
            let w = witness_x(k, p);
            assert_eq!(w["g"], summand(k, p.n));
            assert!(accepts(&g, &w), "k = {k}");
        }
        let mut w = witness_x(2, p);
        w.insert("g".into(), summand(3, p.n));
        assert!(!accepts(&g, &w));
    }

    #[test]
    fn xn_membership() {
        let p = test_profile();
        let w = witness_xn(&[0, 0, 0, 0], p);
        assert_eq!(w["q"], 1);
        assert!(accepts(&gadget_xn(4, p), &w));
        assert!(accepts(&gadget_xn(1, p), &witness_xn(&[0], p)));
        let c = encode(7, p).unwrap();
        assert_eq!(c.k, [2, 1, 1, 1]);
        let w = witness_xn(&c.k, p);
        assert_eq!(w["q"], c.q);
        assert!(accepts(&gadget_xn(4, p), &w));
    }

    #[test]
    fn theta_round_trip() {
        let p = test_profile();
        assert_eq!(encode(0, p).unwrap().q, 1);
        assert_eq!(decode(&Rational::from(1), p).unwrap(), 0);
        for m in 0..=p.m_max {
            let c = encode(m, p).unwrap();
            assert_eq!(decode(&c.q, p).unwrap(), m);
            assert_eq!(c.m(), m);
        }
        let alt = encode_with([2, 2, 0, 0], p).unwrap();
        assert_eq!(decode(&alt.q, p).unwrap(), 8);
        assert!(matches!(encode(17, p), Err(InterpError::Range { .. })));
        let half = Rational::from(Integer::from(&p.q1).sqrt());
        assert!(matches!(decode(&half, p), Err(InterpError::NotInX4(_))));
    }

    #[test]
    fn certificate_json_round_trip() {
        let p = test_profile();
        let c = encode(7, p).unwrap();
        let back = certificate_from_json(&certificate_to_json(&c)).unwrap();
        assert_eq!(back, c);
        validate_certificate(&back, p).unwrap();
        let mut v = certificate_to_json(&c);
        v["q"] = json!("5");
        assert!(certificate_from_json(&v).is_err());
    }

    #[test]
    fn relation_gadgets_accept_built_witnesses() {
        let p = test_profile();
        let c: Vec<_> = (0..=9).map(|m| encode(m, p).unwrap()).collect();
        assert!(accepts(&gadget_zero(p), &witness_zero(&c[0], p).unwrap()));
        assert!(accepts(&gadget_one(p), &witness_one(&c[1], p).unwrap()));
        let alt = encode_with([1, 1, 0, 0], p).unwrap();
        assert!(accepts(&gadget_eq(p), &witness_eq(&c[2], &alt, p).unwrap()));
        assert!(accepts(&gadget_add(p), &witness_add(&c[2], &c[3], &c[5], p).unwrap()));
        assert!(accepts(&gadget_add(p), &witness_add(&c[0], &c[4], &c[4], p).unwrap()));
        for (a, b) in [(0, 1), (1, 4), (4, 9)] {
            assert!(accepts(&gadget_b(p), &witness_b(&c[a], &c[b], p).unwrap()), "B({a}, {b})");
        }
        assert!(witness_add(&c[2], &c[2], &c[5], p).is_err());
        assert!(witness_b(&c[1], &c[3], p).is_err());
    }

    #[test]
    fn forced_wrong_relations_fail_the_checker() {
        let p = test_profile();
        let (c1, c2) = (encode(1, p).unwrap(), encode(2, p).unwrap());
        let mut w = Assignment::new();
        fill_member("x", &c1, p, &mut w);
        fill_member("y", &c2, p, &mut w);
        let _ = fill_eq(&c1.q, &c2.q, "e", &mut w, false);
        let g = gadget_eq(p);
        gadgets::zero_fill(&g.formula, &mut w);
        assert!(!accepts(&g, &w));
    }

    #[test]
    fn catalog_round_trips() {
        let p = test_profile();
        for g in catalog(p) {
            assert_eq!(crate::formula::parse(&g.formula.render()).unwrap(), g.formula, "{}", g.name);
        }
    }
}
