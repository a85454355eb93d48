//! Positive existential formulas over (Q; 0, 1, +, *, =, H_{m,n}).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rug::{Integer, Rational};

use crate::heights::{parse_rational, tuple_height, HeightError};
use crate::sexp::{self, is_identifier, Sexp, SyntaxError};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("arity mismatch at byte {pos}: H {m} {n} applied to {got_m} and {got_n} terms")]
    Arity { pos: usize, m: usize, n: usize, got_m: usize, got_n: usize },
    #[error("variable `{0}` has no value in the witness")]
    MissingVariable(String),
    #[error("malformed witness: {0}")]
    Witness(String),
    #[error(transparent)]
    Height(#[from] HeightError),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Zero,
    One,
    Add(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
}

pub type Assignment = BTreeMap<String, Rational>;

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn add(a: Term, b: Term) -> Term {
        Term::Add(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Term, b: Term) -> Term {
        Term::Mul(Box::new(a), Box::new(b))
    }

    pub fn two() -> Term {
        Term::add(Term::One, Term::One)
    }

    /// Right-nested sum; the empty sum is `0`.
    pub fn sum(mut ts: Vec<Term>) -> Term {
        let mut acc = match ts.pop() {
            Some(t) => t,
            None => return Term::Zero,
        };
        while let Some(t) = ts.pop() {
            acc = Term::add(t, acc);
        }
        acc
    }

    /// Right-nested product; the empty product is `1`.
    pub fn product(mut ts: Vec<Term>) -> Term {
        let mut acc = match ts.pop() {
            Some(t) => t,
            None => return Term::One,
        };
        while let Some(t) = ts.pop() {
            acc = Term::mul(t, acc);
        }
        acc
    }

    /// Binary expansion of a nonnegative integer. Large values are written
    /// in base 2^64 so the tree stays shallow.
    pub fn int(n: &Integer) -> Term {
        assert!(*n >= 0, "only nonnegative literals are expressible");
        if n.significant_bits() <= 64 {
            return small_int(n.to_u64().expect("fits"));
        }
        let count = n.significant_bits().div_ceil(64);
        let limbs: Vec<u64> = (0..count).rev().map(|i| Integer::from(n >> (64 * i)).to_u64_wrapping()).collect();
        let mut acc = small_int(limbs[0]);
        for &d in &limbs[1..] {
            acc = Term::mul(pow2(64), acc);
            if d != 0 {
                acc = Term::add(acc, small_int(d));
            }
        }
        acc
    }

    pub fn from_u64(n: u64) -> Term {
        small_int(n)
    }

    pub fn eval(&self, w: &Assignment) -> Result<Rational, FormulaError> {
        Ok(match self {
            Term::Var(v) => w.get(v).cloned().ok_or_else(|| FormulaError::MissingVariable(v.clone()))?,
            Term::Zero => Rational::new(),
            Term::One => Rational::from(1),
            Term::Add(a, b) => a.eval(w)? + b.eval(w)?,
            Term::Mul(a, b) => a.eval(w)? * b.eval(w)?,
        })
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Zero | Term::One => {}
            Term::Add(a, b) | Term::Mul(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Zero | Term::One => true,
            Term::Add(a, b) | Term::Mul(a, b) => a.is_closed() && b.is_closed(),
        }
    }

    pub fn has_mul(&self) -> bool {
        match self {
            Term::Var(_) | Term::Zero | Term::One => false,
            Term::Mul(..) => true,
            Term::Add(a, b) => a.has_mul() || b.has_mul(),
        }
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Term::Var(v) => out.push_str(v),
            Term::Zero => out.push('0'),
            Term::One => out.push('1'),
            Term::Add(a, b) | Term::Mul(a, b) => {
                out.push_str(if matches!(self, Term::Add(..)) { "(+ " } else { "(* " });
                a.render_into(out);
                out.push(' ');
                b.render_into(out);
                out.push(')');
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }
}

fn small_int(n: u64) -> Term {
    match n {
        0 => Term::Zero,
        1 => Term::One,
        _ => {
            let bits = 64 - n.leading_zeros();
            let mut acc = Term::One;
            for i in (0..bits - 1).rev() {
                acc = Term::mul(Term::two(), acc);
                if n >> i & 1 == 1 {
                    acc = Term::add(acc, Term::One);
                }
            }
            acc
        }
    }
}

fn pow2(k: u32) -> Term {
    match k {
        0 => Term::One,
        1 => Term::two(),
        _ if k % 2 == 0 => Term::mul(pow2(k / 2), pow2(k / 2)),
        _ => Term::mul(Term::two(), pow2(k - 1)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    Eq(Term, Term),
    H(Vec<Term>, Vec<Term>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Exists(Vec<String>, Box<Formula>),
}

impl Formula {
    pub fn eq(a: Term, b: Term) -> Formula {
        Formula::Eq(a, b)
    }

    pub fn h(xs: Vec<Term>, ys: Vec<Term>) -> Formula {
        assert!(!xs.is_empty() && !ys.is_empty(), "H atoms need nonempty tuples");
        Formula::H(xs, ys)
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// `exists` with no variables is just the body.
    pub fn exists(vars: Vec<String>, body: Formula) -> Formula {
        if vars.is_empty() {
            body
        } else {
            Formula::Exists(vars, Box::new(body))
        }
    }

    /// Right-nested conjunction; the empty conjunction is `0 = 0`.
    pub fn and_all(mut fs: Vec<Formula>) -> Formula {
        let mut acc = match fs.pop() {
            Some(f) => f,
            None => return Formula::Eq(Term::Zero, Term::Zero),
        };
        while let Some(f) = fs.pop() {
            acc = Formula::and(f, acc);
        }
        acc
    }

    /// `h(x) = h(y)` as two H atoms.
    pub fn e11(x: Term, y: Term) -> Formula {
        Formula::and(Formula::h(vec![x.clone()], vec![y.clone()]), Formula::h(vec![y], vec![x]))
    }

    /// `h(x) + h(y) = h(z)`, as `E_{1,3}(z, (x, y, xy))`.
    pub fn s(x: Term, y: Term, z: Term) -> Formula {
        let triple = vec![x.clone(), y.clone(), Term::mul(x, y)];
        Formula::and(Formula::h(vec![z.clone()], triple.clone()), Formula::h(triple, vec![z]))
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Formula::Eq(a, b) => {
                out.push_str("(= ");
                a.render_into(out);
                out.push(' ');
                b.render_into(out);
                out.push(')');
            }
            Formula::H(xs, ys) => {
                let _ = write!(out, "(H {} {} (", xs.len(), ys.len());
                render_terms(xs, out);
                out.push_str(") (");
                render_terms(ys, out);
                out.push_str("))");
            }
            Formula::And(a, b) | Formula::Or(a, b) => {
                out.push_str(if matches!(self, Formula::And(..)) { "(and " } else { "(or " });
                a.render_into(out);
                out.push(' ');
                b.render_into(out);
                out.push(')');
            }
            Formula::Exists(vs, body) => {
                out.push_str("(exists (");
                out.push_str(&vs.join(" "));
                out.push_str(") ");
                body.render_into(out);
                out.push(')');
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.free_into(&mut Vec::new(), &mut out);
        out
    }

    fn free_into(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        let terms = |ts: &mut dyn Iterator<Item = &Term>, bound: &Vec<String>, out: &mut BTreeSet<String>| {
            let mut vs = BTreeSet::new();
            for t in ts {
                t.collect_vars(&mut vs);
            }
            out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
        };
        match self {
            Formula::Eq(a, b) => terms(&mut [a, b].into_iter(), bound, out),
            Formula::H(xs, ys) => terms(&mut xs.iter().chain(ys.iter()), bound, out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                a.free_into(bound, out);
                b.free_into(bound, out);
            }
            Formula::Exists(vs, body) => {
                let n = bound.len();
                bound.extend(vs.iter().cloned());
                body.free_into(bound, out);
                bound.truncate(n);
            }
        }
    }

    /// Every variable bound by some quantifier, in first-binding order.
    pub fn bound_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![self];
        while let Some(f) = stack.pop() {
            match f {
                Formula::Eq(..) | Formula::H(..) => {}
                Formula::And(a, b) | Formula::Or(a, b) => {
                    stack.push(b);
                    stack.push(a);
                }
                Formula::Exists(vs, body) => {
                    for v in vs {
                        if seen.insert(v.clone()) {
                            out.push(v.clone());
                        }
                    }
                    stack.push(body);
                }
            }
        }
        out
    }

    /// Number of atoms, a rough size measure.
    pub fn atom_count(&self) -> usize {
        let mut n = 0;
        let mut stack = vec![self];
        while let Some(f) = stack.pop() {
            match f {
                Formula::Eq(..) | Formula::H(..) => n += 1,
                Formula::And(a, b) | Formula::Or(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Formula::Exists(_, body) => stack.push(body),
            }
        }
        n
    }

    fn eval(&self, w: &Assignment) -> Result<bool, FormulaError> {
        Ok(match self {
            Formula::Eq(a, b) => a.eval(w)? == b.eval(w)?,
            Formula::H(xs, ys) => {
                let xs = xs.iter().map(|t| t.eval(w)).collect::<Result<Vec<_>, _>>()?;
                let ys = ys.iter().map(|t| t.eval(w)).collect::<Result<Vec<_>, _>>()?;
                tuple_height(xs.iter()) <= tuple_height(ys.iter())
            }
            Formula::And(a, b) => a.eval(w)? && b.eval(w)?,
            Formula::Or(a, b) => a.eval(w)? || b.eval(w)?,
            Formula::Exists(_, body) => body.eval(w)?,
        })
    }
}

fn render_terms(ts: &[Term], out: &mut String) {
    for (i, t) in ts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        t.render_into(out);
    }
}

/// Exact check of a witness: every free and bound variable must be assigned,
/// and quantifiers take their values from `w`.
pub fn check_witness(f: &Formula, w: &Assignment) -> Result<bool, FormulaError> {
    for v in f.free_vars().into_iter().chain(f.bound_vars()) {
        if !w.contains_key(&v) {
            return Err(FormulaError::MissingVariable(v));
        }
    }
    f.eval(w)
}

/// Variables bound along one satisfied path of `f` under `w`: conjunctions
/// keep both sides, disjunctions the first satisfied side. `None` when `w`
/// does not satisfy `f`.
pub fn satisfied_bindings(f: &Formula, w: &Assignment) -> Result<Option<Vec<String>>, FormulaError> {
    Ok(match f {
        Formula::Eq(..) | Formula::H(..) => f.eval(w)?.then(Vec::new),
        Formula::And(a, b) => match satisfied_bindings(a, w)? {
            Some(mut va) => satisfied_bindings(b, w)?.map(|vb| {
                va.extend(vb);
                va
            }),
            None => None,
        },
        Formula::Or(a, b) => match satisfied_bindings(a, w)? {
            Some(v) => Some(v),
            None => satisfied_bindings(b, w)?,
        },
        Formula::Exists(vs, body) => satisfied_bindings(body, w)?.map(|mut inner| {
            let mut out = vs.clone();
            out.append(&mut inner);
            out
        }),
    })
}

pub(crate) fn term_from_sexp(s: &Sexp) -> Result<Term, SyntaxError> {
    match s {
        Sexp::Atom(a, pos) => {
            if a.bytes().all(|b| b.is_ascii_digit()) {
                let n: Integer = a.parse().map_err(|_| SyntaxError { pos: *pos, msg: "bad integer".into() })?;
                Ok(Term::int(&n))
            } else if is_identifier(a) {
                Ok(Term::Var(a.clone()))
            } else {
                sexp::err(*pos, format!("expected a term, found `{a}`"))
            }
        }
        Sexp::List(items, pos) => {
            let op = match items.first() {
                Some(Sexp::Atom(op, _)) if op == "+" || op == "*" => op.as_str(),
                _ => return sexp::err(*pos, "expected (+ t t) or (* t t)"),
            };
            if items.len() < 3 {
                return sexp::err(*pos, format!("`{op}` needs at least two arguments"));
            }
            let args = items[1..].iter().map(term_from_sexp).collect::<Result<Vec<_>, _>>()?;
            Ok(if op == "+" { Term::sum(args) } else { Term::product(args) })
        }
    }
}

pub(crate) fn var_list(s: &Sexp) -> Result<Vec<String>, SyntaxError> {
    match s {
        Sexp::List(items, _) => items
            .iter()
            .map(|it| match it {
                Sexp::Atom(a, _) if is_identifier(a) => Ok(a.clone()),
                other => sexp::err(other.pos(), "expected a variable name"),
            })
            .collect(),
        other => sexp::err(other.pos(), "expected a variable list"),
    }
}

fn term_list(s: &Sexp) -> Result<Vec<Term>, SyntaxError> {
    match s {
        Sexp::List(items, _) => items.iter().map(term_from_sexp).collect(),
        other => sexp::err(other.pos(), "expected a parenthesized term list"),
    }
}

fn arity(s: &Sexp) -> Result<usize, SyntaxError> {
    match s {
        Sexp::Atom(a, pos) => match a.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => sexp::err(*pos, "H arities must be positive integers"),
        },
        other => sexp::err(other.pos(), "expected an arity"),
    }
}

fn syn(pos: usize, msg: impl Into<String>) -> FormulaError {
    FormulaError::Syntax(SyntaxError { pos, msg: msg.into() })
}

fn formula_from_sexp(s: &Sexp) -> Result<Formula, FormulaError> {
    let (items, pos) = match s {
        Sexp::List(items, pos) => (items, *pos),
        Sexp::Atom(_, pos) => return Err(syn(*pos, "expected a formula")),
    };
    let head = match items.first() {
        Some(Sexp::Atom(h, _)) => h.as_str(),
        _ => return Err(syn(pos, "expected a connective")),
    };
    let need = |n: usize| -> Result<(), FormulaError> {
        if items.len() == n + 1 {
            Ok(())
        } else {
            Err(syn(pos, format!("`{head}` takes {n} arguments")))
        }
    };
    match head {
        "=" => {
            need(2)?;
            Ok(Formula::Eq(term_from_sexp(&items[1])?, term_from_sexp(&items[2])?))
        }
        "H" => {
            need(4)?;
            let (m, n) = (arity(&items[1])?, arity(&items[2])?);
            let (xs, ys) = (term_list(&items[3])?, term_list(&items[4])?);
            if xs.len() != m || ys.len() != n {
                return Err(FormulaError::Arity { pos, m, n, got_m: xs.len(), got_n: ys.len() });
            }
            Ok(Formula::H(xs, ys))
        }
        "and" | "or" => {
            if items.len() < 3 {
                return Err(syn(pos, format!("`{head}` needs at least two arguments")));
            }
            let mut args = items[1..].iter().map(formula_from_sexp).collect::<Result<Vec<_>, _>>()?;
            let mut acc = args.pop().expect("nonempty");
            while let Some(f) = args.pop() {
                acc = if head == "and" { Formula::and(f, acc) } else { Formula::or(f, acc) };
            }
            Ok(acc)
        }
        "exists" => {
            need(2)?;
            let vs = var_list(&items[1])?;
            if vs.is_empty() {
                return Err(syn(pos, "empty variable list"));
            }
            Ok(Formula::Exists(vs, Box::new(formula_from_sexp(&items[2])?)))
        }
        other => Err(syn(pos, format!("unknown connective `{other}`"))),
    }
}

pub fn parse(text: &str) -> Result<Formula, FormulaError> {
    formula_from_sexp(&sexp::read(text)?)
}

pub fn render(f: &Formula) -> String {
    f.render()
}

pub fn free_vars(f: &Formula) -> BTreeSet<String> {
    f.free_vars()
}

/// The sentence asking for a rational point on `x2^2 = x1^5 + a` with
/// `a^3 != a` and `h(a^M) <= h(x1, x2)`; the disequation is written as
/// `t a^3 = t a + 1`.
pub fn example_pm(m: u32) -> Formula {
    assert!(m >= 1, "M must be positive");
    let v = Term::var;
    let a3 = Term::product(vec![v("a"), v("a"), v("a")]);
    let neq = Formula::eq(Term::mul(v("t"), a3), Term::add(Term::mul(v("t"), v("a")), Term::One));
    let x1_5 = Term::product(vec![v("x1"); 5]);
    let curve = Formula::eq(Term::mul(v("x2"), v("x2")), Term::add(x1_5, v("a")));
    let am = Term::product(vec![v("a"); m as usize]);
    let h = Formula::h(vec![am], vec![v("x1"), v("x2")]);
    Formula::exists(
        ["a", "x1", "x2", "t"].map(String::from).to_vec(),
        Formula::and_all(vec![neq, curve, h]),
    )
}

pub fn assignment_to_json(w: &Assignment) -> serde_json::Value {
    serde_json::Value::Object(w.iter().map(|(k, v)| (k.clone(), serde_json::Value::String(v.to_string()))).collect())
}

pub fn assignment_from_json(v: &serde_json::Value) -> Result<Assignment, FormulaError> {
    let obj = v.as_object().ok_or_else(|| FormulaError::Witness("expected a JSON object".into()))?;
    let mut w = Assignment::new();
    for (k, x) in obj {
        let q = match x {
            serde_json::Value::String(s) => parse_rational(s)?,
            serde_json::Value::Number(n) => parse_rational(&n.to_string())?,
            _ => return Err(FormulaError::Witness(format!("value of `{k}` must be a string \"a/b\""))),
        };
        w.insert(k.clone(), q);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(pairs: &[(&str, &str)]) -> Assignment {
        pairs.iter().map(|(k, v)| (k.to_string(), parse_rational(v).unwrap())).collect()
    }

    #[test]
    fn parses_examples() {
        assert_eq!(
            parse("(= (+ 1 1) x)").unwrap(),
            Formula::Eq(Term::add(Term::One, Term::One), Term::var("x"))
        );
        assert_eq!(
            parse("(H 1 2 (x) (y z))").unwrap(),
            Formula::H(vec![Term::var("x")], vec![Term::var("y"), Term::var("z")])
        );
        assert!(matches!(parse("(H 1 2 (x y) (z))"), Err(FormulaError::Arity { .. })));
        assert!(matches!(parse("(= x"), Err(FormulaError::Syntax(_))));
        assert!(matches!(parse("(not (= x x))"), Err(FormulaError::Syntax(_))));
    }

    #[test]
    fn renders_canonically() {
        assert_eq!(Formula::Eq(Term::Zero, Term::Zero).render(), "(= 0 0)");
        let f = parse("(exists (x y) (exists (z) (= x (* y z))))").unwrap();
        assert_eq!(f.render(), "(exists (x y) (exists (z) (= x (* y z))))");
        assert_eq!(parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn literals_expand_and_evaluate() {
        let e = Assignment::new();
        for n in [0u64, 1, 2, 5, 6, 255, 1 << 40, u64::MAX] {
            assert_eq!(Term::from_u64(n).eval(&e).unwrap(), Rational::from(n));
        }
        let big = Integer::from(Integer::u_pow_u(3, 200)) + 17u32;
        let t = Term::int(&big);
        assert_eq!(t.eval(&e).unwrap(), Rational::from(big));
        assert_eq!(parse(&format!("(= x {})", 13)).unwrap(), Formula::Eq(Term::var("x"), Term::from_u64(13)));
    }

    #[test]
    fn checks_witnesses() {
        let f = parse("(= (+ 1 1) x)").unwrap();
        assert!(check_witness(&f, &w(&[("x", "2")])).unwrap());
        let g = parse("(H 1 1 (x) (y))").unwrap();
        assert!(!check_witness(&g, &w(&[("x", "3"), ("y", "1/2")])).unwrap());
        assert_eq!(check_witness(&g, &w(&[("x", "3")])), Err(FormulaError::MissingVariable("y".into())));
        let pm = example_pm(1);
        assert!(!check_witness(&pm, &w(&[("a", "2"), ("x1", "-1"), ("x2", "1"), ("t", "1/6")])).unwrap());
        let curve_only = parse("(exists (a x1 x2) (= (* x2 x2) (+ (* x1 (* x1 (* x1 (* x1 x1)))) a)))").unwrap();
        assert!(check_witness(&curve_only, &w(&[("a", "2"), ("x1", "-1"), ("x2", "1")])).unwrap());
    }

    #[test]
    fn pm_sentence_shape() {
        let pm = example_pm(1);
        assert!(pm.free_vars().is_empty());
        let text = pm.render();
        assert!(text.contains("(H 1 2 (a) (x1 x2))"));
        assert!(text.contains("(= (* t (* a (* a a))) (+ (* t a) 1))"));
        assert_eq!(parse(&text).unwrap(), pm);
        assert!(example_pm(3).render().contains("(H 1 2 ((* a (* a a))) (x1 x2))"));
    }

    #[test]
    fn free_variables() {
        assert_eq!(parse("(= x 1)").unwrap().free_vars(), ["x".to_string()].into());
        assert_eq!(parse("(exists (x) (= x y))").unwrap().free_vars(), ["y".to_string()].into());
    }

    #[test]
    fn witness_json_round_trip() {
        let a = w(&[("x", "-3/4"), ("y.q", "5")]);
        let back = assignment_from_json(&assignment_to_json(&a)).unwrap();
        assert_eq!(a, back);
        assert!(assignment_from_json(&serde_json::json!({"x": "1/0"})).is_err());
    }
}
