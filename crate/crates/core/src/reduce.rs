//! Positive existential sentences over (N; 0, 1, +, *, =) and their
//! translation into sentences over Q with height comparisons.
//!
//! The pipeline is `eliminate_mul` (products via the consecutive-squares
//! relation B), `flatten` (one primitive constraint per atom), then
//! `compile`, which swaps each primitive for its relation gadget and
//! relativizes every variable to X_4.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rug::{Integer, Rational};
use serde_json::{json, Value};

use crate::formula::{self, check_witness, satisfied_bindings, Assignment, Formula, FormulaError, Term};
use crate::gadgets;
use crate::interp::{self, InterpError, Profile, X4Certificate};
use crate::sexp::{self, Sexp, SyntaxError};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ReduceError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("identifier `{0}` is reserved: names starting with `_` are generated")]
    ReservedName(String),
    #[error("variable `{0}` is bound twice on one branch, or bound and free")]
    Shadowed(String),
    #[error("formula has more than {0} disjunctive branches")]
    TooManyBranches(usize),
    #[error("assignment does not satisfy the formula over N")]
    Refused,
    #[error("variable `{0}` does not occur in the formula")]
    UnknownVariable(String),
    #[error("`{var}` = {value} exceeds m_max = {m_max}")]
    Range { var: String, value: String, m_max: u64 },
    #[error("witness rejected by the checker")]
    WitnessRejected,
    #[error("decoding `{var}` failed: {err}")]
    Decode { var: String, err: InterpError },
    #[error("decoded assignment is not confirmed over N")]
    NotConfirmed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NatFormula {
    Eq(Term, Term),
    B(Term, Term),
    And(Box<NatFormula>, Box<NatFormula>),
    Or(Box<NatFormula>, Box<NatFormula>),
    Exists(Vec<String>, Box<NatFormula>),
}

/// Values of natural-number variables.
pub type NatAssignment = BTreeMap<String, u64>;

impl NatFormula {
    pub fn eq(a: Term, b: Term) -> NatFormula {
        NatFormula::Eq(a, b)
    }

    pub fn b(a: Term, b: Term) -> NatFormula {
        NatFormula::B(a, b)
    }

    pub fn and(a: NatFormula, b: NatFormula) -> NatFormula {
        NatFormula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: NatFormula, b: NatFormula) -> NatFormula {
        NatFormula::Or(Box::new(a), Box::new(b))
    }

    pub fn exists(vars: Vec<String>, body: NatFormula) -> NatFormula {
        if vars.is_empty() {
            body
        } else {
            NatFormula::Exists(vars, Box::new(body))
        }
    }

    pub fn and_all(mut fs: Vec<NatFormula>) -> NatFormula {
        let mut acc = match fs.pop() {
            Some(f) => f,
            None => return NatFormula::Eq(Term::Zero, Term::Zero),
        };
        while let Some(f) = fs.pop() {
            acc = NatFormula::and(f, acc);
        }
        acc
    }

    pub fn has_mul(&self) -> bool {
        match self {
            NatFormula::Eq(a, b) | NatFormula::B(a, b) => a.has_mul() || b.has_mul(),
            NatFormula::And(a, b) | NatFormula::Or(a, b) => a.has_mul() || b.has_mul(),
            NatFormula::Exists(_, body) => body.has_mul(),
        }
    }

    pub fn has_b(&self) -> bool {
        match self {
            NatFormula::Eq(..) => false,
            NatFormula::B(..) => true,
            NatFormula::And(a, b) | NatFormula::Or(a, b) => a.has_b() || b.has_b(),
            NatFormula::Exists(_, body) => body.has_b(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            NatFormula::Eq(a, b) | NatFormula::B(a, b) => {
                out.push_str(if matches!(self, NatFormula::Eq(..)) { "(= " } else { "(B " });
                out.push_str(&a.render());
                out.push(' ');
                out.push_str(&b.render());
                out.push(')');
            }
            NatFormula::And(a, b) | NatFormula::Or(a, b) => {
                out.push_str(if matches!(self, NatFormula::And(..)) { "(and " } else { "(or " });
                a.render_into(out);
                out.push(' ');
                b.render_into(out);
                out.push(')');
            }
            NatFormula::Exists(vs, body) => {
                out.push_str("(exists (");
                out.push_str(&vs.join(" "));
                out.push_str(") ");
                body.render_into(out);
                out.push(')');
            }
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.free_into(&mut Vec::new(), &mut out);
        out
    }

    fn free_into(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            NatFormula::Eq(a, b) | NatFormula::B(a, b) => {
                let mut vs = BTreeSet::new();
                a.collect_vars(&mut vs);
                b.collect_vars(&mut vs);
                out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
            }
            NatFormula::And(a, b) | NatFormula::Or(a, b) => {
                a.free_into(bound, out);
                b.free_into(bound, out);
            }
            NatFormula::Exists(vs, body) => {
                let n = bound.len();
                bound.extend(vs.iter().cloned());
                body.free_into(bound, out);
                bound.truncate(n);
            }
        }
    }

    /// Every variable occurring anywhere, bound or free.
    pub fn all_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![self];
        while let Some(f) = stack.pop() {
            match f {
                NatFormula::Eq(a, b) | NatFormula::B(a, b) => {
                    a.collect_vars(&mut out);
                    b.collect_vars(&mut out);
                }
                NatFormula::And(a, b) | NatFormula::Or(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                NatFormula::Exists(vs, body) => {
                    out.extend(vs.iter().cloned());
                    stack.push(body);
                }
            }
        }
        out
    }

    pub fn atom_count(&self) -> usize {
        match self {
            NatFormula::Eq(..) | NatFormula::B(..) => 1,
            NatFormula::And(a, b) | NatFormula::Or(a, b) => a.atom_count() + b.atom_count(),
            NatFormula::Exists(_, body) => body.atom_count(),
        }
    }
}

fn nat_from_sexp(s: &Sexp) -> Result<NatFormula, SyntaxError> {
    let (items, pos) = match s {
        Sexp::List(items, pos) => (items, *pos),
        Sexp::Atom(_, pos) => return sexp::err(*pos, "expected a formula"),
    };
    let head = match items.first() {
        Some(Sexp::Atom(h, _)) => h.as_str(),
        _ => return sexp::err(pos, "expected a connective"),
    };
    let need = |n: usize| {
        if items.len() == n + 1 {
            Ok(())
        } else {
            sexp::err(pos, format!("`{head}` takes {n} arguments"))
        }
    };
    match head {
        "=" | "B" => {
            need(2)?;
            let (a, b) = (formula::term_from_sexp(&items[1])?, formula::term_from_sexp(&items[2])?);
            Ok(if head == "=" { NatFormula::Eq(a, b) } else { NatFormula::B(a, b) })
        }
        "and" | "or" => {
            if items.len() < 3 {
                return sexp::err(pos, format!("`{head}` needs at least two arguments"));
            }
            let mut args = items[1..].iter().map(nat_from_sexp).collect::<Result<Vec<_>, _>>()?;
            let mut acc = args.pop().expect("nonempty");
            while let Some(f) = args.pop() {
                acc = if head == "and" { NatFormula::and(f, acc) } else { NatFormula::or(f, acc) };
            }
            Ok(acc)
        }
        "exists" => {
            need(2)?;
            let vs = formula::var_list(&items[1])?;
            if vs.is_empty() {
                return sexp::err(pos, "empty variable list");
            }
            Ok(NatFormula::Exists(vs, Box::new(nat_from_sexp(&items[2])?)))
        }
        other => sexp::err(pos, format!("unknown connective `{other}`")),
    }
}

/// Parses the natural-number grammar: `(= t t)`, `(B t t)`, `and`, `or`,
/// `exists`, with terms over `0`, `1`, numerals, `+` and `*`.
pub fn parse_nat(text: &str) -> Result<NatFormula, ReduceError> {
    Ok(nat_from_sexp(&sexp::read(text)?)?)
}

/// Rejects generated (`_`-prefixed) names in user input.
pub fn check_source(f: &NatFormula) -> Result<(), ReduceError> {
    match f.all_vars().into_iter().find(|v| v.starts_with('_')) {
        Some(v) => Err(ReduceError::ReservedName(v)),
        None => Ok(()),
    }
}

fn is_derived(v: &str) -> bool {
    v.starts_with('_')
}

// ---- fresh names ----

struct Fresh {
    prefix: &'static str,
    next: usize,
    taken: BTreeSet<String>,
}

impl Fresh {
    fn new(prefix: &'static str, f: &NatFormula) -> Self {
        Fresh { prefix, next: 0, taken: f.all_vars() }
    }

    fn var(&mut self) -> String {
        loop {
            let v = format!("{}{}", self.prefix, self.next);
            self.next += 1;
            if !self.taken.contains(&v) {
                return v;
            }
        }
    }
}

// ---- eliminating multiplication ----

/// `sigma(a, u)`: `u = a^2`, as `exists s. B(u, s) and s = u + (a + a) + 1`.
fn sigma(a: &Term, u: &str, fresh: &mut Fresh) -> NatFormula {
    let s = fresh.var();
    let tu = Term::var(u);
    NatFormula::exists(
        vec![s.clone()],
        NatFormula::and(
            NatFormula::b(tu.clone(), Term::var(&s)),
            NatFormula::eq(Term::var(s), Term::add(Term::add(tu, Term::add(a.clone(), a.clone())), Term::One)),
        ),
    )
}

/// `z = a b` via `(a + b)^2 = a^2 + 2ab + b^2`.
fn mult(a: &Term, b: &Term, z: &str, fresh: &mut Fresh) -> NatFormula {
    let (u, v, w) = (fresh.var(), fresh.var(), fresh.var());
    let body = NatFormula::and_all(vec![
        sigma(a, &u, fresh),
        sigma(b, &v, fresh),
        sigma(&Term::add(a.clone(), b.clone()), &w, fresh),
        NatFormula::eq(
            Term::var(&w),
            Term::add(Term::add(Term::var(&u), Term::add(Term::var(z), Term::var(z))), Term::var(&v)),
        ),
    ]);
    NatFormula::exists(vec![u, v, w], body)
}

fn closed_value(t: &Term) -> Integer {
    t.eval(&Assignment::new()).expect("closed term").numer().clone()
}

/// Collects side conditions and fresh variables for one atom.
struct Side<'a> {
    fresh: &'a mut Fresh,
    vars: Vec<String>,
    conds: Vec<NatFormula>,
}

impl Side<'_> {
    fn fresh_eq(&mut self, t: Term) -> String {
        if let Term::Var(v) = &t {
            return v.clone();
        }
        let v = self.fresh.var();
        self.vars.push(v.clone());
        self.conds.push(NatFormula::eq(Term::var(&v), t));
        v
    }

    /// `c t` by repeated doubling of `t`.
    fn scaled(&mut self, c: &Integer, t: Term) -> Term {
        if *c == 0 {
            return Term::Zero;
        }
        if *c == 1 {
            return t;
        }
        let mut e = self.fresh_eq(t);
        let mut parts = Vec::new();
        for i in 0..c.significant_bits() {
            if i > 0 {
                e = self.fresh_eq(Term::add(Term::var(&e), Term::var(&e)));
            }
            if c.get_bit(i) {
                parts.push(Term::var(&e));
            }
        }
        Term::sum(parts)
    }

    fn constant(&mut self, c: &Integer) -> Term {
        if *c < 4 {
            return Term::sum(vec![Term::One; c.to_usize().expect("small")]);
        }
        self.scaled(c, Term::One)
    }

    fn strip(&mut self, t: &Term) -> Term {
        if !t.has_mul() {
            return t.clone();
        }
        if t.is_closed() {
            return self.constant(&closed_value(t));
        }
        match t {
            Term::Add(a, b) => Term::add(self.strip(a), self.strip(b)),
            Term::Mul(a, b) if a.is_closed() => {
                let c = closed_value(a);
                let rest = self.strip(b);
                self.scaled(&c, rest)
            }
            Term::Mul(a, b) if b.is_closed() => {
                let c = closed_value(b);
                let rest = self.strip(a);
                self.scaled(&c, rest)
            }
            Term::Mul(a, b) => {
                let (a, b) = (self.strip(a), self.strip(b));
                let z = self.fresh.var();
                self.vars.push(z.clone());
                let m = mult(&a, &b, &z, self.fresh);
                self.conds.push(m);
                Term::var(z)
            }
            Term::Var(_) | Term::Zero | Term::One => unreachable!("no product here"),
        }
    }
}

fn rewrite_atoms(f: &NatFormula, fresh: &mut Fresh, atom: &mut dyn FnMut(&NatFormula, &mut Fresh) -> NatFormula) -> NatFormula {
    match f {
        NatFormula::Eq(..) | NatFormula::B(..) => atom(f, fresh),
        NatFormula::And(a, b) => NatFormula::and(rewrite_atoms(a, fresh, atom), rewrite_atoms(b, fresh, atom)),
        NatFormula::Or(a, b) => NatFormula::or(rewrite_atoms(a, fresh, atom), rewrite_atoms(b, fresh, atom)),
        NatFormula::Exists(vs, body) => NatFormula::exists(vs.clone(), rewrite_atoms(body, fresh, atom)),
    }
}

/// An equivalent formula over (0, 1, +, B, =). Constant factors become
/// doubling chains; other products go through `mult`. Formulas without
/// products come back unchanged.
pub fn eliminate_mul(f: &NatFormula) -> NatFormula {
    if !f.has_mul() {
        return f.clone();
    }
    let mut fresh = Fresh::new("_m", f);
    rewrite_atoms(f, &mut fresh, &mut |atom, fresh| {
        if !atom.has_mul() {
            return atom.clone();
        }
        let mut side = Side { fresh, vars: Vec::new(), conds: Vec::new() };
        let rebuilt = match atom {
            NatFormula::Eq(a, b) => NatFormula::eq(side.strip(a), side.strip(b)),
            NatFormula::B(a, b) => NatFormula::b(side.strip(a), side.strip(b)),
            _ => unreachable!(),
        };
        let mut conj = side.conds;
        conj.push(rebuilt);
        NatFormula::exists(side.vars, NatFormula::and_all(conj))
    })
}

// ---- flattening ----

/// A primitive constraint between variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prim {
    Zero(String),
    One(String),
    Eq(String, String),
    /// `z = x + y`
    Add(String, String, String),
    B(String, String),
}

impl Prim {
    /// Reads back a flattened atom.
    pub fn of(atom: &NatFormula) -> Option<Prim> {
        let var = |t: &Term| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        };
        match atom {
            NatFormula::B(a, b) => Some(Prim::B(var(a)?, var(b)?)),
            NatFormula::Eq(Term::Var(x), t) => match t {
                Term::Zero => Some(Prim::Zero(x.clone())),
                Term::One => Some(Prim::One(x.clone())),
                Term::Var(y) => Some(Prim::Eq(x.clone(), y.clone())),
                Term::Add(a, b) => Some(Prim::Add(var(a)?, var(b)?, x.clone())),
                Term::Mul(..) => None,
            },
            _ => None,
        }
    }

    fn atom(&self) -> NatFormula {
        let v = Term::var;
        match self {
            Prim::Zero(x) => NatFormula::eq(v(x), Term::Zero),
            Prim::One(x) => NatFormula::eq(v(x), Term::One),
            Prim::Eq(x, y) => NatFormula::eq(v(x), v(y)),
            Prim::Add(x, y, z) => NatFormula::eq(v(z), Term::add(v(x), v(y))),
            Prim::B(x, y) => NatFormula::b(v(x), v(y)),
        }
    }
}

struct Flat<'a> {
    fresh: &'a mut Fresh,
    vars: Vec<String>,
    prims: Vec<Prim>,
    zero: Option<String>,
    one: Option<String>,
}

impl Flat<'_> {
    fn new_var(&mut self) -> String {
        let v = self.fresh.var();
        self.vars.push(v.clone());
        v
    }

    fn term(&mut self, t: &Term) -> String {
        match t {
            Term::Var(v) => v.clone(),
            Term::Zero => {
                if self.zero.is_none() {
                    let v = self.new_var();
                    self.prims.push(Prim::Zero(v.clone()));
                    self.zero = Some(v);
                }
                self.zero.clone().expect("set")
            }
            Term::One => {
                if self.one.is_none() {
                    let v = self.new_var();
                    self.prims.push(Prim::One(v.clone()));
                    self.one = Some(v);
                }
                self.one.clone().expect("set")
            }
            Term::Add(a, b) => {
                let (x, y) = (self.term(a), self.term(b));
                let z = self.new_var();
                self.prims.push(Prim::Add(x, y, z.clone()));
                z
            }
            Term::Mul(..) => panic!("flatten runs after eliminate_mul"),
        }
    }

    /// `x = t` with `x` a variable: the constraint goes on `x` directly.
    fn target(&mut self, x: &str, t: &Term) {
        match t {
            Term::Var(y) => self.prims.push(Prim::Eq(x.into(), y.clone())),
            Term::Zero => self.prims.push(Prim::Zero(x.into())),
            Term::One => self.prims.push(Prim::One(x.into())),
            Term::Add(a, b) => {
                let (p, q) = (self.term(a), self.term(b));
                self.prims.push(Prim::Add(p, q, x.into()));
            }
            Term::Mul(..) => panic!("flatten runs after eliminate_mul"),
        }
    }
}

/// Rewrites a product-free formula so every atom is a [`Prim`].
pub fn flatten(f: &NatFormula) -> NatFormula {
    assert!(!f.has_mul(), "flatten expects a product-free formula");
    let mut fresh = Fresh::new("_f", f);
    rewrite_atoms(f, &mut fresh, &mut |atom, fresh| {
        if Prim::of(atom).is_some() {
            return atom.clone();
        }
        let mut fl = Flat { fresh, vars: Vec::new(), prims: Vec::new(), zero: None, one: None };
        match atom {
            NatFormula::Eq(Term::Var(x), t) => fl.target(x, t),
            NatFormula::Eq(t, Term::Var(x)) => fl.target(x, t),
            NatFormula::Eq(a, b) => {
                let x = fl.term(a);
                fl.target(&x, b);
            }
            NatFormula::B(a, b) => {
                let (x, y) = (fl.term(a), fl.term(b));
                fl.prims.push(Prim::B(x, y));
            }
            _ => unreachable!(),
        }
        let atoms = fl.prims.iter().map(Prim::atom).collect();
        NatFormula::exists(fl.vars, NatFormula::and_all(atoms))
    })
}

// ---- the natural-number oracle ----

/// One disjunctive branch: atoms, and variables in order of appearance.
struct Branch {
    atoms: Vec<NatFormula>,
    order: Vec<String>,
}

pub const MAX_BRANCHES: usize = 1 << 14;

fn branches(f: &NatFormula) -> Result<Vec<Branch>, ReduceError> {
    fn go(
        f: &NatFormula,
        free: &BTreeSet<String>,
        acc: Vec<(Vec<NatFormula>, Vec<String>)>,
    ) -> Result<Vec<(Vec<NatFormula>, Vec<String>)>, ReduceError> {
        Ok(match f {
            NatFormula::Eq(..) | NatFormula::B(..) => acc
                .into_iter()
                .map(|(mut atoms, bound)| {
                    atoms.push(f.clone());
                    (atoms, bound)
                })
                .collect(),
            NatFormula::And(a, b) => {
                let left = go(a, free, acc)?;
                go(b, free, left)?
            }
            NatFormula::Or(a, b) => {
                let mut out = go(a, free, acc.clone())?;
                out.extend(go(b, free, acc)?);
                if out.len() > MAX_BRANCHES {
                    return Err(ReduceError::TooManyBranches(MAX_BRANCHES));
                }
                out
            }
            NatFormula::Exists(vs, body) => {
                let mut next = Vec::with_capacity(acc.len());
                for (atoms, mut bound) in acc {
                    for v in vs {
                        if free.contains(v) || bound.contains(v) {
                            return Err(ReduceError::Shadowed(v.clone()));
                        }
                        bound.push(v.clone());
                    }
                    next.push((atoms, bound));
                }
                go(body, free, next)?
            }
        })
    }
    let free = f.free_vars();
    let raw = go(f, &free, vec![(Vec::new(), Vec::new())])?;
    Ok(raw
        .into_iter()
        .map(|(atoms, bound)| {
            let mut order: Vec<String> = free.iter().cloned().collect();
            order.extend(bound);
            Branch { atoms, order }
        })
        .collect())
}

type Env = HashMap<String, u128>;

#[derive(Clone, Debug, Default)]
struct Lin {
    c: i128,
    coef: BTreeMap<String, i128>,
}

enum LinFail {
    Nonlinear,
    Overflow,
}

impl Lin {
    fn constant(c: i128) -> Lin {
        Lin { c, coef: BTreeMap::new() }
    }

    fn known(&self) -> bool {
        self.coef.is_empty()
    }

    fn plus(mut self, o: &Lin, sign: i128) -> Result<Lin, LinFail> {
        self.c = o.c.checked_mul(sign).and_then(|x| self.c.checked_add(x)).ok_or(LinFail::Overflow)?;
        for (v, a) in &o.coef {
            let e = self.coef.entry(v.clone()).or_insert(0);
            *e = a.checked_mul(sign).and_then(|x| e.checked_add(x)).ok_or(LinFail::Overflow)?;
        }
        self.coef.retain(|_, a| *a != 0);
        Ok(self)
    }

    fn scale(mut self, k: i128) -> Result<Lin, LinFail> {
        self.c = self.c.checked_mul(k).ok_or(LinFail::Overflow)?;
        for a in self.coef.values_mut() {
            *a = a.checked_mul(k).ok_or(LinFail::Overflow)?;
        }
        self.coef.retain(|_, a| *a != 0);
        Ok(self)
    }
}

fn lin(t: &Term, env: &Env) -> Result<Lin, LinFail> {
    match t {
        Term::Var(v) => match env.get(v) {
            Some(&x) => Ok(Lin::constant(i128::try_from(x).map_err(|_| LinFail::Overflow)?)),
            None => Ok(Lin { c: 0, coef: BTreeMap::from([(v.clone(), 1)]) }),
        },
        Term::Zero => Ok(Lin::constant(0)),
        Term::One => Ok(Lin::constant(1)),
        Term::Add(a, b) => lin(a, env)?.plus(&lin(b, env)?, 1),
        Term::Mul(a, b) => {
            let (la, lb) = (lin(a, env)?, lin(b, env)?);
            if la.known() {
                lb.scale(la.c)
            } else if lb.known() {
                la.scale(lb.c)
            } else {
                Err(LinFail::Nonlinear)
            }
        }
    }
}

enum Step {
    Nothing,
    Set(String, u128),
    Contradiction,
}

/// Solves `l = 0` when it has at most one unknown.
fn solve_linear(l: &Lin) -> Step {
    if l.known() {
        return if l.c == 0 { Step::Nothing } else { Step::Contradiction };
    }
    if l.coef.len() > 1 {
        return Step::Nothing;
    }
    let (v, &a) = l.coef.iter().next().expect("one unknown");
    if (-l.c) % a != 0 {
        return Step::Contradiction;
    }
    let x = (-l.c) / a;
    if x < 0 {
        return Step::Contradiction;
    }
    Step::Set(v.clone(), x as u128)
}

fn isqrt_exact(n: i128) -> Option<i128> {
    if n < 0 {
        return None;
    }
    let r = Integer::from(n).sqrt();
    (Integer::from(&r * &r) == n).then(|| r.to_i128().expect("fits"))
}

struct Solver<'a> {
    branch: &'a Branch,
    bound: u128,
}

impl Solver<'_> {
    fn lin_or(&self, t: &Term, env: &Env) -> Result<Option<Lin>, ()> {
        match lin(t, env) {
            Ok(l) => Ok(Some(l)),
            Err(LinFail::Nonlinear) => Ok(None),
            Err(LinFail::Overflow) => Err(()),
        }
    }

    /// The value of `l` forced by some equation whose unknowns match `l`'s
    /// up to sign.
    fn forced_by_equation(&self, l: &Lin, env: &Env) -> Option<i128> {
        for atom in &self.branch.atoms {
            if let NatFormula::Eq(a, b) = atom {
                let e = match (lin(a, env), lin(b, env)) {
                    (Ok(la), Ok(lb)) => match la.plus(&lb, -1) {
                        Ok(e) => e,
                        Err(_) => continue,
                    },
                    _ => continue,
                };
                for sign in [1i128, -1] {
                    let matches = e.coef.len() == l.coef.len()
                        && e.coef.iter().all(|(v, a)| l.coef.get(v).map(|b| *b * sign) == Some(*a));
                    if matches {
                        // sign * (l - l.c) + e.c = 0
                        return (-e.c).checked_mul(sign).and_then(|x| x.checked_add(l.c));
                    }
                }
            }
        }
        None
    }

    fn step(&self, atom: &NatFormula, env: &Env) -> Step {
        let pair = |a: &Term, b: &Term| -> Result<Option<(Lin, Lin)>, ()> {
            match (self.lin_or(a, env)?, self.lin_or(b, env)?) {
                (Some(x), Some(y)) => Ok(Some((x, y))),
                _ => Ok(None),
            }
        };
        match atom {
            NatFormula::Eq(a, b) => match pair(a, b) {
                Err(()) => Step::Contradiction,
                Ok(None) => Step::Nothing,
                Ok(Some((la, lb))) => match la.plus(&lb, -1) {
                    Ok(l) => solve_linear(&l),
                    Err(_) => Step::Contradiction,
                },
            },
            NatFormula::B(a, b) => {
                let (la, lb) = match pair(a, b) {
                    Err(()) => return Step::Contradiction,
                    Ok(None) => return Step::Nothing,
                    Ok(Some(p)) => p,
                };
                let with = |l: Lin, target: i128| match l.plus(&Lin::constant(target), -1) {
                    Ok(d) => solve_linear(&d),
                    Err(_) => Step::Contradiction,
                };
                if la.known() {
                    let k = match isqrt_exact(la.c) {
                        Some(k) => k,
                        None => return Step::Contradiction,
                    };
                    return match (k + 1).checked_mul(k + 1) {
                        Some(t) => with(lb, t),
                        None => Step::Contradiction,
                    };
                }
                if lb.known() {
                    return match isqrt_exact(lb.c) {
                        Some(j) if j >= 1 => with(la, (j - 1) * (j - 1)),
                        _ => Step::Contradiction,
                    };
                }
                let diff = match lb.clone().plus(&la, -1) {
                    Ok(d) => d,
                    Err(_) => return Step::Contradiction,
                };
                let gap = if diff.known() { Some(diff.c) } else { self.forced_by_equation(&diff, env) };
                match gap {
                    // (k+1)^2 - k^2 = 2k + 1
                    Some(g) if g >= 1 && g % 2 == 1 => {
                        let k = (g - 1) / 2;
                        match k.checked_mul(k) {
                            Some(t) => with(la, t),
                            None => Step::Contradiction,
                        }
                    }
                    Some(_) => Step::Contradiction,
                    None => Step::Nothing,
                }
            }
            _ => unreachable!("branches hold atoms only"),
        }
    }

    fn propagate(&self, env: &mut Env) -> bool {
        loop {
            let mut changed = false;
            for atom in &self.branch.atoms {
                match self.step(atom, env) {
                    Step::Nothing => {}
                    Step::Contradiction => return false,
                    Step::Set(v, x) => {
                        if !is_derived(&v) && x > self.bound {
                            return false;
                        }
                        env.insert(v, x);
                        changed = true;
                    }
                }
            }
            if !changed {
                return true;
            }
        }
    }

    /// Depth-first search: propagate, then branch on the first open source
    /// variable (derived ones only when propagation cannot reach them).
    /// `visit` returns false to stop.
    fn search(&self, mut env: Env, visit: &mut dyn FnMut(&Env) -> bool) -> bool {
        if !self.propagate(&mut env) {
            return true;
        }
        let open = self.branch.order.iter().filter(|v| !env.contains_key(*v));
        let next = open.clone().find(|v| !is_derived(v)).or_else(|| open.clone().next()).cloned();
        match next {
            None => visit(&env),
            Some(v) => {
                for x in 0..=self.bound {
                    let mut e = env.clone();
                    e.insert(v.clone(), x);
                    if !self.search(e, visit) {
                        return false;
                    }
                }
                true
            }
        }
    }
}

fn pins_env(pins: &NatAssignment) -> Env {
    pins.iter().map(|(k, &v)| (k.clone(), v as u128)).collect()
}

fn to_assignment(env: &Env) -> BTreeMap<String, u128> {
    env.iter().map(|(k, &v)| (k.clone(), v)).collect()
}

/// First satisfying assignment (over one branch) extending `pins`. Source
/// variables range over `0..=bound`; generated ones are solved exactly.
pub fn nat_solve(
    f: &NatFormula,
    pins: &NatAssignment,
    bound: u64,
) -> Result<Option<BTreeMap<String, u128>>, ReduceError> {
    let mut found = None;
    nat_visit(f, pins, bound, &mut |env| {
        found = Some(to_assignment(env));
        false
    })?;
    Ok(found)
}

/// All satisfying assignments, branch by branch.
pub fn nat_solutions(f: &NatFormula, pins: &NatAssignment, bound: u64) -> Result<Vec<BTreeMap<String, u128>>, ReduceError> {
    let mut out = Vec::new();
    nat_visit(f, pins, bound, &mut |env| {
        out.push(to_assignment(env));
        true
    })?;
    Ok(out)
}

fn nat_visit(
    f: &NatFormula,
    pins: &NatAssignment,
    bound: u64,
    visit: &mut dyn FnMut(&Env) -> bool,
) -> Result<(), ReduceError> {
    let all = f.all_vars();
    if let Some(v) = pins.keys().find(|v| !all.contains(*v)) {
        return Err(ReduceError::UnknownVariable(v.clone()));
    }
    for branch in branches(f)? {
        let mut env = pins_env(pins);
        env.retain(|k, _| branch.order.contains(k));
        let solver = Solver { branch: &branch, bound: bound as u128 };
        if !solver.search(env, visit) {
            break;
        }
    }
    Ok(())
}

/// Brute-force truth over N with existential variables up to `bound`.
pub fn nat_eval(f: &NatFormula, bound: u64) -> Result<bool, ReduceError> {
    Ok(nat_solve(f, &NatAssignment::new(), bound)?.is_some())
}

/// Truth with some variables pinned.
pub fn nat_check(f: &NatFormula, pins: &NatAssignment, bound: u64) -> Result<bool, ReduceError> {
    Ok(nat_solve(f, pins, bound)?.is_some())
}

// ---- compiling ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GadgetKind {
    X4,
    Zero,
    One,
    Eq,
    Add,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GadgetUse {
    pub kind: GadgetKind,
    pub prefix: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CompileOutput {
    pub source: NatFormula,
    /// The flattened product-free formula the sentence mirrors.
    pub flat: NatFormula,
    pub sentence: Formula,
    /// Natural-number variable to rational variable (the names agree).
    pub var_map: BTreeMap<String, String>,
    pub inventory: Vec<GadgetUse>,
}

struct Compiler<'a> {
    profile: &'a Profile,
    inventory: Vec<GadgetUse>,
}

impl Compiler<'_> {
    fn prefix(&self, kind: GadgetKind) -> String {
        let tag = if kind == GadgetKind::X4 { "_x" } else { "_g" };
        format!("{tag}{}", self.inventory.len())
    }

    fn record(&mut self, kind: GadgetKind, args: Vec<String>) -> String {
        let prefix = self.prefix(kind);
        self.inventory.push(GadgetUse { kind, prefix: prefix.clone(), args });
        prefix
    }

    fn member(&mut self, v: &str) -> Formula {
        let p = self.record(GadgetKind::X4, vec![v.to_string()]);
        interp::xn_formula(Term::var(v), &p, 4, self.profile.n)
    }

    fn atom(&mut self, prim: Prim) -> Formula {
        let v = Term::var;
        match prim {
            Prim::Zero(x) => {
                let p = self.record(GadgetKind::Zero, vec![x.clone()]);
                interp::zero_formula(v(&x), &p)
            }
            Prim::One(x) => {
                let p = self.record(GadgetKind::One, vec![x.clone()]);
                interp::one_formula(v(&x), &p, self.profile)
            }
            Prim::Eq(x, y) => {
                let p = self.record(GadgetKind::Eq, vec![x.clone(), y.clone()]);
                interp::eq_formula(v(&x), v(&y), &p)
            }
            Prim::Add(x, y, z) => {
                let p = self.record(GadgetKind::Add, vec![x.clone(), y.clone(), z.clone()]);
                interp::add_formula(v(&x), v(&y), v(&z), &p)
            }
            Prim::B(x, y) => {
                let p = self.record(GadgetKind::B, vec![x.clone(), y.clone()]);
                interp::b_formula(v(&x), v(&y), &p, self.profile)
            }
        }
    }

    fn formula(&mut self, f: &NatFormula) -> Formula {
        match f {
            NatFormula::Eq(..) | NatFormula::B(..) => {
                let prim = Prim::of(f).expect("flattened atom");
                self.atom(prim)
            }
            NatFormula::And(a, b) => {
                let a = self.formula(a);
                Formula::and(a, self.formula(b))
            }
            NatFormula::Or(a, b) => {
                let a = self.formula(a);
                Formula::or(a, self.formula(b))
            }
            NatFormula::Exists(vs, body) => {
                let mut conj: Vec<Formula> = vs.iter().map(|v| self.member(v)).collect();
                conj.push(self.formula(body));
                Formula::exists(vs.clone(), Formula::and_all(conj))
            }
        }
    }
}

/// Translates `f` into a sentence over Q whose witnesses correspond to
/// satisfying assignments over N.
pub fn compile(f: &NatFormula, profile: &Profile) -> Result<CompileOutput, ReduceError> {
    check_source(f)?;
    branches(f)?;
    let flat = flatten(&eliminate_mul(f));
    let mut c = Compiler { profile, inventory: Vec::new() };
    let free: Vec<String> = flat.free_vars().into_iter().collect();
    let mut conj: Vec<Formula> = free.iter().map(|v| c.member(v)).collect();
    conj.push(c.formula(&flat));
    let sentence = Formula::and_all(conj);
    let var_map = flat.all_vars().into_iter().map(|v| (v.clone(), v)).collect();
    Ok(CompileOutput { source: f.clone(), flat, sentence, var_map, inventory: c.inventory })
}

pub fn compile_output_to_json(out: &CompileOutput) -> Value {
    let kind = |k: GadgetKind| format!("{k:?}");
    json!({
        "source": out.source.render(),
        "sentence": out.sentence.render(),
        "var_map": out.var_map,
        "inventory": out.inventory.iter().map(|g| json!({
            "kind": kind(g.kind),
            "prefix": g.prefix,
            "args": g.args,
        })).collect::<Vec<_>>(),
    })
}

// ---- witness translation ----

/// A witness for `compile(f)` from a satisfying assignment of (some of)
/// `f`'s variables; the rest are found by the oracle with bound `m_max`.
pub fn witness_up(f: &NatFormula, a: &NatAssignment, profile: &Profile) -> Result<Assignment, ReduceError> {
    let out = compile(f, profile)?;
    witness_up_compiled(&out, a, profile)
}

pub fn witness_up_compiled(out: &CompileOutput, a: &NatAssignment, profile: &Profile) -> Result<Assignment, ReduceError> {
    let source_vars = out.source.all_vars();
    if let Some(v) = a.keys().find(|v| !source_vars.contains(*v)) {
        return Err(ReduceError::UnknownVariable(v.clone()));
    }
    let values = nat_solve(&out.flat, a, profile.m_max)?.ok_or(ReduceError::Refused)?;
    let mut small = BTreeMap::new();
    for (v, &x) in &values {
        if x > profile.m_max as u128 {
            return Err(ReduceError::Range { var: v.clone(), value: x.to_string(), m_max: profile.m_max });
        }
        small.insert(v.clone(), x as u64);
    }
    let mut certs: BTreeMap<u64, X4Certificate> = BTreeMap::new();
    let mut w = Assignment::new();
    for (v, &m) in &small {
        if !certs.contains_key(&m) {
            certs.insert(m, interp::encode(m, profile)?);
        }
        w.insert(v.clone(), certs[&m].q.clone());
    }
    let q = |v: &String| w.get(v).cloned();
    let mut fills: Vec<(GadgetUse, Vec<Rational>)> = Vec::new();
    for g in &out.inventory {
        let args: Option<Vec<Rational>> = g.args.iter().map(q).collect();
        if let Some(args) = args {
            fills.push((g.clone(), args));
        }
    }
    for (g, args) in fills {
        let m: Vec<u64> = g.args.iter().map(|v| small[v]).collect();
        let p = g.prefix.as_str();
        match g.kind {
            GadgetKind::X4 => interp::fill_xn(&certs[&m[0]].k, p, profile.n, &mut w),
            GadgetKind::Zero if m[0] == 0 => interp::fill_zero(&args[0], p, &mut w, true)?,
            GadgetKind::One if m[0] == 1 => interp::fill_one(&args[0], p, profile, &mut w, true)?,
            GadgetKind::Eq if m[0] == m[1] => interp::fill_eq(&args[0], &args[1], p, &mut w, true)?,
            GadgetKind::Add if m[0] + m[1] == m[2] => interp::fill_add(&args[0], &args[1], &args[2], p, &mut w, true)?,
            GadgetKind::B => {
                let k = Integer::from(m[0]).sqrt().to_u64().expect("fits");
                if k * k == m[0] && (k + 1) * (k + 1) == m[1] {
                    interp::fill_b(k, &args[0], &args[1], p, profile, &mut w, true)?;
                }
            }
            _ => {}
        }
    }
    gadgets::zero_fill(&out.sentence, &mut w);
    Ok(w)
}

/// Decodes an accepted witness back to natural numbers for the source
/// variables on a satisfied path, and confirms the result with the oracle.
pub fn witness_down(w: &Assignment, out: &CompileOutput, profile: &Profile) -> Result<NatAssignment, ReduceError> {
    if !check_witness(&out.sentence, w)? {
        return Err(ReduceError::WitnessRejected);
    }
    let mut live: BTreeSet<String> = satisfied_bindings(&out.sentence, w)?.ok_or(ReduceError::WitnessRejected)?.into_iter().collect();
    live.extend(out.sentence.free_vars());
    let mut a = NatAssignment::new();
    for v in out.var_map.keys().filter(|v| live.contains(*v) && !is_derived(v)) {
        let m = interp::decode(&w[&out.var_map[v]], profile).map_err(|err| ReduceError::Decode { var: v.clone(), err })?;
        a.insert(v.clone(), m);
    }
    let bound = a.values().copied().max().unwrap_or(0).max(profile.m_max);
    if !nat_check(&out.source, &a, bound)? {
        return Err(ReduceError::NotConfirmed);
    }
    Ok(a)
}

pub fn nat_assignment_to_json(a: &NatAssignment) -> Value {
    json!(a)
}

pub fn nat_assignment_from_json(v: &Value) -> Result<NatAssignment, ReduceError> {
    let obj = v.as_object().ok_or_else(|| FormulaError::Witness("expected a JSON object".into()))?;
    obj.iter()
        .map(|(k, x)| {
            let n = match x {
                Value::Number(n) => n.as_u64(),
                Value::String(s) => s.parse().ok(),
                _ => None,
            };
            n.map(|n| (k.clone(), n))
                .ok_or_else(|| FormulaError::Witness(format!("`{k}` must be a natural number")).into())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat(s: &str) -> NatFormula {
        parse_nat(s).unwrap()
    }

    fn pins(xs: &[(&str, u64)]) -> NatAssignment {
        xs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn parse_and_render() {
        for s in [
            "(exists (x) (= (+ x x) (+ 1 1)))",
            "(B (+ 1 1 1 1) (+ 1 1 1 1 1 1 1 1 1))",
            "(or (= x 0) (exists (y z) (and (= (* y z) x) (B y z))))",
        ] {
            let f = nat(s);
            assert_eq!(parse_nat(&f.render()).unwrap(), f);
        }
        assert!(parse_nat("(H 1 1 (x) (y))").is_err());
        assert!(check_source(&nat("(= _a 0)")).is_err());
    }

    #[test]
    fn oracle_basics() {
        assert!(nat_eval(&nat("(exists (x) (= (+ x x) (+ 1 1)))"), 5).unwrap());
        assert!(!nat_eval(&nat("(= 1 0)"), 5).unwrap());
        assert!(nat_eval(&nat("(B 4 9)"), 0).unwrap());
        assert!(!nat_eval(&nat("(B 4 10)"), 0).unwrap());
        assert!(!nat_eval(&nat("(exists (x) (= (+ x 1) 0))"), 10).unwrap());
        assert!(nat_eval(&nat("(exists (x) (or (= x 7) (= (+ x 1) 3)))"), 3).unwrap());
        assert!(matches!(nat_eval(&nat("(exists (x) (exists (x) (= x 0)))"), 3), Err(ReduceError::Shadowed(_))));
    }

    #[test]
    fn sigma_and_mult_instances() {
        let f = eliminate_mul(&nat("(= (* x y) z)"));
        assert!(!f.has_mul());
        assert!(nat_check(&f, &pins(&[("x", 2), ("y", 3), ("z", 6)]), 6).unwrap());
        assert!(!nat_check(&f, &pins(&[("x", 2), ("y", 3), ("z", 7)]), 7).unwrap());
        let sols = nat_solutions(&f, &pins(&[("x", 2), ("y", 3)]), 10).unwrap();
        assert_eq!(sols.len(), 1);
        assert_eq!(sols[0]["z"], 6);
        assert!(sols[0].values().any(|&v| v == 25));
        let mut fresh = Fresh::new("_s", &nat("(= a a)"));
        let s = sigma(&Term::var("a"), "u", &mut fresh);
        assert!(nat_check(&s, &pins(&[("a", 3), ("u", 9)]), 9).unwrap());
        assert!(!nat_check(&s, &pins(&[("a", 3), ("u", 8)]), 9).unwrap());
    }

    #[test]
    fn product_free_input_is_unchanged() {
        let f = nat("(exists (x) (= (+ x x) (+ 1 1 1 1)))");
        assert_eq!(eliminate_mul(&f), f);
    }

    #[test]
    fn closed_products_and_constant_factors() {
        for (s, bound) in [
            ("(exists (x) (= (* (+ 1 1 1) x) (* (+ 1 1) (+ 1 1 1))))", 4),
            ("(exists (x) (= x 12))", 12),
            ("(exists (x) (= (* x (+ 1 1 1 1 1)) 10))", 2),
        ] {
            let f = nat(s);
            let g = eliminate_mul(&f);
            assert!(!g.has_mul(), "{s}");
            assert!(!g.has_b(), "{s}");
            for b in 0..=bound {
                assert_eq!(nat_eval(&f, b).unwrap(), nat_eval(&g, b).unwrap(), "{s} at {b}");
            }
        }
    }

    #[test]
    fn flattening_yields_primitives() {
        let f = flatten(&eliminate_mul(&nat("(exists (x) (= (* x x) (+ 1 1 1 1)))")));
        fn walk(f: &NatFormula) {
            match f {
                NatFormula::Eq(..) | NatFormula::B(..) => assert!(Prim::of(f).is_some(), "{}", f.render()),
                NatFormula::And(a, b) | NatFormula::Or(a, b) => {
                    walk(a);
                    walk(b);
                }
                NatFormula::Exists(_, b) => walk(b),
            }
        }
        walk(&f);
        assert!(nat_check(&f, &pins(&[("x", 2)]), 4).unwrap());
        assert!(!nat_check(&f, &pins(&[("x", 3)]), 4).unwrap());
    }
}
