//! Abstract syntax of duration-calculus state assertions, terms and
//! formulas.
//!
//! The printer for the concrete surface language lives in
//! [`crate::dc::parser`]; `Display` on these types delegates to it.

use super::time::Rat;
use std::collections::BTreeMap;
use std::fmt;

/// State assertion `P`: a Boolean/finite-domain condition on observables,
/// evaluated at single time points.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StateAssertion {
    /// Constant 0 (false) or 1 (true).
    Const(bool),
    /// `X = d` for an observable `X` and a value `d` of its domain.
    VarEq(String, u32),
    Not(Box<StateAssertion>),
    And(Box<StateAssertion>, Box<StateAssertion>),
    Or(Box<StateAssertion>, Box<StateAssertion>),
}

impl StateAssertion {
    /// Boolean observable shorthand: `var(X)` is `X = 1`.
    pub fn var(name: impl Into<String>) -> Self {
        StateAssertion::VarEq(name.into(), 1)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        StateAssertion::Not(Box::new(self))
    }

    pub fn and(self, other: StateAssertion) -> Self {
        StateAssertion::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: StateAssertion) -> Self {
        StateAssertion::Or(Box::new(self), Box::new(other))
    }

    /// Derived `P ⟹ Q`, expanded to `¬P ∨ Q`.
    pub fn implies(self, other: StateAssertion) -> Self {
        self.not().or(other)
    }

    /// Names of all observables referenced by this assertion.
    pub fn observables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_observables(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_observables<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            StateAssertion::Const(_) => {}
            StateAssertion::VarEq(name, _) => out.push(name),
            StateAssertion::Not(p) => p.collect_observables(out),
            StateAssertion::And(p, q) | StateAssertion::Or(p, q) => {
                p.collect_observables(out);
                q.collect_observables(out);
            }
        }
    }
}

/// Binary arithmetic operators available in terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
            ArithOp::Min => "min",
            ArithOp::Max => "max",
        }
    }
}

/// Term `θ`: an interval-dependent real-valued expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    /// Global variable, bound by the valuation.
    Var(String),
    /// Literal rational constant.
    Const(Rat),
    /// Interval length `ℓ`, in real time units.
    Length,
    /// Duration `∫P`: accumulated time where `P` holds, in real time units.
    Duration(StateAssertion),
    /// Unary negation.
    Neg(Box<Term>),
    Bin(ArithOp, Box<Term>, Box<Term>),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn int(n: i64) -> Self {
        Term::Const(super::time::rat_from_int(n))
    }

    pub fn duration(p: StateAssertion) -> Self {
        Term::Duration(p)
    }

    pub fn bin(op: ArithOp, lhs: Term, rhs: Term) -> Self {
        Term::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Term) -> Self {
        Term::bin(ArithOp::Add, self, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Term) -> Self {
        Term::bin(ArithOp::Sub, self, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Term) -> Self {
        Term::bin(ArithOp::Mul, self, rhs)
    }
}

/// Relational operators usable in atomic formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Eq => "=",
            RelOp::Ne => "!=",
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
        }
    }
}

/// Formula `F`, interpreted over (trace, valuation, interval).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    True,
    /// Relation between two terms.
    Cmp(RelOp, Term, Term),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    /// `F₁ ; F₂`: some tick point splits the interval such that `F₁` holds
    /// on the left part and `F₂` on the right part.
    Chop(Box<Formula>, Box<Formula>),
    /// Quantification over an explicit finite domain; when `domain` is
    /// `None` the valuation must declare one for the variable.
    ForAll { var: String, domain: Option<Vec<Rat>>, body: Box<Formula> },
    Exists { var: String, domain: Option<Vec<Rat>>, body: Box<Formula> },
    /// `⌈P⌉`: `P` holds almost everywhere on a non-point interval,
    /// equivalent to `∫P = ℓ ∧ ℓ > 0`.
    AlmostEverywhere(StateAssertion),
    /// `□F`: `F` holds on every subinterval, equivalent to
    /// `¬(true ; ¬F ; true)`.
    Always(Box<Formula>),
    /// `◇F`: `F` holds on some subinterval, `true ; F ; true`.
    Eventually(Box<Formula>),
}

impl Formula {
    pub fn cmp(op: RelOp, lhs: Term, rhs: Term) -> Self {
        Formula::Cmp(op, lhs, rhs)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Formula::Not(Box::new(self))
    }

    pub fn and(self, other: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Formula) -> Self {
        Formula::Or(Box::new(self), Box::new(other))
    }

    pub fn implies(self, other: Formula) -> Self {
        Formula::Implies(Box::new(self), Box::new(other))
    }

    pub fn chop(self, other: Formula) -> Self {
        Formula::Chop(Box::new(self), Box::new(other))
    }

    pub fn always(self) -> Self {
        Formula::Always(Box::new(self))
    }

    pub fn eventually(self) -> Self {
        Formula::Eventually(Box::new(self))
    }

    pub fn ae(p: StateAssertion) -> Self {
        Formula::AlmostEverywhere(p)
    }

    /// Derived point formula `ℓ = 0`.
    pub fn point() -> Self {
        Formula::Cmp(RelOp::Eq, Term::Length, Term::int(0))
    }

    /// Chops `parts` together right-associatively. Panics on empty input.
    pub fn chop_seq<I: IntoIterator<Item = Formula>>(parts: I) -> Formula {
        let mut parts: Vec<Formula> = parts.into_iter().collect();
        let mut acc = parts.pop().expect("chop_seq needs at least one formula");
        while let Some(f) = parts.pop() {
            acc = f.chop(acc);
        }
        acc
    }

    /// Names of all global variables referenced by this formula.
    pub fn variables(&self) -> Vec<&str> {
        fn term_vars<'a>(t: &'a Term, out: &mut Vec<&'a str>) {
            match t {
                Term::Var(name) => out.push(name),
                Term::Const(_) | Term::Length | Term::Duration(_) => {}
                Term::Neg(t) => term_vars(t, out),
                Term::Bin(_, a, b) => {
                    term_vars(a, out);
                    term_vars(b, out);
                }
            }
        }
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a str>) {
            match f {
                Formula::True | Formula::AlmostEverywhere(_) => {}
                Formula::Cmp(_, a, b) => {
                    term_vars(a, out);
                    term_vars(b, out);
                }
                Formula::Not(f) | Formula::Always(f) | Formula::Eventually(f) => walk(f, out),
                Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Chop(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Formula::ForAll { body, .. } | Formula::Exists { body, .. } => walk(body, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Names of all observables referenced by this formula.
    pub fn observables(&self) -> Vec<&str> {
        fn term_obs<'a>(t: &'a Term, out: &mut Vec<&'a str>) {
            match t {
                Term::Duration(p) => p.collect_into(out),
                Term::Neg(t) => term_obs(t, out),
                Term::Bin(_, a, b) => {
                    term_obs(a, out);
                    term_obs(b, out);
                }
                _ => {}
            }
        }
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a str>) {
            match f {
                Formula::True => {}
                Formula::AlmostEverywhere(p) => p.collect_into(out),
                Formula::Cmp(_, a, b) => {
                    term_obs(a, out);
                    term_obs(b, out);
                }
                Formula::Not(f) | Formula::Always(f) | Formula::Eventually(f) => walk(f, out),
                Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Chop(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Formula::ForAll { body, .. } | Formula::Exists { body, .. } => walk(body, out),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl StateAssertion {
    fn collect_into<'a>(&'a self, out: &mut Vec<&'a str>) {
        self.collect_observables(out)
    }
}

/// Binding of global variables to exact reals, plus declared finite
/// quantifier domains.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Valuation {
    bindings: BTreeMap<String, Rat>,
    quantifier_domains: BTreeMap<String, Vec<Rat>>,
}

impl Valuation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Rat) -> &mut Self {
        self.bindings.insert(name.into(), value);
        self
    }

    /// Binds the exact rational value of a finite float.
    pub fn bind_f64(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        let rat = super::time::rat_from_f64(value)
            .unwrap_or_else(|| panic!("cannot bind non-finite value {value}"));
        self.bind(name, rat)
    }

    pub fn declare_domain(&mut self, name: impl Into<String>, domain: Vec<Rat>) -> &mut Self {
        self.quantifier_domains.insert(name.into(), domain);
        self
    }

    pub fn lookup(&self, name: &str) -> Option<&Rat> {
        self.bindings.get(name)
    }

    pub fn domain(&self, name: &str) -> Option<&[Rat]> {
        self.quantifier_domains.get(name).map(|d| d.as_slice())
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, &Rat)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl fmt::Display for StateAssertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::parser::format_assertion(self))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::parser::format_term(self))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::parser::format(self))
    }
}
