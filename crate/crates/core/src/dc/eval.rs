//! Interval semantics: evaluation of state assertions, terms and formulas
//! over timed traces.
//!
//! Durations are computed exactly in tick arithmetic and scaled to real
//! time by the trace's tick width, so identities like `∫P + ∫¬P = ℓ` hold
//! with zero drift. Relational predicates compare exact rationals under a
//! configurable absolute tolerance (for constants that entered through
//! floats); the default is 1e-9 and a zero tolerance gives fully exact
//! semantics.

use super::syntax::{ArithOp, Formula, RelOp, StateAssertion, Term, Valuation};
use super::time::{rat_from_f64, rat_from_ticks, Interval, Rat, Tick};
use super::trace::{ObsValue, TimedTrace};
use num::{BigInt, Signed, Zero};
use std::cell::RefCell;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("time point {t} is outside the trace horizon {horizon}")]
    PointOutOfRange { t: Tick, horizon: Tick },
    #[error("interval {interval} extends past the trace horizon {horizon}")]
    IntervalOutOfRange { interval: Interval, horizon: Tick },
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("value {value} outside the domain of observable `{observable}`")]
    ValueOutsideDomain { observable: String, value: ObsValue },
    #[error("unbound global variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero while evaluating `{0}`")]
    DivisionByZero(String),
    #[error("quantified variable `{0}` has no declared finite domain")]
    MissingDomain(String),
}

/// Evaluation options shared by all predicates of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Absolute tolerance for relational predicates. Zero means exact.
    pub tolerance: Rat,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { tolerance: Rat::new(BigInt::from(1), BigInt::from(1_000_000_000u64)) }
    }
}

impl EvalOptions {
    pub fn exact() -> Self {
        EvalOptions { tolerance: Rat::zero() }
    }
}

/// Per-assertion prefix integral, used to answer `∫P` queries over any
/// interval in O(log segments).
struct Profile {
    /// truth[i]: value of the assertion on segment i.
    truth: Vec<bool>,
    /// cum[i]: true-ticks accumulated in segments 0..i.
    cum: Vec<u64>,
}

/// Reusable evaluator for one trace. Caches per-assertion duration
/// profiles across calls; cheap to create, cheaper to reuse.
pub struct Evaluator<'a> {
    trace: &'a TimedTrace,
    opts: EvalOptions,
    delta: Rat,
    profiles: RefCell<HashMap<StateAssertion, Profile>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(trace: &'a TimedTrace) -> Self {
        Self::with_options(trace, EvalOptions::default())
    }

    pub fn with_options(trace: &'a TimedTrace, opts: EvalOptions) -> Self {
        let delta = rat_from_f64(trace.tick_seconds())
            .expect("trace tick width is validated finite on construction");
        Evaluator { trace, opts, delta, profiles: RefCell::new(HashMap::new()) }
    }

    pub fn trace(&self) -> &'a TimedTrace {
        self.trace
    }

    /// Seconds per tick, as an exact rational.
    pub fn tick_width(&self) -> &Rat {
        &self.delta
    }

    fn check_interval(&self, iv: Interval) -> Result<(), EvalError> {
        if iv.end() > self.trace.horizon() {
            return Err(EvalError::IntervalOutOfRange { interval: iv, horizon: self.trace.horizon() });
        }
        Ok(())
    }

    /// Truth value of `p` at time point `t` (strict evaluation: schema
    /// errors surface regardless of short-circuitable operands).
    pub fn state(&self, p: &StateAssertion, t: Tick) -> Result<bool, EvalError> {
        let horizon = self.trace.horizon();
        let idx = self
            .trace
            .segment_index_at(t)
            .ok_or(EvalError::PointOutOfRange { t, horizon })?;
        self.state_on_segment(p, &self.trace.segments()[idx].values)
    }

    fn state_on_segment(&self, p: &StateAssertion, values: &[ObsValue]) -> Result<bool, EvalError> {
        match p {
            StateAssertion::Const(b) => Ok(*b),
            StateAssertion::VarEq(name, value) => {
                let idx = self
                    .trace
                    .schema()
                    .index_of(name)
                    .ok_or_else(|| EvalError::UnknownObservable(name.clone()))?;
                let obs = &self.trace.schema().observables()[idx];
                if !obs.domain.contains(value) {
                    return Err(EvalError::ValueOutsideDomain {
                        observable: name.clone(),
                        value: *value,
                    });
                }
                Ok(values[idx] == *value)
            }
            StateAssertion::Not(q) => Ok(!self.state_on_segment(q, values)?),
            StateAssertion::And(a, b) => {
                let a = self.state_on_segment(a, values)?;
                let b = self.state_on_segment(b, values)?;
                Ok(a && b)
            }
            StateAssertion::Or(a, b) => {
                let a = self.state_on_segment(a, values)?;
                let b = self.state_on_segment(b, values)?;
                Ok(a || b)
            }
        }
    }

    fn with_profile<R>(
        &self,
        p: &StateAssertion,
        f: impl FnOnce(&Profile) -> R,
    ) -> Result<R, EvalError> {
        if let Some(profile) = self.profiles.borrow().get(p) {
            return Ok(f(profile));
        }
        let segments = self.trace.segments();
        let mut truth = Vec::with_capacity(segments.len());
        let mut cum = Vec::with_capacity(segments.len() + 1);
        cum.push(0);
        for (i, seg) in segments.iter().enumerate() {
            let holds = self.state_on_segment(p, &seg.values)?;
            let len = self.trace.segment_end(i).value() - seg.start.value();
            truth.push(holds);
            cum.push(cum[i] + if holds { len } else { 0 });
        }
        let profile = Profile { truth, cum };
        let out = f(&profile);
        self.profiles.borrow_mut().insert(p.clone(), profile);
        Ok(out)
    }

    /// `∫p` over `iv` in exact ticks.
    pub fn integrate_ticks(&self, p: &StateAssertion, iv: Interval) -> Result<u64, EvalError> {
        self.check_interval(iv)?;
        self.with_profile(p, |profile| {
            let pos = |t: Tick| -> u64 {
                if t == self.trace.horizon() {
                    return *profile.cum.last().unwrap();
                }
                let i = self.trace.segment_index_at(t).expect("tick within horizon");
                let base = profile.cum[i];
                if profile.truth[i] {
                    base + (t.value() - self.trace.segments()[i].start.value())
                } else {
                    base
                }
            };
            pos(iv.end()) - pos(iv.begin())
        })
    }

    /// `∫p` over `iv` in real time units (ticks × tick width), exact.
    pub fn integrate(&self, p: &StateAssertion, iv: Interval) -> Result<Rat, EvalError> {
        Ok(rat_from_ticks(self.integrate_ticks(p, iv)?) * &self.delta)
    }

    /// Interval length `ℓ` in real time units.
    pub fn length(&self, iv: Interval) -> Rat {
        rat_from_ticks(iv.ticks()) * &self.delta
    }

    pub fn term(&self, term: &Term, val: &Valuation, iv: Interval) -> Result<Rat, EvalError> {
        self.check_interval(iv)?;
        let mut scope = Vec::new();
        self.term_inner(term, val, &mut scope, iv)
    }

    fn term_inner(
        &self,
        term: &Term,
        val: &Valuation,
        scope: &mut Vec<(String, Rat)>,
        iv: Interval,
    ) -> Result<Rat, EvalError> {
        match term {
            Term::Var(name) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.clone())
                .or_else(|| val.lookup(name).cloned())
                .ok_or_else(|| EvalError::UnboundVariable(name.clone())),
            Term::Const(c) => Ok(c.clone()),
            Term::Length => Ok(self.length(iv)),
            Term::Duration(p) => self.integrate(p, iv),
            Term::Neg(t) => Ok(-self.term_inner(t, val, scope, iv)?),
            Term::Bin(op, a, b) => {
                let x = self.term_inner(a, val, scope, iv)?;
                let y = self.term_inner(b, val, scope, iv)?;
                match op {
                    ArithOp::Add => Ok(x + y),
                    ArithOp::Sub => Ok(x - y),
                    ArithOp::Mul => Ok(x * y),
                    ArithOp::Div => {
                        if y.is_zero() {
                            Err(EvalError::DivisionByZero(term.to_string()))
                        } else {
                            Ok(x / y)
                        }
                    }
                    ArithOp::Min => Ok(x.min(y)),
                    ArithOp::Max => Ok(x.max(y)),
                }
            }
        }
    }

    fn compare(&self, op: RelOp, lhs: &Rat, rhs: &Rat) -> bool {
        let tol = &self.opts.tolerance;
        // Equality within tolerance; strict orderings must clear it.
        let diff = lhs - rhs;
        match op {
            RelOp::Eq => diff.abs() <= *tol,
            RelOp::Ne => diff.abs() > *tol,
            RelOp::Gt => diff > *tol,
            RelOp::Le => diff <= *tol,
            RelOp::Lt => -diff > *tol,
            RelOp::Ge => -diff <= *tol,
        }
    }

    pub fn formula(&self, f: &Formula, val: &Valuation, iv: Interval) -> Result<bool, EvalError> {
        self.check_interval(iv)?;
        let mut scope = Vec::new();
        self.formula_inner(f, val, &mut scope, iv)
    }

    fn formula_inner(
        &self,
        f: &Formula,
        val: &Valuation,
        scope: &mut Vec<(String, Rat)>,
        iv: Interval,
    ) -> Result<bool, EvalError> {
        match f {
            Formula::True => Ok(true),
            Formula::Cmp(op, a, b) => {
                let x = self.term_inner(a, val, scope, iv)?;
                let y = self.term_inner(b, val, scope, iv)?;
                Ok(self.compare(*op, &x, &y))
            }
            Formula::Not(f) => Ok(!self.formula_inner(f, val, scope, iv)?),
            Formula::And(a, b) => {
                Ok(self.formula_inner(a, val, scope, iv)? && self.formula_inner(b, val, scope, iv)?)
            }
            Formula::Or(a, b) => {
                Ok(self.formula_inner(a, val, scope, iv)? || self.formula_inner(b, val, scope, iv)?)
            }
            Formula::Implies(a, b) => {
                Ok(!self.formula_inner(a, val, scope, iv)? || self.formula_inner(b, val, scope, iv)?)
            }
            Formula::Chop(a, b) => {
                for m in iv.chop_points() {
                    if self.formula_inner(a, val, scope, Interval::new(iv.begin(), m))?
                        && self.formula_inner(b, val, scope, Interval::new(m, iv.end()))?
                    {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Formula::ForAll { var, domain, body } => {
                let values = self.quantifier_domain(var, domain.as_deref(), val)?;
                for v in values {
                    scope.push((var.clone(), v));
                    let holds = self.formula_inner(body, val, scope, iv);
                    scope.pop();
                    if !holds? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Formula::Exists { var, domain, body } => {
                let values = self.quantifier_domain(var, domain.as_deref(), val)?;
                for v in values {
                    scope.push((var.clone(), v));
                    let holds = self.formula_inner(body, val, scope, iv);
                    scope.pop();
                    if holds? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            // ⌈P⌉ ⇔ ∫P = ℓ ∧ ℓ > 0, decided with the same comparators as
            // the explicit expansion.
            Formula::AlmostEverywhere(p) => {
                let dur = self.integrate(p, iv)?;
                let len = self.length(iv);
                Ok(self.compare(RelOp::Eq, &dur, &len) && self.compare(RelOp::Gt, &len, &Rat::zero()))
            }
            // □F ⇔ ¬(true ; ¬F ; true): F on every tick subinterval.
            Formula::Always(f) => {
                for (x, y) in subintervals(iv) {
                    if !self.formula_inner(f, val, scope, Interval::new(x, y))? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            // ◇F ⇔ true ; F ; true.
            Formula::Eventually(f) => {
                for (x, y) in subintervals(iv) {
                    if self.formula_inner(f, val, scope, Interval::new(x, y))? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    fn quantifier_domain(
        &self,
        var: &str,
        inline: Option<&[Rat]>,
        val: &Valuation,
    ) -> Result<Vec<Rat>, EvalError> {
        inline
            .map(|d| d.to_vec())
            .or_else(|| val.domain(var).map(|d| d.to_vec()))
            .ok_or_else(|| EvalError::MissingDomain(var.to_string()))
    }

    /// First subinterval of `iv` (widest first) on which `f` is false;
    /// `None` when `f` holds on every subinterval. Used for □-style
    /// witness extraction.
    pub fn first_violation(
        &self,
        f: &Formula,
        val: &Valuation,
        iv: Interval,
    ) -> Result<Option<Interval>, EvalError> {
        self.check_interval(iv)?;
        let mut scope = Vec::new();
        for (x, y) in subintervals(iv) {
            let sub = Interval::new(x, y);
            if !self.formula_inner(f, val, &mut scope, sub)? {
                return Ok(Some(sub));
            }
        }
        Ok(None)
    }
}

/// All tick subintervals `[x, y] ⊆ iv`, widest first so violation
/// witnesses favour informative spans.
fn subintervals(iv: Interval) -> impl Iterator<Item = (Tick, Tick)> {
    let (b, e) = (iv.begin().value(), iv.end().value());
    (0..=(e - b))
        .rev()
        .flat_map(move |len| (b..=(e - len)).map(move |x| (Tick(x), Tick(x + len))))
}

// ---------------------------------------------------------------------------
// Free-function façade
// ---------------------------------------------------------------------------

/// Truth value of state assertion `p` at tick `t`.
pub fn eval_state(trace: &TimedTrace, p: &StateAssertion, t: Tick) -> Result<bool, EvalError> {
    Evaluator::new(trace).state(p, t)
}

/// `∫p` over `iv` in exact ticks.
pub fn integrate_ticks(trace: &TimedTrace, p: &StateAssertion, iv: Interval) -> Result<u64, EvalError> {
    Evaluator::new(trace).integrate_ticks(p, iv)
}

/// `∫p` over `iv` in real time units, exact.
pub fn integrate(trace: &TimedTrace, p: &StateAssertion, iv: Interval) -> Result<Rat, EvalError> {
    Evaluator::new(trace).integrate(p, iv)
}

pub fn eval_term(
    trace: &TimedTrace,
    term: &Term,
    val: &Valuation,
    iv: Interval,
) -> Result<Rat, EvalError> {
    Evaluator::new(trace).term(term, val, iv)
}

pub fn eval_formula(
    trace: &TimedTrace,
    f: &Formula,
    val: &Valuation,
    iv: Interval,
) -> Result<bool, EvalError> {
    Evaluator::new(trace).formula(f, val, iv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::trace::{Schema, TraceBuilder};
    use crate::dc::time::rat_from_int;

    /// A(0..3), B(2..5) over [0, 6).
    fn sample() -> TimedTrace {
        let schema = Schema::booleans(["A", "B"]).unwrap();
        let mut b = TraceBuilder::new(schema, 1.0).unwrap();
        b.set_at(0u64, [("A", 1u32)]).unwrap();
        b.set_at(2u64, [("B", 1u32)]).unwrap();
        b.set_at(3u64, [("A", 0u32)]).unwrap();
        b.set_at(5u64, [("B", 0u32)]).unwrap();
        b.finish(6u64).unwrap()
    }

    fn a() -> StateAssertion {
        StateAssertion::var("A")
    }

    fn b() -> StateAssertion {
        StateAssertion::var("B")
    }

    #[test]
    fn state_points() {
        let t = sample();
        assert!(eval_state(&t, &a(), Tick(0)).unwrap());
        assert!(!eval_state(&t, &b(), Tick(1)).unwrap());
        assert!(eval_state(&t, &a().and(b()), Tick(2)).unwrap());
        assert!(eval_state(&t, &StateAssertion::Const(true), Tick(5)).unwrap());
        assert!(matches!(
            eval_state(&t, &a(), Tick(6)),
            Err(EvalError::PointOutOfRange { .. })
        ));
        assert!(matches!(
            eval_state(&t, &StateAssertion::var("Z"), Tick(0)),
            Err(EvalError::UnknownObservable(_))
        ));
    }

    #[test]
    fn strict_state_eval_surfaces_errors() {
        let t = sample();
        let p = StateAssertion::Const(false).and(StateAssertion::var("Z"));
        assert!(matches!(
            eval_state(&t, &p, Tick(0)),
            Err(EvalError::UnknownObservable(_))
        ));
    }

    #[test]
    fn integrate_ticks_matches_hand_count() {
        let t = sample();
        let all = Interval::new(0u64, 6u64);
        assert_eq!(integrate_ticks(&t, &a(), all).unwrap(), 3);
        assert_eq!(integrate_ticks(&t, &b(), all).unwrap(), 3);
        assert_eq!(integrate_ticks(&t, &a().and(b()), all).unwrap(), 1);
        assert_eq!(integrate_ticks(&t, &a(), Interval::new(1u64, 4u64)).unwrap(), 2);
        assert_eq!(integrate_ticks(&t, &a(), Interval::point(4u64)).unwrap(), 0);
        assert!(matches!(
            integrate_ticks(&t, &a(), Interval::new(0u64, 7u64)),
            Err(EvalError::IntervalOutOfRange { .. })
        ));
    }

    #[test]
    fn term_arithmetic() {
        let t = sample();
        let iv = Interval::new(0u64, 6u64);
        let mut val = Valuation::new();
        val.bind("b", rat_from_int(11));
        assert_eq!(eval_term(&t, &Term::Length, &val, iv).unwrap(), rat_from_int(6));
        assert_eq!(eval_term(&t, &Term::var("b"), &val, iv).unwrap(), rat_from_int(11));
        let sum = Term::duration(a()).add(Term::duration(b()));
        assert_eq!(eval_term(&t, &sum, &val, iv).unwrap(), rat_from_int(6));
        assert!(matches!(
            eval_term(&t, &Term::var("nope"), &val, iv),
            Err(EvalError::UnboundVariable(_))
        ));
        let div = Term::bin(ArithOp::Div, Term::int(1), Term::int(0));
        assert!(matches!(
            eval_term(&t, &div, &val, iv),
            Err(EvalError::DivisionByZero(_))
        ));
        let halved = Term::bin(ArithOp::Div, Term::Length, Term::int(2));
        assert_eq!(eval_term(&t, &halved, &val, iv).unwrap(), rat_from_int(3));
    }

    #[test]
    fn tick_width_scales_real_time() {
        let schema = Schema::booleans(["A"]).unwrap();
        let mut b = TraceBuilder::new(schema, 0.25).unwrap();
        b.set_at(0u64, [("A", 1u32)]).unwrap();
        let t = b.finish(4u64).unwrap();
        let iv = Interval::new(0u64, 4u64);
        let val = Valuation::new();
        assert_eq!(eval_term(&t, &Term::Length, &val, iv).unwrap(), rat_from_int(1));
        assert_eq!(
            eval_term(&t, &Term::duration(StateAssertion::var("A")), &val, iv).unwrap(),
            rat_from_int(1)
        );
    }

    #[test]
    fn chop_finds_split_point() {
        let t = sample();
        let val = Valuation::new();
        // A a.e. then B a.e.: split at 3 (A on [0,3), B on [3,5)... B only).
        let f = Formula::ae(a()).chop(Formula::ae(b()));
        assert!(eval_formula(&t, &f, &val, Interval::new(0u64, 5u64)).unwrap());
        // No split makes A;A work past tick 3.
        let g = Formula::ae(a()).chop(Formula::ae(a()));
        assert!(!eval_formula(&t, &g, &val, Interval::new(0u64, 5u64)).unwrap());
    }

    #[test]
    fn ae_false_on_points_and_gaps() {
        let t = sample();
        let val = Valuation::new();
        assert!(!eval_formula(&t, &Formula::ae(a()), &val, Interval::point(1u64)).unwrap());
        assert!(eval_formula(&t, &Formula::ae(a()), &val, Interval::new(0u64, 3u64)).unwrap());
        assert!(!eval_formula(&t, &Formula::ae(a()), &val, Interval::new(0u64, 4u64)).unwrap());
    }

    #[test]
    fn always_equals_expansion() {
        let t = sample();
        let val = Valuation::new();
        let body = Formula::cmp(RelOp::Le, Term::duration(b()), Term::int(3));
        let direct = body.clone().always();
        let expansion = Formula::True
            .chop(body.not().chop(Formula::True))
            .not();
        for e in 0..=6u64 {
            for s in 0..=e {
                let iv = Interval::new(s, e);
                assert_eq!(
                    eval_formula(&t, &direct, &val, iv).unwrap(),
                    eval_formula(&t, &expansion, &val, iv).unwrap(),
                    "interval {iv}"
                );
            }
        }
    }

    #[test]
    fn quantifiers_use_declared_domains() {
        let t = sample();
        let mut val = Valuation::new();
        val.declare_domain("x", vec![rat_from_int(1), rat_from_int(2), rat_from_int(3)]);
        // ∀x: ℓ ≥ x on [0,6] with x ∈ {1,2,3}
        let f = Formula::ForAll {
            var: "x".into(),
            domain: None,
            body: Box::new(Formula::cmp(RelOp::Ge, Term::Length, Term::var("x"))),
        };
        assert!(eval_formula(&t, &f, &val, Interval::new(0u64, 6u64)).unwrap());
        assert!(!eval_formula(&t, &f, &val, Interval::new(0u64, 2u64)).unwrap());
        let g = Formula::ForAll {
            var: "y".into(),
            domain: None,
            body: Box::new(Formula::True),
        };
        assert!(matches!(
            eval_formula(&t, &g, &val, Interval::new(0u64, 1u64)),
            Err(EvalError::MissingDomain(_))
        ));
    }

    #[test]
    fn negation_flips() {
        let t = sample();
        let val = Valuation::new();
        let f = Formula::ae(a());
        let iv = Interval::new(0u64, 3u64);
        assert_ne!(
            eval_formula(&t, &f, &val, iv).unwrap(),
            eval_formula(&t, &f.clone().not(), &val, iv).unwrap()
        );
    }

    #[test]
    fn tolerance_guards_strict_orderings() {
        let t = sample();
        let val = Valuation::new();
        // ℓ > 0 on a point interval must stay false under any tolerance.
        let f = Formula::cmp(RelOp::Gt, Term::Length, Term::int(0));
        assert!(!eval_formula(&t, &f, &val, Interval::point(2u64)).unwrap());
        assert!(eval_formula(&t, &f, &val, Interval::new(2u64, 3u64)).unwrap());
    }
}
