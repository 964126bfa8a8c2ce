//! Shared test support: an independent oracle evaluator for duration
//! calculus over timed traces, and proptest generators for traces,
//! assertions, terms and formulas.
//!
//! The oracle deliberately avoids the library's evaluation path: it scans
//! segments linearly, integrates by per-tick summation, and evaluates the
//! derived operators through their defining expansions.

#![allow(dead_code)]

use dendrite_core::dc::syntax::{ArithOp, Formula, RelOp, StateAssertion, Term, Valuation};
use dendrite_core::dc::time::{rat_from_f64, rat_from_int, Interval, Rat, Tick};
use dendrite_core::dc::trace::{Observable, ObsValue, Schema, TimedTrace, TraceBuilder};
use num::{BigInt, Signed};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

pub mod oracle {
    use super::*;

    /// Point evaluation by linear segment scan and direct recursion.
    pub fn state(trace: &TimedTrace, p: &StateAssertion, t: u64) -> bool {
        let seg = trace
            .segments()
            .iter()
            .rev()
            .find(|s| s.start.value() <= t)
            .expect("tick below horizon");
        assertion_on(trace, p, &seg.values)
    }

    fn assertion_on(trace: &TimedTrace, p: &StateAssertion, values: &[ObsValue]) -> bool {
        match p {
            StateAssertion::Const(b) => *b,
            StateAssertion::VarEq(name, v) => {
                let idx = trace.schema().index_of(name).expect("declared observable");
                values[idx] == *v
            }
            StateAssertion::Not(q) => !assertion_on(trace, q, values),
            StateAssertion::And(a, b) => {
                assertion_on(trace, a, values) && assertion_on(trace, b, values)
            }
            StateAssertion::Or(a, b) => {
                assertion_on(trace, a, values) || assertion_on(trace, b, values)
            }
        }
    }

    /// Riemann sum over unit ticks.
    pub fn integrate_ticks(trace: &TimedTrace, p: &StateAssertion, iv: Interval) -> u64 {
        (iv.begin().value()..iv.end().value())
            .filter(|t| state(trace, p, *t))
            .count() as u64
    }

    fn delta(trace: &TimedTrace) -> Rat {
        rat_from_f64(trace.tick_seconds()).expect("finite tick width")
    }

    pub fn term(
        trace: &TimedTrace,
        th: &Term,
        val: &Valuation,
        scope: &mut Vec<(String, Rat)>,
        iv: Interval,
    ) -> Rat {
        match th {
            Term::Var(name) => scope
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.clone())
                .or_else(|| val.lookup(name).cloned())
                .expect("bound variable"),
            Term::Const(c) => c.clone(),
            Term::Length => rat_from_int((iv.end().value() - iv.begin().value()) as i64) * delta(trace),
            Term::Duration(p) => rat_from_int(integrate_ticks(trace, p, iv) as i64) * delta(trace),
            Term::Neg(t) => -term(trace, t, val, scope, iv),
            Term::Bin(op, a, b) => {
                let x = term(trace, a, val, scope, iv);
                let y = term(trace, b, val, scope, iv);
                match op {
                    ArithOp::Add => x + y,
                    ArithOp::Sub => x - y,
                    ArithOp::Mul => x * y,
                    ArithOp::Div => x / y,
                    ArithOp::Min => x.min(y),
                    ArithOp::Max => x.max(y),
                }
            }
        }
    }

    fn tolerance() -> Rat {
        Rat::new(BigInt::from(1), BigInt::from(1_000_000_000u64))
    }

    fn compare(op: RelOp, lhs: &Rat, rhs: &Rat) -> bool {
        let tol = tolerance();
        let diff = lhs - rhs;
        match op {
            RelOp::Eq => diff.abs() <= tol,
            RelOp::Ne => diff.abs() > tol,
            RelOp::Gt => diff > tol,
            RelOp::Le => diff <= tol,
            RelOp::Lt => -diff.clone() > tol,
            RelOp::Ge => -diff.clone() <= tol,
        }
    }

    /// Exhaustive recursive evaluation; chop points enumerate the tick
    /// grid and the derived operators go through their expansions.
    pub fn formula(
        trace: &TimedTrace,
        f: &Formula,
        val: &Valuation,
        scope: &mut Vec<(String, Rat)>,
        iv: Interval,
    ) -> bool {
        match f {
            Formula::True => true,
            Formula::Cmp(op, a, b) => {
                let x = term(trace, a, val, scope, iv);
                let y = term(trace, b, val, scope, iv);
                compare(*op, &x, &y)
            }
            Formula::Not(g) => !formula(trace, g, val, scope, iv),
            Formula::And(a, b) => {
                formula(trace, a, val, scope, iv) && formula(trace, b, val, scope, iv)
            }
            Formula::Or(a, b) => {
                formula(trace, a, val, scope, iv) || formula(trace, b, val, scope, iv)
            }
            Formula::Implies(a, b) => {
                !formula(trace, a, val, scope, iv) || formula(trace, b, val, scope, iv)
            }
            Formula::Chop(a, b) => (iv.begin().value()..=iv.end().value()).any(|m| {
                formula(trace, a, val, scope, Interval::new(iv.begin(), Tick(m)))
                    && formula(trace, b, val, scope, Interval::new(Tick(m), iv.end()))
            }),
            Formula::ForAll { var, domain, body } => {
                let values = domain
                    .clone()
                    .or_else(|| val.domain(var).map(|d| d.to_vec()))
                    .expect("declared domain");
                values.into_iter().all(|v| {
                    scope.push((var.clone(), v));
                    let out = formula(trace, body, val, scope, iv);
                    scope.pop();
                    out
                })
            }
            Formula::Exists { var, domain, body } => {
                let values = domain
                    .clone()
                    .or_else(|| val.domain(var).map(|d| d.to_vec()))
                    .expect("declared domain");
                values.into_iter().any(|v| {
                    scope.push((var.clone(), v));
                    let out = formula(trace, body, val, scope, iv);
                    scope.pop();
                    out
                })
            }
            // ⌈P⌉ ≡ ∫P = ℓ ∧ ℓ > 0
            Formula::AlmostEverywhere(p) => {
                let expansion = Formula::cmp(
                    RelOp::Eq,
                    Term::duration(p.clone()),
                    Term::Length,
                )
                .and(Formula::cmp(RelOp::Gt, Term::Length, Term::int(0)));
                formula(trace, &expansion, val, scope, iv)
            }
            // □F ≡ ¬(true ; ¬F ; true)
            Formula::Always(g) => {
                let expansion = Formula::True
                    .chop(g.as_ref().clone().not().chop(Formula::True))
                    .not();
                formula(trace, &expansion, val, scope, iv)
            }
            // ◇F ≡ true ; F ; true
            Formula::Eventually(g) => {
                let expansion = Formula::True.chop(g.as_ref().clone().chop(Formula::True));
                formula(trace, &expansion, val, scope, iv)
            }
        }
    }

    pub fn eval_formula(trace: &TimedTrace, f: &Formula, val: &Valuation, iv: Interval) -> bool {
        formula(trace, f, val, &mut Vec::new(), iv)
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Fixed test schema: three Boolean observables and one ternary.
pub fn test_schema() -> Schema {
    Schema::new(vec![
        Observable::boolean("A"),
        Observable::boolean("B"),
        Observable::boolean("C"),
        Observable::with_domain("X", vec![0, 1, 2]),
    ])
    .unwrap()
}

/// Random piecewise-constant trace over [`test_schema`] with the given
/// tick horizon.
pub fn arb_trace(max_ticks: u64) -> BoxedStrategy<TimedTrace> {
    (1..=max_ticks, prop::sample::select(vec![1.0f64, 0.5, 0.25]))
        .prop_flat_map(|(horizon, delta)| {
            let per_tick = prop::collection::vec(
                (any::<bool>(), any::<bool>(), any::<bool>(), 0u32..3),
                horizon as usize,
            );
            per_tick.prop_map(move |rows| {
                let mut builder = TraceBuilder::new(test_schema(), delta).unwrap();
                for (t, (a, b, c, x)) in rows.iter().enumerate() {
                    builder
                        .set_at(
                            t as u64,
                            [
                                ("A", *a as u32),
                                ("B", *b as u32),
                                ("C", *c as u32),
                                ("X", *x),
                            ],
                        )
                        .unwrap();
                }
                builder.finish(horizon).unwrap()
            })
        })
        .boxed()
}

pub fn arb_assertion(depth: u32) -> BoxedStrategy<StateAssertion> {
    let leaf = prop_oneof![
        2 => prop::sample::select(vec!["A", "B", "C"]).prop_map(StateAssertion::var),
        1 => (prop::sample::select(vec!["X"]), 0u32..3).prop_map(|(n, v)| StateAssertion::VarEq(n.into(), v)),
        1 => any::<bool>().prop_map(StateAssertion::Const),
    ];
    leaf.prop_recursive(depth, 16, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|p| p.not()),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
            (inner.clone(), inner).prop_map(|(a, b)| a.or(b)),
        ]
    })
    .boxed()
}

/// Valuation binding the term variables used by [`arb_term`].
pub fn test_valuation() -> Valuation {
    let mut val = Valuation::new();
    val.bind("u", rat_from_int(2));
    val.bind("v", Rat::new(BigInt::from(1), BigInt::from(2)));
    val.bind("w", rat_from_int(7));
    val
}

pub fn arb_term(depth: u32) -> BoxedStrategy<Term> {
    let leaf = prop_oneof![
        2 => prop::sample::select(vec!["u", "v", "w"]).prop_map(Term::var),
        2 => (0i64..6).prop_map(Term::int),
        1 => Just(Term::Length),
        2 => arb_assertion(2).prop_map(Term::duration),
    ];
    leaf.prop_recursive(depth, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(b)),
            // division only by nonzero constants, keeping evaluation total
            (inner.clone(), 1i64..5).prop_map(|(a, d)| Term::bin(ArithOp::Div, a, Term::int(d))),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Term::bin(ArithOp::Min, a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Term::bin(ArithOp::Max, a, b)),
        ]
    })
    .boxed()
}

fn arb_relop() -> impl Strategy<Value = RelOp> {
    prop::sample::select(vec![RelOp::Eq, RelOp::Ne, RelOp::Lt, RelOp::Le, RelOp::Gt, RelOp::Ge])
}

fn arb_cmp() -> BoxedStrategy<Formula> {
    (arb_relop(), arb_term(2), arb_term(2))
        .prop_map(|(op, a, b)| Formula::Cmp(op, a, b))
        .boxed()
}

/// Random formula with Boolean nesting up to `depth` and at most two
/// levels of interval operators (chop and the derived modalities), which
/// keeps exhaustive-oracle evaluation tractable.
pub fn arb_formula(depth: u32) -> BoxedStrategy<Formula> {
    // level 0: no interval operators
    let flat = |d: u32| -> BoxedStrategy<Formula> {
        let leaf = prop_oneof![
            3 => arb_cmp(),
            2 => arb_assertion(2).prop_map(Formula::ae),
            1 => Just(Formula::True),
        ];
        leaf.prop_recursive(d, 16, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|f| f.not()),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.and(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.or(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.implies(b)),
                (prop::sample::select(vec!["u", "v"]), prop::collection::vec(0i64..4, 1..3), inner.clone())
                    .prop_map(|(var, dom, body)| Formula::ForAll {
                        var: var.into(),
                        domain: Some(dom.into_iter().map(rat_from_int).collect()),
                        body: Box::new(body),
                    }),
            ]
        })
        .boxed()
    };
    // one interval-operator level over flat bodies
    let modal1 = prop_oneof![
        (flat(depth), flat(depth)).prop_map(|(a, b)| a.chop(b)),
        flat(depth).prop_map(|f| f.always()),
        flat(depth).prop_map(|f| f.eventually()),
    ]
    .boxed();
    // and a second level combining them
    prop_oneof![
        4 => flat(depth),
        3 => modal1.clone(),
        1 => (modal1.clone(), flat(depth)).prop_map(|(a, b)| a.chop(b)),
        1 => (flat(depth), modal1.clone()).prop_map(|(a, b)| a.and(b)),
        1 => modal1.prop_map(|f| f.not()),
    ]
    .boxed()
}

/// Interval within a trace's horizon.
pub fn arb_interval(horizon: u64) -> BoxedStrategy<Interval> {
    (0..=horizon)
        .prop_flat_map(move |b| (Just(b), b..=horizon))
        .prop_map(|(b, e)| Interval::new(b, e))
        .boxed()
}
