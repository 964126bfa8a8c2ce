//! Builds the engine's behavioral formulas as evaluable ASTs, checks them
//! over recorded traces with witness extraction, and runs the real-time
//! guarantee experiment: conforming single-cell lifespans must satisfy the
//! deadline requirement whenever the two per-iteration design budgets hold,
//! and constructed violations must be detected.

use crate::dc::eval::{EvalError, Evaluator};
use crate::dc::parser::SpecFile;
use crate::dc::syntax::{Formula, RelOp, StateAssertion, Term, Valuation};
use crate::dc::time::{rat_from_f64, rat_from_ticks, rat_to_f64, Interval, Rat};
use crate::dc::trace::TimedTrace;
use crate::dca::cell::CellConfig;
use crate::exec::{map_range, ExecMode};
use crate::instrument::{
    measure, run_instrumented_cell, CellRunPlan, EventDurations, InstrumentConfig,
    InstrumentError, TimeMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("trace contains no complete lifespan")]
    InsufficientTrace,
    #[error("trace tick width {trace}s does not match the monitor's {params}s")]
    TickMismatch { trace: f64, params: f64 },
    #[error("event durations must be deterministic to bind duration constants")]
    StochasticDurations,
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Parameters binding the monitored formulas' global variables, in ticks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorParams {
    /// Iteration period r.
    pub iteration_ticks: u64,
    /// Real-time bound b.
    pub bound_ticks: u64,
    /// Signals per lifespan m̄.
    pub signals_per_lifespan: u64,
    /// Event durations l1..l5 (must be deterministic).
    pub durations: EventDurations,
    pub tick_seconds: f64,
}

impl MonitorParams {
    /// The bound the guarantee addresses: b = (m̄ + 1) · r.
    pub fn tight_bound(iteration_ticks: u64, signals_per_lifespan: u64) -> u64 {
        (signals_per_lifespan + 1) * iteration_ticks
    }

    pub fn from_instrument(
        instrument: &InstrumentConfig,
        signals_per_lifespan: u64,
        bound_ticks: u64,
    ) -> Self {
        MonitorParams {
            iteration_ticks: instrument.iteration_ticks,
            bound_ticks,
            signals_per_lifespan,
            durations: instrument.durations.clone(),
            tick_seconds: instrument.tick_seconds,
        }
    }
}

/// The named formulas of the monitor, with a valuation binding their
/// constants.
#[derive(Debug, Clone)]
pub struct SpecBundle {
    pub formulas: Vec<(String, Formula)>,
    pub valuation: Valuation,
}

impl SpecBundle {
    pub fn formula(&self, name: &str) -> Option<&Formula> {
        self.formulas.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

fn var(name: &str) -> StateAssertion {
    StateAssertion::var(name)
}

/// Constructs {F1, F2, Des1, Des2, Req} with l1..l5, r, m_bar and b bound
/// (in real time units, ticks × tick width) from the parameters.
pub fn build_spec(params: &MonitorParams) -> Result<SpecBundle, MonitorError> {
    let Some(l) = params.durations.fixed() else {
        return Err(MonitorError::StochasticDurations);
    };
    let delta = rat_from_f64(params.tick_seconds)
        .filter(|_| params.tick_seconds > 0.0)
        .ok_or(MonitorError::TickMismatch { trace: f64::NAN, params: params.tick_seconds })?;
    let seconds = |ticks: u64| -> Rat { rat_from_ticks(ticks) * &delta };

    let mut valuation = Valuation::new();
    for (i, ticks) in l.iter().enumerate() {
        valuation.bind(format!("l{}", i + 1), seconds(*ticks));
    }
    valuation.bind("r", seconds(params.iteration_ticks));
    valuation.bind("b", seconds(params.bound_ticks));
    valuation.bind("m_bar", rat_from_ticks(params.signals_per_lifespan));

    // F1: immature phase — one signal then one antigen processed, then
    // correlation; no presentation.
    let f1 = Formula::ae(var("I"))
        .and(Formula::ae(var("E5").not()))
        .and(Formula::chop_seq([
            Formula::ae(var("E1")),
            Formula::ae(var("E2").and(var("E3").not())),
            Formula::ae(var("E1")),
            Formula::ae(var("E2").not().and(var("E3"))),
            Formula::ae(var("E4")),
        ]));
    // F2: matured phase — presentation only.
    let f2 = Formula::ae(var("M"))
        .and(Formula::ae(var("E1").or(var("E2")).or(var("E3")).or(var("E4")).not()))
        .and(Formula::ae(var("E5")));

    let sum = |names: &[&str]| -> Term {
        names[1..]
            .iter()
            .fold(Term::var(names[0]), |acc, n| acc.add(Term::var(*n)))
    };
    // Des1: wherever the cell is immature, the signal-path events fit in
    // one iteration.
    let des1 = Formula::ae(var("I"))
        .implies(Formula::cmp(RelOp::Le, sum(&["l1", "l2", "l4"]), Term::var("r")))
        .always();
    // Des2: presentation fits in one iteration.
    let des2 = Formula::ae(var("M"))
        .implies(Formula::cmp(RelOp::Le, Term::var("l5"), Term::var("r")))
        .always();
    // Req: whenever the bound covers m̄ + 1 iterations, accumulated phase
    // time stays within the bound.
    let req = Formula::cmp(
        RelOp::Ge,
        Term::var("b"),
        Term::var("m_bar").add(Term::int(1)).mul(Term::var("r")),
    )
    .implies(Formula::cmp(
        RelOp::Le,
        Term::duration(var("I")).add(Term::duration(var("M"))),
        Term::var("b"),
    ))
    .always();

    Ok(SpecBundle {
        formulas: vec![
            ("F1".into(), f1),
            ("F2".into(), f2),
            ("Des1".into(), des1),
            ("Des2".into(), des2),
            ("Req".into(), req),
        ],
        valuation,
    })
}

/// A violating subinterval together with the values that broke the check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub formula: String,
    pub begin_tick: u64,
    pub end_tick: u64,
    pub detail: String,
}

/// Outcome of checking one trace against the design budgets and the
/// deadline requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremVerdict {
    pub des1_holds: bool,
    pub des2_holds: bool,
    pub req_holds: bool,
    pub witness: Option<Witness>,
    pub bound_ticks: u64,
    pub iteration_ticks: u64,
    pub signals_per_lifespan: u64,
    pub lifespans: usize,
}

impl TheoremVerdict {
    pub fn all_hold(&self) -> bool {
        self.des1_holds && self.des2_holds && self.req_holds
    }
}

/// Explains a failed `guard ⟹ lhs ≤/≥ rhs` body on `iv` by evaluating the
/// comparison's sides.
fn explain(body: &Formula, eval: &Evaluator, val: &Valuation, iv: Interval) -> String {
    if let Formula::Implies(_, conclusion) = body {
        if let Formula::Cmp(op, lhs, rhs) = conclusion.as_ref() {
            let show = |t: &Term| match eval.term(t, val, iv) {
                Ok(v) => rat_to_f64(&v).to_string(),
                Err(e) => e.to_string(),
            };
            return format!(
                "{lhs} {} {rhs} fails: {} vs {}",
                op.symbol(),
                show(lhs),
                show(rhs)
            );
        }
    }
    format!("violates {body}")
}

/// Box-checks `body` on `iv`, recording the first violation.
fn scan(
    name: &str,
    body: &Formula,
    iv: Interval,
    eval: &Evaluator,
    val: &Valuation,
    witness: &mut Option<Witness>,
) -> Result<bool, MonitorError> {
    match eval.first_violation(body, val, iv)? {
        Some(bad) => {
            if witness.is_none() {
                *witness = Some(Witness {
                    formula: name.to_string(),
                    begin_tick: bad.begin().value(),
                    end_tick: bad.end().value(),
                    detail: explain(body, eval, val, bad),
                });
            }
            Ok(false)
        }
        None => Ok(true),
    }
}

/// Evaluates the design budgets on every subinterval and the requirement
/// both on every subinterval and sharply on each complete lifespan,
/// returning the first violation found as a witness.
pub fn check(trace: &TimedTrace, params: &MonitorParams) -> Result<TheoremVerdict, MonitorError> {
    if (trace.tick_seconds() - params.tick_seconds).abs() > f64::EPSILON {
        return Err(MonitorError::TickMismatch {
            trace: trace.tick_seconds(),
            params: params.tick_seconds,
        });
    }
    let lifespans = measure(trace)?;
    if lifespans.is_empty() {
        return Err(MonitorError::InsufficientTrace);
    }
    let bundle = build_spec(params)?;
    let val = &bundle.valuation;
    let eval = Evaluator::new(trace);
    let full = trace.full_interval();

    let body_of = |name: &str| -> &Formula {
        match bundle.formula(name) {
            Some(Formula::Always(body)) => body,
            _ => unreachable!("{name} is built as a box formula"),
        }
    };

    let mut witness: Option<Witness> = None;
    let des1_holds = scan("Des1", body_of("Des1"), full, &eval, val, &mut witness)?;
    let des2_holds = scan("Des2", body_of("Des2"), full, &eval, val, &mut witness)?;

    // Sharp per-lifespan reading first (better witnesses), then the full
    // box evaluation.
    let req_body = body_of("Req");
    let mut req_holds = true;
    for ls in &lifespans {
        if !eval.formula(req_body, val, ls.interval())? {
            req_holds = false;
            if witness.is_none() {
                witness = Some(Witness {
                    formula: "Req".into(),
                    begin_tick: ls.start,
                    end_tick: ls.end,
                    detail: explain(req_body, &eval, val, ls.interval()),
                });
            }
            break;
        }
    }
    if req_holds {
        req_holds = scan("Req", req_body, full, &eval, val, &mut witness)?;
    }

    Ok(TheoremVerdict {
        des1_holds,
        des2_holds,
        req_holds,
        witness,
        bound_ticks: params.bound_ticks,
        iteration_ticks: params.iteration_ticks,
        signals_per_lifespan: params.signals_per_lifespan,
        lifespans: lifespans.len(),
    })
}

/// Evaluates every named formula of a parsed spec file over a trace
/// interval. `overrides` rebinds declared variables.
pub fn check_spec_file(
    spec: &SpecFile,
    trace: &TimedTrace,
    overrides: &[(String, f64)],
    interval: Option<Interval>,
    only: &[String],
) -> Vec<(String, Result<bool, EvalError>)> {
    let mut valuation = spec.valuation.clone();
    for (name, value) in overrides {
        valuation.bind_f64(name, *value);
    }
    let eval = Evaluator::new(trace);
    let iv = interval.unwrap_or_else(|| trace.full_interval());
    spec.formulas
        .iter()
        .filter(|(name, _)| only.is_empty() || only.iter().any(|n| n == name))
        .map(|(name, f)| (name.clone(), eval.formula(f, &valuation, iv)))
        .collect()
}

// ---------------------------------------------------------------------------
// The guarantee experiment
// ---------------------------------------------------------------------------

/// Which design budget a falsification batch deliberately breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Signal-path events take 1.5 · r per iteration.
    Des1,
    /// Presentation takes 1.5 · r.
    Des2,
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub runs: u64,
    pub seed: u64,
    pub violation: Option<ViolationKind>,
    pub exec: ExecMode,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions { runs: 1000, seed: 0, violation: None, exec: ExecMode::default() }
    }
}

/// One simulated lifespan's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub run: u64,
    pub signals_per_lifespan: u64,
    pub iteration_ticks: u64,
    pub bound_ticks: u64,
    pub lifespan_ticks: u64,
    pub verdict: TheoremVerdict,
}

/// Aggregate over an experiment batch.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub runs: u64,
    pub violation: Option<ViolationKind>,
    pub des1_held: u64,
    pub des2_held: u64,
    pub req_held: u64,
    /// Distribution of b − (∫I + ∫M) in ticks over all runs.
    pub slack_min: i64,
    pub slack_mean: f64,
    pub slack_max: i64,
    /// Up to the first three violation witnesses.
    pub witnesses: Vec<Witness>,
}

impl ExperimentSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.violation {
            None => "conforming".to_string(),
            Some(v) => format!("violation ({v:?})"),
        };
        out.push_str(&format!("runs: {} ({mode})\n", self.runs));
        out.push_str(&format!(
            "held: Des1 {}/{}, Des2 {}/{}, Req {}/{}\n",
            self.des1_held, self.runs, self.des2_held, self.runs, self.req_held, self.runs
        ));
        if self.runs > 0 {
            out.push_str(&format!(
                "deadline slack (ticks): min {}, mean {:.2}, max {}\n",
                self.slack_min, self.slack_mean, self.slack_max
            ));
        }
        for w in &self.witnesses {
            out.push_str(&format!(
                "witness: {} on [{}, {}]: {}\n",
                w.formula, w.begin_tick, w.end_tick, w.detail
            ));
        }
        out
    }
}

/// Samples one run's shape and executes it: a single complete lifespan of
/// an instrumented cell in wall-clock mode, checked against the budgets and
/// the requirement with b = (m̄ + 1) · r.
fn run_once(seed: u64, run: u64, violation: Option<ViolationKind>) -> Result<RunOutcome, MonitorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run.wrapping_add(1));

    let m_bar: u64 = match violation {
        // Des1 violations only force a missed deadline from two signals up.
        Some(_) => rng.random_range(2..=10),
        None => rng.random_range(1..=10),
    };
    let antigens_per_iteration: u64 = rng.random_range(0..=1);

    let (l, r) = match violation {
        None => {
            let l: [u64; 5] = std::array::from_fn(|_| rng.random_range(1..=2));
            // every iteration's events must fit: signal path + antigen work
            let events = l[0] + l[1] + antigens_per_iteration * (l[0] + l[2]) + l[3];
            let r = events + rng.random_range(0..=1);
            (l, r.max(l[4]))
        }
        Some(ViolationKind::Des1) => {
            // l1 + l2 + l4 = 3k = 1.5 · r with r = 2k
            let k = rng.random_range(1..=2);
            let l3 = rng.random_range(1..=2);
            let l5 = rng.random_range(1..=(2 * k));
            ([k, k, l3, k, l5], 2 * k)
        }
        Some(ViolationKind::Des2) => {
            // l5 = 1.5 · r (r kept even); the signal path stays within budget
            let l: [u64; 4] = std::array::from_fn(|_| rng.random_range(1..=2));
            let events = l[0] + l[1] + antigens_per_iteration * (l[0] + l[2]) + l[3];
            let r = 2 * events.div_ceil(2);
            ([l[0], l[1], l[2], l[3], 3 * r / 2], r)
        }
    };

    let durations = EventDurations {
        processing: crate::instrument::DurationModel::Fixed(l[0]),
        transformation: crate::instrument::DurationModel::Fixed(l[1]),
        sampling: crate::instrument::DurationModel::Fixed(l[2]),
        correlation: crate::instrument::DurationModel::Fixed(l[3]),
        presenting: crate::instrument::DurationModel::Fixed(l[4]),
        ..EventDurations::default()
    };
    let instrument = InstrumentConfig {
        durations,
        mode: TimeMode::WallClock,
        iteration_ticks: r,
        tick_seconds: 1.0,
        violation_mode: violation.is_some(),
    };
    let threshold = 2.0 * m_bar as f64;
    let plan = CellRunPlan {
        cell: CellConfig {
            threshold_low: threshold,
            threshold_high: threshold,
            ..CellConfig::default()
        },
        instrument: instrument.clone(),
        signals: m_bar,
        antigens_per_iteration,
        signal_values: vec![1.0, 0.0, 0.0],
        antigen_type: "probe".into(),
        seed: seed ^ run,
    };
    let instrumented = run_instrumented_cell(&plan)?;
    let bound_ticks = MonitorParams::tight_bound(r, m_bar);
    let params = MonitorParams::from_instrument(&instrument, m_bar, bound_ticks);
    let verdict = check(&instrumented.trace, &params)?;
    let lifespan_ticks = instrumented.lifespans.first().map_or(0, |ls| ls.lifespan_ticks());
    Ok(RunOutcome {
        run,
        signals_per_lifespan: m_bar,
        iteration_ticks: r,
        bound_ticks,
        lifespan_ticks,
        verdict,
    })
}

/// Runs `opts.runs` independent seeded lifespans and aggregates their
/// verdicts. Conforming batches are expected to hold the requirement in
/// every run; violation batches are expected to be caught.
pub fn theorem1_experiment(opts: &ExperimentOptions) -> Result<ExperimentSummary, MonitorError> {
    let outcomes = map_range(opts.exec, opts.runs, |run| run_once(opts.seed, run, opts.violation));
    let mut des1_held = 0u64;
    let mut des2_held = 0u64;
    let mut req_held = 0u64;
    let mut slack_min = i64::MAX;
    let mut slack_max = i64::MIN;
    let mut slack_sum = 0i64;
    let mut witnesses = Vec::new();
    let runs = outcomes.len() as u64;
    for outcome in outcomes {
        let outcome = outcome?;
        des1_held += u64::from(outcome.verdict.des1_holds);
        des2_held += u64::from(outcome.verdict.des2_holds);
        req_held += u64::from(outcome.verdict.req_holds);
        let slack = outcome.bound_ticks as i64 - outcome.lifespan_ticks as i64;
        slack_min = slack_min.min(slack);
        slack_max = slack_max.max(slack);
        slack_sum += slack;
        if witnesses.len() < 3 {
            if let Some(w) = outcome.verdict.witness {
                witnesses.push(w);
            }
        }
    }
    Ok(ExperimentSummary {
        runs,
        violation: opts.violation,
        des1_held,
        des2_held,
        req_held,
        slack_min: if runs == 0 { 0 } else { slack_min },
        slack_mean: if runs == 0 { 0.0 } else { slack_sum as f64 / runs as f64 },
        slack_max: if runs == 0 { 0 } else { slack_max },
        witnesses,
    })
}
