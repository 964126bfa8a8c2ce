//! Duration-calculus kernel: timed traces, formula ASTs, interval
//! evaluation, and the surface language.

pub mod eval;
pub mod parser;
pub mod syntax;
pub mod time;
pub mod trace;

pub use eval::{eval_formula, eval_state, eval_term, integrate, integrate_ticks, EvalError, EvalOptions, Evaluator};
pub use parser::{format, parse_assertion, parse_formula, parse_spec, parse_term, ParseError, SpecFile};
pub use syntax::{ArithOp, Formula, RelOp, StateAssertion, Term, Valuation};
pub use time::{Interval, Rat, Tick};
pub use trace::{Observable, ObsValue, Schema, TimedTrace, TraceBuilder, TraceError};
