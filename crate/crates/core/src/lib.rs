//! Streaming anomaly detection with a population of artificial dendritic
//! cells, plus a duration-calculus kernel that checks timed behavioral
//! specifications against recorded execution traces.
//!
//! The crate has two halves that meet in the middle:
//!
//! * the detection engine ([`dca`], [`analysis`], [`synth`]) classifies
//!   categorical antigens by correlating them with environmental signals,
//!   either offline or segment-by-segment while the stream is still
//!   running;
//! * the verification side ([`dc`], [`instrument`], [`monitor`],
//!   [`latency`]) records each cell's lifecycle as a piecewise-constant
//!   timed trace and evaluates interval-logic formulas over it, including
//!   the real-time guarantee for single cells and the latency model that
//!   motivates segmented analysis.
//!
//! With the default `parallel` feature, cell populations and experiment
//! batches fan out over rayon; disabling it (or switching at runtime)
//! falls back to sequential execution with identical results.

pub mod analysis;
pub mod dc;
pub mod dca;
pub mod instrument;
pub mod latency;
pub mod monitor;
pub mod synth;

mod exec;

pub use exec::ExecMode;
