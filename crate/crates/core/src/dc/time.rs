//! Discrete time axis for trace checking.
//!
//! All change points, interval endpoints and chop points live on a grid of
//! integer ticks. A configurable tick width (`tick_seconds` on the trace)
//! converts tick counts into real time.

use num::rational::BigRational;
use num::{BigInt, FromPrimitive};
use serde::{Deserialize, Serialize};
use std::fmt;

/// A point on the tick grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub const ZERO: Tick = Tick(0);

    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Tick {
    fn from(t: u64) -> Self {
        Tick(t)
    }
}

/// A closed interval `[b, e]` on the tick grid. Point intervals (`b == e`)
/// are legal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    b: Tick,
    e: Tick,
}

impl Interval {
    /// Builds `[b, e]`. Panics if `b > e`; use [`Interval::try_new`] for
    /// unvalidated input.
    pub fn new(b: impl Into<Tick>, e: impl Into<Tick>) -> Self {
        let (b, e) = (b.into(), e.into());
        assert!(b <= e, "interval endpoints out of order: [{b}, {e}]");
        Interval { b, e }
    }

    pub fn try_new(b: impl Into<Tick>, e: impl Into<Tick>) -> Option<Self> {
        let (b, e) = (b.into(), e.into());
        (b <= e).then_some(Interval { b, e })
    }

    pub fn point(t: impl Into<Tick>) -> Self {
        let t = t.into();
        Interval { b: t, e: t }
    }

    pub fn begin(self) -> Tick {
        self.b
    }

    pub fn end(self) -> Tick {
        self.e
    }

    /// Interval length in ticks.
    pub fn ticks(self) -> u64 {
        self.e.0 - self.b.0
    }

    pub fn is_point(self) -> bool {
        self.b == self.e
    }

    pub fn contains(self, other: Interval) -> bool {
        self.b <= other.b && other.e <= self.e
    }

    /// Tick points usable to chop this interval, `b ..= e`.
    pub fn chop_points(self) -> impl Iterator<Item = Tick> {
        (self.b.0..=self.e.0).map(Tick)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.b, self.e)
    }
}

/// Exact rational used for all duration and term arithmetic.
pub type Rat = BigRational;

/// Exact rational from an integer tick count.
pub fn rat_from_ticks(ticks: u64) -> Rat {
    Rat::from_integer(BigInt::from(ticks))
}

pub fn rat_from_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Exact rational value of a finite float (every finite f64 is a dyadic
/// rational). Returns `None` for NaN or infinities.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_f64(x)
}

/// Lossy conversion back to f64 for display and JSON output.
pub fn rat_to_f64(x: &Rat) -> f64 {
    use num::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}
