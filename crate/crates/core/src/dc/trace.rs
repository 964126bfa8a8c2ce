//! Finite-variability interpretations: piecewise-constant timed traces over
//! a schema of named observables.

use super::time::Tick;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;
use thiserror::Error;

/// Value taken by an observable. Boolean observables use `{0, 1}`.
pub type ObsValue = u32;

/// A named observable together with its finite value domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observable {
    pub name: String,
    pub domain: Vec<ObsValue>,
}

impl Observable {
    /// Boolean observable over `{0, 1}`.
    pub fn boolean(name: impl Into<String>) -> Self {
        Observable { name: name.into(), domain: vec![0, 1] }
    }

    pub fn with_domain(name: impl Into<String>, domain: Vec<ObsValue>) -> Self {
        Observable { name: name.into(), domain }
    }

    pub fn is_boolean(&self) -> bool {
        self.domain == [0, 1]
    }
}

/// Ordered set of observables; names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schema {
    observables: Vec<Observable>,
}

impl Schema {
    pub fn new(observables: Vec<Observable>) -> Result<Self, TraceError> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &observables {
            if o.domain.is_empty() {
                return Err(TraceError::EmptyDomain(o.name.clone()));
            }
            if !seen.insert(o.name.as_str()) {
                return Err(TraceError::DuplicateObservable(o.name.clone()));
            }
        }
        Ok(Schema { observables })
    }

    /// Schema of Boolean observables.
    pub fn booleans<I, S>(names: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(names.into_iter().map(|n| Observable::boolean(n)).collect())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.observables.iter().position(|o| o.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Observable> {
        self.observables.iter().find(|o| o.name == name)
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }
}

/// One maximal span of constant valuation, right-open in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: Tick,
    /// One value per schema observable, by index.
    pub values: Vec<ObsValue>,
}

/// A piecewise-constant interpretation of the schema over `[0, horizon)`.
///
/// Segments are right-open: the segment starting at `s` gives the valuation
/// on `[s, next_start)`. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrace {
    schema: Arc<Schema>,
    tick_seconds: f64,
    horizon: Tick,
    segments: Vec<Segment>,
}

impl TimedTrace {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> Arc<Schema> {
        Arc::clone(&self.schema)
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_seconds
    }

    pub fn horizon(&self) -> Tick {
        self.horizon
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Full interval `[0, horizon]`.
    pub fn full_interval(&self) -> super::time::Interval {
        super::time::Interval::new(Tick::ZERO, self.horizon)
    }

    /// Index of the segment whose span contains tick `t`.
    pub fn segment_index_at(&self, t: Tick) -> Option<usize> {
        if t >= self.horizon {
            return None;
        }
        match self.segments.binary_search_by(|s| s.start.cmp(&t)) {
            Ok(i) => Some(i),
            Err(0) => None, // unreachable: first segment starts at 0
            Err(i) => Some(i - 1),
        }
    }

    /// Value of observable `idx` during the segment containing `t`.
    pub fn value_at(&self, idx: usize, t: Tick) -> Option<ObsValue> {
        self.segment_index_at(t).map(|i| self.segments[i].values[idx])
    }

    /// End tick of segment `i` (start of the next segment, or the horizon).
    pub fn segment_end(&self, i: usize) -> Tick {
        self.segments.get(i + 1).map_or(self.horizon, |s| s.start)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("duplicate observable `{0}` in schema")]
    DuplicateObservable(String),
    #[error("observable `{0}` has an empty domain")]
    EmptyDomain(String),
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("value {value} outside the domain of `{observable}`")]
    ValueOutsideDomain { observable: String, value: ObsValue },
    #[error("change point {at} is not after the previous change point {prev}")]
    NonMonotonicChangePoint { at: Tick, prev: Tick },
    #[error("trace has no valuation at tick 0")]
    MissingInitialValuation,
    #[error("horizon {horizon} precedes the last change point {last}")]
    HorizonBeforeLastChange { horizon: Tick, last: Tick },
    #[error("tick_seconds must be a positive finite number, got {0}")]
    BadTickSeconds(f64),
}

/// Incremental constructor for [`TimedTrace`]. Change points must be pushed
/// in strictly increasing tick order; unset observables persist.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    schema: Arc<Schema>,
    tick_seconds: f64,
    segments: Vec<Segment>,
    current: Vec<ObsValue>,
    last_change: Option<Tick>,
}

impl TraceBuilder {
    pub fn new(schema: Schema, tick_seconds: f64) -> Result<Self, TraceError> {
        if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
            return Err(TraceError::BadTickSeconds(tick_seconds));
        }
        let n = schema.len();
        Ok(TraceBuilder {
            schema: Arc::new(schema),
            tick_seconds,
            segments: Vec::new(),
            current: vec![0; n],
            last_change: None,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Applies the named updates at tick `t`; all other observables keep
    /// their previous value (0 before the first change point).
    pub fn set_at<I, S>(&mut self, t: impl Into<Tick>, updates: I) -> Result<(), TraceError>
    where
        I: IntoIterator<Item = (S, ObsValue)>,
        S: AsRef<str>,
    {
        let t = t.into();
        match self.last_change {
            None => {
                if t != Tick::ZERO {
                    // Implicit all-zero segment from 0; legal, but the first
                    // explicit change must still come after it.
                    self.segments.push(Segment { start: Tick::ZERO, values: self.current.clone() });
                }
            }
            Some(prev) if t <= prev => {
                return Err(TraceError::NonMonotonicChangePoint { at: t, prev });
            }
            Some(_) => {}
        }
        for (name, value) in updates {
            let name = name.as_ref();
            let idx = self
                .schema
                .index_of(name)
                .ok_or_else(|| TraceError::UnknownObservable(name.to_string()))?;
            let obs = &self.schema.observables()[idx];
            if !obs.domain.contains(&value) {
                return Err(TraceError::ValueOutsideDomain {
                    observable: name.to_string(),
                    value,
                });
            }
            self.current[idx] = value;
        }
        // Merge with the previous segment when nothing actually changed.
        if self.segments.last().map(|s| &s.values) != Some(&self.current) {
            self.segments.push(Segment { start: t, values: self.current.clone() });
        }
        self.last_change = Some(t);
        Ok(())
    }

    pub fn finish(mut self, horizon: impl Into<Tick>) -> Result<TimedTrace, TraceError> {
        let horizon = horizon.into();
        if let Some(last) = self.last_change {
            if horizon < last {
                return Err(TraceError::HorizonBeforeLastChange { horizon, last });
            }
        }
        if self.segments.is_empty() {
            self.segments.push(Segment { start: Tick::ZERO, values: self.current.clone() });
        }
        // Drop a trailing zero-length segment sitting exactly at the horizon.
        if self.segments.len() > 1 && self.segments.last().unwrap().start == horizon {
            self.segments.pop();
        }
        Ok(TimedTrace {
            schema: self.schema,
            tick_seconds: self.tick_seconds,
            horizon,
            segments: self.segments,
        })
    }
}

impl fmt::Display for TimedTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trace over [0, {}), tick = {}s", self.horizon, self.tick_seconds)?;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = self.segment_end(i);
            let vals: Vec<String> = self
                .schema
                .observables()
                .iter()
                .zip(&seg.values)
                .filter(|(_, v)| **v != 0)
                .map(|(o, v)| if o.is_boolean() { o.name.clone() } else { format!("{}={v}", o.name) })
                .collect();
            writeln!(f, "  [{}, {}): {}", seg.start, end, vals.join(" "))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON-lines trace files
// ---------------------------------------------------------------------------

/// Schema entry in a trace header: bare string for Boolean observables,
/// object form for wider domains.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SchemaEntry {
    Name(String),
    Full { name: String, domain: Vec<ObsValue> },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: Vec<SchemaEntry>,
    horizon: u64,
    tick_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChangeRecord {
    t: u64,
    set: BTreeMap<String, ObsValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<usize>,
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: expected a header record first")]
    MissingHeader { line: usize },
    #[error("line {line}: {source}")]
    Trace {
        line: usize,
        #[source]
        source: TraceError,
    },
    #[error("no trace found for cell {0}")]
    NoSuchCell(usize),
    #[error("file contains no trace")]
    Empty,
}

fn header_of(trace: &TimedTrace, cell: Option<usize>) -> Header {
    Header {
        schema: trace
            .schema()
            .observables()
            .iter()
            .map(|o| {
                if o.is_boolean() {
                    SchemaEntry::Name(o.name.clone())
                } else {
                    SchemaEntry::Full { name: o.name.clone(), domain: o.domain.clone() }
                }
            })
            .collect(),
        horizon: trace.horizon().value(),
        tick_seconds: trace.tick_seconds(),
        cell,
    }
}

fn write_records<W: Write>(trace: &TimedTrace, cell: Option<usize>, w: &mut W) -> Result<(), TraceIoError> {
    serde_json::to_writer(&mut *w, &header_of(trace, cell)).map_err(std::io::Error::from)?;
    writeln!(w)?;
    let mut prev: Option<&[ObsValue]> = None;
    for seg in trace.segments() {
        let mut set = BTreeMap::new();
        for (i, obs) in trace.schema().observables().iter().enumerate() {
            let changed = prev.is_none_or(|p| p[i] != seg.values[i]);
            if changed {
                set.insert(obs.name.clone(), seg.values[i]);
            }
        }
        prev = Some(&seg.values);
        if set.is_empty() {
            continue;
        }
        let rec = ChangeRecord { t: seg.start.value(), set, cell };
        serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Writes a single trace as JSON-lines: one header record, then one record
/// per change point.
pub fn write_trace<W: Write>(trace: &TimedTrace, w: &mut W) -> Result<(), TraceIoError> {
    write_records(trace, None, w)
}

/// Writes several per-cell traces into one multiplexed file; every record
/// carries a `cell` field.
pub fn write_traces_multiplexed<W: Write>(traces: &[TimedTrace], w: &mut W) -> Result<(), TraceIoError> {
    for (cell, trace) in traces.iter().enumerate() {
        write_records(trace, Some(cell), w)?;
    }
    Ok(())
}

fn schema_from_entries(entries: Vec<SchemaEntry>) -> Result<Schema, TraceError> {
    Schema::new(
        entries
            .into_iter()
            .map(|e| match e {
                SchemaEntry::Name(name) => Observable::boolean(name),
                SchemaEntry::Full { name, domain } => Observable::with_domain(name, domain),
            })
            .collect(),
    )
}

/// Reads every trace in a JSON-lines file, keyed by cell id (`None` key for
/// records without one).
pub fn read_traces<R: BufRead>(r: R) -> Result<Vec<(Option<usize>, TimedTrace)>, TraceIoError> {
    struct Partial {
        builder: TraceBuilder,
        horizon: u64,
    }
    let mut order: Vec<Option<usize>> = Vec::new();
    let mut partials: BTreeMap<Option<usize>, Partial> = BTreeMap::new();

    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| TraceIoError::Json { line: lineno, source })?;
        if value.get("schema").is_some() {
            let header: Header = serde_json::from_value(value)
                .map_err(|source| TraceIoError::Json { line: lineno, source })?;
            let schema = schema_from_entries(header.schema)
                .map_err(|source| TraceIoError::Trace { line: lineno, source })?;
            let builder = TraceBuilder::new(schema, header.tick_seconds)
                .map_err(|source| TraceIoError::Trace { line: lineno, source })?;
            if !partials.contains_key(&header.cell) {
                order.push(header.cell);
            }
            partials.insert(header.cell, Partial { builder, horizon: header.horizon });
        } else {
            let rec: ChangeRecord = serde_json::from_value(value)
                .map_err(|source| TraceIoError::Json { line: lineno, source })?;
            let partial = partials
                .get_mut(&rec.cell)
                .ok_or(TraceIoError::MissingHeader { line: lineno })?;
            partial
                .builder
                .set_at(rec.t, rec.set.iter().map(|(k, v)| (k.as_str(), *v)))
                .map_err(|source| TraceIoError::Trace { line: lineno, source })?;
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let partial = partials.remove(&key).unwrap();
        let horizon = partial.horizon;
        let trace = partial
            .builder
            .finish(horizon)
            .map_err(|source| TraceIoError::Trace { line: 0, source })?;
        out.push((key, trace));
    }
    Ok(out)
}

/// Reads a file expected to contain exactly one trace.
pub fn read_trace<R: BufRead>(r: R) -> Result<TimedTrace, TraceIoError> {
    let mut traces = read_traces(r)?;
    if traces.is_empty() {
        return Err(TraceIoError::Empty);
    }
    Ok(traces.remove(0).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TimedTrace {
        let schema = Schema::booleans(["A", "B"]).unwrap();
        let mut b = TraceBuilder::new(schema, 1.0).unwrap();
        b.set_at(0u64, [("A", 1u32)]).unwrap();
        b.set_at(2u64, [("A", 0u32), ("B", 1u32)]).unwrap();
        b.finish(5u64).unwrap()
    }

    #[test]
    fn segments_persist_unset_observables() {
        let t = sample();
        assert_eq!(t.segments().len(), 2);
        let a = t.schema().index_of("A").unwrap();
        let b = t.schema().index_of("B").unwrap();
        assert_eq!(t.value_at(a, Tick(1)), Some(1));
        assert_eq!(t.value_at(b, Tick(1)), Some(0));
        assert_eq!(t.value_at(a, Tick(2)), Some(0));
        assert_eq!(t.value_at(b, Tick(4)), Some(1));
        assert_eq!(t.value_at(b, Tick(5)), None); // at horizon
    }

    #[test]
    fn builder_rejects_bad_input() {
        let schema = Schema::booleans(["A"]).unwrap();
        let mut b = TraceBuilder::new(schema.clone(), 1.0).unwrap();
        b.set_at(3u64, [("A", 1u32)]).unwrap();
        assert!(matches!(
            b.set_at(3u64, [("A", 0u32)]),
            Err(TraceError::NonMonotonicChangePoint { .. })
        ));
        let mut b = TraceBuilder::new(schema.clone(), 1.0).unwrap();
        assert!(matches!(
            b.set_at(0u64, [("X", 1u32)]),
            Err(TraceError::UnknownObservable(_))
        ));
        let mut b = TraceBuilder::new(schema, 1.0).unwrap();
        assert!(matches!(
            b.set_at(0u64, [("A", 7u32)]),
            Err(TraceError::ValueOutsideDomain { .. })
        ));
    }

    #[test]
    fn duplicate_observables_rejected() {
        assert!(matches!(
            Schema::booleans(["A", "A"]),
            Err(TraceError::DuplicateObservable(_))
        ));
    }

    #[test]
    fn roundtrip_single() {
        let t = sample();
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let back = read_trace(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn roundtrip_multiplexed() {
        let traces = vec![sample(), sample()];
        let mut buf = Vec::new();
        write_traces_multiplexed(&traces, &mut buf).unwrap();
        let back = read_traces(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, Some(0));
        assert_eq!(back[1].0, Some(1));
        assert_eq!(back[0].1, traces[0]);
    }

    #[test]
    fn non_boolean_domain_roundtrip() {
        let schema = Schema::new(vec![
            Observable::boolean("A"),
            Observable::with_domain("X", vec![0, 1, 2]),
        ])
        .unwrap();
        let mut b = TraceBuilder::new(schema, 0.5).unwrap();
        b.set_at(0u64, [("X", 2u32)]).unwrap();
        let t = b.finish(3u64).unwrap();
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let back = read_trace(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(t, back);
    }
}
