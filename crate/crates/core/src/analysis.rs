//! Turning presentation logs into per-antigen-type anomaly scores, either
//! offline over the whole log or segment-by-segment while detection is
//! still running, with exact count arithmetic so any segmentation merges
//! back to the offline result count-for-count.

use crate::dca::cell::Presentation;
use crate::dc::time::{rat_from_f64, Rat};
use num::{BigInt, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Accumulated presentations in arrival order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PresentationLog {
    presentations: Vec<Presentation>,
    iterations: u64,
    t_begin: f64,
    t_end: f64,
}

impl PresentationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: Presentation) {
        debug_assert!(
            self.presentations.last().is_none_or(|last| last.time <= p.time),
            "presentation timestamps must be non-decreasing"
        );
        self.presentations.push(p);
    }

    pub fn extend(&mut self, ps: impl IntoIterator<Item = Presentation>) {
        for p in ps {
            self.push(p);
        }
    }

    pub fn set_bounds(&mut self, iterations: u64, t_begin: f64, t_end: f64) {
        self.iterations = iterations;
        self.t_begin = t_begin;
        self.t_end = t_end;
    }

    pub fn presentations(&self) -> &[Presentation] {
        &self.presentations
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    pub fn time_bounds(&self) -> (f64, f64) {
        (self.t_begin, self.t_end)
    }

    /// Total presented antigen items across all presentations.
    pub fn total_items(&self) -> u64 {
        self.presentations.iter().map(|p| p.antigens.len() as u64).sum()
    }

    pub fn concat(mut self, other: PresentationLog) -> PresentationLog {
        self.presentations.extend(other.presentations);
        self.iterations += other.iterations;
        self.t_end = other.t_end.max(self.t_end);
        self
    }
}

impl FromIterator<Presentation> for PresentationLog {
    fn from_iter<I: IntoIterator<Item = Presentation>>(iter: I) -> Self {
        let mut log = PresentationLog::new();
        log.extend(iter);
        log
    }
}

/// What part of the stream a report covers. Count segments are keyed by
/// presented-item index, time segments by right-open period windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// The whole log (offline analysis).
    Whole,
    /// Presented-item index range `[begin, end)`.
    Items { begin: u64, end: u64 },
    /// Time window `[begin, end)` in stream seconds.
    Time { begin: f64, end: f64 },
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::Whole => write!(f, "whole log"),
            Coverage::Items { begin, end } => write!(f, "items [{begin}, {end})"),
            Coverage::Time { begin, end } => write!(f, "time [{begin}s, {end}s)"),
        }
    }
}

/// Exact per-type counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    /// Items presented with the mature (anomalous) context bit.
    pub mature: u64,
    /// All items presented for this type.
    pub total: u64,
}

impl TypeCounts {
    /// mature/total as an exact rational; `None` when nothing was counted.
    pub fn mcav(&self) -> Option<Rat> {
        (self.total > 0).then(|| Rat::new(BigInt::from(self.mature), BigInt::from(self.total)))
    }

    pub fn mcav_f64(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.mature as f64 / self.total as f64
        }
    }
}

/// Per-antigen-type anomaly scores over a coverage window. Types that were
/// never presented are absent rather than 0/0.
#[derive(Debug, Clone, PartialEq)]
pub struct McavReport {
    pub coverage: Coverage,
    pub tau: f64,
    counts: BTreeMap<String, TypeCounts>,
}

impl McavReport {
    pub fn empty(coverage: Coverage, tau: f64) -> Self {
        McavReport { coverage, tau, counts: BTreeMap::new() }
    }

    pub fn counts(&self) -> &BTreeMap<String, TypeCounts> {
        &self.counts
    }

    pub fn get(&self, antigen_type: &str) -> Option<TypeCounts> {
        self.counts.get(antigen_type).copied()
    }

    pub fn mcav(&self, antigen_type: &str) -> Option<Rat> {
        self.counts.get(antigen_type).and_then(TypeCounts::mcav)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Anomaly flag: mcav strictly above the threshold, decided in exact
    /// arithmetic.
    pub fn anomalous(&self, antigen_type: &str) -> bool {
        let Some(counts) = self.counts.get(antigen_type) else {
            return false;
        };
        let Some(mcav) = counts.mcav() else { return false };
        let tau = rat_from_f64(self.tau).unwrap_or_else(Rat::zero);
        mcav > tau
    }

    fn absorb(&mut self, p: &Presentation) {
        for (ty, bit) in p.items() {
            let entry = self.counts.entry(ty.to_string()).or_default();
            entry.total += 1;
            entry.mature += u64::from(bit);
        }
    }

    /// Report rows in type order, ready for JSON or table rendering.
    pub fn rows(&self) -> Vec<ReportRow> {
        self.counts
            .iter()
            .map(|(ty, c)| ReportRow {
                antigen_type: ty.clone(),
                mature: c.mature,
                total: c.total,
                mcav: c.mcav_f64(),
                anomalous: self.anomalous(ty),
            })
            .collect()
    }

    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|r| r.antigen_type.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  anomalous\n",
            "type", "mature", "total", "mcav"
        ));
        for r in &rows {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>8}  {:>8.4}  {}\n",
                r.antigen_type,
                r.mature,
                r.total,
                r.mcav,
                if r.anomalous { "yes" } else { "no" }
            ));
        }
        out
    }
}

/// One JSON row of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "type")]
    pub antigen_type: String,
    pub mature: u64,
    pub total: u64,
    pub mcav: f64,
    pub anomalous: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("coverage windows overlap: {0} and {1}")]
    OverlappingWindows(String, String),
    #[error("invalid segmentation policy: {0}")]
    Policy(String),
}

/// Offline (standard) analysis: aggregate over the whole log.
pub fn analyse_offline(log: &PresentationLog, tau: f64) -> McavReport {
    let mut report = McavReport::empty(Coverage::Whole, tau);
    for p in log.presentations() {
        report.absorb(p);
    }
    report
}

/// Sums reports over disjoint windows into one; scores are recomputed from
/// the summed counts, never averaged.
pub fn merge(reports: &[McavReport]) -> Result<McavReport, AnalysisError> {
    check_disjoint(reports)?;
    let tau = reports.first().map_or(0.5, |r| r.tau);
    let coverage = merged_coverage(reports);
    let mut counts: BTreeMap<String, TypeCounts> = BTreeMap::new();
    for r in reports {
        for (ty, c) in &r.counts {
            let entry = counts.entry(ty.clone()).or_default();
            entry.mature += c.mature;
            entry.total += c.total;
        }
    }
    Ok(McavReport { coverage, tau, counts })
}

fn check_disjoint(reports: &[McavReport]) -> Result<(), AnalysisError> {
    let overlap_err = |a: &McavReport, b: &McavReport| {
        Err(AnalysisError::OverlappingWindows(a.coverage.to_string(), b.coverage.to_string()))
    };
    let mut items: Vec<(&McavReport, u64, u64)> = Vec::new();
    let mut times: Vec<(&McavReport, f64, f64)> = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        match r.coverage {
            Coverage::Whole => {
                if reports.len() > 1 {
                    return overlap_err(r, &reports[(i + 1) % reports.len()]);
                }
            }
            Coverage::Items { begin, end } => items.push((r, begin, end)),
            Coverage::Time { begin, end } => times.push((r, begin, end)),
        }
    }
    items.sort_by_key(|(_, b, _)| *b);
    for pair in items.windows(2) {
        if pair[1].1 < pair[0].2 {
            return overlap_err(pair[0].0, pair[1].0);
        }
    }
    times.sort_by(|a, b| a.1.total_cmp(&b.1));
    for pair in times.windows(2) {
        if pair[1].1 < pair[0].2 {
            return overlap_err(pair[0].0, pair[1].0);
        }
    }
    Ok(())
}

fn merged_coverage(reports: &[McavReport]) -> Coverage {
    match reports {
        [] => Coverage::Items { begin: 0, end: 0 },
        [only] => only.coverage,
        many => match many[0].coverage {
            Coverage::Items { .. } => {
                let begin = many
                    .iter()
                    .filter_map(|r| match r.coverage {
                        Coverage::Items { begin, .. } => Some(begin),
                        _ => None,
                    })
                    .min()
                    .unwrap_or(0);
                let end = many
                    .iter()
                    .filter_map(|r| match r.coverage {
                        Coverage::Items { end, .. } => Some(end),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(0);
                Coverage::Items { begin, end }
            }
            _ => {
                let begin = many
                    .iter()
                    .filter_map(|r| match r.coverage {
                        Coverage::Time { begin, .. } => Some(begin),
                        _ => None,
                    })
                    .fold(f64::INFINITY, f64::min);
                let end = many
                    .iter()
                    .filter_map(|r| match r.coverage {
                        Coverage::Time { end, .. } => Some(end),
                        _ => None,
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                Coverage::Time { begin, end }
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Slicing policy for segmented (real-time) analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentationPolicy {
    /// Close a segment once it holds at least `z` presented antigen items
    /// (presentations are atomic, so a multi-item presentation may
    /// overshoot).
    ByCount(u64),
    /// Close at every `Δ`-second boundary (periods anchored at t = 0,
    /// right-open); empty periods produce no segment.
    ByTime(f64),
}

impl SegmentationPolicy {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        match self {
            SegmentationPolicy::ByCount(z) if *z >= 1 => Ok(()),
            SegmentationPolicy::ByCount(z) => {
                Err(AnalysisError::Policy(format!("by-count size must be >= 1, got {z}")))
            }
            SegmentationPolicy::ByTime(d) if *d > 0.0 && d.is_finite() => Ok(()),
            SegmentationPolicy::ByTime(d) => {
                Err(AnalysisError::Policy(format!("by-time period must be positive, got {d}")))
            }
        }
    }
}

/// A closed segment of the presentation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u64,
    pub coverage: Coverage,
    /// Time at which the segment closed (last presentation inside it, or
    /// the period boundary for time segmentation).
    pub close_time: f64,
    pub presentations: Vec<Presentation>,
}

impl Segment {
    pub fn items(&self) -> u64 {
        self.presentations.iter().map(|p| p.antigens.len() as u64).sum()
    }
}

/// Incremental stream slicer: feed presentations as they arrive, collect
/// closed segments, and flush the final partial segment at stream end.
#[derive(Debug, Clone)]
pub struct Segmenter {
    policy: SegmentationPolicy,
    next_id: u64,
    current: Vec<Presentation>,
    // ByCount state
    items_before: u64,
    items_in_current: u64,
    // ByTime state
    current_period: Option<u64>,
}

impl Segmenter {
    pub fn new(policy: SegmentationPolicy) -> Result<Self, AnalysisError> {
        policy.validate()?;
        Ok(Segmenter {
            policy,
            next_id: 0,
            current: Vec::new(),
            items_before: 0,
            items_in_current: 0,
            current_period: None,
        })
    }

    fn close(&mut self) -> Option<Segment> {
        if self.current.is_empty() {
            return None;
        }
        let presentations = std::mem::take(&mut self.current);
        let id = self.next_id;
        self.next_id += 1;
        let (coverage, close_time) = match self.policy {
            SegmentationPolicy::ByCount(_) => {
                let begin = self.items_before;
                let end = begin + self.items_in_current;
                self.items_before = end;
                self.items_in_current = 0;
                (Coverage::Items { begin, end }, presentations.last().unwrap().time)
            }
            SegmentationPolicy::ByTime(period) => {
                let k = self.current_period.take().unwrap_or(0);
                let begin = k as f64 * period;
                (Coverage::Time { begin, end: begin + period }, begin + period)
            }
        };
        Some(Segment { id, coverage, close_time, presentations })
    }

    /// Feeds one presentation; returns the segment it closed, if any.
    pub fn push(&mut self, p: Presentation) -> Option<Segment> {
        match self.policy {
            SegmentationPolicy::ByCount(z) => {
                self.items_in_current += p.antigens.len() as u64;
                self.current.push(p);
                if self.items_in_current >= z {
                    self.close()
                } else {
                    None
                }
            }
            SegmentationPolicy::ByTime(period) => {
                let k = (p.time / period).floor().max(0.0) as u64;
                let closed = match self.current_period {
                    Some(current) if k > current => self.close(),
                    _ => None,
                };
                self.current_period.get_or_insert(k);
                self.current.push(p);
                closed
            }
        }
    }

    /// Flushes the final partial segment at stream end.
    pub fn finish(mut self) -> Option<Segment> {
        self.close()
    }
}

/// Splits a finite presentation sequence into segments.
pub fn segment<I>(presentations: I, policy: SegmentationPolicy) -> Result<Vec<Segment>, AnalysisError>
where
    I: IntoIterator<Item = Presentation>,
{
    let mut segmenter = Segmenter::new(policy)?;
    let mut out = Vec::new();
    for p in presentations {
        out.extend(segmenter.push(p));
    }
    out.extend(segmenter.finish());
    Ok(out)
}

/// A closed segment together with its analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub id: u64,
    pub close_time: f64,
    pub report: McavReport,
}

pub fn analyse_segment(segment: &Segment, tau: f64) -> SegmentReport {
    let mut report = McavReport::empty(segment.coverage, tau);
    for p in &segment.presentations {
        report.absorb(p);
    }
    SegmentReport { id: segment.id, close_time: segment.close_time, report }
}

/// Segmented analysis of a finite stream: per-segment reports plus the
/// cumulative report obtained by exact count merging.
pub fn analyse_segmented<I>(
    presentations: I,
    policy: SegmentationPolicy,
    tau: f64,
) -> Result<(Vec<SegmentReport>, McavReport), AnalysisError>
where
    I: IntoIterator<Item = Presentation>,
{
    let segments = segment(presentations, policy)?;
    let reports: Vec<SegmentReport> = segments.iter().map(|s| analyse_segment(s, tau)).collect();
    let cumulative = merge(&reports.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    Ok((reports, cumulative))
}

// ---------------------------------------------------------------------------
// Offline latency bound
// ---------------------------------------------------------------------------

/// Parameters of the offline-analysis completion model
/// `c · (m / m̄) + l_a ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    /// Duration of one cell lifespan (c), seconds.
    pub lifespan_seconds: f64,
    /// Average signal instances per lifespan (m̄).
    pub signals_per_lifespan: f64,
    /// Total signal instances in the input (m).
    pub total_signals: u64,
    /// Duration of the analysis step (l_a), seconds.
    pub analysis_seconds: f64,
    /// Real-time bound (b), seconds.
    pub bound_seconds: f64,
}

impl LatencyParams {
    /// Completion time of offline analysis: detection over all lifespans
    /// plus one analysis pass.
    pub fn offline_completion(&self) -> f64 {
        self.lifespan_seconds * (self.total_signals as f64 / self.signals_per_lifespan)
            + self.analysis_seconds
    }
}

/// Whether the standard offline pipeline meets the real-time bound.
pub fn offline_deadline_ok(p: &LatencyParams) -> bool {
    p.offline_completion() <= p.bound_seconds
}
