//! Simulated-clock latency comparison of offline and segmented analysis.
//!
//! Detection time comes from the instrumented cell's event timeline, so the
//! numbers are host-independent: offline analysis can only start after the
//! last input is processed, a result's latency is measured from the start
//! of the window it covers, and segment sizes bound it independently of the
//! total input size.

use crate::analysis::{analyse_segment, segment, AnalysisError, Coverage, SegmentationPolicy};
use crate::instrument::{run_instrumented_cell, CellRunPlan, InstrumentError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("input sizes must be multiples of signals-per-lifespan for exact lifespans")]
    RaggedInput,
}

/// Configuration of one latency experiment: the per-lifespan shape of the
/// detector plus the segmentation to compare against.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    /// Plan template; `signals` is overridden per input size.
    pub plan: CellRunPlan,
    pub signals_per_lifespan: u64,
    pub policy: SegmentationPolicy,
}

impl Default for LatencyModel {
    fn default() -> Self {
        let signals_per_lifespan = 10;
        LatencyModel {
            plan: CellRunPlan::with_fixed_lifespan(signals_per_lifespan, 0),
            signals_per_lifespan,
            policy: SegmentationPolicy::ByCount(10),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyRow {
    /// Total signal instances fed (m).
    pub total_signals: u64,
    pub lifespans: u64,
    /// Lifespan duration c, seconds (constant across lifespans by
    /// construction).
    pub lifespan_seconds: f64,
    /// When the last input finished processing.
    pub detection_end: f64,
    /// Offline result time: detection end plus one analysis pass over
    /// everything. Latency is measured from t = 0, so this is also the
    /// offline result latency.
    pub offline_completion: f64,
    pub segments: u64,
    /// Per-segment result latency (report time minus window start).
    pub segment_latency_min: f64,
    pub segment_latency_median: f64,
    pub segment_latency_max: f64,
}

/// Runs the model for each input size.
pub fn run_latency_model(model: &LatencyModel, sizes: &[u64]) -> Result<Vec<LatencyRow>, LatencyError> {
    sizes.iter().map(|m| run_one(model, *m)).collect()
}

fn run_one(model: &LatencyModel, total_signals: u64) -> Result<LatencyRow, LatencyError> {
    if !total_signals.is_multiple_of(model.signals_per_lifespan) {
        return Err(LatencyError::RaggedInput);
    }
    let plan = CellRunPlan { signals: total_signals, ..model.plan.clone() };
    let run = run_instrumented_cell(&plan)?;
    let delta = plan.instrument.tick_seconds;
    let durations = &plan.instrument.durations;

    let detection_end = run.lifespans.last().map_or(0.0, |ls| ls.end as f64 * delta);
    let lifespan_seconds = run.lifespans.first().map_or(0.0, |ls| ls.lifespan_ticks() as f64 * delta);
    let total_items: u64 = run.presentations.iter().map(|p| p.antigens.len() as u64).sum();
    let offline_completion = detection_end + durations.analysis_ticks(total_items) as f64 * delta;

    let segments = segment(run.presentations.clone(), model.policy)?;
    let mut latencies: Vec<f64> = Vec::with_capacity(segments.len());
    for seg in &segments {
        let report = analyse_segment(seg, 0.5);
        let report_time = report.close_time + durations.analysis_ticks(seg.items()) as f64 * delta;
        let window_start = match seg.coverage {
            Coverage::Time { begin, .. } => begin,
            Coverage::Items { .. } | Coverage::Whole => {
                seg.presentations.first().map_or(report.close_time, |p| p.time)
            }
        };
        latencies.push(report_time - window_start);
    }
    latencies.sort_by(f64::total_cmp);
    let median = if latencies.is_empty() {
        0.0
    } else {
        latencies[latencies.len() / 2]
    };

    Ok(LatencyRow {
        total_signals,
        lifespans: run.lifespans.len() as u64,
        lifespan_seconds,
        detection_end,
        offline_completion,
        segments: segments.len() as u64,
        segment_latency_min: latencies.first().copied().unwrap_or(0.0),
        segment_latency_median: median,
        segment_latency_max: latencies.last().copied().unwrap_or(0.0),
    })
}

/// Aligned text table over the rows.
pub fn table(rows: &[LatencyRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>8}  {:>9}  {:>12}  {:>16}  {:>8}  {:>12}\n",
        "signals", "lifespans", "detect end", "offline result", "segments", "seg latency"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:>8}  {:>9}  {:>12.1}  {:>16.1}  {:>8}  {:>12.1}\n",
            r.total_signals,
            r.lifespans,
            r.detection_end,
            r.offline_completion,
            r.segments,
            r.segment_latency_median,
        ));
    }
    out
}
