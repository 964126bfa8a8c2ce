//! Trace instrumentation: records cell execution as a timed trace over the
//! observables `{I, M, E1..E5}` under a configurable event-duration model,
//! and extracts per-lifespan measurements from such traces.
//!
//! Two clock modes exist. In event-time mode episodes are packed back to
//! back, so the immature-phase duration of a lifespan is exactly the sum of
//! its event durations. In wall-clock mode events are pinned to an
//! iteration grid of `r` ticks (one slot per signal, one for the
//! presentation), idle slack shows up as immature time with no event
//! active, and an iteration whose events spill past its slot is a scheduler
//! overflow unless violation mode is on.

use crate::dc::eval::Evaluator;
use crate::dc::time::Interval;
use crate::dc::trace::{Schema, TimedTrace, TraceBuilder, TraceError};
use crate::dca::cell::{Antigen, Cell, CellConfig, CellError, DataInstance, Presentation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Observable names of a cell trace, in schema order.
pub const OBSERVABLES: [&str; 7] = ["I", "M", "E1", "E2", "E3", "E4", "E5"];

/// The five timed events of the cell lifecycle, in flow order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellEvent {
    /// E1: data processing (type determination).
    Processing = 0,
    /// E2: signal transformation.
    Transformation = 1,
    /// E3: antigen sampling.
    Sampling = 2,
    /// E4: temporal correlation.
    Correlation = 3,
    /// E5: information presenting.
    Presenting = 4,
}

impl CellEvent {
    pub fn observable(self) -> &'static str {
        OBSERVABLES[self as usize + 2]
    }

    pub const ALL: [CellEvent; 5] = [
        CellEvent::Processing,
        CellEvent::Transformation,
        CellEvent::Sampling,
        CellEvent::Correlation,
        CellEvent::Presenting,
    ];
}

/// Duration of one event episode, in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationModel {
    Fixed(u64),
    /// Uniform draw in `[low, high]`, per episode.
    Uniform { low: u64, high: u64 },
}

impl DurationModel {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, DurationModel::Fixed(_))
    }

    pub fn fixed(&self) -> Option<u64> {
        match self {
            DurationModel::Fixed(n) => Some(*n),
            DurationModel::Uniform { .. } => None,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            DurationModel::Fixed(n) => *n,
            DurationModel::Uniform { low, high } => rng.random_range(*low..=*high),
        }
    }

    fn validate(&self, what: &str) -> Result<(), InstrumentError> {
        let ok = match self {
            DurationModel::Fixed(n) => *n > 0,
            DurationModel::Uniform { low, high } => *low > 0 && low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(InstrumentError::Config(format!("{what}: durations must be positive ticks")))
        }
    }
}

/// Per-event duration models plus the analysis-step duration model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventDurations {
    pub processing: DurationModel,
    pub transformation: DurationModel,
    pub sampling: DurationModel,
    pub correlation: DurationModel,
    pub presenting: DurationModel,
    /// Analysis duration: `base + per_item · items`, in ticks.
    pub analysis_base: u64,
    pub analysis_per_item: u64,
}

impl Default for EventDurations {
    fn default() -> Self {
        EventDurations {
            processing: DurationModel::Fixed(1),
            transformation: DurationModel::Fixed(1),
            sampling: DurationModel::Fixed(1),
            correlation: DurationModel::Fixed(1),
            presenting: DurationModel::Fixed(1),
            analysis_base: 1,
            analysis_per_item: 0,
        }
    }
}

impl EventDurations {
    pub fn unit() -> Self {
        Self::default()
    }

    pub fn of(&self, event: CellEvent) -> &DurationModel {
        match event {
            CellEvent::Processing => &self.processing,
            CellEvent::Transformation => &self.transformation,
            CellEvent::Sampling => &self.sampling,
            CellEvent::Correlation => &self.correlation,
            CellEvent::Presenting => &self.presenting,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        CellEvent::ALL.iter().all(|e| self.of(*e).is_deterministic())
    }

    /// Fixed tick durations `[l1..l5]`; `None` if any event is stochastic.
    pub fn fixed(&self) -> Option<[u64; 5]> {
        let mut out = [0u64; 5];
        for (i, e) in CellEvent::ALL.iter().enumerate() {
            out[i] = self.of(*e).fixed()?;
        }
        Some(out)
    }

    /// Analysis duration in ticks for a segment of `items` presented items.
    pub fn analysis_ticks(&self, items: u64) -> u64 {
        self.analysis_base + self.analysis_per_item * items
    }

    pub fn validate(&self) -> Result<(), InstrumentError> {
        self.processing.validate("processing")?;
        self.transformation.validate("transformation")?;
        self.sampling.validate("sampling")?;
        self.correlation.validate("correlation")?;
        self.presenting.validate("presenting")?;
        if self.analysis_base == 0 && self.analysis_per_item == 0 {
            return Err(InstrumentError::Config("analysis duration must be positive".into()));
        }
        Ok(())
    }
}

/// How episode start times relate to the iteration grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Episodes are packed back to back; the duration identity for the
    /// immature phase holds exactly.
    #[default]
    EventTime,
    /// Each iteration starts on the `r`-tick grid; slack is immature idle
    /// time and overflowing a slot is an error outside violation mode.
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstrumentConfig {
    pub durations: EventDurations,
    pub mode: TimeMode,
    /// Iteration period r, in ticks.
    pub iteration_ticks: u64,
    pub tick_seconds: f64,
    /// Allow iterations to overrun their slot (for falsification runs).
    pub violation_mode: bool,
}

impl Default for InstrumentConfig {
    fn default() -> Self {
        InstrumentConfig {
            durations: EventDurations::default(),
            mode: TimeMode::EventTime,
            iteration_ticks: 5,
            tick_seconds: 1.0,
            violation_mode: false,
        }
    }
}

impl InstrumentConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        self.durations.validate()?;
        if self.iteration_ticks == 0 {
            return Err(InstrumentError::Config("iteration_ticks must be positive".into()));
        }
        if !(self.tick_seconds > 0.0 && self.tick_seconds.is_finite()) {
            return Err(InstrumentError::Config(format!(
                "tick_seconds must be positive, got {}",
                self.tick_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("instrumentation config: {0}")]
    Config(String),
    #[error("slot {slot} events overflow the {r}-tick iteration period")]
    SchedulerOverflow { slot: u64, r: u64 },
    #[error("operation requires a deterministic duration model")]
    StochasticDurations,
    #[error("malformed cell trace: {0}")]
    MalformedTrace(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Eval(#[from] crate::dc::eval::EvalError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// Single-writer recorder for one cell's timeline. Episodes are appended in
/// execution order; `finish` assembles the piecewise-constant trace with
/// `I` high outside presentation and `M` high during it.
#[derive(Debug, Clone)]
pub struct CellRecorder {
    config: InstrumentConfig,
    rng: ChaCha8Rng,
    clock: u64,
    slot: u64,
    /// (event, start, end) in ticks, non-overlapping, increasing.
    episodes: Vec<(CellEvent, u64, u64)>,
    /// End tick of each completed lifespan (its presentation end).
    lifespan_ends: Vec<u64>,
}

impl CellRecorder {
    pub fn new(config: InstrumentConfig, seed: u64) -> Result<Self, InstrumentError> {
        config.validate()?;
        Ok(CellRecorder {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: 0,
            slot: 0,
            episodes: Vec::new(),
            lifespan_ends: Vec::new(),
        })
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Opens grid slot `k`. In wall-clock mode the clock jumps forward to
    /// the slot start (never backward).
    pub fn begin_slot(&mut self, k: u64) {
        self.slot = k;
        if self.config.mode == TimeMode::WallClock {
            self.clock = self.clock.max(k * self.config.iteration_ticks);
        }
    }

    /// Records one episode of `event` at the current clock.
    pub fn record(&mut self, event: CellEvent) -> Result<(), InstrumentError> {
        let len = self.config.durations.of(event).sample(&mut self.rng);
        let start = self.clock;
        let end = start + len;
        if self.config.mode == TimeMode::WallClock && !self.config.violation_mode {
            let r = self.config.iteration_ticks;
            let slot_end = (self.slot + 1) * r;
            if end > slot_end {
                return Err(InstrumentError::SchedulerOverflow { slot: self.slot, r });
            }
        }
        self.episodes.push((event, start, end));
        self.clock = end;
        if event == CellEvent::Presenting {
            self.lifespan_ends.push(end);
        }
        Ok(())
    }

    /// Completed-lifespan end ticks so far.
    pub fn lifespan_ends(&self) -> &[u64] {
        &self.lifespan_ends
    }

    /// Assembles the trace over `[0, clock)`.
    pub fn finish(self) -> Result<TimedTrace, InstrumentError> {
        let schema = Schema::booleans(OBSERVABLES)?;
        let mut builder = TraceBuilder::new(schema, self.config.tick_seconds)?;
        // Change points: I up at 0; every episode toggles its event
        // observable; presentation episodes swap I/M.
        let mut changes: std::collections::BTreeMap<u64, Vec<(&str, u32)>> =
            std::collections::BTreeMap::new();
        changes.entry(0).or_default().push(("I", 1));
        for (event, start, end) in &self.episodes {
            changes.entry(*start).or_default().push((event.observable(), 1));
            changes.entry(*end).or_default().push((event.observable(), 0));
            if *event == CellEvent::Presenting {
                changes.entry(*start).or_default().push(("I", 0));
                changes.entry(*start).or_default().push(("M", 1));
                changes.entry(*end).or_default().push(("I", 1));
                changes.entry(*end).or_default().push(("M", 0));
            }
        }
        let horizon = self.clock;
        for (t, updates) in changes {
            if t >= horizon {
                break;
            }
            builder.set_at(t, updates)?;
        }
        Ok(builder.finish(horizon)?)
    }
}

/// Result of an instrumented run: the recorded trace, its measured
/// lifespans, and the presentations the cell emitted (timestamped in model
/// seconds, i.e. tick × tick width).
#[derive(Debug, Clone)]
pub struct InstrumentedRun {
    pub trace: TimedTrace,
    pub lifespans: Vec<LifespanRecord>,
    pub presentations: Vec<Presentation>,
}

/// Drive plan for an instrumented single-cell run: a constant signal per
/// iteration plus a fixed number of synthetic antigens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellRunPlan {
    pub cell: CellConfig,
    pub instrument: InstrumentConfig,
    /// Total signal instances to feed (m).
    pub signals: u64,
    pub antigens_per_iteration: u64,
    pub signal_values: Vec<f64>,
    pub antigen_type: String,
    pub seed: u64,
}

impl Default for CellRunPlan {
    fn default() -> Self {
        CellRunPlan {
            cell: CellConfig::default(),
            instrument: InstrumentConfig::default(),
            signals: 10,
            antigens_per_iteration: 1,
            signal_values: vec![1.0, 0.0, 0.0],
            antigen_type: "probe".into(),
            seed: 0,
        }
    }
}

impl CellRunPlan {
    /// Plan whose cell matures after exactly `signals_per_lifespan`
    /// signals: signal (1,0,0) adds 2 to csm per iteration under the
    /// default weights, and the threshold is pinned accordingly.
    pub fn with_fixed_lifespan(signals_per_lifespan: u64, total_signals: u64) -> Self {
        let threshold = 2.0 * signals_per_lifespan as f64;
        CellRunPlan {
            cell: CellConfig {
                threshold_low: threshold,
                threshold_high: threshold,
                ..CellConfig::default()
            },
            signals: total_signals,
            ..CellRunPlan::default()
        }
    }
}

/// Runs one cell under the plan, recording every event episode. One slot
/// per signal iteration; a presentation takes the following slot.
pub fn run_instrumented_cell(plan: &CellRunPlan) -> Result<InstrumentedRun, InstrumentError> {
    plan.cell.validate().map_err(|e| InstrumentError::Config(e.to_string()))?;
    let mut recorder = CellRecorder::new(plan.instrument.clone(), plan.seed)?;
    let cell_config = Arc::new(plan.cell.clone());
    let mut cell = Cell::new(Arc::clone(&cell_config), ChaCha8Rng::seed_from_u64(plan.seed));
    let mut presentations = Vec::new();
    let delta = plan.instrument.tick_seconds;

    let mut slot = 0u64;
    let mut antigen_id = 0u64;
    for _ in 0..plan.signals {
        recorder.begin_slot(slot);
        slot += 1;
        // signal instance: classify, transform
        recorder.record(CellEvent::Processing)?;
        cell.transform_signals(&plan.signal_values)?;
        recorder.record(CellEvent::Transformation)?;
        // antigen instances: classify, sample
        for _ in 0..plan.antigens_per_iteration {
            recorder.record(CellEvent::Processing)?;
            let antigen = DataInstance::Antigen(Antigen {
                t: recorder.clock() as f64 * delta,
                antigen_type: plan.antigen_type.clone(),
                id: antigen_id,
            });
            antigen_id += 1;
            cell.sample_antigen(&antigen)?;
            recorder.record(CellEvent::Sampling)?;
        }
        // temporal correlation, once per signal
        recorder.record(CellEvent::Correlation)?;
        cell.correlate()?;
        if cell.maybe_migrate().is_some() {
            // presentation occupies its own slot
            recorder.begin_slot(slot);
            slot += 1;
            recorder.record(CellEvent::Presenting)?;
            let now = recorder.clock() as f64 * delta;
            presentations.push(cell.present(now)?);
            cell.reinitialise()?;
        }
    }

    let trace = recorder.finish()?;
    let lifespans = measure(&trace)?;
    Ok(InstrumentedRun { trace, lifespans, presentations })
}

/// The unit-duration reference run: one signal, then one antigen, then
/// correlation and presentation, every event exactly one tick, giving the
/// six-tick trace E1 E2 E1 E3 E4 E5 over [0, 6).
pub fn golden_run() -> InstrumentedRun {
    let plan = CellRunPlan {
        cell: CellConfig { threshold_low: 2.0, threshold_high: 2.0, ..CellConfig::default() },
        instrument: InstrumentConfig {
            durations: EventDurations::unit(),
            mode: TimeMode::EventTime,
            iteration_ticks: 5,
            tick_seconds: 1.0,
            violation_mode: false,
        },
        signals: 1,
        antigens_per_iteration: 1,
        signal_values: vec![1.0, 0.0, 0.0],
        antigen_type: "probe".into(),
        seed: 0,
    };
    run_instrumented_cell(&plan).expect("reference run is statically valid")
}

/// Golden reference trace (the trace of [`golden_run`]).
pub fn golden_trace() -> TimedTrace {
    golden_run().trace
}

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

/// Measurements of one complete lifespan (ticks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LifespanRecord {
    /// `[start, end]` in ticks; starts at the end of the previous
    /// presentation (or 0) and ends at the end of its own.
    pub start: u64,
    pub end: u64,
    /// Tick at which the matured phase (presentation) begins.
    pub migration: u64,
    /// Signal instances processed (episodes of E2).
    pub signals: u64,
    /// Antigen instances sampled (episodes of E3).
    pub antigens: u64,
    /// ∫I over the lifespan.
    pub immature_ticks: u64,
    /// ∫M over the lifespan.
    pub matured_ticks: u64,
    /// Episodes `(start, end)` per event E1..E5.
    pub episodes: [Vec<(u64, u64)>; 5],
}

impl LifespanRecord {
    /// Lifespan duration c = ∫I + ∫M.
    pub fn lifespan_ticks(&self) -> u64 {
        self.immature_ticks + self.matured_ticks
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }

    /// Immature-phase interval `[start, migration]`.
    pub fn immature_interval(&self) -> Interval {
        Interval::new(self.start, self.migration)
    }

    /// Matured-phase interval `[migration, end]`.
    pub fn matured_interval(&self) -> Interval {
        Interval::new(self.migration, self.end)
    }
}

/// Maximal true-runs of a Boolean observable, as `(start, end)` ticks.
fn episodes_of(trace: &TimedTrace, name: &str) -> Result<Vec<(u64, u64)>, InstrumentError> {
    let idx = trace
        .schema()
        .index_of(name)
        .ok_or_else(|| InstrumentError::MalformedTrace(format!("missing observable `{name}`")))?;
    let mut out: Vec<(u64, u64)> = Vec::new();
    for (i, seg) in trace.segments().iter().enumerate() {
        if seg.values[idx] == 0 {
            continue;
        }
        let start = seg.start.value();
        let end = trace.segment_end(i).value();
        if end == start {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.1 == start => last.1 = end,
            _ => out.push((start, end)),
        }
    }
    Ok(out)
}

/// Extracts every complete lifespan from a recorded trace: a lifespan runs
/// from the end of the previous presentation (or tick 0) to the end of its
/// own presentation.
pub fn measure(trace: &TimedTrace) -> Result<Vec<LifespanRecord>, InstrumentError> {
    let eval = Evaluator::new(trace);
    let i_var = crate::dc::syntax::StateAssertion::var("I");
    let m_var = crate::dc::syntax::StateAssertion::var("M");
    let overlap = i_var.clone().and(m_var.clone());
    if eval.integrate_ticks(&overlap, trace.full_interval())? != 0 {
        return Err(InstrumentError::MalformedTrace("I and M overlap".into()));
    }

    let m_blocks = episodes_of(trace, "M")?;
    let event_episodes: [Vec<(u64, u64)>; 5] = [
        episodes_of(trace, "E1")?,
        episodes_of(trace, "E2")?,
        episodes_of(trace, "E3")?,
        episodes_of(trace, "E4")?,
        episodes_of(trace, "E5")?,
    ];
    // E5 must be disjoint from E1..E4.
    for (start, end) in &event_episodes[4] {
        for other in &event_episodes[..4] {
            if other.iter().any(|(s, e)| s < end && start < e) {
                return Err(InstrumentError::MalformedTrace(
                    "presentation overlaps an immature-phase event".into(),
                ));
            }
        }
    }

    let mut records = Vec::with_capacity(m_blocks.len());
    let mut start = 0u64;
    for (m_start, m_end) in m_blocks {
        let interval = Interval::new(start, m_end);
        let immature_ticks = eval.integrate_ticks(&i_var, interval)?;
        let matured_ticks = eval.integrate_ticks(&m_var, interval)?;
        if immature_ticks + matured_ticks != m_end - start {
            return Err(InstrumentError::MalformedTrace(format!(
                "I and M do not partition the lifespan [{start}, {m_end}]"
            )));
        }
        let in_lifespan =
            |(s, e): &(u64, u64)| -> bool { *s >= start && *e <= m_end };
        let episodes: [Vec<(u64, u64)>; 5] = std::array::from_fn(|i| {
            event_episodes[i].iter().filter(|ep| in_lifespan(ep)).copied().collect()
        });
        records.push(LifespanRecord {
            start,
            end: m_end,
            migration: m_start,
            signals: episodes[1].len() as u64,
            antigens: episodes[2].len() as u64,
            immature_ticks,
            matured_ticks,
            episodes,
        });
        start = m_end;
    }
    Ok(records)
}

/// Exact duration accounting for one lifespan under a deterministic
/// duration model: `∫I = m̄·(l1+l2) + n̄·(l1+l3) + m̄·l4` and `∫M = l5`.
pub fn check_duration_identity(
    record: &LifespanRecord,
    durations: &EventDurations,
) -> Result<bool, InstrumentError> {
    let Some([l1, l2, l3, l4, l5]) = durations.fixed() else {
        return Err(InstrumentError::StochasticDurations);
    };
    let expected_i = record.signals * (l1 + l2) + record.antigens * (l1 + l3) + record.signals * l4;
    Ok(record.immature_ticks == expected_i && record.matured_ticks == l5)
}

// ---------------------------------------------------------------------------
// Recorded population runs
// ---------------------------------------------------------------------------

/// A population whose cells each carry a trace recorder. Event timing is
/// model time on the iteration grid, independent of stream timestamps; a
/// presenting cell runs its presentation at the end of the same slot, so
/// every cell stays on the common grid.
#[derive(Debug)]
pub struct RecordedPopulation {
    population: crate::dca::Population,
    recorders: Vec<CellRecorder>,
    slot: u64,
}

impl RecordedPopulation {
    pub fn new(
        config: crate::dca::PopulationConfig,
        instrument: InstrumentConfig,
    ) -> Result<Self, InstrumentError> {
        instrument.validate()?;
        let population = crate::dca::Population::new(config)
            .map_err(|e| InstrumentError::Config(e.to_string()))?;
        let recorders = (0..population.config().cell_count)
            .map(|i| CellRecorder::new(instrument.clone(), population.config().seed ^ (i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RecordedPopulation { population, recorders, slot: 0 })
    }

    /// Runs one iteration with recording. Presentations carry the stream
    /// timestamp (like the unrecorded engine); only the traces are in
    /// model ticks.
    pub fn step(
        &mut self,
        batch: &crate::dca::IterationBatch,
    ) -> Result<Vec<Presentation>, InstrumentError> {
        let now = batch.signal.t;
        let assignments = self.population.assign_antigens(batch);
        let signal_values = batch.signal.values.clone();
        let slot = self.slot;
        let cells = self.population.cells_mut();
        let mut out = Vec::new();
        for ((cell, recorder), antigens) in
            cells.iter_mut().zip(&mut self.recorders).zip(&assignments)
        {
            recorder.begin_slot(slot);
            recorder.record(CellEvent::Processing)?;
            cell.transform_signals(&signal_values)?;
            recorder.record(CellEvent::Transformation)?;
            for antigen in antigens {
                recorder.record(CellEvent::Processing)?;
                cell.sample_antigen(&DataInstance::Antigen((*antigen).clone()))?;
                recorder.record(CellEvent::Sampling)?;
            }
            recorder.record(CellEvent::Correlation)?;
            cell.correlate()?;
            if cell.maybe_migrate().is_some() {
                recorder.record(CellEvent::Presenting)?;
                out.push(cell.present(now)?);
                cell.reinitialise()?;
            }
        }
        self.slot += 1;
        Ok(out)
    }

    /// Finishes all recorders, returning one trace per cell.
    pub fn finish(self) -> Result<Vec<TimedTrace>, InstrumentError> {
        self.recorders.into_iter().map(CellRecorder::finish).collect()
    }
}
