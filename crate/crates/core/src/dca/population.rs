//! Iteration-clocked execution of a cell population: one signal and any
//! number of antigens per iteration, antigens shared out across cells,
//! matured cells presenting and reinitialising at the iteration barrier.
//!
//! Cells within an iteration are independent, so they may fan out across
//! threads; presentations are merged in cell-index order at the barrier,
//! which keeps the output a pure function of (seed, input).

use super::cell::{Antigen, Cell, CellConfig, CellError, DataInstance, Presentation, Signal};
use crate::analysis::PresentationLog;
use crate::exec::{map_mut, ExecMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;
use thiserror::Error;

/// How the antigens of one iteration are distributed over cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntigenDistribution {
    /// Deterministic round-robin across cells, continuing across
    /// iterations. Makes population output equal the multiset union of
    /// isolated per-cell runs.
    #[default]
    RoundRobin,
    /// Each antigen goes to one uniformly drawn cell.
    UniformRandom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub cell_count: usize,
    pub cell: CellConfig,
    /// Iteration period r, in seconds: the time between successive signal
    /// instances.
    pub iteration_seconds: f64,
    pub antigen_distribution: AntigenDistribution,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            cell_count: 16,
            cell: CellConfig::default(),
            iteration_seconds: 1.0,
            antigen_distribution: AntigenDistribution::RoundRobin,
            seed: 0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.cell_count == 0 {
            return Err(EngineError::Config("cell_count must be at least 1".into()));
        }
        if !(self.iteration_seconds > 0.0 && self.iteration_seconds.is_finite()) {
            return Err(EngineError::Config(format!(
                "iteration_seconds must be positive, got {}",
                self.iteration_seconds
            )));
        }
        self.cell.validate().map_err(|e| EngineError::Config(e.to_string()))
    }
}

/// One iteration's input: exactly one signal plus the antigens that arrived
/// with it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationBatch {
    pub signal: Signal,
    pub antigens: Vec<Antigen>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// A population of cells sharing one config, stepped one iteration at a
/// time.
///
/// Cell execution defaults to sequential: one iteration's per-cell work is
/// small, and the per-step fork/join barrier only pays for itself under
/// heavy per-cell load (large antigen batches, recording). Use
/// [`Population::with_exec_mode`] to fan out.
#[derive(Debug, Clone)]
pub struct Population {
    cells: Vec<Cell>,
    config: PopulationConfig,
    mode: ExecMode,
    dist_rng: ChaCha8Rng,
    rr_cursor: usize,
    iterations: u64,
    first_t: Option<f64>,
    last_t: f64,
}

impl Population {
    pub fn new(config: PopulationConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let cell_config = Arc::new(config.cell.clone());
        let cells = (0..config.cell_count)
            .map(|i| {
                // One independent, reproducible stream per cell.
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(i as u64 + 1);
                Cell::new(Arc::clone(&cell_config), rng)
            })
            .collect();
        let dist_rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Population {
            cells,
            config,
            mode: ExecMode::Sequential,
            dist_rng,
            rr_cursor: 0,
            iterations: 0,
            first_t: None,
            last_t: 0.0,
        })
    }

    /// Selects sequential or parallel cell execution; the output is the
    /// same either way.
    pub fn with_exec_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn config(&self) -> &PopulationConfig {
        &self.config
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Distributes a batch's antigens over cells per the configured policy.
    pub(crate) fn assign_antigens<'a>(&mut self, batch: &'a IterationBatch) -> Vec<Vec<&'a Antigen>> {
        use rand::Rng;
        let n = self.cells.len();
        let mut assigned: Vec<Vec<&Antigen>> = vec![Vec::new(); n];
        match self.config.antigen_distribution {
            AntigenDistribution::RoundRobin => {
                for antigen in &batch.antigens {
                    assigned[self.rr_cursor % n].push(antigen);
                    self.rr_cursor = (self.rr_cursor + 1) % n;
                }
            }
            AntigenDistribution::UniformRandom => {
                for antigen in &batch.antigens {
                    let i = self.dist_rng.random_range(0..n);
                    assigned[i].push(antigen);
                }
            }
        }
        assigned
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [Cell] {
        &mut self.cells
    }

    /// Runs one iteration: every cell processes the signal and its share of
    /// the antigens, correlates, and — if its threshold is reached —
    /// presents and is reinitialised. Presentations come back in cell-index
    /// order.
    pub fn step(&mut self, batch: &IterationBatch) -> Result<Vec<Presentation>, EngineError> {
        let assigned = self.assign_antigens(batch);
        let now = batch.signal.t;
        let signal_values = batch.signal.values.as_slice();
        let results: Vec<Result<Option<Presentation>, CellError>> =
            map_mut(self.mode, &mut self.cells, |i, cell| {
                step_cell(cell, signal_values, &assigned[i], now)
            });

        self.iterations += 1;
        self.first_t.get_or_insert(now);
        self.last_t = now;

        let mut presentations = Vec::new();
        for r in results {
            if let Some(p) = r? {
                presentations.push(p);
            }
        }
        Ok(presentations)
    }

    /// Consumes a finite stream of batches and accumulates the full
    /// presentation log.
    pub fn run<I>(&mut self, batches: I) -> Result<PresentationLog, EngineError>
    where
        I: IntoIterator<Item = IterationBatch>,
    {
        let mut log = PresentationLog::new();
        for batch in batches {
            let presentations = self.step(&batch)?;
            log.extend(presentations);
        }
        log.set_bounds(self.iterations, self.first_t.unwrap_or(0.0), self.last_t);
        Ok(log)
    }
}

/// One cell's work for one iteration: data processing (classify), signal
/// transformation, antigen sampling, temporal correlation, then the
/// migration check with presentation and reinitialisation.
fn step_cell(
    cell: &mut Cell,
    signal_values: &[f64],
    antigens: &[&Antigen],
    now: f64,
) -> Result<Option<Presentation>, CellError> {
    cell.transform_signals(signal_values)?;
    for antigen in antigens {
        let instance = DataInstance::Antigen((*antigen).clone());
        cell.sample_antigen(&instance)?;
    }
    cell.correlate()?;
    if cell.maybe_migrate().is_some() {
        let presentation = cell.present(now)?;
        cell.reinitialise()?;
        return Ok(Some(presentation));
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Stream input: JSON-lines and CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {record}: {message}")]
    Record { record: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("stream contains antigen records but no signal record")]
    NoSignal,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    t: f64,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    antigen_type: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
}

fn instance_from_raw(raw: RawRecord, record: usize) -> Result<DataInstance, StreamError> {
    let err = |message: &str| StreamError::Record { record, message: message.into() };
    match raw.kind.as_str() {
        "signal" => {
            if raw.antigen_type.is_some() {
                return Err(err("signal record carries an antigen payload"));
            }
            let values = raw.values.ok_or_else(|| err("signal record is missing `values`"))?;
            Ok(DataInstance::Signal(Signal { t: raw.t, values }))
        }
        "antigen" => {
            if raw.values.is_some() {
                return Err(err("antigen record carries a signal payload"));
            }
            let antigen_type =
                raw.antigen_type.ok_or_else(|| err("antigen record is missing `type`"))?;
            Ok(DataInstance::Antigen(Antigen {
                t: raw.t,
                antigen_type,
                id: raw.id.unwrap_or(0),
            }))
        }
        other => Err(err(&format!("unknown record kind `{other}`"))),
    }
}

/// Groups an instance sequence into iteration batches: each signal opens a
/// batch that absorbs the antigens up to the next signal. Antigens arriving
/// before the first signal are folded into the first batch.
pub fn batch_instances(instances: Vec<DataInstance>) -> Result<Vec<IterationBatch>, StreamError> {
    let mut batches: Vec<IterationBatch> = Vec::new();
    let mut leading: Vec<Antigen> = Vec::new();
    for instance in instances {
        match instance {
            DataInstance::Signal(signal) => {
                batches.push(IterationBatch { signal, antigens: Vec::new() });
            }
            DataInstance::Antigen(antigen) => match batches.last_mut() {
                Some(batch) => batch.antigens.push(antigen),
                None => leading.push(antigen),
            },
        }
    }
    if !leading.is_empty() {
        match batches.first_mut() {
            Some(first) => {
                leading.extend(std::mem::take(&mut first.antigens));
                first.antigens = leading;
            }
            None => return Err(StreamError::NoSignal),
        }
    }
    Ok(batches)
}

/// Reads a JSON-lines stream (`{"t": .., "kind": "signal"|"antigen", ..}`)
/// into iteration batches.
pub fn read_stream_jsonl<R: BufRead>(r: R) -> Result<Vec<IterationBatch>, StreamError> {
    let mut instances = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| StreamError::Record { record: i + 1, message: e.to_string() })?;
        instances.push(instance_from_raw(raw, i + 1)?);
    }
    batch_instances(instances)
}

/// Writes instances as a JSON-lines stream.
pub fn write_stream_jsonl<W: Write>(instances: &[DataInstance], w: &mut W) -> Result<(), StreamError> {
    for instance in instances {
        let raw = match instance {
            DataInstance::Signal(s) => RawRecord {
                t: s.t,
                kind: "signal".into(),
                values: Some(s.values.clone()),
                antigen_type: None,
                id: None,
            },
            DataInstance::Antigen(a) => RawRecord {
                t: a.t,
                kind: "antigen".into(),
                values: None,
                antigen_type: Some(a.antigen_type.clone()),
                id: Some(a.id),
            },
        };
        serde_json::to_writer(&mut *w, &raw).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a CSV stream with header `t,kind,<category...>,type,id` into
/// iteration batches.
pub fn read_stream_csv<R: std::io::Read>(r: R) -> Result<Vec<IterationBatch>, StreamError> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers()?.clone();
    let n = headers.len();
    if n < 4 {
        return Err(StreamError::Record {
            record: 0,
            message: "csv header must be t,kind,<categories...>,type,id".into(),
        });
    }
    let mut instances = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let record = i + 2; // header is line 1
        let err = |message: String| StreamError::Record { record, message };
        let t: f64 = row
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| err(format!("bad timestamp: {e}")))?;
        let kind = row.get(1).unwrap_or("");
        match kind {
            "signal" => {
                let values = (2..n - 2)
                    .map(|c| {
                        row.get(c)
                            .unwrap_or("")
                            .parse::<f64>()
                            .map_err(|e| err(format!("bad signal value in column {c}: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                instances.push(DataInstance::Signal(Signal { t, values }));
            }
            "antigen" => {
                let antigen_type = row.get(n - 2).unwrap_or("").to_string();
                if antigen_type.is_empty() {
                    return Err(err("antigen row is missing `type`".into()));
                }
                let id = row.get(n - 1).unwrap_or("").parse().unwrap_or(0);
                instances.push(DataInstance::Antigen(Antigen { t, antigen_type, id }));
            }
            other => return Err(err(format!("unknown record kind `{other}`"))),
        }
    }
    batch_instances(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dca::cell::MaturedContext;

    fn config(cells: usize, threshold: f64, seed: u64) -> PopulationConfig {
        PopulationConfig {
            cell_count: cells,
            cell: CellConfig {
                threshold_low: threshold,
                threshold_high: threshold,
                ..CellConfig::default()
            },
            seed,
            ..PopulationConfig::default()
        }
    }

    fn batch(t: f64, values: [f64; 3], antigens: &[&str]) -> IterationBatch {
        IterationBatch {
            signal: Signal { t, values: values.to_vec() },
            antigens: antigens
                .iter()
                .enumerate()
                .map(|(i, ty)| Antigen { t, antigen_type: (*ty).into(), id: i as u64 })
                .collect(),
        }
    }

    #[test]
    fn single_step_presents_when_threshold_is_one_signal() {
        // csm of (1,0,0) = 2; threshold 2 migrates in the first iteration.
        let mut pop = Population::new(config(1, 2.0, 1)).unwrap();
        let out = pop.step(&batch(0.0, [1.0, 0.0, 0.0], &["x"])).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].context, MaturedContext::Mature);
        assert_eq!(out[0].antigens, vec!["x".to_string()]);
        // cell was reinitialised at the barrier
        assert_eq!(pop.cells()[0].signals_processed(), 0);
    }

    #[test]
    fn empty_antigen_list_only_feeds_the_signal() {
        let mut pop = Population::new(config(3, 100.0, 1)).unwrap();
        pop.step(&batch(0.0, [1.0, 0.0, 0.0], &[])).unwrap();
        for cell in pop.cells() {
            assert_eq!(cell.antigens_sampled(), 0);
            assert_eq!(cell.signals_processed(), 1);
            assert_eq!(cell.correlations(), 1);
        }
    }

    #[test]
    fn round_robin_continues_across_batches() {
        let mut pop = Population::new(config(2, 1000.0, 1)).unwrap();
        pop.step(&batch(0.0, [0.0, 1.0, 0.0], &["a", "b", "c"])).unwrap();
        pop.step(&batch(1.0, [0.0, 1.0, 0.0], &["d"])).unwrap();
        assert_eq!(pop.cells()[0].antigens_sampled(), 2); // a, c
        assert_eq!(pop.cells()[1].antigens_sampled(), 2); // b, d
    }

    #[test]
    fn same_seed_replays_identically() {
        let stream: Vec<IterationBatch> = (0..40)
            .map(|i| batch(i as f64, [1.0, 2.0, 0.5], &["u", "v"]))
            .collect();
        let mut a = Population::new(config(4, 0.0_f64.max(12.0), 9)).unwrap();
        let mut b = Population::new(config(4, 12.0, 9)).unwrap();
        let la = a.run(stream.clone()).unwrap();
        let lb = b.run(stream).unwrap();
        assert_eq!(la.presentations(), lb.presentations());
        assert!(!la.presentations().is_empty());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let stream: Vec<IterationBatch> = (0..60)
            .map(|i| batch(i as f64, [0.5, 2.0, 1.0], &["u", "v", "w"]))
            .collect();
        let cfg = PopulationConfig { cell_count: 8, seed: 3, ..PopulationConfig::default() };
        let mut seq = Population::new(cfg.clone()).unwrap().with_exec_mode(ExecMode::Sequential);
        let mut par = Population::new(cfg).unwrap().with_exec_mode(ExecMode::Parallel);
        let ls = seq.run(stream.clone()).unwrap();
        let lp = par.run(stream).unwrap();
        assert_eq!(ls.presentations(), lp.presentations());
    }

    #[test]
    fn zero_iteration_stream_gives_empty_log() {
        let mut pop = Population::new(config(2, 5.0, 1)).unwrap();
        let log = pop.run(Vec::new()).unwrap();
        assert!(log.presentations().is_empty());
        assert_eq!(log.iterations(), 0);
    }

    #[test]
    fn population_equals_isolated_cells_under_round_robin() {
        // Oracle: run each cell alone with the same per-cell antigen
        // assignment; the population log is the index-ordered merge.
        let cells = 3usize;
        let stream: Vec<IterationBatch> = (0..30)
            .map(|i| {
                batch(
                    i as f64,
                    [1.0, 1.0, 0.2],
                    &[["p", "q", "r", "s"][i % 4], ["x", "y"][i % 2]],
                )
            })
            .collect();
        let cfg = config(cells, 9.0, 17);
        let mut pop = Population::new(cfg.clone()).unwrap();
        let merged = pop.run(stream.clone()).unwrap();

        // Isolated runs: cell i receives antigen j (global round-robin
        // order) when j % cells == i.
        let mut isolated: Vec<Vec<Presentation>> = Vec::new();
        for i in 0..cells {
            let mut single = Population::new(PopulationConfig { cell_count: 1, ..cfg.clone() }).unwrap();
            // patch the cell rng stream to match the population's cell i
            let cell_config = Arc::new(cfg.cell.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            single.cells[0] = Cell::new(cell_config, rng);
            let mut counter = 0usize;
            let own_stream: Vec<IterationBatch> = stream
                .iter()
                .map(|b| {
                    let antigens = b
                        .antigens
                        .iter()
                        .filter(|_| {
                            let mine = counter % cells == i;
                            counter += 1;
                            mine
                        })
                        .cloned()
                        .collect();
                    IterationBatch { signal: b.signal.clone(), antigens }
                })
                .collect();
            isolated.push(single.run(own_stream).unwrap().presentations().to_vec());
        }
        // Merge isolated logs by (iteration order, cell index): since each
        // cell presents at most once per iteration, interleave by time then
        // cell index.
        let mut expected: Vec<(u64, usize, Presentation)> = Vec::new();
        for (i, ps) in isolated.into_iter().enumerate() {
            for p in ps {
                expected.push((p.time as u64, i, p));
            }
        }
        expected.sort_by_key(|e| (e.0, e.1));
        let expected: Vec<Presentation> = expected.into_iter().map(|(_, _, p)| p).collect();
        assert_eq!(merged.presentations(), expected.as_slice());
    }

    #[test]
    fn stream_parsing_roundtrip_and_batching() {
        let text = "\
{\"t\":0.05,\"kind\":\"antigen\",\"type\":\"early\",\"id\":9}
{\"t\":0.1,\"kind\":\"signal\",\"values\":[1.0,0.0,0.0]}
{\"t\":0.2,\"kind\":\"antigen\",\"type\":\"a\",\"id\":1}
{\"t\":1.1,\"kind\":\"signal\",\"values\":[0.0,1.0,0.0]}
{\"t\":1.2,\"kind\":\"antigen\",\"type\":\"b\",\"id\":2}
";
        let batches = read_stream_jsonl(std::io::Cursor::new(text)).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].antigens.len(), 2); // early + a
        assert_eq!(batches[0].antigens[0].antigen_type, "early");
        assert_eq!(batches[1].antigens.len(), 1);
    }

    #[test]
    fn malformed_records_are_input_errors() {
        let both = "{\"t\":0,\"kind\":\"signal\",\"values\":[1],\"type\":\"x\"}\n";
        assert!(matches!(
            read_stream_jsonl(std::io::Cursor::new(both)),
            Err(StreamError::Record { record: 1, .. })
        ));
        let neither = "{\"t\":0,\"kind\":\"antigen\"}\n";
        assert!(matches!(
            read_stream_jsonl(std::io::Cursor::new(neither)),
            Err(StreamError::Record { record: 1, .. })
        ));
        let antigens_only = "{\"t\":0,\"kind\":\"antigen\",\"type\":\"x\"}\n";
        assert!(matches!(
            read_stream_jsonl(std::io::Cursor::new(antigens_only)),
            Err(StreamError::NoSignal)
        ));
    }

    #[test]
    fn csv_stream_parses() {
        let text = "t,kind,pamp,danger,safe,type,id\n0.0,signal,1,0,0,,\n0.1,antigen,,,,http,4\n";
        let batches = read_stream_csv(std::io::Cursor::new(text)).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].signal.values, vec![1.0, 0.0, 0.0]);
        assert_eq!(batches[0].antigens[0].antigen_type, "http");
        assert_eq!(batches[0].antigens[0].id, 4);
    }
}
