//! Command-line front door for the dendrite engine: run detection over
//! streams, generate synthetic labeled input, check interval-logic specs
//! against recorded traces, run the real-time guarantee experiment, and
//! compare offline against segmented analysis latency.
//!
//! Exit codes: 0 success / all checks true, 1 check failure, 2 usage,
//! parse or configuration error.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dendrite_core::analysis::{
    analyse_offline, analyse_segment, merge, McavReport, PresentationLog, SegmentReport,
    SegmentationPolicy, Segmenter,
};
use dendrite_core::dc::parser::{self, SpecFile};
use dendrite_core::dc::time::Interval;
use dendrite_core::dc::trace::{self, TimedTrace};
use dendrite_core::dca::cell::Presentation;
use dendrite_core::dca::population::{
    read_stream_csv, read_stream_jsonl, write_stream_jsonl, IterationBatch, Population,
    PopulationConfig,
};
use dendrite_core::instrument::{golden_trace, InstrumentConfig, RecordedPopulation};
use dendrite_core::latency::{run_latency_model, table, LatencyModel};
use dendrite_core::monitor::{check_spec_file, theorem1_experiment, ExperimentOptions, ViolationKind};
use dendrite_core::synth::{generate, SynthConfig};
use dendrite_core::ExecMode;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

/// Whole-engine configuration file: every section optional, unknown keys
/// rejected. `dendrite config --print-defaults` prints the full default.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EngineConfig {
    population: PopulationConfig,
    analysis: AnalysisSettings,
    instrument: InstrumentConfig,
    synth: SynthConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AnalysisSettings {
    /// Anomaly threshold on the mature-context ratio.
    tau: f64,
    /// Default segmentation policy for `--analysis segmented`.
    segmentation: SegmentationPolicy,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings { tau: 0.5, segmentation: SegmentationPolicy::ByCount(10) }
    }
}

#[derive(Parser)]
#[command(name = "dendrite", version, about = "Streaming anomaly detection with a duration-calculus trace monitor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run detection over an input stream and report anomaly scores.
    Detect(DetectArgs),
    /// Generate a synthetic labeled input stream.
    Simulate(SimulateArgs),
    /// Check the named formulas of a spec file against a trace.
    Monitor(MonitorArgs),
    /// Run the single-cell real-time guarantee experiment.
    Theorem1(Theorem1Args),
    /// Compare offline and segmented analysis latency on a simulated clock.
    Bench(BenchArgs),
    /// Inspect configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StreamFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalysisMode {
    Offline,
    Segmented,
}

#[derive(Args)]
struct DetectArgs {
    /// Engine config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input stream file; `-` reads stdin.
    #[arg(short, long, default_value = "-")]
    input: String,
    /// Input format; inferred from the extension by default.
    #[arg(long, value_enum)]
    format: Option<StreamFormat>,
    #[arg(long, value_enum, default_value_t = AnalysisMode::Offline)]
    analysis: AnalysisMode,
    /// Segment after this many presented antigen items.
    #[arg(long, conflicts_with = "by_time")]
    by_count: Option<u64>,
    /// Segment at this period, in stream seconds.
    #[arg(long)]
    by_time: Option<f64>,
    /// Anomaly threshold override.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cells: Option<usize>,
    /// Record per-cell traces to this file (JSON-lines, multiplexed).
    #[arg(long)]
    record_traces: Option<PathBuf>,
    /// Fan cell execution out across threads (pays off for heavy per-cell
    /// workloads).
    #[arg(long)]
    parallel: bool,
    /// Emit the final report as JSON-lines rows on stdout.
    #[arg(long)]
    json: bool,
    /// Write per-segment report rows (JSON-lines) to this file.
    #[arg(long)]
    segments_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Stream destination (`.csv` switches format; everything else is
    /// JSON-lines).
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth destination; defaults to `<output>.labels.json`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    anomaly_fraction: Option<f64>,
}

#[derive(Args)]
struct MonitorArgs {
    /// Spec file (`.dcspec`), or `@paper` for the bundled spec.
    spec: String,
    /// Trace file (JSON-lines), or `@golden` for the bundled
    /// unit-duration reference trace.
    trace: String,
    /// Check only these named formulas (repeatable).
    #[arg(long = "formula")]
    formulas: Vec<String>,
    /// Evaluate on [BEGIN, END] ticks instead of the full trace interval.
    #[arg(long, num_args = 2, value_names = ["BEGIN", "END"])]
    interval: Option<Vec<u64>>,
    /// Bind or rebind a spec variable, e.g. `--let b=12.5` (repeatable).
    #[arg(long = "let", value_parser = parse_binding)]
    bindings: Vec<(String, f64)>,
    /// Select one cell from a multiplexed trace file.
    #[arg(long)]
    cell: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct Theorem1Args {
    #[arg(long, default_value_t = 1000)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run a falsification batch that breaks the named budget; the command
    /// then succeeds when the violations are detected.
    #[arg(long, value_enum)]
    violate: Option<ViolateArg>,
    /// Disable the parallel fan-out over runs.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ViolateArg {
    Des1,
    Des2,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input sizes (total signal instances), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,300,1000,3000")]
    sizes: Vec<u64>,
    #[arg(long, default_value_t = 10)]
    signals_per_lifespan: u64,
    #[arg(long, default_value_t = 1)]
    antigens_per_iteration: u64,
    #[arg(long, conflicts_with = "by_time")]
    by_count: Option<u64>,
    #[arg(long)]
    by_time: Option<f64>,
    /// Also measure host-clock analysis time (not reproducible across
    /// machines; simulated numbers stay authoritative).
    #[arg(long)]
    wall_clock: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// Print the full default configuration as TOML.
    #[arg(long)]
    print_defaults: bool,
}

fn parse_binding(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn read_batches(input: &str, format: Option<StreamFormat>) -> Result<Vec<IterationBatch>> {
    let format = format.unwrap_or_else(|| {
        if input.ends_with(".csv") {
            StreamFormat::Csv
        } else {
            StreamFormat::Jsonl
        }
    });
    let reader: Box<dyn Read> = if input == "-" {
        Box::new(std::io::stdin())
    } else {
        Box::new(File::open(input).with_context(|| format!("opening input {input}"))?)
    };
    let batches = match format {
        StreamFormat::Jsonl => read_stream_jsonl(BufReader::new(reader))?,
        StreamFormat::Csv => read_stream_csv(reader)?,
    };
    Ok(batches)
}

fn emit_report(report: &McavReport, json: bool, out: &mut dyn Write) -> Result<()> {
    if json {
        for row in report.rows() {
            serde_json::to_writer(&mut *out, &row)?;
            writeln!(out)?;
        }
    } else {
        write!(out, "{}", report.to_table())?;
    }
    Ok(())
}

fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let config = load_config(&args.config)?;
    let mut population_config = config.population.clone();
    if let Some(seed) = args.seed {
        population_config.seed = seed;
    }
    if let Some(cells) = args.cells {
        population_config.cell_count = cells;
    }
    let tau = args.tau.unwrap_or(config.analysis.tau);
    let batches = read_batches(&args.input, args.format)?;

    enum Engine {
        Plain(Box<Population>),
        Recorded(Box<RecordedPopulation>),
    }
    let exec = if args.parallel { ExecMode::Parallel } else { ExecMode::Sequential };
    let mut engine = match &args.record_traces {
        None => Engine::Plain(Box::new(Population::new(population_config)?.with_exec_mode(exec))),
        Some(_) => Engine::Recorded(Box::new(RecordedPopulation::new(
            population_config,
            config.instrument.clone(),
        )?)),
    };
    let mut step = |batch: &IterationBatch| -> Result<Vec<Presentation>> {
        match &mut engine {
            Engine::Plain(p) => Ok(p.step(batch)?),
            Engine::Recorded(p) => Ok(p.step(batch)?),
        }
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match args.analysis {
        AnalysisMode::Offline => {
            let mut log = PresentationLog::new();
            for batch in &batches {
                log.extend(step(batch)?);
            }
            let report = analyse_offline(&log, tau);
            emit_report(&report, args.json, &mut out)?;
        }
        AnalysisMode::Segmented => {
            let policy = match (args.by_count, args.by_time) {
                (Some(z), _) => SegmentationPolicy::ByCount(z),
                (None, Some(d)) => SegmentationPolicy::ByTime(d),
                (None, None) => config.analysis.segmentation,
            };
            let mut segmenter = Segmenter::new(policy)?;
            let mut reports: Vec<SegmentReport> = Vec::new();
            let handle = |seg_report: SegmentReport, reports: &mut Vec<SegmentReport>| {
                eprintln!(
                    "segment {} closed at t={} ({})",
                    seg_report.id, seg_report.close_time, seg_report.report.coverage
                );
                reports.push(seg_report);
            };
            for batch in &batches {
                for presentation in step(batch)? {
                    if let Some(seg) = segmenter.push(presentation) {
                        handle(analyse_segment(&seg, tau), &mut reports);
                    }
                }
            }
            if let Some(seg) = segmenter.finish() {
                handle(analyse_segment(&seg, tau), &mut reports);
            }
            if let Some(path) = &args.segments_out {
                let mut w = BufWriter::new(File::create(path)?);
                for r in &reports {
                    #[derive(Serialize)]
                    struct SegmentRow<'a> {
                        segment: u64,
                        close_time: f64,
                        #[serde(flatten)]
                        row: &'a dendrite_core::analysis::ReportRow,
                    }
                    for row in r.report.rows() {
                        serde_json::to_writer(
                            &mut w,
                            &SegmentRow { segment: r.id, close_time: r.close_time, row: &row },
                        )?;
                        writeln!(w)?;
                    }
                }
            } else if !args.json {
                for r in &reports {
                    writeln!(out, "-- segment {} ({})", r.id, r.report.coverage)?;
                    write!(out, "{}", r.report.to_table())?;
                }
            }
            let cumulative = merge(&reports.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
            if !args.json {
                writeln!(out, "-- cumulative")?;
            }
            emit_report(&cumulative, args.json, &mut out)?;
        }
    }

    if let Some(path) = &args.record_traces {
        match engine {
            Engine::Recorded(p) => {
                let traces = p.finish()?;
                let mut w = BufWriter::new(File::create(path)?);
                trace::write_traces_multiplexed(&traces, &mut w)?;
                eprintln!("recorded {} cell traces to {}", traces.len(), path.display());
            }
            Engine::Plain(_) => unreachable!("recording engine is constructed when requested"),
        }
    }
    Ok(0)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let config = load_config(&args.config)?;
    let mut synth = config.synth.clone();
    if let Some(n) = args.iterations {
        synth.iterations = n;
    }
    if let Some(seed) = args.seed {
        synth.seed = seed;
    }
    if let Some(f) = args.anomaly_fraction {
        synth.anomaly_fraction = f;
    }
    let output = generate(&synth);

    let mut w = BufWriter::new(
        File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?,
    );
    if args.output.extension().is_some_and(|e| e == "csv") {
        write_stream_csv(&output.instances, &synth, &config.population, &mut w)?;
    } else {
        write_stream_jsonl(&output.instances, &mut w)?;
    }
    w.flush()?;

    let labels_path = args
        .labels
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.labels.json", args.output.display())));
    let mut w = BufWriter::new(File::create(&labels_path)?);
    serde_json::to_writer_pretty(&mut w, &output.labels)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!(
        "wrote {} records to {} (labels: {})",
        output.instances.len(),
        args.output.display(),
        labels_path.display()
    );
    Ok(0)
}

/// CSV writer for generated streams: `t,kind,<categories...>,type,id`.
fn write_stream_csv(
    instances: &[dendrite_core::dca::cell::DataInstance],
    _synth: &SynthConfig,
    population: &PopulationConfig,
    w: &mut dyn Write,
) -> Result<()> {
    use dendrite_core::dca::cell::DataInstance;
    let categories = &population.cell.categories;
    let blank_cats = vec![""; categories.len()].join(",");
    writeln!(w, "t,kind,{},type,id", categories.join(","))?;
    for instance in instances {
        match instance {
            DataInstance::Signal(s) => {
                let values: Vec<String> = s.values.iter().map(f64::to_string).collect();
                writeln!(w, "{},signal,{},,", s.t, values.join(","))?;
            }
            DataInstance::Antigen(a) => {
                writeln!(w, "{},antigen,{},{},{}", a.t, blank_cats, a.antigen_type, a.id)?;
            }
        }
    }
    Ok(())
}

fn load_spec(name: &str) -> Result<SpecFile> {
    if name == format!("@{}", parser::BUNDLED_SPEC_NAME) {
        return Ok(parser::bundled_spec());
    }
    let text = std::fs::read_to_string(name).with_context(|| format!("reading spec {name}"))?;
    parser::parse_spec(&text).map_err(|e| anyhow!("{name}: {e}"))
}

fn load_trace(name: &str, cell: Option<usize>) -> Result<TimedTrace> {
    if name == "@golden" {
        return Ok(golden_trace());
    }
    let file = File::open(name).with_context(|| format!("opening trace {name}"))?;
    let mut traces = trace::read_traces(BufReader::new(file))?;
    if traces.is_empty() {
        bail!("{name}: no trace records found");
    }
    match cell {
        None if traces.len() == 1 => Ok(traces.remove(0).1),
        None => bail!(
            "{name} holds {} cell traces; select one with --cell",
            traces.len()
        ),
        Some(id) => traces
            .into_iter()
            .find(|(key, _)| *key == Some(id))
            .map(|(_, t)| t)
            .ok_or_else(|| anyhow!("{name}: no trace for cell {id}")),
    }
}

fn cmd_monitor(args: &MonitorArgs) -> Result<i32> {
    let spec = load_spec(&args.spec)?;
    let trace = load_trace(&args.trace, args.cell)?;
    let interval = match &args.interval {
        None => None,
        Some(bounds) => Some(
            Interval::try_new(bounds[0], bounds[1])
                .ok_or_else(|| anyhow!("--interval bounds must satisfy BEGIN <= END"))?,
        ),
    };
    for name in &args.formulas {
        if spec.formula(name).is_none() {
            bail!("formula `{name}` is not defined by the spec");
        }
    }
    let results = check_spec_file(&spec, &trace, &args.bindings, interval, &args.formulas);
    if results.is_empty() {
        bail!("the spec defines no formulas to check");
    }

    let mut all_true = true;
    if args.json {
        #[derive(Serialize)]
        struct Verdict<'a> {
            formula: &'a str,
            holds: Option<bool>,
            error: Option<String>,
        }
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        for (name, outcome) in &results {
            let verdict = match outcome {
                Ok(holds) => Verdict { formula: name, holds: Some(*holds), error: None },
                Err(e) => Verdict { formula: name, holds: None, error: Some(e.to_string()) },
            };
            serde_json::to_writer(&mut out, &verdict)?;
            writeln!(out)?;
        }
    }
    for (name, outcome) in &results {
        match outcome {
            Ok(true) => {
                if !args.json {
                    println!("{name}: pass");
                }
            }
            Ok(false) => {
                if !args.json {
                    println!("{name}: FAIL");
                }
                all_true = false;
            }
            Err(e) => {
                if !args.json {
                    println!("{name}: ERROR ({e})");
                }
                all_true = false;
            }
        }
    }
    Ok(if all_true { 0 } else { 1 })
}

fn cmd_theorem1(args: &Theorem1Args) -> Result<i32> {
    let violation = args.violate.map(|v| match v {
        ViolateArg::Des1 => ViolationKind::Des1,
        ViolateArg::Des2 => ViolationKind::Des2,
    });
    let opts = ExperimentOptions {
        runs: args.runs,
        seed: args.seed,
        violation,
        exec: if args.sequential { ExecMode::Sequential } else { ExecMode::default() },
    };
    let summary = theorem1_experiment(&opts)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", summary.to_text());
    }
    let ok = match violation {
        // Conforming mode: the guarantee must hold in every run.
        None => summary.req_held == summary.runs && summary.des1_held == summary.runs && summary.des2_held == summary.runs,
        // Falsification mode succeeds when the broken budget is caught in
        // every run and at least one deadline violation was witnessed.
        Some(ViolationKind::Des1) => {
            summary.des1_held == 0 && summary.req_held < summary.runs.max(1)
        }
        Some(ViolationKind::Des2) => {
            summary.des2_held == 0 && summary.req_held < summary.runs.max(1)
        }
    };
    Ok(if ok { 0 } else { 1 })
}

fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let config = load_config(&args.config)?;
    let policy = match (args.by_count, args.by_time) {
        (Some(z), _) => SegmentationPolicy::ByCount(z),
        (None, Some(d)) => SegmentationPolicy::ByTime(d),
        (None, None) => SegmentationPolicy::ByCount(10),
    };
    let mut model = LatencyModel {
        plan: dendrite_core::instrument::CellRunPlan::with_fixed_lifespan(
            args.signals_per_lifespan,
            0,
        ),
        signals_per_lifespan: args.signals_per_lifespan,
        policy,
    };
    model.plan.antigens_per_iteration = args.antigens_per_iteration;
    model.plan.instrument.durations = config.instrument.durations.clone();
    model.plan.instrument.tick_seconds = config.instrument.tick_seconds;
    let rows = run_latency_model(&model, &args.sizes)?;

    if args.json {
        for row in &rows {
            println!("{}", serde_json::to_string(row)?);
        }
    } else {
        print!("{}", table(&rows));
    }

    if args.wall_clock {
        // Host-clock cross-check: time the analysis passes themselves.
        for &m in &args.sizes {
            let plan = dendrite_core::instrument::CellRunPlan {
                signals: m,
                antigens_per_iteration: args.antigens_per_iteration,
                ..model.plan.clone()
            };
            let run = dendrite_core::instrument::run_instrumented_cell(&plan)?;
            let log: PresentationLog = run.presentations.iter().cloned().collect();
            let t0 = std::time::Instant::now();
            let offline = analyse_offline(&log, config.analysis.tau);
            let offline_us = t0.elapsed().as_micros();
            let t0 = std::time::Instant::now();
            let segments = dendrite_core::analysis::segment(run.presentations.clone(), policy)?;
            let mut reports = Vec::new();
            for seg in &segments {
                reports.push(analyse_segment(seg, config.analysis.tau));
            }
            let segmented_us = t0.elapsed().as_micros();
            eprintln!(
                "m={m}: host analysis offline {offline_us}us ({} types), segmented {segmented_us}us over {} segments",
                offline.rows().len(),
                reports.len()
            );
        }
    }
    Ok(0)
}

fn cmd_config(args: &ConfigArgs) -> Result<i32> {
    if args.print_defaults {
        print!("{}", toml::to_string_pretty(&EngineConfig::default())?);
        Ok(0)
    } else {
        bail!("nothing to do; try --print-defaults");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Detect(args) => cmd_detect(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Monitor(args) => cmd_monitor(args),
        Command::Theorem1(args) => cmd_theorem1(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Config(args) => cmd_config(args),
    };
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
