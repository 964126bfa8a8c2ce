//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Stated runtime budgets are asserted; criteria without one only assert
//! their substance. All randomness is seeded, so every run checks the same
//! cases.

mod common;

use common::{arb_formula, arb_trace, oracle, test_valuation};
use dendrite_core::analysis::{analyse_offline, analyse_segmented, SegmentationPolicy};
use dendrite_core::dc::eval::{eval_formula, integrate_ticks, Evaluator};
use dendrite_core::dc::parser::{bundled_spec, format, parse_formula};
use dendrite_core::dc::time::Interval;
use dendrite_core::dca::cell::{Antigen, CellConfig, Signal};
use dendrite_core::dca::population::{IterationBatch, Population, PopulationConfig};
use dendrite_core::instrument::{check_duration_identity, golden_run, EventDurations};
use dendrite_core::latency::{run_latency_model, LatencyModel};
use dendrite_core::monitor::{
    build_spec, check, theorem1_experiment, ExperimentOptions, MonitorParams, ViolationKind,
};
use dendrite_core::synth::{generate, SynthConfig};
use dendrite_core::ExecMode;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

fn run_criterion(id: u32, name: &str, budget: Option<Duration>, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    match outcome {
        Ok(()) => {
            if let Some(budget) = budget {
                if elapsed > budget {
                    println!(
                        "acceptance {id} ({name}): FAIL [took {elapsed:.2?}, budget {budget:.2?}]"
                    );
                    panic!("criterion {id} exceeded its runtime budget");
                }
            }
            println!("acceptance {id} ({name}): PASS [{elapsed:.2?}]");
        }
        Err(cause) => {
            println!("acceptance {id} ({name}): FAIL [{elapsed:.2?}]");
            resume_unwind(cause);
        }
    }
}

/// Deterministic sampler over proptest strategies.
fn sampler(seed: u64) -> TestRunner {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    TestRunner::new_with_rng(Config::default(), TestRng::from_seed(RngAlgorithm::ChaCha, &bytes))
}

fn sample<T: std::fmt::Debug>(strategy: &impl Strategy<Value = T>, runner: &mut TestRunner) -> T {
    strategy.new_tree(runner).expect("generation succeeds").current()
}

/// 1. The unit-duration reference trace: phase formulas hold on their
///    phases, measured durations are exact, and the lifespan accounting
///    identity holds.
#[test]
fn criterion_1_golden_trace() {
    run_criterion(1, "golden reference trace", Some(Duration::from_secs(1)), || {
        let run = golden_run();
        let params = MonitorParams {
            iteration_ticks: 5,
            bound_ticks: 10,
            signals_per_lifespan: 1,
            durations: EventDurations::unit(),
            tick_seconds: 1.0,
        };
        let bundle = build_spec(&params).unwrap();
        let eval = Evaluator::new(&run.trace);
        let f1 = bundle.formula("F1").unwrap();
        let f2 = bundle.formula("F2").unwrap();
        assert!(
            eval.formula(f1, &bundle.valuation, Interval::new(0u64, 5u64)).unwrap(),
            "F1 must hold on [0, 5]"
        );
        assert!(
            eval.formula(f2, &bundle.valuation, Interval::new(5u64, 6u64)).unwrap(),
            "F2 must hold on [5, 6]"
        );

        // two unit-length processing episodes
        use dendrite_core::dc::syntax::{Formula, StateAssertion};
        let e1 = StateAssertion::var("E1");
        assert_eq!(integrate_ticks(&run.trace, &e1, Interval::new(0u64, 6u64)).unwrap(), 2);
        // the first two events split [0, 2] at tick 1
        let chop = Formula::ae(e1).chop(Formula::ae(StateAssertion::var("E2")));
        assert!(eval_formula(&run.trace, &chop, &bundle.valuation, Interval::new(0u64, 2u64)).unwrap());

        assert_eq!(run.lifespans.len(), 1);
        let ls = &run.lifespans[0];
        assert_eq!(ls.immature_ticks, 5, "∫I");
        assert_eq!(ls.matured_ticks, 1, "∫M");
        assert_eq!(ls.lifespan_ticks(), 6, "c");
        // duration accounting: 5 = 1·(1+1) + 1·(1+1) + 1·1
        #[allow(clippy::identity_op)]
        let accounted = 1 * (1 + 1) + 1 * (1 + 1) + 1 * 1;
        assert_eq!(ls.immature_ticks, accounted);
        assert!(check_duration_identity(ls, &EventDurations::unit()).unwrap());

        // and the budget/deadline checks all hold
        let verdict = check(&run.trace, &params).unwrap();
        assert!(verdict.all_hold(), "{verdict:?}");
    });
}

/// 2. The guarantee as a property: 1000 conforming lifespans all satisfy
///    the deadline; a falsification batch is fully detected.
#[test]
fn criterion_2_theorem_property_suite() {
    run_criterion(2, "real-time guarantee property suite", Some(Duration::from_secs(30)), || {
        let conforming = theorem1_experiment(&ExperimentOptions {
            runs: 1000,
            seed: 2024,
            violation: None,
            exec: ExecMode::default(),
        })
        .unwrap();
        assert_eq!(conforming.req_held, 1000, "deadline must hold in 1000/1000 runs");
        assert_eq!(conforming.des1_held, 1000);
        assert_eq!(conforming.des2_held, 1000);
        assert!(conforming.slack_min >= 0);

        let falsified = theorem1_experiment(&ExperimentOptions {
            runs: 100,
            seed: 2025,
            violation: Some(ViolationKind::Des1),
            exec: ExecMode::default(),
        })
        .unwrap();
        assert_eq!(falsified.des1_held, 0, "budget violations must be detected in 100/100 runs");
        assert!(falsified.req_held < 100, "at least one deadline violation expected");
        assert!(!falsified.witnesses.is_empty(), "violations must be witnessed");
    });
}

/// 3. Evaluator agrees with the exhaustive chop-point enumeration oracle
///    on 200 random (trace, formula, interval) cases.
#[test]
fn criterion_3_evaluator_oracle_equivalence() {
    run_criterion(3, "evaluator/oracle equivalence", Some(Duration::from_secs(60)), || {
        let mut runner = sampler(3);
        let traces = arb_trace(20);
        let formulas = arb_formula(4);
        let val = test_valuation();
        for case in 0..200 {
            let trace = sample(&traces, &mut runner);
            let formula = sample(&formulas, &mut runner);
            let horizon = trace.horizon().value();
            let b = case as u64 % (horizon + 1);
            let e = b + (case as u64 * 7919) % (horizon - b + 1);
            let iv = Interval::new(b, e);
            let fast = eval_formula(&trace, &formula, &val, iv).unwrap();
            let slow = oracle::eval_formula(&trace, &formula, &val, iv);
            assert_eq!(fast, slow, "case {case}: {formula} on {iv}\n{trace}");
        }
    });
}

/// 4. Exact integral identities on 100 random traces.
#[test]
fn criterion_4_integral_identities() {
    run_criterion(4, "integral identities", None, || {
        let mut runner = sampler(4);
        let traces = arb_trace(24);
        let assertions = common::arb_assertion(3);
        for case in 0..100 {
            let trace = sample(&traces, &mut runner);
            let p = sample(&assertions, &mut runner);
            let q = sample(&assertions, &mut runner);
            let horizon = trace.horizon().value();
            let iv = Interval::new(case as u64 % (horizon + 1), horizon);
            let ticks = iv.ticks();
            let p_dur = integrate_ticks(&trace, &p, iv).unwrap();
            let p_not = integrate_ticks(&trace, &p.clone().not(), iv).unwrap();
            assert_eq!(p_dur + p_not, ticks, "case {case}: ∫P + ∫¬P ≠ ℓ");
            let union = integrate_ticks(&trace, &p.clone().or(q.clone()), iv).unwrap();
            let inter = integrate_ticks(&trace, &p.clone().and(q.clone()), iv).unwrap();
            let q_dur = integrate_ticks(&trace, &q, iv).unwrap();
            assert_eq!(union + inter, p_dur + q_dur, "case {case}: inclusion-exclusion");
        }
    });
}

/// 5. Segmented analysis merges back to the offline report exactly, for
///    count and time policies over 50 random runs.
#[test]
fn criterion_5_segmentation_equivalence() {
    run_criterion(5, "segmentation equivalence", None, || {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let policies = [
            SegmentationPolicy::ByCount(1),
            SegmentationPolicy::ByCount(5),
            SegmentationPolicy::ByCount(10),
            SegmentationPolicy::ByTime(2.0),
            SegmentationPolicy::ByTime(7.0),
            SegmentationPolicy::ByTime(19.0),
        ];
        for case in 0..50u64 {
            let stream: Vec<IterationBatch> = (0..rng.random_range(10..60))
                .map(|k| IterationBatch {
                    signal: Signal {
                        t: k as f64,
                        values: vec![
                            rng.random_range(0.0..2.0),
                            rng.random_range(0.0..3.0),
                            rng.random_range(0.0..2.0),
                        ],
                    },
                    antigens: (0..rng.random_range(0..4))
                        .map(|j| Antigen {
                            t: k as f64 + 0.1 * (j + 1) as f64,
                            antigen_type: ["a", "b", "c", "d"][rng.random_range(0..4)].into(),
                            id: k * 10 + j,
                        })
                        .collect(),
                })
                .collect();
            let mut population = Population::new(PopulationConfig {
                cell_count: 4,
                cell: CellConfig {
                    threshold_low: 5.0,
                    threshold_high: 15.0,
                    ..CellConfig::default()
                },
                seed: case,
                ..PopulationConfig::default()
            })
            .unwrap();
            let log = population.run(stream).unwrap();
            let offline = analyse_offline(&log, 0.5);
            for policy in policies {
                let (_, cumulative) =
                    analyse_segmented(log.presentations().to_vec(), policy, 0.5).unwrap();
                assert_eq!(
                    cumulative.counts(),
                    offline.counts(),
                    "case {case}, policy {policy:?}"
                );
            }
        }
    });
}

/// 6. Offline completion grows affinely in the input size with slope c/m̄;
///    segmented per-segment latency stays flat.
#[test]
fn criterion_6_latency_scaling() {
    run_criterion(6, "latency scaling", None, || {
        let model = LatencyModel::default();
        let sizes = [100u64, 300, 1000, 3000];
        let rows = run_latency_model(&model, &sizes).unwrap();

        // least-squares fit of offline completion against m
        let xs: Vec<f64> = rows.iter().map(|r| r.total_signals as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.offline_completion).collect();
        let n = xs.len() as f64;
        let x_mean = xs.iter().sum::<f64>() / n;
        let y_mean = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
        let slope = sxy / sxx;
        let intercept = y_mean - slope * x_mean;
        let ss_res: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
            .sum();
        let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
        let r_squared = 1.0 - ss_res / ss_tot;
        assert!(r_squared > 0.99, "R² = {r_squared}");

        let expected_slope = rows[0].lifespan_seconds / model.signals_per_lifespan as f64;
        let relative = (slope - expected_slope).abs() / expected_slope;
        assert!(
            relative <= 0.05,
            "slope {slope} deviates {relative:.3} from c/m̄ = {expected_slope}"
        );

        // per-segment latency must not grow with m: every per-m maximum
        // stays under twice the median of the per-m medians
        let mut medians: Vec<f64> = rows.iter().map(|r| r.segment_latency_median).collect();
        medians.sort_by(f64::total_cmp);
        let median = medians[medians.len() / 2];
        assert!(median > 0.0);
        for row in &rows {
            assert!(
                row.segment_latency_max < 2.0 * median,
                "m = {}: segment latency {} vs median {median}",
                row.total_signals,
                row.segment_latency_max
            );
        }
    });
}

/// 7. Detection smoke test: the planted anomalous type separates from
///    every normal type by at least 0.3 in 9 of 10 seeds.
#[test]
fn criterion_7_detection_smoke() {
    run_criterion(7, "detection smoke test", Some(Duration::from_secs(30)), || {
        let mut separated = 0;
        for seed in 0..10u64 {
            let synth = SynthConfig { seed, ..SynthConfig::default() };
            let output = generate(&synth);
            let batches = dendrite_core::dca::population::batch_instances(output.instances).unwrap();
            let mut population =
                Population::new(PopulationConfig { seed, ..PopulationConfig::default() }).unwrap();
            let log = population.run(batches).unwrap();
            let report = analyse_offline(&log, 0.5);

            let anomalous = report.get(&synth.anomalous_type).map(|c| c.mcav_f64());
            let max_normal = synth
                .normal_types
                .iter()
                .filter_map(|ty| report.get(ty))
                .map(|c| c.mcav_f64())
                .fold(0.0f64, f64::max);
            match anomalous {
                Some(score) if score - max_normal >= 0.3 => separated += 1,
                Some(score) => eprintln!(
                    "seed {seed}: gap {:.3} (anomalous {score:.3}, best normal {max_normal:.3})",
                    score - max_normal
                ),
                None => eprintln!("seed {seed}: anomalous type never presented"),
            }
        }
        assert!(separated >= 9, "separation in only {separated}/10 seeds");
    });
}

/// 8. Canonical printing reparses to the same AST for 500 generated
///    formulas and for the shipped spec bundle.
#[test]
fn criterion_8_parser_roundtrip() {
    run_criterion(8, "parser round-trip", None, || {
        let mut runner = sampler(8);
        let formulas = arb_formula(6);
        for case in 0..500 {
            let f = sample(&formulas, &mut runner);
            let text = format(&f);
            let back = parse_formula(&text)
                .unwrap_or_else(|e| panic!("case {case}: `{text}` fails to reparse: {e}"));
            assert_eq!(back, f, "case {case}: `{text}`");
        }
        let spec = bundled_spec();
        assert!(spec.formula("F1").is_some());
        assert!(spec.formula("Req").is_some());
        assert!(spec.formula("Des1").is_some());
        assert!(spec.formula("Des2").is_some());
        for (name, f) in &spec.formulas {
            let text = format(f);
            let back =
                parse_formula(&text).unwrap_or_else(|e| panic!("{name}: `{text}`: {e}"));
            assert_eq!(&back, f, "{name}");
        }
    });
}
