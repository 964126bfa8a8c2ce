//! Synthetic labeled streams: a baseline regime of safe-dominated signals
//! and benign antigen types, with an injected window where the danger
//! signal runs high and a designated anomalous antigen type appears.

use crate::dca::cell::{Antigen, DataInstance, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Signal instances to generate.
    pub iterations: u64,
    /// Spacing between signals, seconds.
    pub iteration_seconds: f64,
    pub antigens_per_iteration: u64,
    pub normal_types: Vec<String>,
    pub anomalous_type: String,
    /// Anomaly window as fractions of the timeline, right-open.
    pub window: (f64, f64),
    /// Probability that a window antigen is the anomalous type; 0 plants
    /// no anomaly at all.
    pub anomaly_fraction: f64,
    /// Signal levels per category (pamp, danger, safe).
    pub baseline_signal: Vec<f64>,
    pub anomaly_signal: Vec<f64>,
    /// Multiplicative jitter amplitude on signal values, in [0, 1].
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            iterations: 400,
            iteration_seconds: 1.0,
            antigens_per_iteration: 4,
            normal_types: vec!["http".into(), "dns".into(), "smtp".into()],
            anomalous_type: "exfil".into(),
            window: (0.6, 0.85),
            anomaly_fraction: 0.9,
            baseline_signal: vec![0.0, 0.5, 2.0],
            anomaly_signal: vec![2.0, 4.0, 0.2],
            noise: 0.1,
            seed: 0,
        }
    }
}

/// A generated stream plus its per-type ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub instances: Vec<DataInstance>,
    /// Per antigen type: whether it was planted as anomalous. Only types
    /// that actually occur appear here.
    pub labels: BTreeMap<String, bool>,
}

/// Deterministically generates the labeled stream for the config.
pub fn generate(config: &SynthConfig) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut instances = Vec::new();
    let mut labels: BTreeMap<String, bool> = BTreeMap::new();
    let mut antigen_id = 0u64;

    for k in 0..config.iterations {
        let t = k as f64 * config.iteration_seconds;
        let frac = if config.iterations == 0 { 0.0 } else { k as f64 / config.iterations as f64 };
        let in_window = frac >= config.window.0 && frac < config.window.1;
        let base = if in_window { &config.anomaly_signal } else { &config.baseline_signal };
        let values: Vec<f64> = base
            .iter()
            .map(|v| {
                let jitter = 1.0 + config.noise * (rng.random::<f64>() * 2.0 - 1.0);
                (v * jitter).max(0.0)
            })
            .collect();
        instances.push(DataInstance::Signal(Signal { t, values }));

        for j in 0..config.antigens_per_iteration {
            let anomalous = in_window && rng.random::<f64>() < config.anomaly_fraction;
            let antigen_type = if anomalous {
                config.anomalous_type.clone()
            } else {
                let pick = rng.random_range(0..config.normal_types.len());
                config.normal_types[pick].clone()
            };
            labels.entry(antigen_type.clone()).or_insert(anomalous);
            let offset = (j + 1) as f64 / (config.antigens_per_iteration + 1) as f64;
            instances.push(DataInstance::Antigen(Antigen {
                t: t + offset * config.iteration_seconds,
                antigen_type,
                id: antigen_id,
            }));
            antigen_id += 1;
        }
    }

    SynthOutput { instances, labels }
}
