//! The single-cell state machine: an immature cell accumulates weighted
//! signal evidence and samples antigens until its migration threshold is
//! reached, then matures with a context (semimature or fully mature),
//! presents its stored antigens with one context bit, and is reinitialised
//! for the next lifespan.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// One environmental signal sample: a non-negative value per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub t: f64,
    pub values: Vec<f64>,
}

/// One categorical suspect to be judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Antigen {
    pub t: f64,
    pub antigen_type: String,
    pub id: u64,
}

/// A single input record, either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum DataInstance {
    Signal(Signal),
    Antigen(Antigen),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceKind {
    Signal,
    Antigen,
}

/// Routing tag of an instance: signals go to transformation, antigens to
/// sampling.
pub fn classify(instance: &DataInstance) -> InstanceKind {
    match instance {
        DataInstance::Signal(_) => InstanceKind::Signal,
        DataInstance::Antigen(_) => InstanceKind::Antigen,
    }
}

/// Per-cell parameters: the 2×k weight matrix of the signal transformation
/// and the migration threshold range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    /// Signal category names, fixing k.
    pub categories: Vec<String>,
    /// Costimulation weights (one per category).
    pub weights_csm: Vec<f64>,
    /// Context weights (one per category; negative values push towards
    /// the semimature context).
    pub weights_context: Vec<f64>,
    /// Migration threshold is drawn uniformly from this range at each
    /// reinitialisation.
    pub threshold_low: f64,
    pub threshold_high: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            categories: vec!["pamp".into(), "danger".into(), "safe".into()],
            weights_csm: vec![2.0, 1.0, 2.0],
            weights_context: vec![2.0, 1.0, -3.0],
            threshold_low: 10.0,
            threshold_high: 50.0,
        }
    }
}

impl CellConfig {
    pub fn signal_arity(&self) -> usize {
        self.categories.len()
    }

    pub fn validate(&self) -> Result<(), CellError> {
        let k = self.categories.len();
        if k == 0 {
            return Err(CellError::Config("at least one signal category is required".into()));
        }
        if self.weights_csm.len() != k || self.weights_context.len() != k {
            return Err(CellError::Config(format!(
                "weight rows must have {k} entries (csm: {}, context: {})",
                self.weights_csm.len(),
                self.weights_context.len()
            )));
        }
        if !(self.threshold_low > 0.0
            && self.threshold_high >= self.threshold_low
            && self.threshold_high.is_finite())
        {
            return Err(CellError::Config(format!(
                "threshold range [{}, {}] must satisfy 0 < low <= high",
                self.threshold_low, self.threshold_high
            )));
        }
        Ok(())
    }
}

/// Matured-cell context: the one-bit decision attached to every antigen of
/// the lifespan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaturedContext {
    /// Normal evidence dominated (context bit 0).
    Semimature,
    /// Anomalous evidence dominated (context bit 1).
    Mature,
}

impl MaturedContext {
    pub fn bit(self) -> u8 {
        match self {
            MaturedContext::Semimature => 0,
            MaturedContext::Mature => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Immature,
    Matured { context: MaturedContext, presented: bool },
}

/// Output of one lifespan: every stored antigen type with the cell's single
/// context decision, plus the lifespan's processing counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Presentation {
    pub time: f64,
    pub context: MaturedContext,
    pub antigens: Vec<String>,
    /// Signal instances processed this lifespan.
    pub signals_processed: u32,
    /// Antigen instances sampled this lifespan.
    pub antigens_sampled: u32,
}

impl Presentation {
    /// `(antigen_type, context_bit)` pairs; the bit is identical across
    /// items by construction (one cell, one decision).
    pub fn items(&self) -> impl Iterator<Item = (&str, u8)> {
        let bit = self.context.bit();
        self.antigens.iter().map(move |a| (a.as_str(), bit))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CellError {
    #[error("{0} requires an immature cell")]
    NotImmature(&'static str),
    #[error("{0} requires a matured cell")]
    NotMatured(&'static str),
    #[error("presentation was already emitted this lifespan")]
    AlreadyPresented,
    #[error("cell must present before reinitialisation")]
    NotPresented,
    #[error("signal vector has {got} categories, expected {expected}")]
    SignalArity { got: usize, expected: usize },
    #[error("expected an antigen instance")]
    NotAntigen,
    #[error("invalid cell config: {0}")]
    Config(String),
}

/// A single artificial cell. Single-owner mutable state; all randomness
/// comes from the injected generator.
#[derive(Debug, Clone)]
pub struct Cell {
    config: Arc<CellConfig>,
    state: CellState,
    csm: f64,
    context_acc: f64,
    antigen_store: Vec<(String, f64)>,
    threshold: f64,
    signals_processed: u32,
    antigens_sampled: u32,
    correlations: u32,
    rng: ChaCha8Rng,
}

impl Cell {
    pub fn new(config: Arc<CellConfig>, mut rng: ChaCha8Rng) -> Self {
        let threshold = draw_threshold(&config, &mut rng);
        Cell {
            config,
            state: CellState::Immature,
            csm: 0.0,
            context_acc: 0.0,
            antigen_store: Vec::new(),
            threshold,
            signals_processed: 0,
            antigens_sampled: 0,
            correlations: 0,
            rng,
        }
    }

    pub fn state(&self) -> CellState {
        self.state
    }

    pub fn csm(&self) -> f64 {
        self.csm
    }

    pub fn context_acc(&self) -> f64 {
        self.context_acc
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn signals_processed(&self) -> u32 {
        self.signals_processed
    }

    pub fn antigens_sampled(&self) -> u32 {
        self.antigens_sampled
    }

    pub fn correlations(&self) -> u32 {
        self.correlations
    }

    pub fn stored_antigens(&self) -> &[(String, f64)] {
        self.antigen_store.as_slice()
    }

    /// Signal transformation: adds the weighted signal to the costimulation
    /// and context accumulators.
    pub fn transform_signals(&mut self, values: &[f64]) -> Result<(), CellError> {
        if !matches!(self.state, CellState::Immature) {
            return Err(CellError::NotImmature("transform_signals"));
        }
        let k = self.config.signal_arity();
        if values.len() != k {
            return Err(CellError::SignalArity { got: values.len(), expected: k });
        }
        let dot = |w: &[f64]| w.iter().zip(values).map(|(w, v)| w * v).sum::<f64>();
        self.csm += dot(&self.config.weights_csm);
        self.context_acc += dot(&self.config.weights_context);
        self.signals_processed += 1;
        Ok(())
    }

    /// Antigen sampling: stores the antigen type with its timestamp.
    pub fn sample_antigen(&mut self, instance: &DataInstance) -> Result<(), CellError> {
        if !matches!(self.state, CellState::Immature) {
            return Err(CellError::NotImmature("sample_antigen"));
        }
        match instance {
            DataInstance::Antigen(a) => {
                self.antigen_store.push((a.antigen_type.clone(), a.t));
                self.antigens_sampled += 1;
                Ok(())
            }
            DataInstance::Signal(_) => Err(CellError::NotAntigen),
        }
    }

    /// Temporal correlation: associates the stored antigens with the signal
    /// context accumulated so far. Called once per processed signal
    /// instance; the decision bit itself is computed at presentation.
    pub fn correlate(&mut self) -> Result<(), CellError> {
        if !matches!(self.state, CellState::Immature) {
            return Err(CellError::NotImmature("correlate"));
        }
        self.correlations += 1;
        Ok(())
    }

    /// Migrates when the costimulation accumulator has reached the
    /// threshold (inclusive). Context: mature iff the context accumulator
    /// is strictly positive.
    pub fn maybe_migrate(&mut self) -> Option<MaturedContext> {
        if !matches!(self.state, CellState::Immature) {
            return None;
        }
        if self.csm >= self.threshold {
            let context = if self.context_acc > 0.0 {
                MaturedContext::Mature
            } else {
                MaturedContext::Semimature
            };
            self.state = CellState::Matured { context, presented: false };
            Some(context)
        } else {
            None
        }
    }

    /// Information presenting: emits every stored antigen with the lifespan
    /// context bit. Exactly once per lifespan.
    pub fn present(&mut self, now: f64) -> Result<Presentation, CellError> {
        match self.state {
            CellState::Immature => Err(CellError::NotMatured("present")),
            CellState::Matured { presented: true, .. } => Err(CellError::AlreadyPresented),
            CellState::Matured { context, presented: false } => {
                self.state = CellState::Matured { context, presented: true };
                Ok(Presentation {
                    time: now,
                    context,
                    antigens: self.antigen_store.iter().map(|(t, _)| t.clone()).collect(),
                    signals_processed: self.signals_processed,
                    antigens_sampled: self.antigens_sampled,
                })
            }
        }
    }

    /// Resets the cell to immature with empty accumulators and a freshly
    /// drawn migration threshold.
    pub fn reinitialise(&mut self) -> Result<(), CellError> {
        match self.state {
            CellState::Immature => Err(CellError::NotMatured("reinitialise")),
            CellState::Matured { presented: false, .. } => Err(CellError::NotPresented),
            CellState::Matured { presented: true, .. } => {
                self.state = CellState::Immature;
                self.csm = 0.0;
                self.context_acc = 0.0;
                self.antigen_store.clear();
                self.signals_processed = 0;
                self.antigens_sampled = 0;
                self.correlations = 0;
                self.threshold = draw_threshold(&self.config, &mut self.rng);
                Ok(())
            }
        }
    }
}

fn draw_threshold(config: &CellConfig, rng: &mut ChaCha8Rng) -> f64 {
    if config.threshold_low == config.threshold_high {
        config.threshold_low
    } else {
        rng.random_range(config.threshold_low..=config.threshold_high)
    }
}
