//! The dendritic cell detection engine: single-cell state machines and
//! their iteration-clocked population.

pub mod cell;
pub mod population;

pub use cell::{classify, Antigen, Cell, CellConfig, CellError, CellState, DataInstance, InstanceKind, MaturedContext, Presentation, Signal};
pub use population::{AntigenDistribution, EngineError, IterationBatch, Population, PopulationConfig, StreamError};
