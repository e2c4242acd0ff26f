//! Synthesis of temporally correlated dephasing noise from ARMA models,
//! Monte-Carlo injection into single-qubit probe circuits, and recovery of
//! the injected spectrum by filter-function inversion and model fitting.

pub mod error;
pub mod io;
pub mod noise;
pub mod predictor;
pub mod qasm;
pub mod recon;
pub mod seed;
pub mod sequences;
pub mod sim;

pub use error::{Error, Result};
pub use noise::{ArmaModel, Band, Spectrum, Trajectory};
pub use seed::SeedLineage;
pub use predictor::{FitParams, FitReport, ModelKind};
pub use recon::{Decay, Reconstruction};
pub use sequences::{Family, FilterFunction, PulseSequence};
pub use sim::{ExperimentRecord, InjectionMode, PulseErrorModel, SequenceRun, TargetState};
