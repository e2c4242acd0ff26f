//! Shared fixtures for the criterion benches in `benches/`.

use qnoise::noise::{design_bandpass, DEFAULT_GRID, DEFAULT_TAPS};
use qnoise::sequences::{filter_functions, make_sequences};
use qnoise::sim::{records_of, run_experiment};
use qnoise::{
    ArmaModel, ExperimentRecord, Family, FilterFunction, InjectionMode, PulseErrorModel, PulseSequence, TargetState,
};

pub const TG: f64 = 100e-9;

/// A probe set with its filter functions and a 1 MHz bandpass model.
pub struct Fixture {
    pub seqs: Vec<PulseSequence>,
    pub filters: Vec<FilterFunction>,
    pub model: ArmaModel,
}

impl Fixture {
    pub fn new(k: usize, n: usize) -> Self {
        let seqs = make_sequences(Family::Fttps, k, n, TG).unwrap();
        let filters = filter_functions(&seqs, DEFAULT_GRID).unwrap();
        let model = design_bandpass(1e6, 0.2e6, 6e-4, TG, DEFAULT_TAPS).unwrap();
        Fixture { seqs, filters, model }
    }

    pub fn records(&self, trajectories: usize, seed: u64) -> Vec<ExperimentRecord> {
        let mode = InjectionMode::Gate { trajectories, shots_per_trajectory: 1000 };
        let runs = run_experiment(&self.seqs, &self.model, None, &PulseErrorModel::default(), mode, TargetState::One, seed)
            .unwrap();
        records_of(&runs)
    }
}
