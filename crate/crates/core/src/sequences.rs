//! Fixed total-time π-pulse probe sequences and their filter functions.
//!
//! A sequence has `N` gate slots of length `t_G`. In slot `j` the qubit first
//! picks up the phase `φ_j`, then the slot gate (identity or `R_x(±π)`) acts.
//! The switching function is therefore `y_j = (−1)^{#pulses in slots < j}`,
//! and the accumulated phase is `Φ = Σ y_j φ_j`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_csv, parse_csv};
use crate::noise::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// All pulses `R_x(+π)`.
    Fttps,
    /// Alternating `R_x(+π)`, `R_x(−π)`.
    Rfttps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub n_slots: usize,
    /// 1-based slot indices, strictly ascending.
    pub pulse_slots: Vec<usize>,
    pub pulse_signs: Vec<i8>,
    pub gate_period: f64,
    pub label: usize,
}

#[derive(Serialize, Deserialize)]
struct PulseDoc {
    slot: usize,
    sign: i8,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceDoc {
    label: usize,
    n_slots: usize,
    gate_period_s: f64,
    #[serde(default)]
    pulses: Vec<PulseDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceSetDoc {
    #[serde(default = "default_schema")]
    schema: u32,
    sequences: Vec<SequenceDoc>,
}

fn default_schema() -> u32 {
    1
}

impl PulseSequence {
    pub fn new(
        n_slots: usize,
        pulse_slots: Vec<usize>,
        pulse_signs: Vec<i8>,
        gate_period: f64,
        label: usize,
    ) -> Result<Self> {
        if n_slots == 0 {
            return Err(Error::invalid("sequence needs at least one slot"));
        }
        if !(gate_period.is_finite() && gate_period > 0.0) {
            return Err(Error::invalid("gate period must be > 0"));
        }
        if pulse_slots.len() != pulse_signs.len() {
            return Err(Error::invalid("one sign is required per pulse"));
        }
        if pulse_slots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("pulse slots must be strictly ascending: {pulse_slots:?}")));
        }
        if pulse_slots.iter().any(|&s| s == 0 || s > n_slots) {
            return Err(Error::invalid(format!("pulse slots must lie in [1, {n_slots}]")));
        }
        if pulse_signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("pulse signs must be +1 or -1"));
        }
        Ok(PulseSequence { n_slots, pulse_slots, pulse_signs, gate_period, label })
    }

    pub fn n_pulses(&self) -> usize {
        self.pulse_slots.len()
    }

    pub fn total_time(&self) -> f64 {
        self.n_slots as f64 * self.gate_period
    }

    /// Nominal probe frequency `n_k / (2 N t_G)`.
    pub fn peak_frequency(&self) -> f64 {
        self.n_pulses() as f64 / (2.0 * self.total_time())
    }

    /// Sign of the pulse in slot `j` (1-based), if any.
    pub fn pulse_at(&self, j: usize) -> Option<i8> {
        self.pulse_slots.binary_search(&j).ok().map(|i| self.pulse_signs[i])
    }

    pub fn switching_function(&self) -> Vec<i8> {
        let mut y = Vec::with_capacity(self.n_slots);
        let mut sign = 1i8;
        let mut next = self.pulse_slots.iter().peekable();
        for j in 1..=self.n_slots {
            y.push(sign);
            if next.peek() == Some(&&j) {
                next.next();
                sign = -sign;
            }
        }
        y
    }

    /// `Y(θ) = Σ_j y_j e^{−iθj}`.
    pub fn switching_transform(&self, theta: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, -theta);
        let mut phase = step;
        let mut acc = Complex64::new(0.0, 0.0);
        for y in self.switching_function() {
            acc += phase * y as f64;
            phase *= step;
        }
        acc
    }

    /// Accumulated toggled phase `Φ = Σ y_j φ_j` over the first `N` entries.
    pub fn toggled_phase(&self, phases: &[f64]) -> f64 {
        self.switching_function().iter().zip(phases).map(|(y, p)| *y as f64 * p).sum()
    }

    /// Filter weights on the physical one-sided grid `[0, 1/(2 t_G)]`.
    pub fn filter_function(&self, grid_size: usize) -> Result<FilterFunction> {
        if grid_size < 2 {
            return Err(Error::invalid("grid_size must be >= 2"));
        }
        let intervals = (grid_size - 1) as f64;
        let nyq = 0.5 / self.gate_period;
        let df = nyq / intervals;
        let y = self.switching_function();
        let mut freqs = Vec::with_capacity(grid_size);
        let mut weights = Vec::with_capacity(grid_size);
        for m in 0..grid_size {
            let theta = PI * m as f64 / intervals;
            let step = Complex64::from_polar(1.0, -theta);
            let mut phase = step;
            let mut acc = Complex64::new(0.0, 0.0);
            for &yj in &y {
                acc += phase * yj as f64;
                phase *= step;
            }
            let trap = if m == 0 || m + 1 == grid_size { 0.5 } else { 1.0 };
            freqs.push(nyq * m as f64 / intervals);
            weights.push(0.5 * acc.norm_sqr() * trap * df);
        }
        Ok(FilterFunction {
            freqs,
            weights,
            label: self.label,
            n_pulses: self.n_pulses(),
            sample_period: self.gate_period,
            total_time: self.total_time(),
        })
    }

    /// Exact Gaussian decay exponent `χ = ½ Σ_{j,l} y_j y_l r(|j−l|)`.
    pub fn chi_time_domain(&self, autocov: &[f64]) -> Result<f64> {
        let n = self.n_slots;
        if autocov.len() < n {
            return Err(Error::invalid(format!(
                "autocovariance must reach lag {}, got {} values",
                n - 1,
                autocov.len()
            )));
        }
        let y: Vec<f64> = self.switching_function().iter().map(|&v| v as f64).collect();
        let mut chi = n as f64 * autocov[0];
        for d in 1..n {
            let corr: f64 = y.iter().zip(&y[d..]).map(|(a, b)| a * b).sum();
            chi += 2.0 * autocov[d] * corr;
        }
        Ok(0.5 * chi)
    }
}

/// Slot of pulse `j` (1-based) out of `k`: `round((j − ½)·N/k)`, halves rounded up.
fn cpmg_slot(j: usize, k: usize, n: usize) -> usize {
    ((2 * j - 1) * n + k) / (2 * k)
}

/// Builds `K` fixed total-time sequences; sequence `k` carries `k` pulses.
pub fn make_sequences(family: Family, count: usize, n_slots: usize, gate_period: f64) -> Result<Vec<PulseSequence>> {
    if count == 0 {
        return Err(Error::invalid("sequence count must be >= 1"));
    }
    if count > n_slots {
        return Err(Error::invalid(format!(
            "sequence count {count} exceeds slot count {n_slots}; pulse slots would collide"
        )));
    }
    (0..count)
        .map(|k| {
            let slots: Vec<usize> = (1..=k).map(|j| cpmg_slot(j, k, n_slots)).collect();
            if slots.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(format!("duplicate pulse slots for sequence {k}")));
            }
            let signs = match family {
                Family::Fttps => vec![1; k],
                Family::Rfttps => (0..k).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect(),
            };
            PulseSequence::new(n_slots, slots, signs, gate_period, k)
        })
        .collect()
}

pub fn make_fttps(count: usize, n_slots: usize, gate_period: f64) -> Result<Vec<PulseSequence>> {
    make_sequences(Family::Fttps, count, n_slots, gate_period)
}

pub fn make_rfttps(count: usize, n_slots: usize, gate_period: f64) -> Result<Vec<PulseSequence>> {
    make_sequences(Family::Rfttps, count, n_slots, gate_period)
}

pub fn sequences_to_toml(seqs: &[PulseSequence]) -> String {
    let doc = SequenceSetDoc {
        schema: 1,
        sequences: seqs
            .iter()
            .map(|s| SequenceDoc {
                label: s.label,
                n_slots: s.n_slots,
                gate_period_s: s.gate_period,
                pulses: s
                    .pulse_slots
                    .iter()
                    .zip(&s.pulse_signs)
                    .map(|(&slot, &sign)| PulseDoc { slot, sign })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("sequence document serializes")
}

pub fn sequences_from_toml(text: &str) -> Result<Vec<PulseSequence>> {
    let doc: SequenceSetDoc = toml::from_str(text).map_err(|e| crate::io::toml_error(text, &e))?;
    if doc.schema != 1 {
        return Err(Error::invalid(format!("unsupported sequence schema {}", doc.schema)));
    }
    doc.sequences
        .into_iter()
        .map(|s| {
            let (slots, signs) = s.pulses.iter().map(|p| (p.slot, p.sign)).unzip();
            PulseSequence::new(s.n_slots, slots, signs, s.gate_period_s, s.label)
        })
        .collect()
}

/// Frequency weights `g_k` with `χ_k = Σ_m g_k[m] S[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterFunction {
    pub freqs: Vec<f64>,
    pub weights: Vec<f64>,
    pub label: usize,
    pub n_pulses: usize,
    pub sample_period: f64,
    /// Total duration `N t_G` of the generating sequence.
    pub total_time: f64,
}

impl FilterFunction {
    /// Nominal probe frequency `n_k / (2T)`.
    pub fn nominal_frequency(&self) -> f64 {
        self.n_pulses as f64 / (2.0 * self.total_time)
    }

    /// `Σ_m g[m] S[m]`; the spectrum must share the filter grid.
    pub fn contract(&self, spectrum: &Spectrum) -> Result<f64> {
        self.check_grid(&spectrum.freqs)?;
        Ok(self.weights.iter().zip(&spectrum.values).map(|(g, s)| g * s).sum())
    }

    pub fn check_grid(&self, freqs: &[f64]) -> Result<()> {
        if freqs.len() != self.freqs.len() {
            return Err(Error::GridMismatch(format!(
                "filter has {} points, spectrum {}",
                self.freqs.len(),
                freqs.len()
            )));
        }
        let tol = 1e-9 * self.freqs.last().copied().unwrap_or(1.0).abs().max(1.0);
        if self.freqs.iter().zip(freqs).any(|(a, b)| (a - b).abs() > tol) {
            return Err(Error::GridMismatch("filter and spectrum frequencies differ".into()));
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn peak_frequency(&self) -> f64 {
        let i = self
            .weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0;
        self.freqs[i]
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<f64>> = self.freqs.iter().zip(&self.weights).map(|(f, w)| vec![*f, *w]).collect();
        format_csv(&["freq_hz", "weight"], &rows)
    }

    pub fn from_csv(text: &str, seq: &PulseSequence) -> Result<Self> {
        let t = parse_csv(text, &["freq_hz", "weight"])?;
        let weights = t.column(1)?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("filter weights must be finite and non-negative"));
        }
        Ok(FilterFunction {
            freqs: t.column(0)?,
            weights,
            label: seq.label,
            n_pulses: seq.n_pulses(),
            sample_period: seq.gate_period,
            total_time: seq.total_time(),
        })
    }
}

/// Filter functions for a set of sequences on a common grid.
pub fn filter_functions(seqs: &[PulseSequence], grid_size: usize) -> Result<Vec<FilterFunction>> {
    use rayon::prelude::*;
    seqs.par_iter().map(|s| s.filter_function(grid_size)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{ArmaModel, DEFAULT_GRID};

    fn seq(n: usize, slots: &[usize]) -> PulseSequence {
        PulseSequence::new(n, slots.to_vec(), vec![1; slots.len()], 1e-7, 0).unwrap()
    }

    #[test]
    fn switching_function_parity() {
        assert_eq!(seq(4, &[]).switching_function(), vec![1, 1, 1, 1]);
        assert_eq!(seq(4, &[2]).switching_function(), vec![1, 1, -1, -1]);
        // the phase of slot j is picked up before the slot-j pulse acts
        assert_eq!(seq(4, &[1, 3]).switching_function(), vec![1, -1, -1, 1]);
    }

    #[test]
    fn fttps_layout() {
        let seqs = make_fttps(64, 128, 1e-7).unwrap();
        assert_eq!(seqs.len(), 64);
        for s in &seqs {
            approx::assert_relative_eq!(s.total_time(), 12.8e-6, max_relative = 1e-12);
            assert_eq!(s.n_pulses(), s.label);
            assert!(s.pulse_signs.iter().all(|&x| x == 1));
        }
        assert!(seqs[0].pulse_slots.is_empty());
        assert_eq!(seqs[1].pulse_slots, vec![64]);
        assert_eq!(seqs[2].pulse_slots, vec![32, 96]);
        assert!(make_fttps(129, 128, 1e-7).is_err());
        // K = N still places N distinct pulses
        let full = make_fttps(16, 16, 1e-7).unwrap();
        assert_eq!(full[15].pulse_slots.len(), 15);
    }

    #[test]
    fn rfttps_alternates_signs() {
        let r = make_rfttps(8, 128, 1e-7).unwrap();
        let f = make_fttps(8, 128, 1e-7).unwrap();
        assert_eq!(r[2].pulse_signs, vec![1, -1]);
        assert_eq!(r[0], f[0]);
        for (a, b) in r.iter().zip(&f) {
            assert_eq!(a.pulse_slots, b.pulse_slots);
            assert_eq!(a.switching_function(), b.switching_function());
        }
    }

    #[test]
    fn single_pulse_echo_balances() {
        let s = &make_fttps(2, 128, 1e-7).unwrap()[1];
        let total: i32 = s.switching_function().iter().map(|&v| v as i32).sum();
        assert_eq!(total, 0);
    }

    #[test]
    fn white_noise_chi_is_flat() {
        let sigma: f64 = 0.1;
        let r = ArmaModel::white(sigma, 1e-7).unwrap().autocovariance(127);
        for s in make_fttps(64, 128, 1e-7).unwrap() {
            approx::assert_relative_eq!(s.chi_time_domain(&r).unwrap(), 0.64, max_relative = 1e-12);
        }
        assert_eq!(seq(128, &[5]).chi_time_domain(&vec![0.0; 128]).unwrap(), 0.0);
        assert!(seq(128, &[5]).chi_time_domain(&[1.0; 10]).is_err());
    }

    #[test]
    fn filter_peak_tracks_pulse_count() {
        let seqs = make_fttps(64, 128, 1e-7).unwrap();
        let ff = seqs[32].filter_function(DEFAULT_GRID).unwrap();
        assert!((ff.peak_frequency() - 1.25e6).abs() < 2e3);
        let dc = seqs[0].filter_function(DEFAULT_GRID).unwrap();
        let low: f64 = dc.weights[..DEFAULT_GRID / 20].iter().sum();
        assert!(low / dc.total_weight() >= 0.8);
    }

    #[test]
    fn document_round_trip() {
        let seqs = make_rfttps(4, 16, 7e-8).unwrap();
        let text = sequences_to_toml(&seqs);
        assert!(text.contains("gate_period_s"));
        assert_eq!(sequences_from_toml(&text).unwrap(), seqs);
    }
}
