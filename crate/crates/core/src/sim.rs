//! Monte-Carlo simulation of a single qubit running a probe sequence with
//! interleaved `R_z` error gates.
//!
//! Circuit per shot: `R_x(π/2)` preparation; for each slot `j`, `R_z(φ_j)`
//! followed by the slot gate; a closing `R_x(±π/2)` chosen so that the
//! noiseless circuit ends in the target state; projective measurement.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Bernoulli, Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_cells, parse_csv};
use crate::noise::ArmaModel;
use crate::seed::SeedLineage;
use crate::sequences::PulseSequence;

pub const RECORD_HEADER: [&str; 7] =
    ["seq_index", "n_pulses", "survival_mean", "survival_stderr", "shots", "trajectories", "seed"];

/// Imperfections of the `R_x(±π)` pulses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseErrorModel {
    /// Coherent over-rotation ε (rad) added to every pulse angle.
    pub over_rotation: f64,
    /// Per-pulse Gaussian angle noise σ_p (rad).
    pub jitter_std: f64,
}

impl PulseErrorModel {
    pub fn perfect() -> Self {
        Self::default()
    }

    fn validate(&self) -> Result<()> {
        if !(self.jitter_std.is_finite() && self.jitter_std >= 0.0 && self.over_rotation.is_finite()) {
            return Err(Error::invalid("pulse error needs finite over-rotation and jitter_std >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetState {
    Zero,
    #[default]
    One,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InjectionMode {
    /// Error gates in the circuit; each trajectory is reused for a block of shots.
    Gate { trajectories: usize, shots_per_trajectory: u64 },
    /// Continuously running phase source; every shot sees a fresh trajectory.
    Sdr { shots: usize, phase_update_period: f64, random_time_offset: bool },
}

impl InjectionMode {
    fn validate(&self) -> Result<()> {
        match *self {
            InjectionMode::Gate { trajectories, shots_per_trajectory } => {
                if trajectories == 0 || shots_per_trajectory == 0 {
                    return Err(Error::invalid("gate mode needs trajectories >= 1 and shots >= 1"));
                }
            }
            InjectionMode::Sdr { shots, phase_update_period, .. } => {
                if shots == 0 {
                    return Err(Error::invalid("sdr mode needs shots >= 1"));
                }
                if !(phase_update_period.is_finite() && phase_update_period > 0.0) {
                    return Err(Error::invalid("sdr phase update period must be > 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub label: usize,
    pub n_pulses: usize,
    pub survival_mean: f64,
    pub survival_stderr: f64,
    /// Total shots across all trajectories.
    pub shots: u64,
    pub trajectories: u64,
    pub seed: u64,
}

impl ExperimentRecord {
    /// `√(p(1−p)/shots)`.
    pub fn binomial_stderr(&self) -> f64 {
        let p = self.survival_mean.clamp(0.0, 1.0);
        if self.shots == 0 {
            return 0.0;
        }
        (p * (1.0 - p) / self.shots as f64).sqrt()
    }
}

/// Outcome of one sequence: the summary record plus the per-unit survival
/// fractions (per trajectory in gate mode, per shot in SDR mode).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub record: ExperimentRecord,
    pub units: Vec<f64>,
    pub shots_per_unit: u64,
}

#[derive(Clone, Copy)]
struct Qubit {
    c0: Complex64,
    c1: Complex64,
}

impl Qubit {
    fn ground() -> Self {
        Qubit { c0: Complex64::new(1.0, 0.0), c1: Complex64::new(0.0, 0.0) }
    }

    fn rz(&mut self, phi: f64) {
        self.c0 *= Complex64::from_polar(1.0, -0.5 * phi);
        self.c1 *= Complex64::from_polar(1.0, 0.5 * phi);
    }

    fn rx(&mut self, theta: f64) {
        let (s, c) = (0.5 * theta).sin_cos();
        let mis = Complex64::new(0.0, -s);
        let (a, b) = (self.c0, self.c1);
        self.c0 = a * c + mis * b;
        self.c1 = mis * a + b * c;
    }

    fn population(&self, target: TargetState) -> f64 {
        match target {
            TargetState::Zero => self.c0.norm_sqr(),
            TargetState::One => self.c1.norm_sqr(),
        }
    }
}

/// Sign of the closing `R_x(±π/2)` that maps the noiseless state to `target`.
pub fn closing_sign(seq: &PulseSequence, target: TargetState) -> f64 {
    let mut q = Qubit::ground();
    q.rx(FRAC_PI_2);
    for &s in &seq.pulse_signs {
        q.rx(s as f64 * PI);
    }
    let mut plus = q;
    plus.rx(FRAC_PI_2);
    let mut minus = q;
    minus.rx(-FRAC_PI_2);
    if plus.population(target) >= minus.population(target) {
        1.0
    } else {
        -1.0
    }
}

/// Survival probability of one circuit execution with fixed slot phases.
///
/// `phases` (and `native`, if given) must cover the `N` slots. Jitter draws
/// come from `rng` and are only consumed when `perr.jitter_std > 0`.
pub fn run_shot<R: Rng + ?Sized>(
    seq: &PulseSequence,
    phases: &[f64],
    native: Option<&[f64]>,
    perr: &PulseErrorModel,
    target: TargetState,
    rng: &mut R,
) -> Result<f64> {
    let n = seq.n_slots;
    if phases.len() < n {
        return Err(Error::TrajectoryTooShort { needed: n, got: phases.len() });
    }
    if let Some(nat) = native {
        if nat.len() < n {
            return Err(Error::TrajectoryTooShort { needed: n, got: nat.len() });
        }
    }
    perr.validate()?;
    let jitter = (perr.jitter_std > 0.0).then(|| Normal::new(0.0, perr.jitter_std).expect("validated"));
    let close = closing_sign(seq, target);
    let mut q = Qubit::ground();
    q.rx(FRAC_PI_2);
    let mut pulses = seq.pulse_slots.iter().zip(&seq.pulse_signs).peekable();
    for j in 1..=n {
        let phi = phases[j - 1] + native.map_or(0.0, |nat| nat[j - 1]);
        q.rz(phi);
        if let Some(&(&slot, &sign)) = pulses.peek() {
            if slot == j {
                pulses.next();
                let delta = jitter.as_ref().map_or(0.0, |d| d.sample(rng));
                q.rx(sign as f64 * (PI + perr.over_rotation + delta));
            }
        }
    }
    q.rx(close * FRAC_PI_2);
    Ok(q.population(target).clamp(0.0, 1.0))
}

/// Phase increments per gate slot from a trajectory sampled every `t_s`,
/// by integrating the piecewise-linear accumulated phase over each slot window.
/// The slot clock starts `offset` seconds after the first phase update.
pub fn resample_to_slots(phases: &[f64], t_s: f64, offset: f64, n_slots: usize, t_g: f64) -> Result<Vec<f64>> {
    let aligned = (t_s - t_g).abs() <= 1e-12 * t_g && offset == 0.0;
    if aligned {
        if phases.len() < n_slots {
            return Err(Error::TrajectoryTooShort { needed: n_slots, got: phases.len() });
        }
        return Ok(phases[..n_slots].to_vec());
    }
    let needed = ((n_slots as f64 * t_g + offset) / t_s).ceil() as usize + 1;
    if phases.len() < needed {
        return Err(Error::TrajectoryTooShort { needed, got: phases.len() });
    }
    let mut cumulative = Vec::with_capacity(phases.len() + 1);
    cumulative.push(0.0);
    for p in phases {
        cumulative.push(cumulative.last().unwrap() + p);
    }
    let accumulated = |t: f64| -> f64 {
        let x = t / t_s;
        let mut i = x.floor();
        if (x - x.round()).abs() < 1e-9 {
            i = x.round();
        }
        let frac = (x - i).max(0.0);
        let i = i as usize;
        let base = cumulative[i];
        if frac == 0.0 || i >= phases.len() {
            base
        } else {
            base + frac * phases[i]
        }
    };
    Ok((1..=n_slots)
        .map(|j| accumulated(j as f64 * t_g + offset) - accumulated((j - 1) as f64 * t_g + offset))
        .collect())
}

fn check_period(model: &ArmaModel, t_g: f64, what: &str) -> Result<()> {
    if (model.sample_period() - t_g).abs() > 1e-9 * t_g {
        return Err(Error::invalid(format!(
            "{what} sample period {} s must equal the gate period {} s",
            model.sample_period(),
            t_g
        )));
    }
    Ok(())
}

/// Runs every sequence under the given injection mode.
///
/// Streams are keyed `seed → sequence index → trajectory/shot`, so results do
/// not depend on the rayon thread count.
pub fn run_experiment(
    seqs: &[PulseSequence],
    model: &ArmaModel,
    native: Option<&ArmaModel>,
    perr: &PulseErrorModel,
    mode: InjectionMode,
    target: TargetState,
    seed: u64,
) -> Result<Vec<SequenceRun>> {
    mode.validate()?;
    perr.validate()?;
    let root = SeedLineage::new(seed);
    for seq in seqs {
        if let Some(nat) = native {
            check_period(nat, seq.gate_period, "native model")?;
        }
        match mode {
            InjectionMode::Gate { .. } => check_period(model, seq.gate_period, "injected model")?,
            InjectionMode::Sdr { phase_update_period, .. } => check_period(model, phase_update_period, "injected model")
                .map_err(|_| {
                    Error::invalid(format!(
                        "injected model sample period {} s must equal the SDR update period {} s",
                        model.sample_period(),
                        phase_update_period
                    ))
                })?,
        }
    }
    seqs.par_iter()
        .map(|seq| {
            let lineage = root.child(seq.label as u64);
            match mode {
                InjectionMode::Gate { trajectories, shots_per_trajectory } => {
                    run_gate(seq, model, native, perr, target, &lineage, trajectories, shots_per_trajectory, seed)
                }
                InjectionMode::Sdr { shots, random_time_offset, .. } => run_sdr(
                    seq,
                    model,
                    native,
                    perr,
                    target,
                    &lineage,
                    shots,
                    random_time_offset,
                    seed,
                ),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_gate(
    seq: &PulseSequence,
    model: &ArmaModel,
    native: Option<&ArmaModel>,
    perr: &PulseErrorModel,
    target: TargetState,
    lineage: &SeedLineage,
    trajectories: usize,
    shots: u64,
    seed: u64,
) -> Result<SequenceRun> {
    let n = seq.n_slots;
    let units = (0..trajectories)
        .map(|r| {
            let l = lineage.child(r as u64);
            let inj = model.generate(n, &l.child(0))?;
            let nat = native.map(|m| m.generate(n, &l.child(1))).transpose()?;
            let mut jitter_rng = l.child(2).rng();
            let p = run_shot(seq, &inj.phases, nat.as_ref().map(|t| t.phases.as_slice()), perr, target, &mut jitter_rng)?;
            let mut shot_rng = l.child(3).rng();
            let k = Binomial::new(shots, p).expect("p clamped to [0,1]").sample(&mut shot_rng);
            Ok(k as f64 / shots as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let r = trajectories as f64;
    let mean = units.iter().sum::<f64>() / r;
    let total_shots = shots * trajectories as u64;
    let stderr = if trajectories > 1 {
        let var = units.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (var / r).sqrt()
    } else {
        (mean * (1.0 - mean) / total_shots as f64).sqrt()
    };
    Ok(SequenceRun {
        record: ExperimentRecord {
            label: seq.label,
            n_pulses: seq.n_pulses(),
            survival_mean: mean,
            survival_stderr: stderr,
            shots: total_shots,
            trajectories: trajectories as u64,
            seed,
        },
        units,
        shots_per_unit: shots,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_sdr(
    seq: &PulseSequence,
    model: &ArmaModel,
    native: Option<&ArmaModel>,
    perr: &PulseErrorModel,
    target: TargetState,
    lineage: &SeedLineage,
    shots: usize,
    random_offset: bool,
    seed: u64,
) -> Result<SequenceRun> {
    let n = seq.n_slots;
    let t_s = model.sample_period();
    let length = (seq.total_time() / t_s).ceil() as usize + 2;
    let units = (0..shots)
        .map(|s| {
            let l = lineage.child(s as u64);
            let mut aux = l.child(2).rng();
            let offset = if random_offset { aux.random::<f64>() * t_s } else { 0.0 };
            let traj = model.generate(length, &l.child(0))?;
            let slots = resample_to_slots(&traj.phases, t_s, offset, n, seq.gate_period)?;
            let nat = native.map(|m| m.generate(n, &l.child(1))).transpose()?;
            let p = run_shot(seq, &slots, nat.as_ref().map(|t| t.phases.as_slice()), perr, target, &mut aux)?;
            let hit = Bernoulli::new(p).expect("p clamped to [0,1]").sample(&mut aux);
            Ok(if hit { 1.0 } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = units.iter().sum::<f64>() / shots as f64;
    let stderr = (mean * (1.0 - mean) / shots as f64).sqrt();
    Ok(SequenceRun {
        record: ExperimentRecord {
            label: seq.label,
            n_pulses: seq.n_pulses(),
            survival_mean: mean,
            survival_stderr: stderr,
            shots: shots as u64,
            trajectories: shots as u64,
            seed,
        },
        units,
        shots_per_unit: 1,
    })
}

/// Closed-form Gaussian survival `½ + ½ exp(−χ_model − χ_native)`.
pub fn analytic_survival(seq: &PulseSequence, model: &ArmaModel, native: Option<&ArmaModel>) -> Result<f64> {
    let lags = seq.n_slots - 1;
    let mut chi = seq.chi_time_domain(&model.autocovariance(lags))?;
    if let Some(nat) = native {
        chi += seq.chi_time_domain(&nat.autocovariance(lags))?;
    }
    Ok(0.5 + 0.5 * (-chi).exp())
}

pub fn records_of(runs: &[SequenceRun]) -> Vec<ExperimentRecord> {
    runs.iter().map(|r| r.record.clone()).collect()
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.label.to_string(),
                r.n_pulses.to_string(),
                format!("{}", r.survival_mean),
                format!("{}", r.survival_stderr),
                r.shots.to_string(),
                r.trajectories.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    format_cells(&RECORD_HEADER, &rows)
}

/// Parses a records CSV. A blank `survival_stderr` is imputed from the
/// binomial bound. Extra trailing columns are ignored.
pub fn records_from_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let t = parse_csv(text, &RECORD_HEADER)?;
    (0..t.rows.len())
        .map(|i| {
            let line = t.lines[i];
            let row_err = |msg: String| Error::Parse { line, message: msg };
            let mean = t.float(i, 2)?;
            if !(0.0..=1.0).contains(&mean) {
                return Err(row_err(format!("survival_mean {mean} outside [0, 1]")));
            }
            let shots = t.uint(i, 4)?;
            let mut rec = ExperimentRecord {
                label: t.uint(i, 0)? as usize,
                n_pulses: t.uint(i, 1)? as usize,
                survival_mean: mean,
                survival_stderr: t.float(i, 3)?,
                shots,
                trajectories: t.uint(i, 5)?,
                seed: t.uint(i, 6)?,
            };
            if rec.survival_stderr.is_nan() {
                if shots == 0 {
                    return Err(row_err("missing survival_stderr and zero shots".into()));
                }
                rec.survival_stderr = rec.binomial_stderr();
            }
            if !(rec.survival_stderr >= 0.0 && rec.survival_stderr.is_finite()) {
                return Err(row_err(format!("survival_stderr {} must be >= 0", rec.survival_stderr)));
            }
            Ok(rec)
        })
        .collect()
}

/// Long-format per-unit survivals: `seq_index,unit,survival,shots`.
pub fn units_to_csv(runs: &[SequenceRun]) -> String {
    let mut rows = Vec::new();
    for run in runs {
        for (u, s) in run.units.iter().enumerate() {
            rows.push(vec![run.record.label.to_string(), u.to_string(), format!("{s}"), run.shots_per_unit.to_string()]);
        }
    }
    format_cells(&["seq_index", "unit", "survival", "shots"], &rows)
}

/// Parses per-unit survivals back into `(label, units, shots_per_unit)` groups
/// in order of first appearance.
pub fn units_from_csv(text: &str) -> Result<Vec<(usize, Vec<f64>, u64)>> {
    let t = parse_csv(text, &["seq_index", "unit", "survival", "shots"])?;
    let mut groups: Vec<(usize, Vec<f64>, u64)> = Vec::new();
    for i in 0..t.rows.len() {
        let label = t.uint(i, 0)? as usize;
        let s = t.float(i, 2)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Parse { line: t.lines[i], message: format!("survival {s} outside [0, 1]") });
        }
        let shots = t.uint(i, 3)?;
        match groups.iter_mut().find(|g| g.0 == label) {
            Some(g) => g.1.push(s),
            None => groups.push((label, vec![s], shots)),
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{make_fttps, make_rfttps};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TG: f64 = 1e-7;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn perfect_pulses_match_toggled_phase_formula() {
        let seqs = make_rfttps(64, 128, TG).unwrap();
        let model = ArmaModel::white(0.2, TG).unwrap();
        for (i, seq) in seqs.iter().enumerate().step_by(7) {
            for target in [TargetState::One, TargetState::Zero] {
                let t = model.generate(128, &SeedLineage::new(i as u64)).unwrap();
                let p = run_shot(seq, &t.phases, None, &PulseErrorModel::perfect(), target, &mut rng()).unwrap();
                let phi = seq.toggled_phase(&t.phases);
                assert!((p - 0.5 * (1.0 + phi.cos())).abs() < 1e-12, "seq {i}: {p}");
            }
        }
    }

    #[test]
    fn zero_noise_survives() {
        for seq in make_fttps(8, 16, TG).unwrap() {
            let p = run_shot(&seq, &[0.0; 16], None, &PulseErrorModel::perfect(), TargetState::One, &mut rng()).unwrap();
            assert!((p - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_phase_accumulates_or_echoes() {
        let seqs = make_fttps(2, 128, TG).unwrap();
        let phases = vec![PI / 128.0; 128];
        let perfect = PulseErrorModel::perfect();
        let ramsey = run_shot(&seqs[0], &phases, None, &perfect, TargetState::One, &mut rng()).unwrap();
        assert!(ramsey.abs() < 1e-12);
        let echo = run_shot(&seqs[1], &phases, None, &perfect, TargetState::One, &mut rng()).unwrap();
        assert!((echo - 1.0).abs() < 1e-12);
    }

    #[test]
    fn short_trajectory_is_rejected() {
        let seq = &make_fttps(1, 16, TG).unwrap()[0];
        let err = run_shot(seq, &[0.0; 8], None, &PulseErrorModel::perfect(), TargetState::One, &mut rng());
        assert!(matches!(err, Err(Error::TrajectoryTooShort { needed: 16, got: 8 })));
    }

    #[test]
    fn native_phases_add() {
        let seq = &make_fttps(1, 4, TG).unwrap()[0];
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.4, 0.3, 0.2, 0.1];
        let perfect = PulseErrorModel::perfect();
        let p = run_shot(seq, &a, Some(&b), &perfect, TargetState::One, &mut rng()).unwrap();
        assert!((p - 0.5 * (1.0 + 2.0f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn rfttps_cancels_coherent_over_rotation() {
        let f = make_fttps(9, 32, TG).unwrap();
        let r = make_rfttps(9, 32, TG).unwrap();
        let perr = PulseErrorModel { over_rotation: 0.05, jitter_std: 0.0 };
        let zeros = [0.0; 32];
        let pf = run_shot(&f[8], &zeros, None, &perr, TargetState::One, &mut rng()).unwrap();
        let pr = run_shot(&r[8], &zeros, None, &perr, TargetState::One, &mut rng()).unwrap();
        assert!((pf - (8.0 * 0.05f64 / 2.0).cos().powi(2)).abs() < 1e-12);
        assert!((pr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resampling_aligned_and_offset() {
        let phases: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(resample_to_slots(&phases, TG, 0.0, 10, TG).unwrap(), phases[..10].to_vec());
        // half-sample offset splits each update between neighbouring slots
        let half = resample_to_slots(&phases, TG, 0.5 * TG, 4, TG).unwrap();
        assert_eq!(half, vec![0.5, 1.5, 2.5, 3.5]);
        // coarser updates spread evenly over the slots they cover
        let coarse = resample_to_slots(&[2.0, 4.0, 6.0], 2.0 * TG, 0.0, 4, TG).unwrap();
        assert_eq!(coarse, vec![1.0, 1.0, 2.0, 2.0]);
        assert!(resample_to_slots(&phases[..3], TG, 0.0, 10, TG).is_err());
    }

    #[test]
    fn zero_drive_records_survive_exactly() {
        let seqs = make_fttps(4, 16, TG).unwrap();
        let model = ArmaModel::white(0.0, TG).unwrap();
        for mode in [
            InjectionMode::Gate { trajectories: 3, shots_per_trajectory: 50 },
            InjectionMode::Sdr { shots: 40, phase_update_period: TG, random_time_offset: true },
        ] {
            let runs = run_experiment(&seqs, &model, None, &PulseErrorModel::perfect(), mode, TargetState::One, 9).unwrap();
            assert!(runs.iter().all(|r| r.record.survival_mean == 1.0 && r.record.survival_stderr == 0.0));
        }
    }

    #[test]
    fn invalid_modes_are_rejected() {
        let seqs = make_fttps(2, 16, TG).unwrap();
        let model = ArmaModel::white(0.1, TG).unwrap();
        let p = PulseErrorModel::perfect();
        let bad = InjectionMode::Gate { trajectories: 0, shots_per_trajectory: 10 };
        assert!(run_experiment(&seqs, &model, None, &p, bad, TargetState::One, 1).is_err());
        let wrong_period = ArmaModel::white(0.1, 2.0 * TG).unwrap();
        let gate = InjectionMode::Gate { trajectories: 2, shots_per_trajectory: 10 };
        assert!(run_experiment(&seqs, &wrong_period, None, &p, gate, TargetState::One, 1).is_err());
    }

    #[test]
    fn experiments_are_reproducible() {
        let seqs = make_fttps(6, 32, TG).unwrap();
        let model = ArmaModel::white(0.1, TG).unwrap();
        let perr = PulseErrorModel { over_rotation: 0.01, jitter_std: 0.02 };
        let mode = InjectionMode::Gate { trajectories: 5, shots_per_trajectory: 100 };
        let a = run_experiment(&seqs, &model, None, &perr, mode, TargetState::One, 42).unwrap();
        let b = run_experiment(&seqs, &model, None, &perr, mode, TargetState::One, 42).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_experiment(&seqs, &model, None, &perr, mode, TargetState::One, 42).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn analytic_white_closed_form() {
        let seq = &make_fttps(5, 128, TG).unwrap()[4];
        let p = analytic_survival(seq, &ArmaModel::white(0.1, TG).unwrap(), None).unwrap();
        assert!((p - 0.5 * (1.0 + (-0.64f64).exp())).abs() < 1e-12);
        assert!((p - 0.7636).abs() < 5e-5);
        let p0 = analytic_survival(seq, &ArmaModel::white(0.0, TG).unwrap(), None).unwrap();
        assert_eq!(p0, 1.0);
    }

    #[test]
    fn records_csv_round_trip_and_imputation() {
        let rec = ExperimentRecord {
            label: 3,
            n_pulses: 3,
            survival_mean: 0.75,
            survival_stderr: 0.01,
            shots: 1000,
            trajectories: 10,
            seed: u64::MAX,
        };
        let text = records_to_csv(std::slice::from_ref(&rec));
        assert!(text.starts_with("seq_index,n_pulses,survival_mean,survival_stderr,shots,trajectories,seed\n"));
        assert_eq!(records_from_csv(&text).unwrap(), vec![rec]);

        let missing = "seq_index,n_pulses,survival_mean,survival_stderr,shots,trajectories,seed\n0,0,0.9,,100,1,1\n";
        let r = records_from_csv(missing).unwrap();
        assert!((r[0].survival_stderr - (0.09f64 / 100.0).sqrt()).abs() < 1e-15);

        let bad = "seq_index,n_pulses,survival_mean,survival_stderr,shots,trajectories,seed\n0,0,0.9,0.1,100,1,1\n1,1,1.2,0.1,100,1,1\n";
        assert!(matches!(records_from_csv(bad), Err(Error::Parse { line: 3, .. })));
    }
}
