//! Resampling confidence bands for reconstructed spectra.

use rand::Rng;
use rayon::prelude::*;

use super::{band_csv, reconstruct_spectrum, BinSpec, ReconOptions, Reconstruction};
use crate::error::{Error, Result};
use crate::noise::Spectrum;
use crate::seed::SeedLineage;
use crate::sequences::FilterFunction;
use crate::sim::{ExperimentRecord, SequenceRun};

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
    pub recon: ReconOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { resamples: 200, lower_quantile: 0.025, upper_quantile: 0.975, recon: ReconOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Reconstruction from the full data set; its bins are reused for every resample.
    pub point: Reconstruction,
    pub median: Spectrum,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resamples_used: usize,
    /// Resamples whose reconstruction failed (for example a newly saturated sequence
    /// leaving a bin unconstrained).
    pub resamples_failed: usize,
}

impl BootstrapResult {
    pub fn to_csv(&self) -> String {
        band_csv(&self.median.freqs, &self.median.values, &self.lower, &self.upper)
    }

    /// Half-width of the band in bin `m`.
    pub fn half_width(&self, m: usize) -> f64 {
        0.5 * (self.upper[m] - self.lower[m])
    }
}

/// Summary record of a set of per-unit survival fractions.
pub fn record_from_units(template: &ExperimentRecord, units: &[f64], shots_per_unit: u64) -> ExperimentRecord {
    let n = units.len() as f64;
    let mean = units.iter().sum::<f64>() / n;
    let stderr = if units.len() > 1 {
        let var = units.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        let shots = shots_per_unit.max(1) as f64;
        (mean * (1.0 - mean) / shots).sqrt()
    };
    ExperimentRecord {
        survival_mean: mean,
        survival_stderr: stderr,
        shots: shots_per_unit * units.len() as u64,
        trajectories: units.len() as u64,
        ..template.clone()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + t * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Resamples units with replacement per sequence and reconstructs each
/// resample on the bins of the full-data reconstruction.
pub fn bootstrap_spectrum(
    runs: &[SequenceRun],
    filters: &[FilterFunction],
    opts: &BootstrapOptions,
    seed: u64,
) -> Result<BootstrapResult> {
    if opts.resamples == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if !(0.0..=1.0).contains(&opts.lower_quantile)
        || !(0.0..=1.0).contains(&opts.upper_quantile)
        || opts.lower_quantile > opts.upper_quantile
    {
        return Err(Error::invalid("bootstrap quantiles must satisfy 0 ≤ lower ≤ upper ≤ 1"));
    }
    if let Some(r) = runs.iter().find(|r| r.units.is_empty()) {
        return Err(Error::invalid(format!("sequence {} has no per-unit data", r.record.label)));
    }

    let full: Vec<ExperimentRecord> =
        runs.iter().map(|r| record_from_units(&r.record, &r.units, r.shots_per_unit)).collect();
    let point = reconstruct_spectrum(&full, filters, &opts.recon)?;
    let fixed = ReconOptions { bins: BinSpec::Fixed(point.bins.clone()), ..opts.recon.clone() };
    let m = point.bins.len();

    if opts.resamples == 1 {
        let v = point.spectrum.values.clone();
        return Ok(BootstrapResult {
            median: point.spectrum.clone(),
            lower: v.clone(),
            upper: v,
            point,
            resamples_used: 1,
            resamples_failed: 0,
        });
    }

    let root = SeedLineage::new(seed);
    let outcomes: Vec<Result<Vec<f64>>> = (0..opts.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = root.child(b as u64).rng();
            let records: Vec<ExperimentRecord> = runs
                .iter()
                .map(|r| {
                    let n = r.units.len();
                    let drawn: Vec<f64> = (0..n).map(|_| r.units[rng.random_range(0..n)]).collect();
                    record_from_units(&r.record, &drawn, r.shots_per_unit)
                })
                .collect();
            reconstruct_spectrum(&records, filters, &fixed).map(|rec| rec.spectrum.values)
        })
        .collect();

    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(outcomes.len());
    let mut last_err = None;
    for o in outcomes {
        match o {
            Ok(v) => samples.push(v),
            Err(e) => last_err = Some(e),
        }
    }
    let failed = opts.resamples - samples.len();
    if samples.is_empty() {
        return Err(last_err.expect("every resample failed"));
    }

    let mut median = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    for j in 0..m {
        let mut col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
        col.sort_by(f64::total_cmp);
        median[j] = quantile(&col, 0.5);
        lower[j] = quantile(&col, opts.lower_quantile);
        upper[j] = quantile(&col, opts.upper_quantile);
    }
    Ok(BootstrapResult {
        median: Spectrum::new(point.spectrum.freqs.clone(), median, point.spectrum.sample_period)?,
        lower,
        upper,
        resamples_used: samples.len(),
        resamples_failed: failed,
        point,
    })
}
