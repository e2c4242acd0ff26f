//! Decay exponents, constrained spectral inversion, background subtraction
//! and bootstrap confidence bands.

mod bootstrap;
mod nnls;

pub use bootstrap::{bootstrap_spectrum, BootstrapOptions, BootstrapResult};
pub use nnls::nnls;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_csv;
use crate::noise::Spectrum;
use crate::sequences::FilterFunction;
use crate::sim::ExperimentRecord;

pub const DEFAULT_FLOOR: f64 = 0.02;
pub const RECON_HEADER: [&str; 4] = ["freq_hz", "psd_rad2_per_hz", "ci_lo", "ci_hi"];

/// Smallest χ variance used when turning standard errors into weights.
const VAR_FLOOR: f64 = 1e-12;
/// Relative eigenvalue threshold of the normal matrix below which a direction is unconstrained.
const RANK_TOL: f64 = 1e-20;

/// Decay exponent of one survival probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decay {
    Finite(f64),
    /// The sequence is fully decohered; `chi_max` is only a lower bound.
    Saturated { chi_max: f64 },
}

impl Decay {
    pub fn value(&self) -> Option<f64> {
        match self {
            Decay::Finite(c) => Some(*c),
            Decay::Saturated { .. } => None,
        }
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self, Decay::Saturated { .. })
    }
}

/// `χ = −ln(2p − 1)` above the saturation threshold `½ + floor`.
pub fn decay_from_survival(p: f64, floor: f64) -> Decay {
    if p > 0.5 + floor {
        Decay::Finite(-(2.0 * p.min(1.0) - 1.0).ln())
    } else {
        Decay::Saturated { chi_max: -(2.0 * floor).ln() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `1 / var(χ)` propagated from the survival standard error.
    #[default]
    InverseVariance,
    Uniform,
}

/// Coarse reconstruction bins: `centers[m]` lies in `[edges[m], edges[m+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub centers: Vec<f64>,
    pub edges: Vec<f64>,
}

impl Bins {
    /// One bin per distinct centre frequency, boundaries at midpoints. The top
    /// edge sits half a spacing above the last centre.
    pub fn around(centers: &[f64], nyquist: f64) -> Result<Self> {
        let mut c: Vec<f64> = centers.to_vec();
        c.sort_by(f64::total_cmp);
        c.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * nyquist);
        if c.is_empty() {
            return Err(Error::invalid("no usable sequences to place bins on"));
        }
        let mut edges = vec![0.0];
        edges.extend(c.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let top = match c.len() {
            1 => nyquist,
            n => (c[n - 1] + 0.5 * (c[n - 1] - c[n - 2])).min(nyquist),
        };
        edges.push(top.max(c[c.len() - 1]));
        Bins::new(c, edges)
    }

    /// `count` equal-width bins over `[0, top]`.
    pub fn uniform(count: usize, top: f64) -> Result<Self> {
        if count == 0 || !(top > 0.0) {
            return Err(Error::invalid("uniform binning needs count ≥ 1 and a positive upper edge"));
        }
        let w = top / count as f64;
        let edges: Vec<f64> = (0..=count).map(|i| i as f64 * w).collect();
        let centers = (0..count).map(|i| (i as f64 + 0.5) * w).collect();
        Bins::new(centers, edges)
    }

    pub fn new(centers: Vec<f64>, edges: Vec<f64>) -> Result<Self> {
        if edges.len() != centers.len() + 1 || centers.is_empty() {
            return Err(Error::invalid("bins need one more edge than centre"));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
            return Err(Error::invalid("bin edges must be non-negative and strictly ascending"));
        }
        if centers.iter().zip(edges.windows(2)).any(|(c, e)| *c < e[0] || *c > e[1]) {
            return Err(Error::invalid("each bin centre must lie within its edges"));
        }
        Ok(Bins { centers, edges })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Bin holding frequency `f`; everything above the top edge goes to the last bin.
    pub fn index_of(&self, f: f64) -> usize {
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.partition_point(|&e| e <= f)
    }

    /// Bin whose centre is nearest to `f`.
    pub fn nearest(&self, f: f64) -> usize {
        (0..self.len())
            .min_by(|&a, &b| (self.centers[a] - f).abs().total_cmp(&(self.centers[b] - f).abs()))
            .unwrap_or(0)
    }

    /// Sums a fine-grid filter into the coarse bins.
    pub fn integrate(&self, filter: &FilterFunction) -> Vec<f64> {
        let mut row = vec![0.0; self.len()];
        for (f, w) in filter.freqs.iter().zip(&filter.weights) {
            row[self.index_of(*f)] += w;
        }
        row
    }

    /// Mean of `spectrum` over each bin, using the fine-grid points it contains.
    pub fn average(&self, spectrum: &Spectrum) -> Vec<f64> {
        let mut sum = vec![0.0; self.len()];
        let mut n = vec![0usize; self.len()];
        for (f, v) in spectrum.freqs.iter().zip(&spectrum.values) {
            if *f < *self.edges.last().unwrap() {
                let m = self.index_of(*f);
                sum[m] += v;
                n[m] += 1;
            }
        }
        sum.iter().zip(&n).map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinSpec {
    /// One bin per usable sequence, centred on its nominal peak frequency.
    #[default]
    PerSequence,
    Count(usize),
    Fixed(Bins),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconOptions {
    pub bins: BinSpec,
    pub ridge: f64,
    pub floor: f64,
    pub weighting: Weighting,
}

impl Default for ReconOptions {
    fn default() -> Self {
        ReconOptions { bins: BinSpec::PerSequence, ridge: 0.0, floor: DEFAULT_FLOOR, weighting: Weighting::default() }
    }
}

impl ReconOptions {
    fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be finite and ≥ 0"));
        }
        if !(self.floor.is_finite() && self.floor > 0.0 && self.floor < 0.5) {
            return Err(Error::invalid("saturation floor must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

/// Reconstructed coarse spectrum with per-bin uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Values at the bin centres.
    pub spectrum: Spectrum,
    pub stderr: Vec<f64>,
    pub bins: Bins,
    /// Labels of the sequences that entered the fit, in row order.
    pub used: Vec<usize>,
    /// Labels of saturated sequences that were dropped.
    pub excluded: Vec<usize>,
    pub chi: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ridge: f64,
    pub floor: f64,
}

impl Reconstruction {
    /// `Σ_m S_m · width_m`.
    pub fn integrated_power(&self) -> f64 {
        self.spectrum.values.iter().zip(self.bins.widths()).map(|(s, w)| s * w).sum()
    }

    pub fn peak_bin(&self) -> usize {
        self.spectrum.peak_index()
    }

    /// CSV with a normal-approximation 95% band (clipped at zero).
    pub fn to_csv(&self) -> String {
        let lo: Vec<f64> =
            self.spectrum.values.iter().zip(&self.stderr).map(|(s, e)| (s - 1.96 * e).max(0.0)).collect();
        let hi: Vec<f64> = self.spectrum.values.iter().zip(&self.stderr).map(|(s, e)| s + 1.96 * e).collect();
        band_csv(&self.spectrum.freqs, &self.spectrum.values, &lo, &hi)
    }
}

pub(crate) fn band_csv(freqs: &[f64], values: &[f64], lo: &[f64], hi: &[f64]) -> String {
    let rows: Vec<Vec<f64>> = (0..freqs.len()).map(|i| vec![freqs[i], values[i], lo[i], hi[i]]).collect();
    format_csv(&RECON_HEADER, &rows)
}

/// Solution of a weighted, ridge-regularised non-negative least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSolution {
    pub x: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Solves `min_x Σ_k w_k (G x − χ)_k² + λ||x||²` subject to `x ≥ 0`.
///
/// Columns are scaled to unit weighted norm before the active-set solve and
/// the ridge is applied in the original units. Rows with zero weight do not
/// influence the solution.
pub fn solve_weighted(g: &[Vec<f64>], chi: &[f64], weights: &[f64], ridge: f64) -> Result<WeightedSolution> {
    let rows = g.len();
    if rows == 0 || chi.len() != rows || weights.len() != rows {
        return Err(Error::invalid("design matrix, data and weights must have matching non-zero length"));
    }
    let cols = g[0].len();
    if cols == 0 || g.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("design matrix rows must share a non-zero length"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || chi.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("weights must be finite and ≥ 0 and data finite"));
    }

    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(rows, cols, |k, m| sw[k] * g[k][m]);
    let b = DVector::from_fn(rows, |k, _| sw[k] * chi[k]);
    let scale: Vec<f64> = (0..cols)
        .map(|m| {
            let n = a.column(m).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();

    if ridge == 0.0 {
        let unconstrained = unconstrained_bins(&a, &scale);
        if !unconstrained.is_empty() {
            return Err(Error::RankDeficient { bins: unconstrained });
        }
    }

    // Augment with ridge rows in scaled coordinates: λ||x||² = λ||D z||².
    let extra = if ridge > 0.0 { cols } else { 0 };
    let mut a_aug = DMatrix::zeros(rows + extra, cols);
    let mut b_aug = DVector::zeros(rows + extra);
    for k in 0..rows {
        for m in 0..cols {
            a_aug[(k, m)] = a[(k, m)] * scale[m];
        }
        b_aug[k] = b[k];
    }
    for m in 0..extra {
        a_aug[(rows + m, m)] = ridge.sqrt() * scale[m];
    }
    let (z, passive) = nnls(&a_aug, &b_aug);
    let x: Vec<f64> = (0..cols).map(|m| (z[m] * scale[m]).max(0.0)).collect();

    let residuals: Vec<f64> =
        (0..rows).map(|k| chi[k] - g[k].iter().zip(&x).map(|(gv, xv)| gv * xv).sum::<f64>()).collect();

    // Covariance of the passive block: (AᵀA + λI)⁻¹ in original units.
    let free: Vec<usize> = (0..cols).filter(|&m| passive[m]).collect();
    let mut stderr = vec![0.0; cols];
    if !free.is_empty() {
        let af = a.select_columns(&free);
        let mut normal = af.tr_mul(&af);
        for i in 0..free.len() {
            normal[(i, i)] += ridge;
        }
        if let Some(inv) = normal.clone().try_inverse() {
            for (i, &m) in free.iter().enumerate() {
                stderr[m] = inv[(i, i)].max(0.0).sqrt();
            }
        }
    }
    Ok(WeightedSolution { x, stderr, residuals })
}

/// Bins participating in (near-)null directions of the column-scaled normal matrix.
fn unconstrained_bins(a: &DMatrix<f64>, scale: &[f64]) -> Vec<usize> {
    let cols = a.ncols();
    let mut bins: Vec<usize> = (0..cols).filter(|&m| a.column(m).norm() == 0.0).collect();
    let scaled = DMatrix::from_fn(a.nrows(), cols, |k, m| a[(k, m)] * scale[m]);
    let eig = SymmetricEigen::new(scaled.tr_mul(&scaled));
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= RANK_TOL * top.max(f64::MIN_POSITIVE) * cols as f64 {
            let v = eig.eigenvectors.column(i);
            bins.extend((0..cols).filter(|&m| v[m].abs() > 0.1));
        }
    }
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// χ variance propagated from a survival standard error.
pub fn chi_variance(p: f64, stderr: f64) -> f64 {
    let d = 2.0 * p - 1.0;
    (2.0 * stderr / d).powi(2).max(VAR_FLOOR)
}

/// Reconstructs a coarse spectrum from survival records and the matching
/// filter functions.
pub fn reconstruct_spectrum(
    records: &[ExperimentRecord],
    filters: &[FilterFunction],
    opts: &ReconOptions,
) -> Result<Reconstruction> {
    opts.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("no records to reconstruct from"));
    }
    let by_label: HashMap<usize, &FilterFunction> = filters.iter().map(|f| (f.label, f)).collect();
    let first = by_label
        .get(&records[0].label)
        .ok_or_else(|| Error::invalid(format!("no filter function for sequence {}", records[0].label)))?;
    let (t_s, freqs) = (first.sample_period, &first.freqs);

    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for rec in records {
        let f = by_label
            .get(&rec.label)
            .ok_or_else(|| Error::invalid(format!("no filter function for sequence {}", rec.label)))?;
        if (f.sample_period - t_s).abs() > 1e-12 * t_s {
            return Err(Error::GridMismatch(format!("sequence {} has a different gate period", rec.label)));
        }
        f.check_grid(freqs)?;
        if !(0.0..=1.0).contains(&rec.survival_mean) {
            return Err(Error::invalid(format!("survival {} of sequence {} outside [0, 1]", rec.survival_mean, rec.label)));
        }
        match decay_from_survival(rec.survival_mean, opts.floor) {
            Decay::Finite(chi) => used.push((rec, *f, chi)),
            Decay::Saturated { .. } => excluded.push(rec.label),
        }
    }
    if used.is_empty() {
        return Err(Error::RankDeficient { bins: Vec::new() });
    }

    let nyquist = 0.5 / t_s;
    let bins = match &opts.bins {
        BinSpec::PerSequence => {
            Bins::around(&used.iter().map(|(_, f, _)| f.nominal_frequency()).collect::<Vec<_>>(), nyquist)?
        }
        BinSpec::Count(m) => {
            let auto = Bins::around(&used.iter().map(|(_, f, _)| f.nominal_frequency()).collect::<Vec<_>>(), nyquist)?;
            Bins::uniform(*m, *auto.edges.last().unwrap())?
        }
        BinSpec::Fixed(b) => b.clone(),
    };
    if *bins.edges.last().unwrap() > nyquist * (1.0 + 1e-9) {
        return Err(Error::invalid("bin edges extend beyond the Nyquist frequency"));
    }

    let g: Vec<Vec<f64>> = used.iter().map(|(_, f, _)| bins.integrate(f)).collect();
    let chi: Vec<f64> = used.iter().map(|(_, _, c)| *c).collect();
    let weights: Vec<f64> = match opts.weighting {
        Weighting::Uniform => vec![1.0; used.len()],
        Weighting::InverseVariance => {
            used.iter().map(|(r, _, _)| 1.0 / chi_variance(r.survival_mean, r.survival_stderr)).collect()
        }
    };

    let sol = solve_weighted(&g, &chi, &weights, opts.ridge)?;
    let mut stderr = sol.stderr;
    if opts.weighting == Weighting::Uniform {
        // Uniform weights carry no noise scale; estimate it from the residuals.
        let dof = used.len().saturating_sub(bins.len());
        let s2 = if dof > 0 { sol.residuals.iter().map(|r| r * r).sum::<f64>() / dof as f64 } else { 0.0 };
        stderr.iter_mut().for_each(|e| *e *= s2.sqrt());
    }

    Ok(Reconstruction {
        spectrum: Spectrum::new(bins.centers.clone(), sol.x, t_s)?,
        stderr,
        bins,
        used: used.iter().map(|(r, _, _)| r.label).collect(),
        excluded,
        chi,
        residuals: sol.residuals,
        ridge: opts.ridge,
        floor: opts.floor,
    })
}

/// Background-subtracted spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct NativeSubtraction {
    pub delta: Spectrum,
    /// Bins where the native value exceeded the injected one.
    pub clipped_bins: Vec<usize>,
    /// Sum of the amounts removed by clipping.
    pub clipped_amount: f64,
}

impl NativeSubtraction {
    pub fn clipped(&self) -> bool {
        !self.clipped_bins.is_empty()
    }
}

/// `ΔS = S_inj − S_nat`, clipped at zero.
pub fn subtract_native(injected: &Spectrum, native: &Spectrum) -> Result<NativeSubtraction> {
    injected.check_same_grid(native)?;
    let mut clipped_bins = Vec::new();
    let mut clipped_amount = 0.0;
    let values = injected
        .values
        .iter()
        .zip(&native.values)
        .enumerate()
        .map(|(i, (a, b))| {
            let d = a - b;
            if d < 0.0 {
                clipped_bins.push(i);
                clipped_amount += -d;
                0.0
            } else {
                d
            }
        })
        .collect();
    Ok(NativeSubtraction {
        delta: Spectrum::new(injected.freqs.clone(), values, injected.sample_period)?,
        clipped_bins,
        clipped_amount,
    })
}
