use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_csv, parse_csv};

pub const SPECTRUM_HEADER: [&str; 2] = ["freq_hz", "psd_rad2_per_hz"];

/// One-sided PSD sampled on an ascending frequency grid (rad²/Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub sample_period: f64,
}

impl Spectrum {
    pub fn new(freqs: Vec<f64>, values: Vec<f64>, sample_period: f64) -> Result<Self> {
        if freqs.len() != values.len() {
            return Err(Error::invalid(format!(
                "spectrum has {} frequencies but {} values",
                freqs.len(),
                values.len()
            )));
        }
        if freqs.is_empty() {
            return Err(Error::invalid("spectrum must not be empty"));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(Error::invalid("spectrum sample_period must be > 0"));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("spectrum frequencies must be strictly ascending"));
        }
        let nyq = 0.5 / sample_period;
        if freqs[0] < 0.0 || *freqs.last().unwrap() > nyq * (1.0 + 1e-9) {
            return Err(Error::invalid(format!("spectrum frequencies must lie in [0, {nyq}]")));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("spectrum values must be finite and non-negative"));
        }
        Ok(Spectrum { freqs, values, sample_period })
    }

    /// An all-zero spectrum on the same grid.
    pub fn zeros_like(&self) -> Self {
        Spectrum { freqs: self.freqs.clone(), values: vec![0.0; self.values.len()], sample_period: self.sample_period }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.sample_period
    }

    /// Trapezoidal integral of the PSD over its grid.
    pub fn integral(&self) -> f64 {
        self.freqs
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(f, v)| 0.5 * (f[1] - f[0]) * (v[0] + v[1]))
            .sum()
    }

    /// Trapezoidal integral restricted to `[lo, hi]` (grid points only).
    pub fn band_integral(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .windows(2)
            .zip(self.values.windows(2))
            .filter(|(f, _)| f[0] >= lo && f[1] <= hi)
            .map(|(f, v)| 0.5 * (f[1] - f[0]) * (v[0] + v[1]))
            .sum()
    }

    pub fn peak_index(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }

    pub fn peak_frequency(&self) -> f64 {
        self.freqs[self.peak_index()]
    }

    /// Power-weighted mean frequency over grid points in `[lo, hi]`.
    pub fn centroid(&self, lo: f64, hi: f64) -> f64 {
        let (num, den) = self
            .freqs
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .fold((0.0, 0.0), |(n, d), (f, v)| (n + f * v, d + v));
        if den > 0.0 {
            num / den
        } else {
            0.5 * (lo + hi)
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Linear interpolation of the PSD at `f`, clamped to the grid ends.
    pub fn interpolate(&self, f: f64) -> f64 {
        let i = self.freqs.partition_point(|&x| x < f);
        if i == 0 {
            return self.values[0];
        }
        if i >= self.len() {
            return *self.values.last().unwrap();
        }
        let (f0, f1) = (self.freqs[i - 1], self.freqs[i]);
        let t = (f - f0) / (f1 - f0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// Pointwise sum of two spectra on an identical grid.
    pub fn add(&self, other: &Spectrum) -> Result<Spectrum> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(Spectrum { freqs: self.freqs.clone(), values, sample_period: self.sample_period })
    }

    pub fn scale(&self, c: f64) -> Spectrum {
        Spectrum {
            freqs: self.freqs.clone(),
            values: self.values.iter().map(|v| v * c.abs()).collect(),
            sample_period: self.sample_period,
        }
    }

    pub fn check_same_grid(&self, other: &Spectrum) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::GridMismatch(format!("{} vs {} points", self.len(), other.len())));
        }
        let tol = 1e-9 * self.nyquist();
        if let Some(i) = self.freqs.iter().zip(&other.freqs).position(|(a, b)| (a - b).abs() > tol) {
            return Err(Error::GridMismatch(format!(
                "frequency {} differs: {} vs {}",
                i, self.freqs[i], other.freqs[i]
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<f64>> = self.freqs.iter().zip(&self.values).map(|(f, v)| vec![*f, *v]).collect();
        format_csv(&SPECTRUM_HEADER, &rows)
    }

    /// Parses a spectrum CSV; extra trailing columns (e.g. confidence bounds) are ignored.
    pub fn from_csv(text: &str, sample_period: f64) -> Result<Self> {
        let table = parse_csv(text, &SPECTRUM_HEADER)?;
        let freqs = table.column(0)?;
        let values = table.column(1)?;
        Spectrum::new(freqs, values, sample_period)
    }
}
