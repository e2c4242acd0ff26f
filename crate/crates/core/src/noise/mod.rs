//! ARMA phase-noise models, their spectra, and correlated trajectories.
//!
//! Conventions used throughout the crate:
//!
//! * recursion `φ_t = Σ aᵢ φ_{t−i} + Σ bⱼ w_{t−j}`, `w ~ N(0, drive_std²)`;
//! * discrete-time PSD `S(θ) = drive_std² |B(e^{−iθ})|² / |A(e^{−iθ})|²`
//!   with `A(z) = 1 − Σ aᵢ z^{−i}`, `B(z) = Σ bⱼ z^{−j}`;
//! * physical one-sided PSD `S_f(f) = 2 t_s S(2π f t_s)` on `[0, 1/(2 t_s)]`,
//!   so that `∫ S_f df` equals the process variance.

mod design;
mod spectrum;

pub use design::{
    design_bandpass, design_lorentzian, design_multiband, design_power_law, Band, DEFAULT_TAPS,
};
pub use spectrum::{Spectrum, SPECTRUM_HEADER};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedLineage;

/// Default PSD grid size; 4096 intervals on `[0, π]`.
pub const DEFAULT_GRID: usize = 4097;

/// Upper bound on the burn-in extension for slowly decaying AR poles.
const MAX_BURN_IN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaModel {
    ar: Vec<f64>,
    ma: Vec<f64>,
    drive_std: f64,
    sample_period: f64,
}

/// Serialized layout of a model document.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(default)]
    ar: Vec<f64>,
    ma: Vec<f64>,
    drive_std: f64,
    sample_period_s: f64,
}

impl ArmaModel {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, drive_std: f64, sample_period: f64) -> Result<Self> {
        if ma.is_empty() {
            return Err(Error::invalid("MA coefficient list must be non-empty"));
        }
        if ar.iter().chain(ma.iter()).any(|c| !c.is_finite()) {
            return Err(Error::invalid("ARMA coefficients must be finite"));
        }
        if !(drive_std.is_finite() && drive_std >= 0.0) {
            return Err(Error::invalid(format!("drive_std must be finite and >= 0, got {drive_std}")));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(Error::invalid(format!("sample_period must be > 0, got {sample_period}")));
        }
        if drive_std > 0.0 && ma.iter().all(|&b| b == 0.0) {
            return Err(Error::invalid("at least one MA coefficient must be non-zero when drive_std > 0"));
        }
        check_stability(&ar)?;
        Ok(ArmaModel { ar, ma, drive_std, sample_period })
    }

    /// White Gaussian phase noise with per-step standard deviation `std`.
    pub fn white(std: f64, sample_period: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![1.0], std, sample_period)
    }

    pub fn ar(&self) -> &[f64] {
        &self.ar
    }

    pub fn ma(&self) -> &[f64] {
        &self.ma
    }

    pub fn drive_std(&self) -> f64 {
        self.drive_std
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.sample_period
    }

    /// AR order `p` and MA order `q` (the MA list holds `q + 1` terms).
    pub fn order(&self) -> (usize, usize) {
        (self.ar.len(), self.ma.len() - 1)
    }

    /// Same coefficients with the driving noise scaled by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.ar.clone(), self.ma.clone(), self.drive_std * c.abs(), self.sample_period)
    }

    pub fn with_drive_std(&self, drive_std: f64) -> Result<Self> {
        Self::new(self.ar.clone(), self.ma.clone(), drive_std, self.sample_period)
    }

    /// First `len` taps of the impulse response of `B(z)/A(z)`.
    pub fn impulse_response(&self, len: usize) -> Vec<f64> {
        let mut h = vec![0.0; len];
        for t in 0..len {
            let mut v = self.ma.get(t).copied().unwrap_or(0.0);
            for (i, a) in self.ar.iter().enumerate() {
                if t > i {
                    v += a * h[t - i - 1];
                }
            }
            h[t] = v;
        }
        h
    }

    /// Number of discarded warm-up samples before a trajectory is emitted.
    ///
    /// `10·(p+q+1)`, extended for AR models until the impulse response has
    /// fallen below `1e-9` of its peak.
    pub fn burn_in(&self) -> usize {
        let (p, q) = self.order();
        let base = 10 * (p + q + 1);
        if p == 0 {
            return base;
        }
        let mut len = (base + q + 1).next_power_of_two();
        loop {
            let h = self.impulse_response(len);
            let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tail = h.iter().rposition(|v| v.abs() >= 1e-9 * peak).map_or(0, |i| i + 1);
            if tail < len || len >= MAX_BURN_IN {
                return base.max(tail).min(MAX_BURN_IN);
            }
            len *= 2;
        }
    }

    /// `|B(e^{−iθ})|² / |A(e^{−iθ})|²`.
    pub fn transfer_power(&self, theta: f64) -> f64 {
        let eval = |coeffs: &mut dyn Iterator<Item = (usize, f64)>| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, c) in coeffs {
                acc += Complex64::from_polar(c, -(j as f64) * theta);
            }
            acc.norm_sqr()
        };
        let num = eval(&mut self.ma.iter().copied().enumerate());
        if self.ar.is_empty() {
            return num;
        }
        let den = eval(
            &mut std::iter::once((0usize, 1.0)).chain(self.ar.iter().enumerate().map(|(i, a)| (i + 1, -a))),
        );
        num / den
    }

    /// Discrete-time PSD `S(θ)` in rad² per unit angular frequency (per step).
    pub fn psd_discrete(&self, theta: f64) -> f64 {
        self.drive_std * self.drive_std * self.transfer_power(theta)
    }

    /// One-sided physical PSD (rad²/Hz) at frequency `f`.
    pub fn psd_at(&self, f: f64) -> f64 {
        2.0 * self.sample_period * self.psd_discrete(2.0 * PI * f * self.sample_period)
    }

    /// Physical one-sided PSD on `grid_size` equispaced frequencies in `[0, Nyquist]`.
    pub fn psd(&self, grid_size: usize) -> Result<Spectrum> {
        if grid_size < 2 {
            return Err(Error::invalid("grid_size must be >= 2"));
        }
        let denom = (grid_size - 1) as f64;
        let nyq = self.nyquist();
        let freqs: Vec<f64> = (0..grid_size).map(|m| nyq * m as f64 / denom).collect();
        let values = (0..grid_size)
            .map(|m| 2.0 * self.sample_period * self.psd_discrete(PI * m as f64 / denom))
            .collect();
        Spectrum::new(freqs, values, self.sample_period)
    }

    /// Process variance `r(0)`.
    pub fn variance(&self) -> f64 {
        self.autocovariance(0)[0]
    }

    /// Autocovariance `r(0..=max_lag)` by inverse FFT of the discrete PSD.
    ///
    /// The FFT length doubles until successive results agree to `1e-12`
    /// relative, which bounds the aliasing error well under `1e-9`.
    pub fn autocovariance(&self, max_lag: usize) -> Vec<f64> {
        let (p, q) = self.order();
        if self.drive_std == 0.0 {
            return vec![0.0; max_lag + 1];
        }
        let mut len = (4 * (max_lag + 1)).max(2 * (q + p + 1)).max(256).next_power_of_two();
        let mut prev = self.aliased_autocov(len, max_lag);
        loop {
            len *= 2;
            let next = self.aliased_autocov(len, max_lag);
            let scale = next[0].abs().max(f64::MIN_POSITIVE);
            let diff = prev.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if diff <= 1e-12 * scale || len >= (1 << 26) {
                return next;
            }
            prev = next;
        }
    }

    fn aliased_autocov(&self, len: usize, max_lag: usize) -> Vec<f64> {
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(len);
        let inv = planner.plan_fft_inverse(len);
        let spectrum_of = |coeffs: Vec<f64>| {
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            for (j, c) in coeffs.into_iter().enumerate() {
                buf[j % len] += c;
            }
            fwd.process(&mut buf);
            buf
        };
        let b = spectrum_of(self.ma.clone());
        let mut s: Vec<Complex64> = if self.ar.is_empty() {
            b.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect()
        } else {
            let mut a_coeffs = vec![1.0];
            a_coeffs.extend(self.ar.iter().map(|a| -a));
            let a = spectrum_of(a_coeffs);
            b.iter().zip(&a).map(|(bv, av)| Complex64::new(bv.norm_sqr() / av.norm_sqr(), 0.0)).collect()
        };
        inv.process(&mut s);
        let var = self.drive_std * self.drive_std;
        (0..=max_lag).map(|k| var * s[k % len].re / len as f64).collect()
    }

    /// Generates a stationary trajectory of `length` phase increments.
    ///
    /// The stream is a pure function of `(self, length, lineage)`.
    pub fn generate(&self, length: usize, lineage: &SeedLineage) -> Result<Trajectory> {
        if length == 0 {
            return Err(Error::invalid("trajectory length must be >= 1"));
        }
        let phases = if self.drive_std == 0.0 {
            vec![0.0; length]
        } else {
            let mut rng = lineage.rng();
            let normal = Normal::new(0.0, self.drive_std).expect("drive_std validated");
            let q = self.ma.len() - 1;
            if self.ar.is_empty() {
                // Pure MA output depends only on the last q+1 drive samples, so
                // drive samples that would feed discarded outputs are never drawn.
                let w: Vec<f64> = (0..q + length).map(|_| normal.sample(&mut rng)).collect();
                (0..length)
                    .map(|t| self.ma.iter().enumerate().map(|(j, b)| b * w[t + q - j]).sum())
                    .collect()
            } else {
                let total = self.burn_in() + length;
                let w: Vec<f64> = (0..total).map(|_| normal.sample(&mut rng)).collect();
                let mut y = vec![0.0; total];
                for t in 0..total {
                    let mut v = 0.0;
                    for (i, a) in self.ar.iter().enumerate() {
                        if t > i {
                            v += a * y[t - i - 1];
                        }
                    }
                    for (j, b) in self.ma.iter().enumerate() {
                        if t >= j {
                            v += b * w[t - j];
                        }
                    }
                    y[t] = v;
                }
                y.split_off(total - length)
            }
        };
        Ok(Trajectory { phases, sample_period: self.sample_period, lineage: lineage.clone() })
    }

    pub fn to_toml(&self) -> String {
        let doc = ModelDoc {
            ar: self.ar.clone(),
            ma: self.ma.clone(),
            drive_std: self.drive_std,
            sample_period_s: self.sample_period,
        };
        toml::to_string(&doc).expect("model document serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: ModelDoc = toml::from_str(text).map_err(|e| crate::io::toml_error(text, &e))?;
        Self::new(doc.ar, doc.ma, doc.drive_std, doc.sample_period_s)
    }
}

/// Schur–Cohn step-down test on `A(z) = 1 − Σ aᵢ z^{−i}`.
fn check_stability(ar: &[f64]) -> Result<()> {
    // poly[i] is the coefficient of z^{-i}
    let mut poly: Vec<f64> = std::iter::once(1.0).chain(ar.iter().map(|a| -a)).collect();
    for m in (1..poly.len()).rev() {
        let k = poly[m];
        if !(k.abs() < 1.0) {
            return Err(Error::Unstable { index: m, magnitude: k.abs() });
        }
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m).map(|i| (poly[i] - k * poly[m - i]) / denom).collect();
        poly = next;
    }
    Ok(())
}

/// One realization of correlated per-step phase increments.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub phases: Vec<f64>,
    pub sample_period: f64,
    pub lineage: SeedLineage,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_var(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
    }

    fn lag1_corr(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        c1 / c0
    }

    #[test]
    fn zero_drive_gives_zero_trajectory() {
        let m = ArmaModel::white(0.0, 1e-7).unwrap();
        let t = m.generate(8, &SeedLineage::new(3)).unwrap();
        assert_eq!(t.phases, vec![0.0; 8]);
    }

    #[test]
    fn white_noise_sample_variance() {
        let m = ArmaModel::white(1.0, 1e-7).unwrap();
        let t = m.generate(100_000, &SeedLineage::new(11)).unwrap();
        assert!((sample_var(&t.phases) - 1.0).abs() < 0.02);
    }

    #[test]
    fn ar1_lag_one_correlation() {
        let m = ArmaModel::new(vec![0.5], vec![1.0], 1.0, 1e-7).unwrap();
        let t = m.generate(100_000, &SeedLineage::new(12)).unwrap();
        assert!((lag1_corr(&t.phases) - 0.5).abs() < 0.02);
    }

    #[test]
    fn psd_closed_forms() {
        let ts = 1e-7;
        let white = ArmaModel::white(1.0, ts).unwrap();
        let s = white.psd(9).unwrap();
        assert!(s.values.iter().all(|&v| (v - 2.0 * ts).abs() < 1e-20));

        let ma1 = ArmaModel::new(vec![], vec![1.0, 0.5], 1.0, ts).unwrap();
        assert_relative_eq!(ma1.psd_discrete(0.0), 2.25, epsilon = 1e-12);
        assert_relative_eq!(ma1.psd_discrete(PI), 0.25, epsilon = 1e-12);
        assert_relative_eq!(ma1.psd_discrete(1.0), 1.25 + 1.0f64.cos(), epsilon = 1e-12);

        let ar1 = ArmaModel::new(vec![0.5], vec![1.0], 1.0, ts).unwrap();
        assert_relative_eq!(ar1.psd_discrete(0.0), 4.0, epsilon = 1e-12);
        assert_relative_eq!(ar1.psd_discrete(PI), 4.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn autocovariance_closed_forms() {
        let ts = 1e-7;
        let r = ArmaModel::white(0.3, ts).unwrap().autocovariance(3);
        assert_relative_eq!(r[0], 0.09, epsilon = 1e-14);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-15));

        let r = ArmaModel::new(vec![], vec![1.0, 0.5], 1.0, ts).unwrap().autocovariance(2);
        assert_relative_eq!(r[0], 1.25, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.5, epsilon = 1e-12);
        assert!(r[2].abs() < 1e-14);

        let r = ArmaModel::new(vec![0.5], vec![1.0], 1.0, ts).unwrap().autocovariance(5);
        for (k, v) in r.iter().enumerate() {
            assert_relative_eq!(*v, 4.0 / 3.0 * 0.5f64.powi(k as i32), max_relative = 1e-9);
        }
    }

    #[test]
    fn parseval_on_psd_grid() {
        let m = ArmaModel::new(vec![0.5, -0.2], vec![1.0, 0.3, -0.1], 0.7, 7e-8).unwrap();
        let s = m.psd(DEFAULT_GRID).unwrap();
        assert_relative_eq!(s.integral(), m.variance(), max_relative = 1e-6);
    }

    #[test]
    fn unstable_models_are_rejected() {
        assert!(matches!(
            ArmaModel::new(vec![1.2], vec![1.0], 1.0, 1e-7),
            Err(Error::Unstable { .. })
        ));
        // roots 0.9 and 1.1
        assert!(ArmaModel::new(vec![2.0, -0.99], vec![1.0], 1.0, 1e-7).is_err());
        // complex pair with radius 0.9
        assert!(ArmaModel::new(vec![1.2, -0.81], vec![1.0], 1.0, 1e-7).is_ok());
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(ArmaModel::new(vec![], vec![], 1.0, 1e-7).is_err());
        assert!(ArmaModel::new(vec![], vec![0.0], 1.0, 1e-7).is_err());
        assert!(ArmaModel::new(vec![], vec![f64::NAN], 1.0, 1e-7).is_err());
        assert!(ArmaModel::new(vec![], vec![1.0], -1.0, 1e-7).is_err());
        assert!(ArmaModel::new(vec![], vec![1.0], 1.0, 0.0).is_err());
        assert!(ArmaModel::new(vec![], vec![0.0], 0.0, 1e-7).is_ok());
    }

    #[test]
    fn burn_in_extends_for_slow_poles() {
        let fast = ArmaModel::new(vec![0.5], vec![1.0], 1.0, 1e-7).unwrap();
        assert_eq!(fast.burn_in(), 30);
        let slow = ArmaModel::new(vec![0.99], vec![1.0], 1.0, 1e-7).unwrap();
        assert!(slow.burn_in() > 2000);
        let h = slow.impulse_response(slow.burn_in() + 1);
        assert!(h.last().unwrap().abs() < 1e-9);
    }

    #[test]
    fn model_document_round_trip() {
        let m = ArmaModel::new(vec![0.25], vec![1.0, -0.5], 0.125, 1e-7).unwrap();
        let text = m.to_toml();
        assert!(text.contains("sample_period_s"));
        assert_eq!(ArmaModel::from_toml(&text).unwrap(), m);
        assert!(ArmaModel::from_toml("ma = [1.0]\ndrive_std = 1.0\nsample_period_s = 1e-7\nbogus = 1\n").is_err());
    }
}
