//! Spectrum-targeted model design.
//!
//! Every designer produces an MA-only (FIR) model by frequency sampling the
//! square root of the target PSD and applying a raised-cosine tapered window.
//! Coefficients are normalized to unit energy, so `drive_std²` equals the
//! process variance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ArmaModel;
use crate::error::{Error, Result};

pub const DEFAULT_TAPS: usize = 257;

/// One rectangular band of a multiband target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub center_hz: f64,
    pub width_hz: f64,
    /// Integrated power of the band (rad²).
    pub power: f64,
}

fn check_common(t_s: f64, taps: usize) -> Result<()> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::invalid(format!("sample period must be > 0, got {t_s}")));
    }
    if taps < 3 {
        return Err(Error::invalid(format!("taps must be >= 3, got {taps}")));
    }
    Ok(())
}

fn check_band(band: &Band, t_s: f64) -> Result<()> {
    let nyq = 0.5 / t_s;
    let lo = band.center_hz - 0.5 * band.width_hz;
    let hi = band.center_hz + 0.5 * band.width_hz;
    if !(band.width_hz > 0.0) {
        return Err(Error::invalid(format!("band width must be > 0, got {}", band.width_hz)));
    }
    if !(lo > 0.0 && hi < nyq) {
        return Err(Error::invalid(format!(
            "band [{lo}, {hi}] Hz must lie strictly inside (0, {nyq}) Hz"
        )));
    }
    if !(band.power.is_finite() && band.power >= 0.0) {
        return Err(Error::invalid(format!("band power must be >= 0, got {}", band.power)));
    }
    Ok(())
}

/// Windowed frequency-sampling FIR whose squared magnitude approximates the
/// discrete-time PSD implied by the physical target `target(f)` (rad²/Hz).
fn fir_from_target(target: &dyn Fn(f64) -> f64, t_s: f64, taps: usize) -> Vec<f64> {
    let intervals = (32 * taps).next_power_of_two().max(8192);
    let dtheta = PI / intervals as f64;
    let amp: Vec<f64> = (0..=intervals)
        .map(|m| {
            let theta = m as f64 * dtheta;
            let f = theta / (2.0 * PI * t_s);
            (target(f).max(0.0) / (2.0 * t_s)).sqrt()
        })
        .collect();
    let center = 0.5 * (taps as f64 - 1.0);
    (0..taps)
        .map(|j| {
            let n = j as f64 - center;
            // (1/π) ∫₀^π H(θ) cos(nθ) dθ by the trapezoid rule
            let mut acc = 0.0;
            for (m, a) in amp.iter().enumerate() {
                let w = if m == 0 || m == intervals { 0.5 } else { 1.0 };
                acc += w * a * (n * m as f64 * dtheta).cos();
            }
            let h = acc * dtheta / PI;
            let window = window_at(j, taps);
            h * window
        })
        .collect()
}

/// Fraction of the window occupied by the two cosine tapers.
pub const TAPER_FRACTION: f64 = 0.5;

/// Cosine-tapered (Tukey) window; `TAPER_FRACTION = 1` is the Hann window.
fn window_at(j: usize, taps: usize) -> f64 {
    let x = (j as f64 + 1.0) / (taps as f64 + 1.0);
    let edge = 0.5 * TAPER_FRACTION;
    if x < edge {
        0.5 - 0.5 * (PI * x / edge).cos()
    } else if x > 1.0 - edge {
        0.5 - 0.5 * (PI * (1.0 - x) / edge).cos()
    } else {
        1.0
    }
}

/// Builds a model from raw FIR taps, either rescaled to `power` or keeping
/// the absolute level the taps already carry.
fn finish(taps: Vec<f64>, power: Option<f64>, t_s: f64) -> Result<ArmaModel> {
    let energy: f64 = taps.iter().map(|b| b * b).sum();
    if energy == 0.0 {
        return ArmaModel::new(Vec::new(), vec![1.0], 0.0, t_s);
    }
    let norm = energy.sqrt();
    let ma: Vec<f64> = taps.iter().map(|b| b / norm).collect();
    let drive = match power {
        Some(p) => p.sqrt(),
        None => norm,
    };
    ArmaModel::new(Vec::new(), ma, drive, t_s)
}

/// Rectangular band of integrated power `total_power`.
pub fn design_bandpass(
    center_hz: f64,
    bandwidth_hz: f64,
    total_power: f64,
    t_s: f64,
    taps: usize,
) -> Result<ArmaModel> {
    design_multiband(&[Band { center_hz, width_hz: bandwidth_hz, power: total_power }], t_s, taps)
}

/// Sum of rectangular bands; the realized variance equals the summed power.
pub fn design_multiband(bands: &[Band], t_s: f64, taps: usize) -> Result<ArmaModel> {
    check_common(t_s, taps)?;
    if bands.is_empty() {
        return Err(Error::invalid("at least one band is required"));
    }
    for b in bands {
        check_band(b, t_s)?;
    }
    let total: f64 = bands.iter().map(|b| b.power).sum();
    // Shape weights; an all-zero design still gets a valid shape.
    let weights: Vec<f64> =
        if total > 0.0 { bands.iter().map(|b| b.power).collect() } else { vec![1.0; bands.len()] };
    let bands = bands.to_vec();
    let target = move |f: f64| -> f64 {
        bands
            .iter()
            .zip(&weights)
            .filter(|(b, _)| (f - b.center_hz).abs() <= 0.5 * b.width_hz)
            .map(|(b, w)| w / b.width_hz)
            .sum()
    };
    finish(fir_from_target(&target, t_s, taps), Some(total), t_s)
}

/// `1/f^α` on `[f_lo, f_hi]` through `anchor`, held constant below `f_lo` and
/// rolled off with a cosine taper over `[f_hi, 1.25 f_hi]` (clipped at Nyquist).
pub fn design_power_law(
    alpha: f64,
    anchor: (f64, f64),
    band: (f64, f64),
    t_s: f64,
    taps: usize,
) -> Result<ArmaModel> {
    check_common(t_s, taps)?;
    let nyq = 0.5 / t_s;
    let (f_lo, f_hi) = band;
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= nyq * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("power-law band must satisfy 0 < f_lo < f_hi <= {nyq}")));
    }
    let (f_a, s_a) = anchor;
    if !(f_a > 0.0 && s_a.is_finite() && s_a >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("power-law anchor must have positive frequency and non-negative PSD"));
    }
    let law = move |f: f64| s_a * (f / f_a).powf(-alpha);
    let roll = (0.25 * f_hi).min(nyq - f_hi);
    let target = move |f: f64| -> f64 {
        if f < f_lo {
            law(f_lo)
        } else if f <= f_hi {
            law(f)
        } else if roll > 0.0 && f < f_hi + roll {
            let x = (f - f_hi) / roll;
            law(f_hi) * (0.5 * PI * x).cos().powi(2)
        } else if roll > 0.0 {
            0.0
        } else {
            law(f_hi)
        }
    };
    finish(fir_from_target(&target, t_s, taps), None, t_s)
}

/// Lorentzian `A/(1+ω²/ω_c²)` plus a white floor, `ω = 2πf`.
pub fn design_lorentzian(
    amplitude: f64,
    cutoff_rad_s: f64,
    white_floor: f64,
    t_s: f64,
    taps: usize,
) -> Result<ArmaModel> {
    check_common(t_s, taps)?;
    if !(amplitude >= 0.0 && cutoff_rad_s > 0.0 && white_floor >= 0.0) {
        return Err(Error::invalid("lorentzian requires A >= 0, ω_c > 0, floor >= 0"));
    }
    let target = move |f: f64| {
        let w = 2.0 * PI * f;
        amplitude / (1.0 + (w / cutoff_rad_s).powi(2)) + white_floor
    };
    finish(fir_from_target(&target, t_s, taps), None, t_s)
}
