//! Closed-form survival prediction and bounded nonlinear least-squares fit of
//! native-noise and pulse-error parameters.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_cells;
use crate::noise::Spectrum;
use crate::recon::{decay_from_survival, DEFAULT_FLOOR};
use crate::seed::SeedLineage;
use crate::sequences::FilterFunction;
use crate::sim::ExperimentRecord;

pub const DEFAULT_STARTS: usize = 8;
pub const MIN_RECORDS: usize = 6;
const JACOBIAN_TOL: f64 = 1e-4;
const PARAM_NAMES: [&str; 5] = ["A", "omega_c2", "sigma2", "c1", "c2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    LorentzianPlusWhite,
    WhiteOnly,
}

impl ModelKind {
    fn free(self) -> &'static [usize] {
        match self {
            ModelKind::LorentzianPlusWhite => &[0, 1, 2, 3, 4],
            ModelKind::WhiteOnly => &[2, 3, 4],
        }
    }
}

/// Native-noise and pulse-error parameters.
///
/// The native one-sided PSD is `A / (1 + ω²/ω_c²) + σ²` with `ω = 2πf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub omega_c: f64,
    pub sigma2: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub kind: ModelKind,
    /// Excluded sequence labels.
    #[serde(default)]
    pub mask: BTreeSet<usize>,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            a: 0.0,
            omega_c: 0.0,
            sigma2: 0.0,
            c1: 0.0,
            c2: 0.0,
            kind: ModelKind::LorentzianPlusWhite,
            mask: BTreeSet::new(),
        }
    }
}

impl FitParams {
    pub fn white(sigma2: f64, c1: f64, c2: f64) -> Self {
        FitParams { sigma2, c1, c2, kind: ModelKind::WhiteOnly, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("A", self.a), ("omega_c", self.omega_c), ("sigma2", self.sigma2), ("c1", self.c1), ("c2", self.c2)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("fit parameter {name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Native PSD at frequency `f` (Hz).
    pub fn native_psd(&self, f: f64) -> f64 {
        let lor = match self.kind {
            ModelKind::WhiteOnly => 0.0,
            ModelKind::LorentzianPlusWhite => self.a * lorentz_ratio(self.omega_c * self.omega_c, omega_sq(f)),
        };
        lor + self.sigma2
    }

    fn to_vec(&self) -> [f64; 5] {
        let (a, w2) = match self.kind {
            ModelKind::WhiteOnly => (0.0, self.omega_c * self.omega_c),
            ModelKind::LorentzianPlusWhite => (self.a, self.omega_c * self.omega_c),
        };
        [a, w2, self.sigma2, self.c1, self.c2]
    }

    fn from_vec(x: &[f64; 5], kind: ModelKind, mask: &BTreeSet<usize>) -> Self {
        FitParams { a: x[0], omega_c: x[1].sqrt(), sigma2: x[2], c1: x[3], c2: x[4], kind, mask: mask.clone() }
    }
}

fn omega_sq(f: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f;
    w * w
}

/// `1 / (1 + u/w2) = w2 / (w2 + u)` with the `w2 → 0⁺` limit at `u = 0`.
fn lorentz_ratio(w2: f64, u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        w2 / (w2 + u)
    }
}

/// `∂/∂w2` of [`lorentz_ratio`].
fn lorentz_ratio_dw2(w2: f64, u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u / ((w2 + u) * (w2 + u))
    }
}

/// Decay exponent `g_k·(S_nat + S_inj) + c₁n + c₂n²`.
pub fn predict_chi(params: &FitParams, filter: &FilterFunction, n_pulses: usize, s_inj: Option<&Spectrum>) -> Result<f64> {
    let inj = match s_inj {
        Some(s) => filter.contract(s)?,
        None => 0.0,
    };
    let nat: f64 = filter.freqs.iter().zip(&filter.weights).map(|(f, w)| w * params.native_psd(*f)).sum();
    let n = n_pulses as f64;
    Ok(nat + inj + params.c1 * n + params.c2 * n * n)
}

/// `p = ½ + ½·exp(−χ)` for the closed-form decay exponent.
pub fn predict_survival(
    params: &FitParams,
    filter: &FilterFunction,
    n_pulses: usize,
    s_inj: Option<&Spectrum>,
) -> Result<f64> {
    Ok(0.5 + 0.5 * (-predict_chi(params, filter, n_pulses, s_inj)?).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub kind: ModelKind,
    pub mask: BTreeSet<usize>,
    pub init: Option<FitParams>,
    pub starts: usize,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            kind: ModelKind::LorentzianPlusWhite,
            mask: BTreeSet::new(),
            init: None,
            starts: DEFAULT_STARTS,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub label: usize,
    pub n_pulses: usize,
    pub measured: f64,
    pub predicted: f64,
    pub masked: bool,
}

impl Residual {
    pub fn value(&self) -> f64 {
        self.measured - self.predicted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: FitParams,
    /// Sum of squared probability residuals over unmasked sequences.
    pub loss: f64,
    pub iterations: usize,
    /// Every record, masked ones included, in input order.
    pub residuals: Vec<Residual>,
    /// Gauss–Newton covariance over `[A, ω_c², σ², c₁, c₂]` (zero rows for fixed
    /// or bound-active parameters).
    pub covariance: [[f64; 5]; 5],
    pub bounds_active: [bool; 5],
    /// Maximum relative deviation of the analytic Jacobian from central differences.
    pub jacobian_error: f64,
    pub warnings: Vec<String>,
    pub start_index: usize,
}

impl FitReport {
    pub fn stderr(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.covariance[i][i].max(0.0).sqrt())
    }

    pub fn rms_residual(&self) -> f64 {
        let used: Vec<f64> = self.residuals.iter().filter(|r| !r.masked).map(|r| r.value()).collect();
        (used.iter().map(|r| r * r).sum::<f64>() / used.len() as f64).sqrt()
    }

    pub fn to_toml(&self) -> String {
        let se = self.stderr();
        let doc = FitDocument {
            schema: 1,
            kind: self.params.kind,
            loss: self.loss,
            rms_residual: self.rms_residual(),
            iterations: self.iterations,
            start_index: self.start_index,
            jacobian_rel_error: self.jacobian_error,
            mask: self.params.mask.iter().copied().collect(),
            params: ParamTable {
                a: self.params.a,
                omega_c: self.params.omega_c,
                omega_c2: self.params.omega_c * self.params.omega_c,
                sigma2: self.params.sigma2,
                c1: self.params.c1,
                c2: self.params.c2,
            },
            stderr: ParamTable {
                a: se[0],
                omega_c: if self.params.omega_c > 0.0 { 0.5 * se[1] / self.params.omega_c } else { 0.0 },
                omega_c2: se[1],
                sigma2: se[2],
                c1: se[3],
                c2: se[4],
            },
            bounds_active: BoundTable {
                a: self.bounds_active[0],
                omega_c2: self.bounds_active[1],
                sigma2: self.bounds_active[2],
                c1: self.bounds_active[3],
                c2: self.bounds_active[4],
            },
            warnings: self.warnings.clone(),
        };
        toml::to_string(&doc).expect("fit report serializes")
    }

    /// `seq_index,n_pulses,measured,predicted,residual,masked`.
    pub fn residuals_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .residuals
            .iter()
            .map(|r| {
                vec![
                    r.label.to_string(),
                    r.n_pulses.to_string(),
                    format!("{}", r.measured),
                    format!("{}", r.predicted),
                    format!("{}", r.value()),
                    (r.masked as u8).to_string(),
                ]
            })
            .collect();
        format_cells(&["seq_index", "n_pulses", "measured", "predicted", "residual", "masked"], &rows)
    }
}

#[derive(Serialize, Deserialize)]
struct ParamTable {
    #[serde(rename = "A")]
    a: f64,
    omega_c: f64,
    omega_c2: f64,
    sigma2: f64,
    c1: f64,
    c2: f64,
}

#[derive(Serialize, Deserialize)]
struct BoundTable {
    #[serde(rename = "A")]
    a: bool,
    omega_c2: bool,
    sigma2: bool,
    c1: bool,
    c2: bool,
}

#[derive(Serialize, Deserialize)]
struct FitDocument {
    schema: u32,
    kind: ModelKind,
    loss: f64,
    rms_residual: f64,
    iterations: usize,
    start_index: usize,
    jacobian_rel_error: f64,
    mask: Vec<usize>,
    warnings: Vec<String>,
    params: ParamTable,
    stderr: ParamTable,
    bounds_active: BoundTable,
}

/// Reads the parameter block of a fit report back into [`FitParams`].
pub fn params_from_report(text: &str) -> Result<FitParams> {
    let doc: FitDocument = toml::from_str(text).map_err(|e| crate::io::toml_error(text, &e))?;
    let p = FitParams {
        a: doc.params.a,
        omega_c: doc.params.omega_c,
        sigma2: doc.params.sigma2,
        c1: doc.params.c1,
        c2: doc.params.c2,
        kind: doc.kind,
        mask: doc.mask.into_iter().collect(),
    };
    p.validate()?;
    Ok(p)
}

struct Row {
    label: usize,
    n: f64,
    measured: f64,
    weights: Vec<f64>,
    white: f64,
    inj: f64,
    masked: bool,
}

struct Problem {
    rows: Vec<Row>,
    u: Vec<f64>,
    kind: ModelKind,
}

impl Problem {
    fn active(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.masked)
    }

    fn chi(&self, row: &Row, x: &[f64; 5]) -> f64 {
        let lor = if self.kind == ModelKind::LorentzianPlusWhite && x[0] != 0.0 {
            x[0] * row.weights.iter().zip(&self.u).map(|(w, u)| w * lorentz_ratio(x[1], *u)).sum::<f64>()
        } else {
            0.0
        };
        lor + x[2] * row.white + row.inj + x[3] * row.n + x[4] * row.n * row.n
    }

    fn predict(&self, row: &Row, x: &[f64; 5]) -> f64 {
        0.5 + 0.5 * (-self.chi(row, x)).exp()
    }

    fn loss(&self, x: &[f64; 5]) -> f64 {
        self.active().map(|r| (r.measured - self.predict(r, x)).powi(2)).sum()
    }

    /// Residuals `meas − model` and `∂model/∂x` over unmasked rows.
    fn linearize(&self, x: &[f64; 5]) -> (DVector<f64>, DMatrix<f64>) {
        let rows: Vec<&Row> = self.active().collect();
        let mut r = DVector::zeros(rows.len());
        let mut j = DMatrix::zeros(rows.len(), 5);
        for (k, row) in rows.iter().enumerate() {
            let chi = self.chi(row, x);
            let e = 0.5 * (-chi).exp();
            r[k] = row.measured - (0.5 + e);
            let mut dchi = [0.0, 0.0, row.white, row.n, row.n * row.n];
            if self.kind == ModelKind::LorentzianPlusWhite {
                let (mut s0, mut s1) = (0.0, 0.0);
                for (w, u) in row.weights.iter().zip(&self.u) {
                    s0 += w * lorentz_ratio(x[1], *u);
                    s1 += w * lorentz_ratio_dw2(x[1], *u);
                }
                dchi[0] = s0;
                dchi[1] = x[0] * s1;
            }
            for i in 0..5 {
                j[(k, i)] = -e * dchi[i];
            }
        }
        (r, j)
    }
}

struct Outcome {
    x: [f64; 5],
    loss: f64,
    iterations: usize,
    converged: bool,
}

/// Projected Levenberg–Marquardt on `x ≥ 0` with Marquardt diagonal scaling.
fn levenberg_marquardt(p: &Problem, start: [f64; 5], max_iter: usize) -> Outcome {
    let free = p.kind.free();
    let mut x = start;
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
    let mut loss = p.loss(&x);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let (r, j) = p.linearize(&x);
        let grad = j.tr_mul(&r);
        // Parameters pinned at zero with the descent direction pointing outward stay fixed.
        let moving: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&i| !(x[i] <= 0.0 && grad[i] <= 0.0) && j.column(i).norm() > 0.0)
            .collect();
        if moving.is_empty() {
            converged = true;
            break;
        }
        // Column normalisation keeps parameters with wildly different units on an equal footing.
        let norms: Vec<f64> = moving.iter().map(|&i| j.column(i).norm()).collect();
        let jm = DMatrix::from_fn(j.nrows(), moving.len(), |k, c| j[(k, moving[c])] / norms[c]);
        let gm = jm.tr_mul(&r);
        let jtj = jm.tr_mul(&jm);
        if gm.amax() <= 1e-12 * r.norm() || loss == 0.0 {
            converged = true;
            break;
        }

        let mut improved = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..moving.len() {
                a[(i, i)] += lambda;
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&gm)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x;
            for (k, &i) in moving.iter().enumerate() {
                trial[i] = (x[i] + step[k] / norms[k]).max(0.0);
            }
            let trial_loss = p.loss(&trial);
            if trial_loss < loss {
                let rel = (loss - trial_loss) / loss.max(1e-300);
                let small_step = moving.iter().all(|&i| (trial[i] - x[i]).abs() <= 1e-12 * x[i].abs().max(1e-300));
                x = trial;
                loss = trial_loss;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-15 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            // No decrease possible along any damped step: a stationary point up to rounding.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Outcome { x, loss, iterations, converged }
}

fn build_problem(
    records: &[ExperimentRecord],
    filters: &[FilterFunction],
    s_inj: Option<&Spectrum>,
    kind: ModelKind,
    mask: &BTreeSet<usize>,
) -> Result<Problem> {
    let by_label: HashMap<usize, &FilterFunction> = filters.iter().map(|f| (f.label, f)).collect();
    let first = by_label
        .get(&records.first().ok_or_else(|| Error::invalid("no records to fit"))?.label)
        .ok_or_else(|| Error::invalid(format!("no filter function for sequence {}", records[0].label)))?;
    let freqs = first.freqs.clone();
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let f = by_label
            .get(&rec.label)
            .ok_or_else(|| Error::invalid(format!("no filter function for sequence {}", rec.label)))?;
        f.check_grid(&freqs)?;
        if !(0.0..=1.0).contains(&rec.survival_mean) {
            return Err(Error::invalid(format!("survival {} of sequence {} outside [0, 1]", rec.survival_mean, rec.label)));
        }
        let inj = match s_inj {
            Some(s) => f.contract(s)?,
            None => 0.0,
        };
        rows.push(Row {
            label: rec.label,
            n: rec.n_pulses as f64,
            measured: rec.survival_mean,
            weights: f.weights.clone(),
            white: f.total_weight(),
            inj,
            masked: mask.contains(&rec.label),
        });
    }
    let unmasked = rows.iter().filter(|r| !r.masked).count();
    if unmasked < MIN_RECORDS {
        return Err(Error::invalid(format!("fit needs at least {MIN_RECORDS} unmasked records, got {unmasked}")));
    }
    Ok(Problem { rows, u: freqs.iter().map(|f| omega_sq(*f)).collect(), kind })
}

/// Data-driven starting point.
fn default_init(p: &Problem) -> [f64; 5] {
    let mut rows: Vec<&Row> = p.active().collect();
    rows.sort_by(|a, b| a.n.total_cmp(&b.n));
    let excess = |r: &Row| decay_from_survival(r.measured, DEFAULT_FLOOR).value().map(|c| c - r.inj);

    // white floor from the upper quartile in pulse number
    let tail = &rows[rows.len() - rows.len().div_ceil(4)..];
    let mut est: Vec<f64> =
        tail.iter().filter_map(|r| excess(r).map(|e| (e - 1e-4 * (r.n + r.n * r.n)).max(0.0) / r.white)).collect();
    est.sort_by(f64::total_cmp);
    let sigma2 = est.get(est.len() / 2).copied().unwrap_or(0.0);

    let (c1, c2) = (1e-4, 1e-4);
    let base = |r: &Row| sigma2 * r.white + c1 * r.n + c2 * r.n * r.n;
    let nyq_u = *p.u.last().unwrap();
    let u_min = p.u.iter().copied().find(|&u| u > 0.0).unwrap_or(1.0);

    let ratio_sum = |r: &Row, w2: f64| r.weights.iter().zip(&p.u).map(|(w, u)| w * lorentz_ratio(w2, *u)).sum::<f64>();
    let mut a = 0.0;
    let mut w2 = (u_min * nyq_u).sqrt();
    if p.kind == ModelKind::LorentzianPlusWhite && rows.len() >= 2 {
        let (r0, r1) = (rows[0], rows[1]);
        let (e0, e1) = (excess(r0).map(|e| e - base(r0)), excess(r1).map(|e| e - base(r1)));
        if let (Some(e0), Some(e1)) = (e0, e1) {
            if e0 > 0.0 && e1 > 0.0 {
                // ratio L1/L0 increases with the cutoff; bisect in log space
                let target = e1 / e0;
                let (mut lo, mut hi) = (u_min.ln() - 4.0, nyq_u.ln() + 4.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let w = mid.exp();
                    if ratio_sum(r1, w) / ratio_sum(r0, w) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                w2 = (0.5 * (lo + hi)).exp();
                a = e0 / ratio_sum(r0, w2).max(1e-300);
            }
        }
        if a == 0.0 {
            a = sigma2.max(1e-12);
        }
    }
    [a, w2, sigma2, c1, c2]
}

/// Relative infinity-norm gap between analytic and central-difference Jacobians.
fn jacobian_gap(p: &Problem, x: &[f64; 5], scale: &[f64; 5]) -> f64 {
    let (_, j) = p.linearize(x);
    let mut worst: f64 = 0.0;
    for &i in p.kind.free() {
        // step relative to the parameter itself; the scale only serves parameters at zero
        let h = 1e-6 * if x[i] != 0.0 { x[i].abs() } else { scale[i] };
        let (mut xp, mut xm) = (*x, *x);
        xp[i] += h;
        xm[i] -= h;
        let col_norm = j.column(i).amax();
        let mut diff: f64 = 0.0;
        for (k, row) in p.active().enumerate() {
            // differencing ½e^{−χ} rather than p keeps saturated rows resolvable
            let fd = 0.5 * ((-p.chi(row, &xp)).exp() - (-p.chi(row, &xm)).exp()) / (2.0 * h);
            diff = diff.max((fd - j[(k, i)]).abs());
        }
        if col_norm > 0.0 {
            worst = worst.max(diff / col_norm);
        } else {
            worst = worst.max(diff);
        }
    }
    worst
}

fn start_points(init: [f64; 5], kind: ModelKind, count: usize) -> Vec<[f64; 5]> {
    let mut starts = vec![init];
    let root = SeedLineage::new(0x5eed_f17);
    for s in 1..count {
        let mut rng = root.child(s as u64).rng();
        let mut x = init;
        for &i in kind.free() {
            // log-uniform perturbation over two decades around the initial value
            let f = 10f64.powf(rng.random_range(-1.0..1.0));
            x[i] = if x[i] > 0.0 { x[i] * f } else { f * 1e-6 };
        }
        starts.push(x);
    }
    starts
}

/// Fits the native-noise and pulse-error parameters to measured survivals.
pub fn fit(
    records: &[ExperimentRecord],
    filters: &[FilterFunction],
    s_inj: Option<&Spectrum>,
    opts: &FitOptions,
) -> Result<FitReport> {
    if opts.starts == 0 {
        return Err(Error::invalid("fit needs at least one start"));
    }
    let problem = build_problem(records, filters, s_inj, opts.kind, &opts.mask)?;
    let init = match &opts.init {
        Some(p) => {
            p.validate()?;
            p.to_vec()
        }
        None => default_init(&problem),
    };
    let mut starts = start_points(init, opts.kind, opts.starts);
    if opts.kind == ModelKind::LorentzianPlusWhite {
        // Starting from the nested white-only optimum guarantees the richer model never fits worse.
        let white = build_problem(records, filters, s_inj, ModelKind::WhiteOnly, &opts.mask)?;
        let w_init = [0.0, init[1], init[2], init[3], init[4]];
        let w = levenberg_marquardt(&white, w_init, opts.max_iterations);
        starts.push([0.0, init[1].max(f64::MIN_POSITIVE), w.x[2], w.x[3], w.x[4]]);
    }

    let outcomes: Vec<Outcome> =
        starts.par_iter().map(|s| levenberg_marquardt(&problem, *s, opts.max_iterations)).collect();
    let (best_idx, best) = outcomes
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.loss.total_cmp(&b.loss).then(i.cmp(j)))
        .expect("at least one start");
    if !best.converged {
        return Err(Error::NonConvergence { iterations: best.iterations, best_loss: best.loss });
    }
    let x = best.x;

    let scale: [f64; 5] = std::array::from_fn(|i| if init[i] > 0.0 { init[i] } else { 1e-6 });
    let jacobian_error = jacobian_gap(&problem, &x, &scale);
    if jacobian_error > JACOBIAN_TOL {
        return Err(Error::JacobianMismatch(jacobian_error));
    }

    let (_, j) = problem.linearize(&x);
    let mut bounds_active = [false; 5];
    for &i in opts.kind.free() {
        bounds_active[i] = x[i] <= 0.0;
    }
    let mut warnings = Vec::new();
    let est: Vec<usize> = opts.kind.free().iter().copied().filter(|&i| !bounds_active[i]).collect();
    let mut covariance = [[0.0; 5]; 5];
    if !est.is_empty() {
        let je = j.select_columns(&est);
        let norms: Vec<f64> = (0..est.len()).map(|c| je.column(c).norm()).collect();
        let scaled = DMatrix::from_fn(je.nrows(), est.len(), |k, c| if norms[c] > 0.0 { je[(k, c)] / norms[c] } else { 0.0 });
        let svd = scaled.clone().svd(false, true);
        let smax = svd.singular_values.max();
        let v_t = svd.v_t.expect("V requested");
        for (s_idx, sv) in svd.singular_values.iter().enumerate() {
            if *sv <= 1e-8 * smax.max(f64::MIN_POSITIVE) {
                let names: Vec<&str> = (0..est.len())
                    .filter(|&c| v_t[(s_idx, c)].abs() > 0.3)
                    .map(|c| PARAM_NAMES[est[c]])
                    .collect();
                warnings.push(format!("parameters not identifiable from the data: {}", names.join(", ")));
            }
        }
        let dof = problem.active().count().saturating_sub(est.len());
        let s2 = if dof > 0 { best.loss / dof as f64 } else { 0.0 };
        if let Some(inv) = scaled.tr_mul(&scaled).try_inverse() {
            for (a, &ia) in est.iter().enumerate() {
                for (b, &ib) in est.iter().enumerate() {
                    if norms[a] > 0.0 && norms[b] > 0.0 {
                        covariance[ia][ib] = s2 * inv[(a, b)] / (norms[a] * norms[b]);
                    }
                }
            }
        } else {
            warnings.push("Gauss–Newton matrix is singular; covariance unavailable".into());
        }
    }

    let params = FitParams::from_vec(&x, opts.kind, &opts.mask);
    let residuals = problem
        .rows
        .iter()
        .map(|row| Residual {
            label: row.label,
            n_pulses: row.n as usize,
            measured: row.measured,
            predicted: problem.predict(row, &x),
            masked: row.masked,
        })
        .collect();
    Ok(FitReport {
        params,
        loss: best.loss,
        iterations: best.iterations,
        residuals,
        covariance,
        bounds_active,
        jacobian_error,
        warnings,
        start_index: best_idx,
    })
}
