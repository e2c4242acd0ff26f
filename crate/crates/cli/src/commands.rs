//! Subcommand implementations. Every command reads one config document and
//! writes its artifacts into the output directory.

use std::path::{Path, PathBuf};

use qnoise::io::{format_cells, parse_csv};
use qnoise::noise::{design_bandpass, design_lorentzian, design_multiband, design_power_law};
use qnoise::predictor::{fit, FitOptions};
use qnoise::qasm::export_circuits;
use qnoise::recon::{
    bootstrap_spectrum, decay_from_survival, reconstruct_spectrum, subtract_native, BinSpec, BootstrapOptions,
    ReconOptions,
};
use qnoise::sequences::{filter_functions, make_sequences, sequences_from_toml, sequences_to_toml};
use qnoise::sim::{records_from_csv, records_to_csv, run_experiment, units_from_csv, units_to_csv, RECORD_HEADER};
use qnoise::{ArmaModel, Band, Error, ExperimentRecord, PulseSequence, Result, SequenceRun, Spectrum};
use serde::Serialize;

use crate::config::{
    load, require, DesignConfig, DesignKind, ExportConfig, FitConfig, IngestConfig, Loaded, ReconstructConfig,
    ReportConfig, SimulateConfig,
};

/// Global options shared by every subcommand.
pub struct Context {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub emit_plot_data: bool,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    fn seed_or(&self, config_seed: u64) -> u64 {
        self.seed.unwrap_or(config_seed)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))
}

fn load_model<T>(cfg: &Loaded<T>, p: &str) -> Result<ArmaModel> {
    ArmaModel::from_toml(&read(&cfg.path(p))?)
}

fn load_sequences<T>(cfg: &Loaded<T>, p: &str) -> Result<Vec<PulseSequence>> {
    sequences_from_toml(&read(&cfg.path(p))?)
}

const PLOT_HEADER: [&str; 5] = ["series", "x", "y", "lo", "hi"];

/// Long-format plotting rows: `series,x,y,lo,hi` with blank bounds where absent.
#[derive(Default)]
struct PlotData {
    rows: Vec<Vec<String>>,
}

impl PlotData {
    fn push(&mut self, series: &str, x: f64, y: f64, band: Option<(f64, f64)>) {
        let (lo, hi) = band.map_or((String::new(), String::new()), |(l, h)| (format!("{l}"), format!("{h}")));
        self.rows.push(vec![series.to_string(), format!("{x}"), format!("{y}"), lo, hi]);
    }

    fn to_csv(&self) -> String {
        format_cells(&PLOT_HEADER, &self.rows)
    }
}

pub fn design(ctx: &Context) -> Result<()> {
    let cfg: Loaded<DesignConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let t_s = d.sample_period_s;
    let model = match d.kind {
        DesignKind::Bandpass => design_bandpass(
            require(d.center_hz, "center_hz", "bandpass")?,
            require(d.width_hz, "width_hz", "bandpass")?,
            require(d.power, "power", "bandpass")?,
            t_s,
            d.taps,
        )?,
        DesignKind::Multiband => {
            if d.bands.is_empty() {
                return Err(Error::invalid("config key 'bands' is required when kind = \"multiband\""));
            }
            let bands: Vec<Band> =
                d.bands.iter().map(|b| Band { center_hz: b.center_hz, width_hz: b.width_hz, power: b.power }).collect();
            design_multiband(&bands, t_s, d.taps)?
        }
        DesignKind::PowerLaw => design_power_law(
            require(d.alpha, "alpha", "power_law")?,
            (require(d.anchor_hz, "anchor_hz", "power_law")?, require(d.anchor_psd, "anchor_psd", "power_law")?),
            (require(d.f_lo_hz, "f_lo_hz", "power_law")?, require(d.f_hi_hz, "f_hi_hz", "power_law")?),
            t_s,
            d.taps,
        )?,
        DesignKind::Lorentzian => design_lorentzian(
            require(d.amplitude, "amplitude", "lorentzian")?,
            require(d.omega_c, "omega_c", "lorentzian")?,
            d.white_floor.unwrap_or(0.0),
            t_s,
            d.taps,
        )?,
    };
    let psd = model.psd(d.grid)?;
    let m = ctx.write(&format!("{}.toml", d.name), &model.to_toml())?;
    let p = ctx.write(&format!("{}_psd.csv", d.name), &psd.to_csv())?;
    if ctx.emit_plot_data {
        let mut plot = PlotData::default();
        for (f, v) in psd.freqs.iter().zip(&psd.values) {
            plot.push("design_psd", *f, *v, None);
        }
        ctx.write(&format!("{}_plot.csv", d.name), &plot.to_csv())?;
    }
    println!("wrote {} and {} (variance {:.6e} rad²)", m.display(), p.display(), model.variance());
    Ok(())
}

#[derive(Serialize)]
struct SimulateMeta {
    schema: u32,
    seed: u64,
    family: qnoise::Family,
    sequences: usize,
    slots: usize,
    gate_period_s: f64,
    mode: String,
    over_rotation: f64,
    jitter_std: f64,
    target: qnoise::TargetState,
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let cfg: Loaded<SimulateConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let seed = ctx.seed_or(d.seed);
    let seqs = make_sequences(d.family, d.sequences, d.slots, d.gate_period_s)?;
    let model = load_model(&cfg, &d.model)?;
    let native = d.native_model.as_deref().map(|p| load_model(&cfg, p)).transpose()?;
    let mode = d.mode.to_mode();
    let runs = run_experiment(&seqs, &model, native.as_ref(), &d.pulse_errors, mode, d.target, seed)?;
    let records: Vec<ExperimentRecord> = runs.iter().map(|r| r.record.clone()).collect();

    ctx.write("sequences.toml", &sequences_to_toml(&seqs))?;
    ctx.write("records.csv", &records_to_csv(&records))?;
    ctx.write("units.csv", &units_to_csv(&runs))?;
    let meta = SimulateMeta {
        schema: 1,
        seed,
        family: d.family,
        sequences: d.sequences,
        slots: d.slots,
        gate_period_s: d.gate_period_s,
        mode: format!("{mode:?}"),
        over_rotation: d.pulse_errors.over_rotation,
        jitter_std: d.pulse_errors.jitter_std,
        target: d.target,
    };
    ctx.write("simulate.toml", &toml::to_string(&meta).expect("metadata serializes"))?;
    if ctx.emit_plot_data {
        let mut plot = PlotData::default();
        for r in &records {
            let band = (r.survival_mean - r.survival_stderr, r.survival_mean + r.survival_stderr);
            plot.push("survival", r.n_pulses as f64, r.survival_mean, Some(band));
        }
        ctx.write("simulate_plot.csv", &plot.to_csv())?;
    }
    println!("simulated {} sequences (seed {seed}) into {}", records.len(), ctx.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ReconMeta {
    schema: u32,
    seed: u64,
    ridge: f64,
    floor: f64,
    weighting: qnoise::recon::Weighting,
    bootstrap_resamples: usize,
    bootstrap_failed: usize,
    used: Vec<usize>,
    excluded: Vec<usize>,
    integrated_power: f64,
    bin_centers_hz: Vec<f64>,
    bin_edges_hz: Vec<f64>,
    native_subtracted: bool,
    clipped_bins: Vec<usize>,
    clipped_amount: f64,
}

/// Regroups per-unit survivals with their summary records, in record order.
fn join_units(records: &[ExperimentRecord], units: Vec<(usize, Vec<f64>, u64)>) -> Result<Vec<SequenceRun>> {
    records
        .iter()
        .map(|rec| {
            let (_, u, spu) = units
                .iter()
                .find(|g| g.0 == rec.label)
                .ok_or_else(|| Error::invalid(format!("units file has no rows for sequence {}", rec.label)))?;
            Ok(SequenceRun { record: rec.clone(), units: u.clone(), shots_per_unit: *spu })
        })
        .collect()
}

pub fn reconstruct(ctx: &Context) -> Result<()> {
    let cfg: Loaded<ReconstructConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let seed = ctx.seed_or(d.seed);
    let seqs = load_sequences(&cfg, &d.sequences)?;
    let filters = filter_functions(&seqs, d.grid)?;
    let records = records_from_csv(&read(&cfg.path(&d.records))?)?;
    let opts = ReconOptions {
        bins: if d.bins == 0 { BinSpec::PerSequence } else { BinSpec::Count(d.bins) },
        ridge: d.ridge,
        floor: d.floor,
        weighting: d.weighting,
    };

    let (spectrum, lo, hi, point, resamples, failed) = match (&d.units, d.bootstrap) {
        (Some(units), b) if b >= 1 => {
            let runs = join_units(&records, units_from_csv(&read(&cfg.path(units))?)?)?;
            let bopts = BootstrapOptions {
                resamples: b,
                lower_quantile: d.quantiles[0],
                upper_quantile: d.quantiles[1],
                recon: opts.clone(),
            };
            let band = bootstrap_spectrum(&runs, &filters, &bopts, seed)?;
            (band.median, band.lower, band.upper, band.point, band.resamples_used, band.resamples_failed)
        }
        _ => {
            let r = reconstruct_spectrum(&records, &filters, &opts)?;
            let lo = r.spectrum.values.iter().zip(&r.stderr).map(|(s, e)| (s - 1.96 * e).max(0.0)).collect();
            let hi = r.spectrum.values.iter().zip(&r.stderr).map(|(s, e)| s + 1.96 * e).collect();
            (r.spectrum.clone(), lo, hi, r, 0, 0)
        }
    };

    let rows: Vec<Vec<f64>> =
        (0..spectrum.len()).map(|i| vec![spectrum.freqs[i], spectrum.values[i], lo[i], hi[i]]).collect();
    ctx.write("spectrum.csv", &qnoise::io::format_csv(&qnoise::recon::RECON_HEADER, &rows))?;

    let mut meta = ReconMeta {
        schema: 1,
        seed,
        ridge: d.ridge,
        floor: d.floor,
        weighting: d.weighting,
        bootstrap_resamples: resamples,
        bootstrap_failed: failed,
        used: point.used.clone(),
        excluded: point.excluded.clone(),
        integrated_power: point.integrated_power(),
        bin_centers_hz: point.bins.centers.clone(),
        bin_edges_hz: point.bins.edges.clone(),
        native_subtracted: false,
        clipped_bins: Vec::new(),
        clipped_amount: 0.0,
    };
    if let Some(native) = &d.native_spectrum {
        let nat = Spectrum::from_csv(&read(&cfg.path(native))?, spectrum.sample_period)?;
        let delta = subtract_native(&spectrum, &nat)?;
        ctx.write("delta_spectrum.csv", &delta.delta.to_csv())?;
        meta.native_subtracted = true;
        meta.clipped_bins = delta.clipped_bins.clone();
        meta.clipped_amount = delta.clipped_amount;
        if delta.clipped() {
            eprintln!("warning: native background exceeded the injected spectrum in {} bin(s)", delta.clipped_bins.len());
        }
    }
    ctx.write("recon.toml", &toml::to_string(&meta).expect("metadata serializes"))?;
    if ctx.emit_plot_data {
        let mut plot = PlotData::default();
        for i in 0..spectrum.len() {
            plot.push("reconstruction", spectrum.freqs[i], spectrum.values[i], Some((lo[i], hi[i])));
        }
        ctx.write("spectrum_plot.csv", &plot.to_csv())?;
    }
    if !point.excluded.is_empty() {
        eprintln!("note: excluded saturated sequences {:?}", point.excluded);
    }
    println!(
        "reconstructed {} bins from {} sequences (integrated power {:.6e} rad²)",
        spectrum.len(),
        point.used.len(),
        point.integrated_power()
    );
    Ok(())
}

pub fn fit_cmd(ctx: &Context) -> Result<()> {
    let cfg: Loaded<FitConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let seqs = load_sequences(&cfg, &d.sequences)?;
    let filters = filter_functions(&seqs, d.grid)?;
    let records = records_from_csv(&read(&cfg.path(&d.records))?)?;
    let s_inj = d.injected_model.as_deref().map(|p| load_model(&cfg, p)?.psd(d.grid)).transpose()?;
    let opts = FitOptions {
        kind: d.kind,
        mask: d.mask.clone(),
        init: d.init_params(),
        starts: d.starts,
        max_iterations: d.max_iterations,
    };
    let report = fit(&records, &filters, s_inj.as_ref(), &opts)?;
    ctx.write("fit.toml", &report.to_toml())?;
    ctx.write("fit_residuals.csv", &report.residuals_csv())?;
    if ctx.emit_plot_data {
        let mut plot = PlotData::default();
        for r in &report.residuals {
            plot.push("measured", r.n_pulses as f64, r.measured, None);
            plot.push("predicted", r.n_pulses as f64, r.predicted, None);
        }
        ctx.write("fit_plot.csv", &plot.to_csv())?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let p = &report.params;
    println!(
        "fit: A={:.4e} omega_c={:.4e} sigma2={:.4e} c1={:.4e} c2={:.4e} rms={:.3e}",
        p.a,
        p.omega_c,
        p.sigma2,
        p.c1,
        p.c2,
        report.rms_residual()
    );
    Ok(())
}

pub fn export(ctx: &Context) -> Result<()> {
    let cfg: Loaded<ExportConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let seed = ctx.seed_or(d.seed);
    let seqs = make_sequences(d.family, d.sequences, d.slots, d.gate_period_s)?;
    let model = load_model(&cfg, &d.model)?;
    let circuits = export_circuits(&seqs, &model, d.trajectories, d.target, seed)?;
    let mut manifest = Vec::with_capacity(circuits.len());
    for c in &circuits {
        let name = c.file_name();
        ctx.write(&format!("circuits/{name}"), &c.text)?;
        manifest.push(vec![c.label.to_string(), c.trajectory.to_string(), seqs[c.label].n_pulses().to_string(), name]);
    }
    ctx.write("circuits/manifest.csv", &format_cells(&["seq_index", "trajectory", "n_pulses", "file"], &manifest))?;
    ctx.write("sequences.toml", &sequences_to_toml(&seqs))?;
    println!("exported {} verified circuits (seed {seed})", circuits.len());
    Ok(())
}

#[derive(Serialize)]
struct IngestMeta {
    schema: u32,
    rows: usize,
    imputed_stderr: Vec<usize>,
    saturated: Vec<usize>,
    floor: f64,
}

pub fn ingest(ctx: &Context) -> Result<()> {
    let cfg: Loaded<IngestConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let seqs = load_sequences(&cfg, &d.sequences)?;
    let text = read(&cfg.path(&d.input))?;
    let t = parse_csv(&text, &[])?;
    let col = |name: &str| t.column_index(name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::Parse { line: 1, message: format!("missing required column '{name}'") })
    };
    let (c_label, c_mean, c_shots) = (need("seq_index")?, need("survival_mean")?, need("shots")?);
    let (c_se, c_traj, c_seed) = (col("survival_stderr"), col("trajectories"), col("seed"));

    let mut records = Vec::with_capacity(t.rows.len());
    let mut imputed = Vec::new();
    let mut saturated = Vec::new();
    for i in 0..t.rows.len() {
        let line = t.lines[i];
        let row_err = |message: String| Error::Parse { line, message };
        let label = t.uint(i, c_label)? as usize;
        let seq = seqs
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| row_err(format!("sequence {label} is not in the sequence document")))?;
        let mean = t.float(i, c_mean)?;
        if !(0.0..=1.0).contains(&mean) {
            return Err(row_err(format!("survival_mean {mean} outside [0, 1]")));
        }
        let shots = t.uint(i, c_shots)?;
        let mut rec = ExperimentRecord {
            label,
            n_pulses: seq.n_pulses(),
            survival_mean: mean,
            survival_stderr: match c_se {
                Some(c) => t.float(i, c)?,
                None => f64::NAN,
            },
            shots,
            trajectories: match c_traj {
                Some(c) if !t.rows[i][c].is_empty() => t.uint(i, c)?,
                _ => 1,
            },
            seed: match c_seed {
                Some(c) if !t.rows[i][c].is_empty() => t.uint(i, c)?,
                _ => 0,
            },
        };
        if rec.survival_stderr.is_nan() {
            if shots == 0 {
                return Err(row_err("missing survival_stderr and zero shots".into()));
            }
            rec.survival_stderr = rec.binomial_stderr();
            imputed.push(label);
        }
        if !(rec.survival_stderr.is_finite() && rec.survival_stderr >= 0.0) {
            return Err(row_err(format!("survival_stderr {} must be >= 0", rec.survival_stderr)));
        }
        if decay_from_survival(mean, d.floor).is_saturated() {
            saturated.push(label);
        }
        records.push(rec);
    }
    ctx.write("records.csv", &records_to_csv(&records))?;
    let meta = IngestMeta { schema: 1, rows: records.len(), imputed_stderr: imputed, saturated, floor: d.floor };
    ctx.write("ingest.toml", &toml::to_string(&meta).expect("metadata serializes"))?;
    if !meta.saturated.is_empty() {
        eprintln!("note: saturated rows for sequences {:?}", meta.saturated);
    }
    println!("ingested {} rows ({} with imputed stderr)", meta.rows, meta.imputed_stderr.len());
    Ok(())
}

#[derive(Serialize)]
struct ReportDoc {
    schema: u32,
    sequences: usize,
    saturated: Vec<usize>,
    survival_min: f64,
    survival_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectrum: Option<SpectrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<SpectrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<toml::Table>,
}

#[derive(Serialize)]
struct SpectrumSummary {
    points: usize,
    peak_hz: f64,
    peak_psd: f64,
    integral: f64,
}

fn summarize(s: &Spectrum) -> SpectrumSummary {
    SpectrumSummary { points: s.len(), peak_hz: s.peak_frequency(), peak_psd: s.max_value(), integral: s.integral() }
}

/// Reads a spectrum CSV without knowing its sample period (only the grid is needed).
fn read_spectrum(path: &Path) -> Result<(Spectrum, Vec<(f64, f64)>)> {
    let text = read(path)?;
    let t = parse_csv(&text, &qnoise::noise::SPECTRUM_HEADER)?;
    let freqs = t.column(0)?;
    let values = t.column(1)?;
    let band = match (t.column_index("ci_lo"), t.column_index("ci_hi")) {
        (Some(a), Some(b)) => t.column(a)?.into_iter().zip(t.column(b)?).collect(),
        _ => Vec::new(),
    };
    let top = freqs.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    Ok((Spectrum::new(freqs, values, 0.5 / top)?, band))
}

pub fn report(ctx: &Context) -> Result<()> {
    let cfg: Loaded<ReportConfig> = load(&ctx.config)?;
    let d = &cfg.doc;
    let records = records_from_csv(&read(&cfg.path(&d.records))?)?;
    if records.is_empty() {
        return Err(Error::invalid("records file has no rows"));
    }
    let mut plot = PlotData::default();
    for r in &records {
        plot.push("survival", r.n_pulses as f64, r.survival_mean, Some((r.survival_mean - r.survival_stderr, r.survival_mean + r.survival_stderr)));
    }
    let spectrum = match &d.spectrum {
        Some(p) => {
            let (s, band) = read_spectrum(&cfg.path(p))?;
            for (i, (f, v)) in s.freqs.iter().zip(&s.values).enumerate() {
                plot.push("reconstruction", *f, *v, band.get(i).copied());
            }
            Some(summarize(&s))
        }
        None => None,
    };
    let design = match &d.design_psd {
        Some(p) => {
            let (s, _) = read_spectrum(&cfg.path(p))?;
            for (f, v) in s.freqs.iter().zip(&s.values) {
                plot.push("design", *f, *v, None);
            }
            Some(summarize(&s))
        }
        None => None,
    };
    let fit = match &d.fit {
        Some(p) => {
            let text = read(&cfg.path(p))?;
            // validate the document before embedding it
            qnoise::predictor::params_from_report(&text)?;
            Some(toml::from_str::<toml::Table>(&text).map_err(|e| qnoise::io::toml_error(&text, &e))?)
        }
        None => None,
    };
    let doc = ReportDoc {
        schema: 1,
        sequences: records.len(),
        saturated: records
            .iter()
            .filter(|r| decay_from_survival(r.survival_mean, d.floor).is_saturated())
            .map(|r| r.label)
            .collect(),
        survival_min: records.iter().map(|r| r.survival_mean).fold(f64::INFINITY, f64::min),
        survival_max: records.iter().map(|r| r.survival_mean).fold(f64::NEG_INFINITY, f64::max),
        spectrum,
        design,
        fit,
    };
    let text = toml::to_string(&doc).expect("report serializes");
    ctx.write("report.toml", &text)?;
    if ctx.emit_plot_data {
        ctx.write("report_plot.csv", &plot.to_csv())?;
    }
    print!("{text}");
    Ok(())
}

/// Column layout of the records schema, for help text.
pub fn records_schema() -> String {
    RECORD_HEADER.join(",")
}
