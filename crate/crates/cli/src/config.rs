//! Versioned TOML configuration documents for each subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use qnoise::noise::DEFAULT_GRID;
use qnoise::noise::DEFAULT_TAPS;
use qnoise::recon::{Weighting, DEFAULT_FLOOR};
use qnoise::{Error, Family, FitParams, ModelKind, PulseErrorModel, Result, TargetState};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const SCHEMA: u32 = 1;

/// A parsed config plus the directory its relative paths resolve against.
pub struct Loaded<T> {
    pub doc: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn path(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

pub trait Versioned {
    fn schema(&self) -> u32;
}

pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<Loaded<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
    let doc: T = toml::from_str(&text).map_err(|e| qnoise::io::toml_error(&text, &e))?;
    if doc.schema() != SCHEMA {
        return Err(Error::invalid(format!("unsupported config schema {} (expected {SCHEMA})", doc.schema())));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { doc, base })
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema(&self) -> u32 {
                self.schema
            }
        })*
    };
}

versioned!(DesignConfig, SimulateConfig, ReconstructConfig, FitConfig, ExportConfig, IngestConfig, ReportConfig);

fn default_taps() -> usize {
    DEFAULT_TAPS
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

fn default_bootstrap() -> usize {
    200
}

fn default_quantiles() -> [f64; 2] {
    [0.025, 0.975]
}

fn default_starts() -> usize {
    qnoise::predictor::DEFAULT_STARTS
}

fn default_max_iterations() -> usize {
    500
}

fn default_sequences_file() -> String {
    "sequences.toml".into()
}

fn default_records_file() -> String {
    "records.csv".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Bandpass,
    Multiband,
    PowerLaw,
    Lorentzian,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub center_hz: f64,
    pub width_hz: f64,
    pub power: f64,
}

/// `design`: which shape keys are required depends on `kind`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub schema: u32,
    pub kind: DesignKind,
    pub sample_period_s: f64,
    #[serde(default = "default_taps")]
    pub taps: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Integrated power (rad²) for bandpass designs.
    pub power: Option<f64>,
    pub center_hz: Option<f64>,
    pub width_hz: Option<f64>,
    #[serde(default)]
    pub bands: Vec<BandConfig>,
    pub alpha: Option<f64>,
    pub anchor_hz: Option<f64>,
    pub anchor_psd: Option<f64>,
    pub f_lo_hz: Option<f64>,
    pub f_hi_hz: Option<f64>,
    pub amplitude: Option<f64>,
    pub omega_c: Option<f64>,
    pub white_floor: Option<f64>,
    /// Output stem: writes `<name>.toml` and `<name>_psd.csv`.
    #[serde(default = "default_model_name")]
    pub name: String,
}

fn default_model_name() -> String {
    "model".into()
}

pub fn require(v: Option<f64>, key: &str, kind: &str) -> Result<f64> {
    v.ok_or_else(|| Error::invalid(format!("config key '{key}' is required when kind = \"{kind}\"")))
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModeConfig {
    Gate {
        trajectories: usize,
        shots_per_trajectory: u64,
    },
    Sdr {
        shots: usize,
        phase_update_period_s: f64,
        #[serde(default)]
        random_time_offset: bool,
    },
}

impl ModeConfig {
    pub fn to_mode(self) -> qnoise::InjectionMode {
        match self {
            ModeConfig::Gate { trajectories, shots_per_trajectory } => {
                qnoise::InjectionMode::Gate { trajectories, shots_per_trajectory }
            }
            ModeConfig::Sdr { shots, phase_update_period_s, random_time_offset } => qnoise::InjectionMode::Sdr {
                shots,
                phase_update_period: phase_update_period_s,
                random_time_offset,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema: u32,
    pub family: Family,
    pub sequences: usize,
    pub slots: usize,
    pub gate_period_s: f64,
    pub model: String,
    pub native_model: Option<String>,
    pub mode: ModeConfig,
    #[serde(default)]
    pub pulse_errors: PulseErrorModel,
    #[serde(default)]
    pub target: TargetState,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub schema: u32,
    #[serde(default = "default_records_file")]
    pub records: String,
    #[serde(default = "default_sequences_file")]
    pub sequences: String,
    /// Per-unit survivals; required for a bootstrap band.
    pub units: Option<String>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default)]
    pub ridge: f64,
    /// Number of uniform coarse bins; 0 places one bin per usable sequence.
    #[serde(default)]
    pub bins: usize,
    #[serde(default)]
    pub weighting: Weighting,
    /// Bootstrap resamples; 0 or 1 reports the point estimate with a normal band.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_quantiles")]
    pub quantiles: [f64; 2],
    /// Native-background reconstruction to subtract (spectrum CSV on the same bins).
    pub native_spectrum: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    #[serde(rename = "A")]
    pub a: f64,
    pub omega_c: f64,
    pub sigma2: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub schema: u32,
    #[serde(default = "default_records_file")]
    pub records: String,
    #[serde(default = "default_sequences_file")]
    pub sequences: String,
    /// Injected model; its PSD on the filter grid is held fixed in the fit.
    pub injected_model: Option<String>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default)]
    pub mask: BTreeSet<usize>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    pub init: Option<InitConfig>,
}

impl FitConfig {
    pub fn init_params(&self) -> Option<FitParams> {
        self.init.as_ref().map(|i| FitParams {
            a: i.a,
            omega_c: i.omega_c,
            sigma2: i.sigma2,
            c1: i.c1,
            c2: i.c2,
            kind: self.kind,
            mask: self.mask.clone(),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub schema: u32,
    pub family: Family,
    pub sequences: usize,
    pub slots: usize,
    pub gate_period_s: f64,
    pub model: String,
    pub trajectories: usize,
    #[serde(default)]
    pub target: TargetState,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub schema: u32,
    pub input: String,
    #[serde(default = "default_sequences_file")]
    pub sequences: String,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub schema: u32,
    #[serde(default = "default_records_file")]
    pub records: String,
    pub spectrum: Option<String>,
    /// Designed PSD CSV to compare the reconstruction against.
    pub design_psd: Option<String>,
    pub fit: Option<String>,
    #[serde(default = "default_floor")]
    pub floor: f64,
}
