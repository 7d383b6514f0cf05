//! Run configuration: a TOML file with one flat section per command, plus
//! `--set key=value` overrides.

use std::f64::consts::PI;
use std::path::Path;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use kerrcrit::liouvillian::Truncation;
use kerrcrit::metrology::MetrologyConfig;
use kerrcrit::SystemParams;

use crate::CliError;

pub const COMMANDS: [&str; 9] = ["steady", "qfi-sweep", "snr-sweep", "scaling", "thermo", "readout-map", "magnetometer", "time-trace", "wigner"];

/// Either an explicit list or an inclusive linear range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { min: f64, max: f64, points: usize },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range { min, max, points } => match points {
                0 => Vec::new(),
                1 => vec![*min],
                n => (0..*n).map(|k| min + (max - min) * k as f64 / (*n - 1) as f64).collect(),
            },
        }
    }

    fn check(&self, key: &'static str) -> Result<(), CliError> {
        let v = self.values();
        if v.is_empty() {
            return Err(CliError::invalid(key, "grid must not be empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::invalid(key, "grid values must be finite"));
        }
        Ok(())
    }
}

fn one() -> f64 {
    1.0
}
fn min_dim() -> usize {
    20
}
fn max_dim() -> usize {
    320
}
fn tail_tol() -> f64 {
    kerrcrit::fock::TAIL_TOL
}
fn dw_start() -> f64 {
    1e-2
}
fn dw_floor() -> f64 {
    1e-4
}
fn rel_tol() -> f64 {
    3e-3
}

fn truncation(min_dim: usize, max_dim: usize, tail_tol: f64) -> Result<Truncation, CliError> {
    if max_dim < 2 || min_dim > max_dim {
        return Err(CliError::invalid("max_dim", "must be at least 2 and not below min_dim"));
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(CliError::invalid("tail_tol", "must lie in (0, 1)"));
    }
    Ok(Truncation { min_dim, max_dim, tail_tol })
}

fn system(omega: f64, epsilon: f64, chi: f64, gamma: f64) -> Result<SystemParams, CliError> {
    SystemParams::new(omega, epsilon, chi, gamma).map_err(CliError::from_core_config)
}

fn metrology(dw_start: f64, dw_floor: f64, rel_tol: f64, trunc: Truncation) -> Result<MetrologyConfig, CliError> {
    if !(dw_start > 0.0 && dw_floor > 0.0 && dw_floor <= dw_start) {
        return Err(CliError::invalid("dw_floor", "need 0 < dw_floor <= dw_start"));
    }
    if !(rel_tol > 0.0) {
        return Err(CliError::invalid("rel_tol", "must be positive"));
    }
    Ok(MetrologyConfig { dw_start, dw_floor, rel_tol, truncation: trunc, ..MetrologyConfig::default() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub chi: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Fixed truncation; adaptive when absent.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl SteadyConfig {
    pub fn params(&self) -> Result<SystemParams, CliError> {
        system(self.omega, self.epsilon, self.chi, self.gamma)
    }

    pub fn truncation(&self) -> Result<Truncation, CliError> {
        truncation(self.min_dim, self.max_dim, self.tail_tol)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        self.truncation()?;
        if self.dim.is_some_and(|d| d < 2) {
            return Err(CliError::invalid("dim", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfiSweepConfig {
    #[serde(default = "one")]
    pub omega: f64,
    pub chi: Grid,
    pub epsilon: Grid,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "dw_start")]
    pub dw_start: f64,
    #[serde(default = "dw_floor")]
    pub dw_floor: f64,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl QfiSweepConfig {
    pub fn metrology(&self) -> Result<MetrologyConfig, CliError> {
        metrology(self.dw_start, self.dw_floor, self.rel_tol, truncation(self.min_dim, self.max_dim, self.tail_tol)?)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.chi.check("chi")?;
        self.epsilon.check("epsilon")?;
        for chi in self.chi.values() {
            for eps in self.epsilon.values() {
                system(self.omega, eps, chi, self.gamma)?;
            }
        }
        self.metrology()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrSweepConfig {
    #[serde(default = "one")]
    pub omega: f64,
    pub chi: f64,
    pub epsilon: Grid,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "dw_start")]
    pub dw_start: f64,
    #[serde(default = "dw_floor")]
    pub dw_floor: f64,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl SnrSweepConfig {
    pub fn metrology(&self) -> Result<MetrologyConfig, CliError> {
        metrology(self.dw_start, self.dw_floor, self.rel_tol, truncation(self.min_dim, self.max_dim, self.tail_tol)?)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.epsilon.check("epsilon")?;
        for eps in self.epsilon.values() {
            system(self.omega, eps, self.chi, self.gamma)?;
        }
        self.metrology()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default = "one")]
    pub omega: f64,
    pub chi: Grid,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "dw_start")]
    pub dw_start: f64,
    #[serde(default = "dw_floor")]
    pub dw_floor: f64,
    #[serde(default = "rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl ScalingConfig {
    pub fn metrology(&self) -> Result<MetrologyConfig, CliError> {
        metrology(self.dw_start, self.dw_floor, self.rel_tol, truncation(self.min_dim, self.max_dim, self.tail_tol)?)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.chi.check("chi")?;
        if self.chi.values().len() < 3 {
            return Err(CliError::invalid("chi", "the scaling fit needs at least 3 values"));
        }
        for chi in self.chi.values() {
            if chi <= 0.0 {
                return Err(CliError::invalid("chi", "must be positive"));
            }
            system(self.omega, 0.0, chi, self.gamma)?;
        }
        self.metrology()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoConfig {
    #[serde(default)]
    pub omega: f64,
    #[serde(default = "one")]
    pub chi0: f64,
    pub l: Grid,
    pub epsilon: Grid,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl ThermoConfig {
    pub fn truncation(&self) -> Result<Truncation, CliError> {
        truncation(self.min_dim, self.max_dim, self.tail_tol)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.l.check("l")?;
        self.epsilon.check("epsilon")?;
        if self.l.values().iter().any(|l| *l <= 0.0) {
            return Err(CliError::invalid("l", "must be positive"));
        }
        for eps in self.epsilon.values() {
            system(self.omega, eps, self.chi0, self.gamma)?;
        }
        self.truncation()?;
        Ok(())
    }
}

fn readout_min_dim() -> usize {
    120
}
fn coupling() -> f64 {
    100.0
}
fn kerr_readout() -> f64 {
    0.04
}
fn grid_points() -> usize {
    2048
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutMapConfig {
    #[serde(default)]
    pub omega: f64,
    #[serde(default = "kerr_readout")]
    pub chi: f64,
    #[serde(default = "coupling")]
    pub g: f64,
    pub delta_omega: Grid,
    pub epsilon: Grid,
    /// Also trace the readout errors along this `η` line.
    #[serde(default)]
    pub eta_contour: Option<f64>,
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    #[serde(default = "readout_min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl ReadoutMapConfig {
    pub fn readout(&self) -> Result<kerrcrit::applications::ReadoutConfig, CliError> {
        Ok(kerrcrit::applications::ReadoutConfig {
            g: self.g,
            truncation: truncation(self.min_dim, self.max_dim, self.tail_tol)?,
            grid: kerrcrit::fock::GridSpec { half_width: None, points: self.grid_points },
        })
    }

    fn validate(&self) -> Result<(), CliError> {
        self.delta_omega.check("delta_omega")?;
        self.epsilon.check("epsilon")?;
        if !(self.g > 0.0) {
            return Err(CliError::invalid("g", "must be positive"));
        }
        if self.grid_points < 16 {
            return Err(CliError::invalid("grid_points", "must be at least 16"));
        }
        if self.eta_contour.is_some_and(|e| !(e > 0.0 && e <= kerrcrit::applications::ETA_MAX)) {
            return Err(CliError::invalid("eta_contour", "must lie in (0, 0.1]"));
        }
        for d in self.delta_omega.values() {
            for eps in self.epsilon.values() {
                system(self.omega + d, eps, self.chi, 1.0)?;
            }
        }
        self.readout()?;
        Ok(())
    }
}

fn gamma0() -> f64 {
    0.05
}
fn chi0_si() -> f64 {
    2.0 * PI * 100e6
}
fn omega_l4_si() -> f64 {
    2.0 * PI * 10e9
}
fn gamma_si() -> f64 {
    2.0 * PI * 4e6
}
fn scaling_c() -> f64 {
    kerrcrit::applications::DEFAULT_SCALING_C
}

/// SI angular frequencies (rad/s) and seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetometerConfig {
    #[serde(default = "gamma0")]
    pub gamma0: f64,
    #[serde(default = "chi0_si")]
    pub chi0: f64,
    #[serde(default = "omega_l4_si")]
    pub omega_l4: f64,
    #[serde(default = "gamma_si")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub duration: f64,
    #[serde(default = "scaling_c")]
    pub c: f64,
}

impl MagnetometerConfig {
    pub fn params(&self) -> kerrcrit::applications::MagnetometerParams {
        kerrcrit::applications::MagnetometerParams {
            gamma0: self.gamma0,
            chi0: self.chi0,
            omega_l4: self.omega_l4,
            gamma: self.gamma,
            duration: self.duration,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.params().validate().map_err(CliError::from_core_config)?;
        if !(self.c > 0.0) {
            return Err(CliError::invalid("c", "must be positive"));
        }
        Ok(())
    }
}

fn t_final() -> f64 {
    10.0
}
fn samples() -> usize {
    101
}
fn rk_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Vacuum,
}

fn vacuum() -> InitialState {
    InitialState::Vacuum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeTraceConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub chi: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "t_final")]
    pub t_final: f64,
    #[serde(default = "samples")]
    pub samples: usize,
    #[serde(default)]
    pub phi: f64,
    #[serde(default = "vacuum")]
    pub initial: InitialState,
    #[serde(default = "rk_tol")]
    pub tolerance: f64,
    /// Fixed truncation; defaults to the adaptive steady-state choice.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl TimeTraceConfig {
    pub fn params(&self) -> Result<SystemParams, CliError> {
        system(self.omega, self.epsilon, self.chi, self.gamma)
    }

    pub fn truncation(&self) -> Result<Truncation, CliError> {
        truncation(self.min_dim, self.max_dim, self.tail_tol)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        self.truncation()?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(CliError::invalid("t_final", "must be positive"));
        }
        if self.samples < 2 {
            return Err(CliError::invalid("samples", "must be at least 2"));
        }
        if !(self.tolerance > 0.0) {
            return Err(CliError::invalid("tolerance", "must be positive"));
        }
        if self.dim.is_some_and(|d| d < 2) {
            return Err(CliError::invalid("dim", "must be at least 2"));
        }
        Ok(())
    }
}

fn wigner_points() -> usize {
    81
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerConfig {
    pub omega: f64,
    pub epsilon: f64,
    pub chi: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Half-width of the square phase-space window; derived from `<n>` when absent.
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default = "wigner_points")]
    pub points: usize,
    #[serde(default = "min_dim")]
    pub min_dim: usize,
    #[serde(default = "max_dim")]
    pub max_dim: usize,
    #[serde(default = "tail_tol")]
    pub tail_tol: f64,
}

impl WignerConfig {
    pub fn params(&self) -> Result<SystemParams, CliError> {
        system(self.omega, self.epsilon, self.chi, self.gamma)
    }

    pub fn truncation(&self) -> Result<Truncation, CliError> {
        truncation(self.min_dim, self.max_dim, self.tail_tol)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.params()?;
        self.truncation()?;
        if self.points < 2 {
            return Err(CliError::invalid("points", "must be at least 2"));
        }
        if self.x_max.is_some_and(|x| !(x > 0.0 && x.is_finite())) {
            return Err(CliError::invalid("x_max", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum CommandConfig {
    Steady(SteadyConfig),
    QfiSweep(QfiSweepConfig),
    SnrSweep(SnrSweepConfig),
    Scaling(ScalingConfig),
    Thermo(ThermoConfig),
    ReadoutMap(ReadoutMapConfig),
    Magnetometer(MagnetometerConfig),
    TimeTrace(TimeTraceConfig),
    Wigner(WignerConfig),
}

impl CommandConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Steady(_) => "steady",
            Self::QfiSweep(_) => "qfi-sweep",
            Self::SnrSweep(_) => "snr-sweep",
            Self::Scaling(_) => "scaling",
            Self::Thermo(_) => "thermo",
            Self::ReadoutMap(_) => "readout-map",
            Self::Magnetometer(_) => "magnetometer",
            Self::TimeTrace(_) => "time-trace",
            Self::Wigner(_) => "wigner",
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        match self {
            Self::Steady(c) => c.validate(),
            Self::QfiSweep(c) => c.validate(),
            Self::SnrSweep(c) => c.validate(),
            Self::Scaling(c) => c.validate(),
            Self::Thermo(c) => c.validate(),
            Self::ReadoutMap(c) => c.validate(),
            Self::Magnetometer(c) => c.validate(),
            Self::TimeTrace(c) => c.validate(),
            Self::Wigner(c) => c.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Json,
}

/// Output and execution settings, from the `[run]` section and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub keep_going: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: CommandConfig,
    pub out: String,
    pub format: Format,
    pub workers: usize,
    pub keep_going: bool,
}

/// Flag-level inputs that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub out: Option<String>,
    pub format: Option<Format>,
    pub workers: Option<usize>,
    pub keep_going: bool,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn decode<T: DeserializeOwned>(section: &str, table: toml::Table) -> Result<T, CliError> {
    T::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(format!("[{section}] {}", e.to_string().trim())))
}

pub fn parse_config(command: &str, file: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    if !COMMANDS.contains(&command) {
        return Err(CliError::Config(format!("unknown command `{command}`")));
    }
    let mut doc = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim())))?
        }
        None => toml::Table::new(),
    };
    for key in doc.keys() {
        if key != "run" && !COMMANDS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown section `{key}`")));
        }
        if !doc[key].is_table() {
            return Err(CliError::Config(format!("`{key}` must be a section")));
        }
    }
    let mut section = match doc.remove(command) {
        Some(toml::Value::Table(t)) => t,
        _ => toml::Table::new(),
    };
    for set in &ov.sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{set}`")))?;
        let key = key.trim().to_string();
        let value = parse_value(raw.trim());
        if let Some(old) = section.get(&key) {
            if *old != value {
                warn!("--set {key} = {value} overrides the file value {old}");
            }
        }
        section.insert(key, value);
    }
    let command_config = match command {
        "steady" => CommandConfig::Steady(decode(command, section)?),
        "qfi-sweep" => CommandConfig::QfiSweep(decode(command, section)?),
        "snr-sweep" => CommandConfig::SnrSweep(decode(command, section)?),
        "scaling" => CommandConfig::Scaling(decode(command, section)?),
        "thermo" => CommandConfig::Thermo(decode(command, section)?),
        "readout-map" => CommandConfig::ReadoutMap(decode(command, section)?),
        "magnetometer" => CommandConfig::Magnetometer(decode(command, section)?),
        "time-trace" => CommandConfig::TimeTrace(decode(command, section)?),
        _ => CommandConfig::Wigner(decode(command, section)?),
    };
    command_config.validate()?;
    let run: RunSection = match doc.remove("run") {
        Some(toml::Value::Table(t)) => decode("run", t)?,
        _ => RunSection { out: None, format: None, workers: None, keep_going: None },
    };
    let pick = |flag_name: &str, flag: Option<String>, file: Option<String>| -> Option<String> {
        if let (Some(f), Some(v)) = (&flag, &file) {
            if f != v {
                warn!("--{flag_name} {f} overrides the file value {v}");
            }
        }
        flag.or(file)
    };
    let out = pick("out", ov.out.clone(), run.out).unwrap_or_else(|| format!("out/{command}"));
    let format = ov.format.or(run.format).unwrap_or(Format::Tsv);
    let workers = ov.workers.or(run.workers).unwrap_or(1);
    if workers == 0 {
        return Err(CliError::invalid("workers", "must be at least 1"));
    }
    Ok(RunConfig { command: command_config, out, format, workers, keep_going: ov.keep_going || run.keep_going.unwrap_or(false) })
}
