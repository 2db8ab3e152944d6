//! Scenario configuration: defaults, unit-checked loading and validation.
//!
//! A scenario file is a flat TOML table. Physical quantities may carry a unit
//! in a string value (`tx_power = "30 dBm"`, `bandwidth = "20 MHz"`); bare
//! numbers are read in SI. A JSON document holding a `config` object (the run
//! manifest) or the config object itself is accepted as well.

use crate::allocator::{AllocationConstraints, AllocatorMode};
use crate::intolerance::StressorMoments;
use crate::link::{LinkParams, Recursion, SensitivityForm};
use crate::resilience::PhaseThresholds;
use crate::stressors::{ArrivalParams, DistanceProcess, MomentMode, RateConvention};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StressorSet {
    #[default]
    Both,
    Interference,
    Distance,
}

impl StressorSet {
    pub fn interference(self) -> bool {
        matches!(self, StressorSet::Both | StressorSet::Interference)
    }

    pub fn distance(self) -> bool {
        matches!(self, StressorSet::Both | StressorSet::Distance)
    }
}

/// All scenario parameters in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tx_power: f64,
    pub interferer_power: f64,
    pub interferer_distance_min: f64,
    pub interferer_distance_max: f64,
    pub wavelength: f64,
    pub packet_bits: f64,
    pub bandwidth: f64,
    pub path_loss_exp: f64,
    pub arrival_rate0: f64,
    pub noise_density: f64,
    pub initial_interferers: u32,
    pub initial_distance: f64,
    pub drift: f64,
    pub variance0: f64,
    pub variance_growth: f64,
    pub variance_volatility: f64,
    pub sojourn_rate: f64,
    pub growth_linear: f64,
    pub growth_exponent: f64,
    pub p_interference: f64,
    pub p_distance: f64,
    pub arer_delta: f64,
    pub horizon: u32,
    pub trials: u32,
    pub seed: u64,
    pub stressors: StressorSet,
    pub antennas: usize,
    pub normal_threshold: f64,
    pub restoration_target: f64,
    pub allocator: AllocatorMode,
    pub p_max_per_level: f64,
    pub p_total: f64,
    pub n_max: usize,
    pub alpha: f64,
    pub solver_tol: f64,
    pub levels: u32,
    pub steps_per_level: u32,
    pub moment_mode: MomentMode,
    pub rate_convention: RateConvention,
    pub sensitivity_form: SensitivityForm,
    pub recursion: Recursion,
    pub laplace_curvature: f64,
    pub convolution_grid: usize,
    pub output_dir: PathBuf,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            tx_power: dbm_to_watts(30.0),
            interferer_power: dbm_to_watts(5.0),
            interferer_distance_min: 20.0,
            interferer_distance_max: 100.0,
            wavelength: 0.05,
            packet_bits: 2400.0,
            bandwidth: 20e6,
            path_loss_exp: 3.5,
            arrival_rate0: 0.2,
            noise_density: dbm_to_watts(-150.0),
            initial_interferers: 5,
            initial_distance: 10.0,
            drift: 0.2,
            variance0: 0.25,
            variance_growth: 0.4,
            variance_volatility: 0.35,
            sojourn_rate: 0.5,
            growth_linear: 0.8,
            growth_exponent: 0.7,
            p_interference: 0.5,
            p_distance: 0.5,
            arer_delta: 0.5,
            horizon: 100,
            trials: 10_000,
            seed: 1,
            stressors: StressorSet::Both,
            antennas: 1,
            normal_threshold: 0.999,
            restoration_target: 0.999,
            allocator: AllocatorMode::Off,
            p_max_per_level: 2.0,
            p_total: 10.0,
            n_max: 30,
            alpha: 0.05,
            solver_tol: 1e-9,
            levels: 10,
            steps_per_level: 1,
            moment_mode: MomentMode::Exact,
            rate_convention: RateConvention::Halved,
            sensitivity_form: SensitivityForm::Corrected,
            recursion: Recursion::Indicator,
            laplace_curvature: 2.0,
            convolution_grid: 4096,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub key: String,
    pub expected: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (expected {})", self.key, self.message, self.expected)
    }
}

fn join(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<FieldError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Power,
    PowerDensity,
    Frequency,
    Length,
    Bits,
    PerSlot,
    LengthPerSlot,
    Scalar,
    Probability,
    Count,
    Choice(&'static [&'static str]),
    Path,
}

impl Quantity {
    fn expected(self) -> String {
        match self {
            Quantity::Power => "power in W, mW, dBm or dBW".into(),
            Quantity::PowerDensity => "noise density in W/Hz or dBm/Hz".into(),
            Quantity::Frequency => "frequency in Hz, kHz, MHz or GHz".into(),
            Quantity::Length => "length in m or km".into(),
            Quantity::Bits => "size in bits or bytes".into(),
            Quantity::PerSlot => "rate per slot (/slot or /s)".into(),
            Quantity::LengthPerSlot => "speed in m/slot or m/s".into(),
            Quantity::Scalar => "dimensionless number".into(),
            Quantity::Probability => "probability in [0, 1]".into(),
            Quantity::Count => "non-negative integer".into(),
            Quantity::Choice(opts) => format!("one of {}", opts.join(", ")),
            Quantity::Path => "path string".into(),
        }
    }

    fn convert(self, number: f64, unit: &str) -> Option<f64> {
        let u = unit.trim();
        let plain = u.is_empty();
        match self {
            Quantity::Power => match u {
                "" | "W" => Some(number),
                "mW" => Some(number * 1e-3),
                "dBm" => Some(dbm_to_watts(number)),
                "dBW" => Some(10f64.powf(number / 10.0)),
                _ => None,
            },
            Quantity::PowerDensity => match u {
                "" | "W/Hz" => Some(number),
                "dBm/Hz" => Some(dbm_to_watts(number)),
                "dBW/Hz" => Some(10f64.powf(number / 10.0)),
                _ => None,
            },
            Quantity::Frequency => match u {
                "" | "Hz" => Some(number),
                "kHz" => Some(number * 1e3),
                "MHz" => Some(number * 1e6),
                "GHz" => Some(number * 1e9),
                _ => None,
            },
            Quantity::Length => match u {
                "" | "m" => Some(number),
                "km" => Some(number * 1e3),
                _ => None,
            },
            Quantity::Bits => match u {
                "" | "bit" | "bits" => Some(number),
                "byte" | "bytes" => Some(number * 8.0),
                _ => None,
            },
            Quantity::PerSlot => matches!(u, "" | "/slot" | "/s" | "1/s").then_some(number),
            Quantity::LengthPerSlot => matches!(u, "" | "m/slot" | "m/s").then_some(number),
            Quantity::Scalar | Quantity::Probability | Quantity::Count => plain.then_some(number),
            Quantity::Choice(_) | Quantity::Path => None,
        }
    }
}

const STRESSOR_CHOICES: &[&str] = &["both", "interference", "distance"];
const ALLOCATOR_CHOICES: &[&str] = &["off", "power", "antennas"];
const MOMENT_CHOICES: &[&str] = &["exact", "literal", "paper-literal"];
const RATE_CHOICES: &[&str] = &["halved", "sampled"];
const FORM_CHOICES: &[&str] = &["corrected", "literal"];
const RECURSION_CHOICES: &[&str] = &["indicator", "weighted"];

const KEYS: &[(&str, Quantity)] = &[
    ("tx_power", Quantity::Power),
    ("interferer_power", Quantity::Power),
    ("interferer_distance_min", Quantity::Length),
    ("interferer_distance_max", Quantity::Length),
    ("wavelength", Quantity::Length),
    ("packet_bits", Quantity::Bits),
    ("bandwidth", Quantity::Frequency),
    ("path_loss_exp", Quantity::Scalar),
    ("arrival_rate0", Quantity::PerSlot),
    ("noise_density", Quantity::PowerDensity),
    ("initial_interferers", Quantity::Count),
    ("initial_distance", Quantity::Length),
    ("drift", Quantity::LengthPerSlot),
    ("variance0", Quantity::Scalar),
    ("variance_growth", Quantity::PerSlot),
    ("variance_volatility", Quantity::Scalar),
    ("sojourn_rate", Quantity::Probability),
    ("growth_linear", Quantity::Scalar),
    ("growth_exponent", Quantity::Scalar),
    ("p_interference", Quantity::Probability),
    ("p_distance", Quantity::Probability),
    ("arer_delta", Quantity::Scalar),
    ("horizon", Quantity::Count),
    ("trials", Quantity::Count),
    ("seed", Quantity::Count),
    ("stressors", Quantity::Choice(STRESSOR_CHOICES)),
    ("antennas", Quantity::Count),
    ("normal_threshold", Quantity::Scalar),
    ("restoration_target", Quantity::Scalar),
    ("allocator", Quantity::Choice(ALLOCATOR_CHOICES)),
    ("p_max_per_level", Quantity::Power),
    ("p_total", Quantity::Power),
    ("n_max", Quantity::Count),
    ("alpha", Quantity::Probability),
    ("solver_tol", Quantity::Power),
    ("levels", Quantity::Count),
    ("steps_per_level", Quantity::Count),
    ("moment_mode", Quantity::Choice(MOMENT_CHOICES)),
    ("rate_convention", Quantity::Choice(RATE_CHOICES)),
    ("sensitivity_form", Quantity::Choice(FORM_CHOICES)),
    ("recursion", Quantity::Choice(RECURSION_CHOICES)),
    ("laplace_curvature", Quantity::Scalar),
    ("convolution_grid", Quantity::Count),
    ("output_dir", Quantity::Path),
];

fn split_number(text: &str) -> Option<(f64, &str)> {
    let t = text.trim();
    let end = t
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || matches!(c, '.' | '+' | '-') || ((c == 'e' || c == 'E') && i > 0)))
        .map_or(t.len(), |(i, _)| i);
    // `e` followed by a non-numeric character belongs to the unit.
    let mut end = end;
    while end > 0 && matches!(t.as_bytes()[end - 1], b'e' | b'E' | b'+' | b'-') {
        end -= 1;
    }
    let number = t[..end].parse().ok()?;
    Some((number, t[end..].trim()))
}

fn field_error(key: &str, q: Quantity, message: impl Into<String>) -> FieldError {
    FieldError { key: key.to_string(), expected: q.expected(), message: message.into() }
}

fn scalar_value(key: &str, q: Quantity, value: &toml::Value) -> Result<serde_json::Value, FieldError> {
    use serde_json::Value as J;
    match (q, value) {
        (Quantity::Choice(opts), toml::Value::String(s)) => {
            if opts.contains(&s.as_str()) {
                Ok(J::String(s.clone()))
            } else {
                Err(field_error(key, q, format!("unknown option {s:?}")))
            }
        }
        (Quantity::Path, toml::Value::String(s)) => Ok(J::String(s.clone())),
        (Quantity::Choice(_) | Quantity::Path, _) => Err(field_error(key, q, "expected a string")),
        (Quantity::Count, toml::Value::Integer(i)) if *i >= 0 => Ok(J::from(*i)),
        (Quantity::Count, _) => Err(field_error(key, q, format!("got {value}"))),
        (_, toml::Value::Integer(i)) => Ok(J::from(*i as f64)),
        (_, toml::Value::Float(x)) => Ok(J::from(*x)),
        (_, toml::Value::String(s)) => {
            let (number, unit) = split_number(s).ok_or_else(|| field_error(key, q, format!("cannot read number from {s:?}")))?;
            let si = q.convert(number, unit).ok_or_else(|| field_error(key, q, format!("unsupported unit {unit:?}")))?;
            Ok(J::from(si))
        }
        _ => Err(field_error(key, q, format!("got {value}"))),
    }
}

impl ScenarioConfig {
    /// Parses a flat TOML scenario.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        let mut errors = Vec::new();
        let mut resolved = serde_json::Map::new();
        for (key, value) in &table {
            let Some(&(_, q)) = KEYS.iter().find(|(k, _)| k == key) else {
                errors.push(FieldError { key: key.clone(), expected: "a known scenario key".into(), message: "unknown key".into() });
                continue;
            };
            match scalar_value(key, q, value) {
                Ok(v) => {
                    resolved.insert(key.clone(), v);
                }
                Err(e) => errors.push(e),
            }
        }
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let cfg: Self = serde_json::from_value(serde_json::Value::Object(resolved))
            .map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy with one key replaced, using the same unit rules as the file
    /// format. Bare words are read as strings.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let Some(&(_, q)) = KEYS.iter().find(|(k, _)| *k == key) else {
            return Err(ConfigError::Invalid(vec![FieldError {
                key: key.into(),
                expected: "a known scenario key".into(),
                message: "unknown key".into(),
            }]));
        };
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.trim().to_string()));
        let resolved = scalar_value(key, q, &parsed).map_err(|e| ConfigError::Invalid(vec![e]))?;
        let mut current = serde_json::to_value(self).expect("config serializes");
        current[key] = resolved;
        let cfg: Self = serde_json::from_value(current)
            .map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    /// Parses a config echoed as JSON, bare or inside a manifest.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let parse = |m: String| ConfigError::Parse { path: PathBuf::new(), message: m };
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let lookup = |key: &str| KEYS.iter().find(|(k, _)| *k == key).map(|&(_, q)| q).unwrap_or(Quantity::Scalar);
        let mut check = |ok: bool, key: &str, message: &str| {
            if !ok {
                errors.push(field_error(key, lookup(key), message));
            }
        };
        let positive = [
            ("tx_power", self.tx_power),
            ("interferer_power", self.interferer_power),
            ("interferer_distance_min", self.interferer_distance_min),
            ("wavelength", self.wavelength),
            ("packet_bits", self.packet_bits),
            ("bandwidth", self.bandwidth),
            ("path_loss_exp", self.path_loss_exp),
            ("noise_density", self.noise_density),
            ("initial_distance", self.initial_distance),
            ("arer_delta", self.arer_delta),
            ("p_max_per_level", self.p_max_per_level),
            ("solver_tol", self.solver_tol),
            ("laplace_curvature", self.laplace_curvature),
        ];
        for (key, v) in positive {
            check(v > 0.0 && v.is_finite(), key, "must be positive");
        }
        let non_negative = [
            ("arrival_rate0", self.arrival_rate0),
            ("drift", self.drift),
            ("variance0", self.variance0),
            ("variance_growth", self.variance_growth),
            ("variance_volatility", self.variance_volatility),
            ("growth_linear", self.growth_linear),
            ("growth_exponent", self.growth_exponent),
        ];
        for (key, v) in non_negative {
            check(v >= 0.0 && v.is_finite(), key, "must be non-negative");
        }
        check(self.interferer_distance_max >= self.interferer_distance_min, "interferer_distance_max", "must not be below interferer_distance_min");
        check(self.sojourn_rate > 0.0 && self.sojourn_rate <= 1.0, "sojourn_rate", "must lie in (0, 1]");
        for (key, v) in [("p_interference", self.p_interference), ("p_distance", self.p_distance)] {
            check((0.0..=1.0).contains(&v), key, "must lie in [0, 1]");
        }
        check(self.alpha > 0.0 && self.alpha < 1.0, "alpha", "must lie in (0, 1)");
        check(self.p_total >= self.p_max_per_level, "p_total", "must be at least p_max_per_level");
        check(self.trials >= 1, "trials", "must be at least 1");
        check(self.antennas >= 1, "antennas", "must be at least 1");
        check(self.n_max >= 1, "n_max", "must be at least 1");
        check(self.levels >= 1, "levels", "must be at least 1");
        check(self.steps_per_level >= 1, "steps_per_level", "must be at least 1");
        check(self.convolution_grid >= 16, "convolution_grid", "must be at least 16");
        check(self.normal_threshold > 0.0 && self.normal_threshold <= 1.0, "normal_threshold", "must lie in (0, 1]");
        check(self.restoration_target > 0.0 && self.restoration_target <= 1.0, "restoration_target", "must lie in (0, 1]");
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_density * self.bandwidth
    }

    pub fn link(&self) -> LinkParams {
        LinkParams {
            tx_power: self.tx_power,
            wavelength: self.wavelength,
            noise_power: self.noise_power(),
            bandwidth: self.bandwidth,
            packet_bits: self.packet_bits,
            gain_sq: 1.0,
            n_antennas: self.antennas,
        }
    }

    pub fn arrivals(&self) -> ArrivalParams {
        ArrivalParams {
            tx_power: self.interferer_power,
            distance_min: self.interferer_distance_min,
            distance_max: self.interferer_distance_max,
            path_loss_exp: self.path_loss_exp,
            initial_count: self.initial_interferers,
            arrival_rate0: self.arrival_rate0,
            growth_linear: self.growth_linear,
            growth_exponent: self.growth_exponent,
        }
    }

    pub fn distance_process(&self) -> DistanceProcess {
        DistanceProcess::new(self.initial_distance, self.drift, self.variance0, self.variance_growth, self.variance_volatility)
    }

    pub fn constraints(&self) -> AllocationConstraints {
        AllocationConstraints {
            p_max_per_level: self.p_max_per_level,
            p_total: self.p_total,
            n_max: self.n_max,
            alpha: self.alpha,
            tol: self.solver_tol,
            levels: self.levels,
            steps_per_level: self.steps_per_level,
        }
    }

    pub fn thresholds(&self) -> PhaseThresholds {
        PhaseThresholds { normal: self.normal_threshold, restoration_target: self.restoration_target }
    }

    /// Increment moments of the transition out of `slot`, with disabled
    /// stressors contributing nothing.
    pub fn increment_moments(&self, slot: u32) -> StressorMoments {
        let mut m = StressorMoments::default();
        if self.stressors.interference() {
            (m.interference_mean, m.interference_var) = self.arrivals().increment_moments(slot + 1);
        }
        if self.stressors.distance() {
            (m.distance_mean, m.distance_var) = self.distance_process().increment_moments(slot);
        }
        m
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let parsed = if is_json { ScenarioConfig::from_json_str(&text) } else { ScenarioConfig::from_toml_str(&text) };
    parsed.map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
        other => other,
    })
}
