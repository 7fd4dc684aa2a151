//! Experiment configuration: TOML with unit-suffixed physical quantities.
//!
//! Frequencies accept `hz`, `khz`, `mhz` (cyclic, converted with 2π),
//! the equivalent explicit forms `hz_2pi`, `khz_2pi`, `mhz_2pi`, and
//! angular `rad_s`. Fields additionally accept `jmax`. Times accept `s`,
//! `ms`, `us`, `ns`.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classical::ENUMERATION_CAP;
use crate::couplings::{DEFAULT_MU_OFFSET_HZ, DEFAULT_J_MAX};
use crate::error::{Error, Result};
use crate::measurement::{DEFAULT_EPSILON, DEFAULT_SHOTS};
use crate::quantum::{Sector, DEFAULT_DT_MAX, DEFAULT_DURATION, DEFAULT_START_FIELD_JMAX, DEFAULT_TAU, DYNAMICS_CAP};

fn split_quantity(s: &str) -> std::result::Result<(f64, &str), String> {
    let s = s.trim();
    let (num, unit) = s
        .split_once(char::is_whitespace)
        .ok_or_else(|| format!("'{s}' is missing a unit suffix"))?;
    let value: f64 = num.parse().map_err(|_| format!("'{num}' is not a number"))?;
    if !value.is_finite() {
        return Err(format!("'{num}' is not finite"));
    }
    Ok((value, unit.trim()))
}

fn frequency_hz(value: f64, unit: &str) -> Option<f64> {
    Some(match unit {
        "hz" | "hz_2pi" => value,
        "khz" | "khz_2pi" => value * 1e3,
        "mhz" | "mhz_2pi" => value * 1e6,
        "rad_s" => value / (2.0 * PI),
        _ => return None,
    })
}

/// A cyclic frequency, stored in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Frequency(pub f64);

impl Frequency {
    pub fn hz(self) -> f64 {
        self.0
    }

    pub fn rad_s(self) -> f64 {
        2.0 * PI * self.0
    }
}

impl FromStr for Frequency {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (v, unit) = split_quantity(s)?;
        frequency_hz(v, unit)
            .map(Frequency)
            .ok_or_else(|| format!("unknown frequency unit '{unit}' (expected hz, khz, mhz, hz_2pi, khz_2pi, mhz_2pi or rad_s)"))
    }
}

impl TryFrom<String> for Frequency {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Frequency> for String {
    fn from(f: Frequency) -> String {
        format!("{} hz", f.0)
    }
}

/// A field strength, either absolute or in units of the maximum coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Field {
    Jmax(f64),
    RadS(f64),
}

impl Field {
    pub fn rad_s(self, j_max: f64) -> f64 {
        match self {
            Field::Jmax(x) => x * j_max,
            Field::RadS(x) => x,
        }
    }
}

impl FromStr for Field {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (v, unit) = split_quantity(s)?;
        match unit {
            "jmax" => Ok(Field::Jmax(v)),
            "rad_s" => Ok(Field::RadS(v)),
            _ => frequency_hz(v, unit).map(|hz| Field::RadS(2.0 * PI * hz)).ok_or_else(|| {
                format!("unknown field unit '{unit}' (expected jmax, rad_s, hz, khz, mhz or a _2pi form)")
            }),
        }
    }
}

impl TryFrom<String> for Field {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Field> for String {
    fn from(f: Field) -> String {
        match f {
            Field::Jmax(x) => format!("{x} jmax"),
            Field::RadS(x) => format!("{x} rad_s"),
        }
    }
}

/// A duration, stored in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Time(pub f64);

impl FromStr for Time {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (v, unit) = split_quantity(s)?;
        // Division by an exact power of ten keeps "600 us" == 6e-4.
        let secs = match unit {
            "s" => v,
            "ms" => v / 1e3,
            "us" => v / 1e6,
            "ns" => v / 1e9,
            _ => return Err(format!("unknown time unit '{unit}' (expected s, ms, us or ns)")),
        };
        Ok(Time(secs))
    }
}

impl TryFrom<String> for Time {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Time> for String {
    fn from(t: Time) -> String {
        format!("{} s", t.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    StaircaseClassical,
    SpectrumScan,
    CatalystSweep,
    ClassicalTrajectorySweep,
    WignerTable,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::StaircaseClassical => "staircase_classical",
            Experiment::SpectrumScan => "spectrum_scan",
            Experiment::CatalystSweep => "catalyst_sweep",
            Experiment::ClassicalTrajectorySweep => "classical_trajectory_sweep",
            Experiment::WignerTable => "wigner_table",
        }
    }

    /// Largest chain the experiment can handle.
    pub fn spin_cap(self) -> (usize, &'static str) {
        match self {
            Experiment::StaircaseClassical | Experiment::WignerTable => (ENUMERATION_CAP, "classical enumeration"),
            _ => (DYNAMICS_CAP, "state-vector dynamics"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingSource {
    ModeDerived,
    PowerLaw,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingsConfig {
    pub source: CouplingSource,
    /// Target maximum coupling (ignored for `file`, which carries its own).
    pub j_max: Frequency,
    /// Decay exponent for `power_law`.
    pub alpha: f64,
    /// Beatnote offset above the center-of-mass mode for `mode_derived`.
    pub mu_offset: Frequency,
    pub axial_frequency: Frequency,
    pub transverse_frequency: Frequency,
    pub path: Option<PathBuf>,
}

impl Default for CouplingsConfig {
    fn default() -> Self {
        Self {
            source: CouplingSource::ModeDerived,
            j_max: Frequency(DEFAULT_J_MAX / (2.0 * PI)),
            alpha: 0.94,
            mu_offset: Frequency(DEFAULT_MU_OFFSET_HZ),
            axial_frequency: Frequency(0.7e6),
            transverse_frequency: Frequency(4.8e6),
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub start: Field,
    /// Defaults to 0.75·N j_max, beyond the last transition of convex chains.
    pub stop: Option<Field>,
    pub points: usize,
    /// Explicit B_x values; overrides start/stop/points when present.
    pub values: Option<Vec<Field>>,
    /// Window for the classical staircase; defaults to 3·N j_max.
    pub b_x_max: Option<Field>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { start: Field::Jmax(0.0), stop: None, points: 20, values: None, b_x_max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampConfig {
    pub b_y0: Field,
    pub tau: Time,
    pub duration: Time,
    pub dt_max: Time,
    /// Starting B_x of the classical field ramp.
    pub b_x_start: Field,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            b_y0: Field::Jmax(DEFAULT_START_FIELD_JMAX),
            tau: Time(DEFAULT_TAU),
            duration: Time(DEFAULT_DURATION),
            dt_max: Time(DEFAULT_DT_MAX),
            b_x_start: Field::Jmax(DEFAULT_START_FIELD_JMAX),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementConfig {
    pub n_shots: u64,
    pub epsilon: f64,
    /// Apply detection errors to the shots and correct them afterwards.
    pub detection_error: bool,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self { n_shots: DEFAULT_SHOTS, epsilon: DEFAULT_EPSILON, detection_error: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub b_y_max: Field,
    pub b_y_points: usize,
    pub levels: usize,
    pub sector: Sector,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self { b_y_max: Field::Jmax(DEFAULT_START_FIELD_JMAX), b_y_points: 60, levels: 6, sector: Sector::ReflectionEven }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub spins: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub couplings: CouplingsConfig,
    pub sweep: SweepConfig,
    pub ramp: RampConfig,
    pub measurement: MeasurementConfig,
    pub spectrum: SpectrumConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::StaircaseClassical,
            spins: 6,
            seed: 0,
            output_dir: None,
            couplings: CouplingsConfig::default(),
            sweep: SweepConfig::default(),
            ramp: RampConfig::default(),
            measurement: MeasurementConfig::default(),
            spectrum: SpectrumConfig::default(),
        }
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Config(format!("config: {e}")))
}

fn from_table(table: toml::Table, origin: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::deserialize(table).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Sets `section.key = value` in `table`. The value is read as a TOML
/// literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let path = path.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override '{assignment}' has an empty key")));
    }
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}': '{k}' is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses a config file's text, then applies command-line overrides.
    /// Errors in the file report line and column; errors introduced by an
    /// override name it.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = parse_table(text)?;
        if overrides.is_empty() {
            return toml::from_str::<ExperimentConfig>(text).map_err(|e| Error::Config(format!("config: {e}")));
        }
        toml::from_str::<ExperimentConfig>(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        from_table(table, &format!("overrides {}", overrides.join(" ")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fills defaults that depend on other fields so the echoed snapshot is
    /// fully explicit.
    pub fn resolve(&mut self) {
        let n = self.spins as f64;
        if self.sweep.stop.is_none() {
            self.sweep.stop = Some(Field::Jmax(0.75 * n));
        }
        if self.sweep.b_x_max.is_none() {
            self.sweep.b_x_max = Some(Field::Jmax(3.0 * n));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        let (cap, what) = self.experiment.spin_cap();
        if self.spins > cap {
            return Err(Error::Capacity { what, n: self.spins, cap });
        }
        if self.spins == 0 {
            return bad("spins", "must be at least 1".into());
        }
        let c = &self.couplings;
        match c.source {
            CouplingSource::PowerLaw => {
                if self.spins < 2 {
                    return bad("spins", "power-law couplings need at least 2 spins".into());
                }
                if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
                    return bad("couplings.alpha", format!("must be non-negative, got {}", c.alpha));
                }
            }
            CouplingSource::File => {
                if c.path.is_none() {
                    return bad("couplings.path", "required when source = \"file\"".into());
                }
            }
            CouplingSource::ModeDerived => {
                if !(c.axial_frequency.0 > 0.0 && c.transverse_frequency.0 > c.axial_frequency.0) {
                    return bad(
                        "couplings.transverse_frequency",
                        "trap frequencies must satisfy transverse > axial > 0".into(),
                    );
                }
            }
        }
        if !(c.j_max.0 > 0.0) {
            return bad("couplings.j_max", "must be positive".into());
        }
        if self.sweep.values.is_none() && self.sweep.points == 0 {
            return bad("sweep.points", "must be at least 1".into());
        }
        if matches!(&self.sweep.values, Some(v) if v.is_empty()) {
            return bad("sweep.values", "must not be empty".into());
        }
        let r = &self.ramp;
        for (name, t) in [("ramp.tau", r.tau), ("ramp.duration", r.duration), ("ramp.dt_max", r.dt_max)] {
            if !(t.0 > 0.0) {
                return bad(name, format!("must be positive, got {} s", t.0));
            }
        }
        let m = &self.measurement;
        if !(0.0..0.5).contains(&m.epsilon) {
            return bad("measurement.epsilon", format!("must lie in [0, 0.5), got {}", m.epsilon));
        }
        if m.n_shots == 0 {
            return bad("measurement.n_shots", "must be positive".into());
        }
        let s = &self.spectrum;
        if s.b_y_points < 50 {
            return bad("spectrum.b_y_points", format!("need at least 50 points, got {}", s.b_y_points));
        }
        if s.levels < 2 {
            return bad("spectrum.levels", "need at least 2 levels".into());
        }
        Ok(())
    }

    /// B_x sweep values in rad/s.
    pub fn b_x_values(&self, j_max: f64) -> Vec<f64> {
        if let Some(v) = &self.sweep.values {
            return v.iter().map(|f| f.rad_s(j_max)).collect();
        }
        let start = self.sweep.start.rad_s(j_max);
        let stop = self.sweep.stop.unwrap_or(Field::Jmax(0.75 * self.spins as f64)).rad_s(j_max);
        let p = self.sweep.points;
        if p == 1 {
            return vec![start];
        }
        (0..p).map(|i| start + (stop - start) * i as f64 / (p - 1) as f64).collect()
    }

    /// Resolved snapshot; parses back to an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}
