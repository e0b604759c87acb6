//! Scenario configuration: TOML schema, defaults, overrides and presets.
//!
//! Every table and key is optional; missing ones take the baseline values
//! and each applied default is logged at `info` level. Unknown keys are
//! rejected.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::analysis::FitMode;
use crate::conversion::{ConverterParams, LossChain, NoiseModel};
use crate::counting::DetectionConfig;
use crate::error::{Result, SimError};
use crate::holeburning::{CombSpec, HyperfineStructure, PreparationParams};
use crate::spectrum::FrequencyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fig2,
    #[default]
    Fig3,
    Fig4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Samples; a power of two keeps the transforms fast.
    pub n: usize,
    pub dt_ns: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 65536, dt_ns: 10.24 }
    }
}

impl GridConfig {
    pub fn frequency_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::from_time_step(self.n, self.dt_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    /// Background optical depth (absorption coefficient times length).
    pub d_max: f64,
    /// Homogeneous plus burn-laser linewidth applied to the profile.
    pub smoothing_fwhm_mhz: f64,
    pub preparation: PreparationParams,
    /// Comb template; spacing follows the storage time, finesse and depth
    /// follow calibration unless calibration is disabled.
    pub comb: CombSpec,
    /// FWHM of the inhomogeneous line that filters noise in the pit case.
    pub d1_line_fwhm_ghz: f64,
    /// Share of broadband noise that survives that line.
    pub d1_survival: f64,
    /// FWHM of the storage line seen by noise in the echo case.
    pub d2_line_fwhm_ghz: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            d_max: 11.5,
            smoothing_fwhm_mhz: 0.02,
            preparation: PreparationParams::default(),
            comb: CombSpec::default(),
            d1_line_fwhm_ghz: 9.0,
            d1_survival: 0.67,
            d2_line_fwhm_ghz: 9.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseConfig {
    /// Intensity FWHM.
    pub fwhm_ns: f64,
    /// Carrier detuning; the comb is centred here.
    pub carrier_mhz: f64,
    pub mu_in: Vec<f64>,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            fwhm_ns: 140.0,
            carrier_mhz: 2.5,
            mu_in: vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpConfig {
    /// Pump power after the waveguide for single-power runs.
    pub power_w: f64,
    /// Powers for the efficiency/noise sweep.
    pub sweep_w: Vec<f64>,
    pub gating: bool,
    pub gate_duration_ns: f64,
    /// Earliest gate start after the input pulse.
    pub gate_earliest_ns: f64,
    /// The gate opens this long before the echo when that is later.
    pub gate_lead_ns: f64,
}

impl Default for PumpConfig {
    fn default() -> Self {
        Self {
            power_w: 0.144,
            sweep_w: vec![0.0, 0.036, 0.072, 0.108, 0.144, 0.18, 0.216, 0.252, 0.288, 0.324, 0.36],
            gating: true,
            gate_duration_ns: 5000.0,
            gate_earliest_ns: 1000.0,
            gate_lead_ns: 2500.0,
        }
    }
}

impl PumpConfig {
    pub fn gate_start_ns(&self, storage_ns: f64) -> f64 {
        self.gate_earliest_ns.max(storage_ns - self.gate_lead_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageConfig {
    pub times_ns: Vec<f64>,
    /// Input photon number per storage time; empty means `pulse.mu_in[0]`
    /// for every time.
    pub mu_in: Vec<f64>,
    /// Integration window for input and echo.
    pub window_ns: f64,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            times_ns: vec![1600.0],
            mu_in: Vec::new(),
            window_ns: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Fit `noise.alpha` to the converter-only mu_1 target.
    pub calibrate_alpha: bool,
    pub target_mu1: f64,
    /// Fit the tooth depth (and finesse) to the echo-efficiency target.
    pub calibrate_d_peak: bool,
    pub target_eta_afc: f64,
    pub pulse_fwhm_ns: f64,
    pub window_ns: f64,
    pub storage_ns: f64,
    /// Finesse search interval; the upper end is also capped by the
    /// narrowest writable tooth.
    pub finesse_min: f64,
    pub finesse_max: f64,
    pub fit_mode: FitMode,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            calibrate_alpha: true,
            target_mu1: 0.37,
            calibrate_d_peak: true,
            target_eta_afc: 0.198,
            pulse_fwhm_ns: 140.0,
            window_ns: 400.0,
            storage_ns: 1600.0,
            finesse_min: 1.2,
            finesse_max: 8.0,
            fit_mode: FitMode::Weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub experiment: Experiment,
    pub seed: u64,
    pub grid: GridConfig,
    pub converter: ConverterParams,
    pub loss_chain: LossChain,
    pub noise: NoiseModel,
    pub hyperfine: HyperfineStructure,
    pub memory: MemoryConfig,
    pub pulse: PulseConfig,
    pub pump: PumpConfig,
    pub storage: StorageConfig,
    pub detection: DetectionConfig,
    pub calibration: CalibrationConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "baseline".into(),
            experiment: Experiment::default(),
            seed: 1,
            grid: GridConfig::default(),
            converter: ConverterParams::default(),
            loss_chain: LossChain::default(),
            noise: NoiseModel::default(),
            hyperfine: HyperfineStructure::default(),
            memory: MemoryConfig::default(),
            pulse: PulseConfig::default(),
            pump: PumpConfig::default(),
            storage: StorageConfig::default(),
            detection: DetectionConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> SimError {
    SimError::Config(e.to_string())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.grid.frequency_grid()?;
        self.converter.validate()?;
        self.loss_chain.validate()?;
        self.noise.validate()?;
        self.hyperfine.validate()?;
        self.detection.validate()?;
        self.memory.comb.validate()?;
        if !(self.memory.d_max >= 0.0) {
            return Err(SimError::invalid("memory.d_max", "must be >= 0"));
        }
        if !(self.memory.d1_survival > 0.0 && self.memory.d1_survival <= 1.0) {
            return Err(SimError::invalid("memory.d1_survival", "must be in (0, 1]"));
        }
        if !(self.pulse.fwhm_ns > 0.0) {
            return Err(SimError::invalid("pulse.fwhm_ns", "must be > 0"));
        }
        if self.pulse.mu_in.is_empty() || self.pulse.mu_in.iter().any(|m| !(*m >= 0.0)) {
            return Err(SimError::invalid("pulse.mu_in", "need at least one value, all >= 0"));
        }
        if self
            .pump
            .sweep_w
            .iter()
            .chain([&self.pump.power_w])
            .any(|p| !(*p >= 0.0))
        {
            return Err(SimError::invalid("pump", "powers must be >= 0"));
        }
        if !(self.pump.gate_duration_ns >= 0.0) {
            return Err(SimError::invalid("pump.gate_duration_ns", "must be >= 0"));
        }
        if self.storage.times_ns.is_empty() {
            return Err(SimError::invalid("storage.times_ns", "must not be empty"));
        }
        if self.storage.times_ns.iter().any(|t| !(*t > 0.0)) {
            return Err(SimError::invalid("storage.times_ns", "must be > 0"));
        }
        if !self.storage.mu_in.is_empty() && self.storage.mu_in.len() != self.storage.times_ns.len() {
            return Err(SimError::invalid(
                "storage.mu_in",
                "must be empty or match storage.times_ns in length",
            ));
        }
        if !self.calibration.calibrate_d_peak && self.memory.comb.peak_depth.is_none() {
            return Err(SimError::invalid(
                "memory.comb.peak_depth",
                "required when calibration.calibrate_d_peak is false",
            ));
        }
        let c = &self.calibration;
        if !(c.target_mu1 > 0.0 && c.target_eta_afc > 0.0 && c.target_eta_afc < 1.0) {
            return Err(SimError::invalid("calibration", "targets out of range"));
        }
        if !(c.finesse_min > 1.0 && c.finesse_max > c.finesse_min) {
            return Err(SimError::invalid(
                "calibration.finesse_min",
                "need 1 < finesse_min < finesse_max",
            ));
        }
        Ok(())
    }

    /// Input photon number for storage time index `i`.
    pub fn storage_mu(&self, i: usize) -> f64 {
        self.storage.mu_in.get(i).copied().unwrap_or(self.pulse.mu_in[0])
    }

    /// Parses TOML text, applies `overrides` (`dotted.key=value`), fills
    /// defaults and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(config_err)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let defaults = Value::try_from(Scenario::default()).map_err(config_err)?;
        for path in defaulted_paths(&defaults, &Value::Table(table.clone()), "") {
            info!("default applied: {path}");
        }
        let scenario: Scenario = Value::Table(table).try_into().map_err(config_err)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

/// Reads and resolves a scenario file.
pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_toml_str(&text, overrides)
}

/// Leaf paths present in `defaults` but not in `given`, with their values.
fn defaulted_paths(defaults: &Value, given: &Value, prefix: &str) -> Vec<String> {
    let Value::Table(d) = defaults else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (k, v) in d {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match given.as_table().and_then(|g| g.get(k)) {
            Some(g) => out.extend(defaulted_paths(v, g, &path)),
            None if v.is_table() => out.extend(defaulted_paths(v, &Value::Table(Table::new()), &path)),
            None => out.push(format!("{path} = {v}")),
        }
    }
    out
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(node: &mut Value, parts: &[&str], key: &str, value: Value) -> Result<()> {
    let err = |m: String| SimError::Config(format!("override `{key}`: {m}"));
    let part = parts[0];
    let child = match node {
        Value::Table(t) if parts.len() == 1 => {
            t.insert(part.to_string(), value);
            return Ok(());
        }
        Value::Table(t) => t.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new())),
        Value::Array(a) => {
            let idx: usize = part.parse().map_err(|_| err(format!("`{part}` is not an index")))?;
            let slot = a.get_mut(idx).ok_or_else(|| err(format!("index {idx} out of range")))?;
            if parts.len() == 1 {
                *slot = value;
                return Ok(());
            }
            slot
        }
        _ => return Err(err(format!("cannot descend into `{part}`"))),
    };
    set_path(child, &parts[1..], key, value)
}

/// Sets `dotted.key=value`. Numeric segments index into arrays.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(SimError::Config(format!("bad override key `{key}`")));
    }
    let mut root = Value::Table(std::mem::take(table));
    let result = set_path(&mut root, &parts, key, parse_value(raw.trim()));
    if let Value::Table(t) = root {
        *table = t;
    }
    result
}

const FIG2: &str = include_str!("../presets/fig2.toml");
const FIG3: &str = include_str!("../presets/fig3.toml");
const FIG4: &str = include_str!("../presets/fig4.toml");

pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "fig2" => Ok(FIG2),
        "fig3" => Ok(FIG3),
        "fig4" => Ok(FIG4),
        _ => Err(SimError::Config(format!("unknown preset `{name}`"))),
    }
}

pub fn preset(name: &str, overrides: &[String]) -> Result<Scenario> {
    Scenario::from_toml_str(preset_text(name)?, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Scenario::from_toml_str("", &[]).unwrap(), Scenario::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = Scenario::from_toml_str("[converter]\nlenght_cm = 2.0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("lenght_cm"), "{e}");
    }

    #[test]
    fn field_level_validation() {
        let e = Scenario::from_toml_str("[converter]\neta_dev_max = 1.5\n", &[]).unwrap_err();
        assert!(e.to_string().contains("converter.eta_dev_max"), "{e}");
    }

    #[test]
    fn overrides_apply() {
        let ok = Scenario::from_toml_str("", &["pump.power_w=0.2".into(), "name=custom".into()]).unwrap();
        assert_eq!(ok.pump.power_w, 0.2);
        assert_eq!(ok.name, "custom");
        let text = Scenario::default().to_toml().unwrap();
        let edited = Scenario::from_toml_str(&text, &["loss_chain.stages.3.transmission=0.5".into()]).unwrap();
        assert_eq!(edited.loss_chain.stages[3].transmission, 0.5);
        assert!(Scenario::from_toml_str("", &["pump".into()]).is_err());
        assert!(Scenario::from_toml_str("", &["pump.nope=1".into()]).is_err());
    }

    #[test]
    fn defaulted_paths_are_reported() {
        let d = Value::try_from(Scenario::default()).unwrap();
        let given: Table = "seed = 3\n[pump]\npower_w = 0.1\n".parse().unwrap();
        let paths = defaulted_paths(&d, &Value::Table(given), "");
        assert!(paths.iter().any(|p| p.starts_with("pump.gate_duration_ns")));
        assert!(!paths
            .iter()
            .any(|p| p.starts_with("pump.power_w") || p.starts_with("seed")));
    }

    #[test]
    fn presets_load() {
        assert_eq!(preset("fig2", &[]).unwrap().experiment, Experiment::Fig2);
        let f4 = preset("fig4", &[]).unwrap();
        assert_eq!(f4.storage.times_ns, vec![1600.0, 2500.0, 5000.0, 7500.0, 10000.0]);
        assert_eq!(f4.storage_mu(4), 0.4);
        assert_eq!(f4.pulse.fwhm_ns, 560.0);
        assert!(preset("fig9", &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Scenario::default();
        let b = Scenario { seed: 2, ..a.clone() };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
