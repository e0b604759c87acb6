//! Waveguide up-converter: efficiency vs pump power, the loss chain, pump
//! induced noise and pump gating.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Sum-frequency converter parameters. Pump power is always the power
/// measured after the waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterParams {
    /// Waveguide length (cm).
    pub length_cm: f64,
    /// Normalised efficiency (1 / (W cm^2)).
    pub eta_n: f64,
    /// Peak device efficiency.
    pub eta_dev_max: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            length_cm: 2.6,
            eta_n: 1.0,
            eta_dev_max: 0.22,
        }
    }
}

impl ConverterParams {
    pub fn new(length_cm: f64, eta_n: f64, eta_dev_max: f64) -> Result<Self> {
        let p = Self {
            length_cm,
            eta_n,
            eta_dev_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_cm > 0.0) {
            return Err(SimError::invalid("converter.length_cm", "must be > 0"));
        }
        if !(self.eta_n > 0.0) {
            return Err(SimError::invalid("converter.eta_n", "must be > 0"));
        }
        if !(self.eta_dev_max > 0.0 && self.eta_dev_max <= 1.0) {
            return Err(SimError::invalid("converter.eta_dev_max", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// Pump power of the first efficiency maximum, where the phase
    /// `L sqrt(P eta_n)` reaches pi/2.
    pub fn p_max(&self) -> f64 {
        (FRAC_PI_2 / self.length_cm).powi(2) / self.eta_n
    }

    /// Checks a stored `P_max` against `(L, eta_n)` to 1e-9 rad.
    pub fn check_p_max(&self, p_max: f64) -> Result<()> {
        let phase = self.length_cm * (p_max * self.eta_n).sqrt();
        if (phase - FRAC_PI_2).abs() > 1e-9 {
            return Err(SimError::invalid(
                "converter.p_max",
                format!("phase {phase:.12} rad is not pi/2 for the given length and eta_n"),
            ));
        }
        Ok(())
    }

    /// Conversion phase `L sqrt(P eta_n)` in radians.
    pub fn phase(&self, pump_w: f64) -> f64 {
        self.length_cm * (pump_w * self.eta_n).sqrt()
    }

    /// Device efficiency `eta_max sin^2(L sqrt(P eta_n))`.
    pub fn conversion_efficiency(&self, pump_w: f64) -> Result<f64> {
        if !(pump_w >= 0.0) {
            return Err(SimError::Domain(format!("pump power {pump_w} W is negative")));
        }
        Ok(self.eta_dev_max * self.phase(pump_w).sin().powi(2))
    }
}

/// Output wavelength of the three-wave process, `1/l_out = 1/l_signal + 1/l_pump`.
pub fn output_wavelength_nm(signal_nm: f64, pump_nm: f64) -> Result<f64> {
    if !(signal_nm > 0.0 && pump_nm > 0.0) {
        return Err(SimError::Domain("wavelengths must be positive".into()));
    }
    Ok(1.0 / (1.0 / signal_nm + 1.0 / pump_nm))
}

/// One optical element of the signal path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossStage {
    pub label: String,
    pub transmission: f64,
}

/// Ordered multiplicative loss chain. Sub-chains are half open: the
/// transmission from `a` to `b` includes stage `a` and stops before `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossChain {
    pub stages: Vec<LossStage>,
    /// Pump coupling into the waveguide. Kept for the budget; it never
    /// multiplies a single-photon efficiency.
    pub pump_coupling: f64,
}

pub const WAVEGUIDE_COUPLING: &str = "waveguide_coupling";
pub const FILTER_PROPAGATION: &str = "filter_propagation";
pub const FIBER_COUPLING: &str = "fiber_coupling";
pub const MEMORY_PATH: &str = "memory_path";
pub const DETECTOR: &str = "detector";
/// Sentinel label for the end of the chain.
pub const END: &str = "end";

impl Default for LossChain {
    fn default() -> Self {
        let stage = |label: &str, transmission| LossStage {
            label: label.to_string(),
            transmission,
        };
        Self {
            stages: vec![
                stage(WAVEGUIDE_COUPLING, 0.55),
                stage(FILTER_PROPAGATION, 0.71),
                stage(FIBER_COUPLING, 0.75),
                stage(MEMORY_PATH, 0.66),
                stage(DETECTOR, 0.60),
            ],
            pump_coupling: 0.36,
        }
    }
}

impl LossChain {
    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            if !(s.transmission > 0.0 && s.transmission <= 1.0) {
                return Err(SimError::invalid(
                    &format!("loss_chain.{}", s.label),
                    "transmission must be in (0, 1]",
                ));
            }
        }
        if !(self.pump_coupling > 0.0 && self.pump_coupling <= 1.0) {
            return Err(SimError::invalid("loss_chain.pump_coupling", "must be in (0, 1]"));
        }
        Ok(())
    }

    fn position(&self, label: &str) -> Result<usize> {
        if label == END {
            return Ok(self.stages.len());
        }
        self.stages
            .iter()
            .position(|s| s.label == label)
            .ok_or_else(|| SimError::UnknownLabel(label.to_string()))
    }

    pub fn transmission(&self, label: &str) -> Result<f64> {
        let i = self.position(label)?;
        self.stages
            .get(i)
            .map(|s| s.transmission)
            .ok_or_else(|| SimError::UnknownLabel(label.to_string()))
    }

    /// Product of the stages in `[from, to)`.
    pub fn chain_transmission(&self, from: &str, to: &str) -> Result<f64> {
        let (a, b) = (self.position(from)?, self.position(to)?);
        if a > b {
            return Err(SimError::ReversedOrder {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        Ok(self.stages[a..b].iter().map(|s| s.transmission).product())
    }
}

/// Pump-induced noise `alpha P^2 + beta P` plus detector dark counts.
///
/// `alpha` and `beta` are detected counts per pulse in a window of
/// `reference_window_ns`; the pump-induced part scales linearly with the
/// window length since the pump is continuous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub alpha: f64,
    pub beta: f64,
    pub dark_rate_hz: f64,
    pub noise_bandwidth_ghz: f64,
    pub gating_suppression: f64,
    pub reference_window_ns: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            alpha: 1.64,
            beta: 0.0,
            dark_rate_hz: 10.0,
            noise_bandwidth_ghz: 10.0,
            gating_suppression: 10.0,
            reference_window_ns: 400.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("noise.alpha", self.alpha),
            ("noise.beta", self.beta),
            ("noise.dark_rate_hz", self.dark_rate_hz),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0) {
                return Err(SimError::invalid(field, "must be >= 0"));
            }
        }
        if !(self.gating_suppression >= 1.0) {
            return Err(SimError::invalid("noise.gating_suppression", "must be >= 1"));
        }
        if !(self.noise_bandwidth_ghz > 0.0) {
            return Err(SimError::invalid("noise.noise_bandwidth_ghz", "must be > 0"));
        }
        if !(self.reference_window_ns > 0.0) {
            return Err(SimError::invalid("noise.reference_window_ns", "must be > 0"));
        }
        Ok(())
    }

    fn gating_factor(&self, gated: bool) -> f64 {
        if gated {
            self.gating_suppression
        } else {
            1.0
        }
    }

    /// Pump-induced detected counts per ns.
    pub fn pump_noise_rate_per_ns(&self, pump_w: f64, gated: bool) -> f64 {
        (self.alpha * pump_w * pump_w + self.beta * pump_w) / self.reference_window_ns / self.gating_factor(gated)
    }

    /// Dark counts per ns.
    pub fn dark_rate_per_ns(&self) -> f64 {
        self.dark_rate_hz * 1e-9
    }

    /// Expected noise counts per pulse in a window. Dark counts are never gated.
    pub fn noise_counts_per_pulse(&self, pump_w: f64, window_ns: f64, gated: bool) -> Result<f64> {
        if !(window_ns > 0.0) {
            return Err(SimError::Domain(format!("window {window_ns} ns must be > 0")));
        }
        Ok(self.pump_noise_rate_per_ns(pump_w, gated) * window_ns + self.dark_rate_per_ns() * window_ns)
    }
}

/// Target of the closed-form `alpha` calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCalibration {
    pub mu_in: f64,
    pub pump_w: f64,
    pub window_ns: f64,
    pub detector_efficiency: f64,
    /// Fraction of the pulse energy inside the signal window.
    pub window_fraction: f64,
    pub target_snr: f64,
}

/// Solves for `alpha` (keeping `beta`) so the expected converter-only SNR
/// `signal / noise` equals the target.
pub fn calibrate_alpha(converter: &ConverterParams, noise: &NoiseModel, target: &AlphaCalibration) -> Result<f64> {
    let signal = target.mu_in
        * converter.conversion_efficiency(target.pump_w)?
        * target.detector_efficiency
        * target.window_fraction;
    let wanted_noise = signal / target.target_snr;
    let scale = target.window_ns / noise.reference_window_ns;
    let residual = wanted_noise - noise.dark_rate_per_ns() * target.window_ns - noise.beta * target.pump_w * scale;
    let alpha = residual / (target.pump_w * target.pump_w * scale);
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(SimError::Calibration(format!(
            "no non-negative alpha reaches SNR {} (got {alpha})",
            target.target_snr
        )));
    }
    Ok(alpha)
}

/// Product of converter, transmission and memory efficiencies.
pub fn total_efficiency(eta_dev: f64, eta_trans: f64, eta_afc: f64) -> Result<f64> {
    for (name, v) in [("eta_dev", eta_dev), ("eta_trans", eta_trans), ("eta_afc", eta_afc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(SimError::Domain(format!("{name} = {v} is not in [0, 1]")));
        }
    }
    Ok(eta_dev * eta_trans * eta_afc)
}

/// Pump gate: ungated before `gate_on_at_ns`, gated for `gate_duration_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSchedule {
    pub gate_on_at_ns: f64,
    pub gate_duration_ns: f64,
}

impl PumpSchedule {
    pub fn new(gate_on_at_ns: f64, gate_duration_ns: f64) -> Result<Self> {
        if !(gate_duration_ns >= 0.0) {
            return Err(SimError::invalid("gate_duration_ns", "must be >= 0"));
        }
        Ok(Self {
            gate_on_at_ns,
            gate_duration_ns,
        })
    }

    pub fn never() -> Self {
        Self {
            gate_on_at_ns: 0.0,
            gate_duration_ns: 0.0,
        }
    }

    pub fn gate_off_at_ns(&self) -> f64 {
        self.gate_on_at_ns + self.gate_duration_ns
    }

    pub fn is_gated(&self, t_ns: f64) -> bool {
        t_ns >= self.gate_on_at_ns && t_ns < self.gate_off_at_ns()
    }
}

/// Builds a [`PumpSchedule`].
pub fn pump_schedule(gate_on_at_ns: f64, gate_duration_ns: f64) -> Result<PumpSchedule> {
    PumpSchedule::new(gate_on_at_ns, gate_duration_ns)
}
