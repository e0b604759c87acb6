//! The three measurement campaigns, the two calibration routines, and
//! CSV output.

use std::io::Write;

use log::{debug, info};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::analysis::{fit_mu1, snr_with_raw, MuOneFit, SnrPoint};
use crate::conversion::{calibrate_alpha, AlphaCalibration, PumpSchedule, MEMORY_PATH};
use crate::counting::{
    bin_intensity, simulate_counts, snap_window, window_sum, CountHistogram, DetectionConfig, Window,
};
use crate::error::{Result, SimError};
use crate::holeburning::{CombSpec, IonEnsemble};
use crate::propagation::{
    afc_efficiency_with, line_depth_for_survival, noise_filter_fraction, propagate, transfer_function, NoiseFilterMode,
    PulseEnvelope, TransferFunction,
};
use crate::scenario::{Experiment, Scenario};
use crate::spectrum::{FrequencyGrid, SpectralFunction};

/// Spectrally prepared memory: pit only, and pit plus cleaned class.
#[derive(Debug, Clone)]
pub struct Memory {
    pub grid: FrequencyGrid,
    pub pit_only: IonEnsemble,
    pub prepared: IonEnsemble,
}

pub fn build_memory(s: &Scenario) -> Result<Memory> {
    let grid = s.grid.frequency_grid()?;
    let mut pit_only = IonEnsemble::new(grid, s.hyperfine, s.memory.d_max)?.with_smoothing(s.memory.smoothing_fwhm_mhz);
    let p = &s.memory.preparation;
    pit_only.burn_pit(p.pit_center_mhz, p.pit_width_mhz, p.fluence)?;
    let mut prepared = IonEnsemble::new(grid, s.hyperfine, s.memory.d_max)?.with_smoothing(s.memory.smoothing_fwhm_mhz);
    prepared.prepare(p)?;
    info!("prepared class feature depth {:.3}", prepared.feature_depth());
    Ok(Memory {
        grid,
        pit_only,
        prepared,
    })
}

impl Memory {
    /// Comb for storage time `tau_ns` at finesse `finesse` and depth `d_peak`.
    pub fn comb_spec(&self, s: &Scenario, tau_ns: f64, finesse: f64, d_peak: f64) -> CombSpec {
        let spacing = 1e3 / tau_ns;
        CombSpec {
            center_mhz: s.pulse.carrier_mhz,
            spacing_mhz: spacing,
            tooth_width_mhz: spacing / finesse,
            peak_depth: Some(d_peak),
            ..s.memory.comb
        }
    }

    pub fn comb_profile(&self, spec: &CombSpec) -> Result<SpectralFunction> {
        let mut e = self.prepared.clone();
        e.tailor_comb(spec)?;
        Ok(e.absorption_profile())
    }

    pub fn pit_profile(&self) -> SpectralFunction {
        self.pit_only.absorption_profile()
    }
}

/// Largest finesse the narrowest writable tooth allows at spacing `spacing_mhz`.
pub fn finesse_cap(s: &Scenario, spacing_mhz: f64) -> f64 {
    let cap = spacing_mhz / s.memory.comb.gamma_min_mhz * (1.0 - 1e-9);
    cap.min(s.calibration.finesse_max)
}

/// Echo efficiency of the prepared memory for one comb.
pub fn comb_efficiency(
    mem: &Memory,
    s: &Scenario,
    pulse: &PulseEnvelope,
    tau_ns: f64,
    window_ns: f64,
    finesse: f64,
    d_peak: f64,
) -> Result<f64> {
    let profile = mem.comb_profile(&mem.comb_spec(s, tau_ns, finesse, d_peak))?;
    afc_efficiency_with(pulse, &transfer_function(&profile)?, tau_ns, window_ns)
}

/// Finesse maximising the echo efficiency (golden section), with that efficiency.
pub fn optimize_finesse(
    mem: &Memory,
    s: &Scenario,
    pulse: &PulseEnvelope,
    tau_ns: f64,
    window_ns: f64,
    d_peak: f64,
) -> Result<(f64, f64)> {
    let hi = finesse_cap(s, 1e3 / tau_ns);
    let lo = s.calibration.finesse_min;
    let eval = |f: f64| comb_efficiency(mem, s, pulse, tau_ns, window_ns, f, d_peak);
    if hi <= lo {
        return Ok((hi, eval(hi)?));
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    for _ in 0..18 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(if fc > fd { (c, fc) } else { (d, fd) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPeakCalibration {
    pub d_peak: f64,
    pub finesse: f64,
    pub eta_afc: f64,
}

/// Smallest tooth depth whose best comb reaches the target echo efficiency
/// for the calibration pulse (bisection over depth, finesse optimised at
/// each step).
pub fn calibrate_d_peak(s: &Scenario, mem: &Memory) -> Result<DPeakCalibration> {
    let c = &s.calibration;
    let pulse = PulseEnvelope::gaussian(mem.grid, c.pulse_fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
    let best = |d: f64| optimize_finesse(mem, s, &pulse, c.storage_ns, c.window_ns, d);
    let cap = mem.prepared.feature_depth();
    let (f_cap, eta_cap) = best(cap)?;
    if eta_cap < c.target_eta_afc {
        return Err(SimError::Calibration(format!(
            "full class depth {cap:.3} reaches only eta_AFC {eta_cap:.4} (F {f_cap:.2}) < {}",
            c.target_eta_afc
        )));
    }
    let (mut lo, mut hi) = (0.0, cap);
    let mut at_hi = (f_cap, eta_cap);
    for _ in 0..22 {
        let mid = 0.5 * (lo + hi);
        let r = best(mid)?;
        debug!("d_peak {mid:.4}: F {:.3} eta {:.5}", r.0, r.1);
        if r.1 >= c.target_eta_afc {
            hi = mid;
            at_hi = r;
        } else {
            lo = mid;
        }
    }
    Ok(DPeakCalibration {
        d_peak: hi,
        finesse: at_hi.0,
        eta_afc: at_hi.1,
    })
}

/// Share of the calibration pulse inside the snapped signal window.
fn window_fraction(bins: &[f64], det: &DetectionConfig, w: Window) -> Result<(f64, f64)> {
    let (a, b) = snap_window(det.histogram_start_ns, det.bin_size_ns, det.bins, w)?;
    let total: f64 = bins.iter().sum();
    Ok((bins[a..b].iter().sum::<f64>() / total, (b - a) as f64 * det.bin_size_ns))
}

/// Closed-form `alpha` such that the converter-only SNR at one photon equals
/// `1 / target_mu1`.
pub fn calibrate_noise_alpha(s: &Scenario) -> Result<f64> {
    let grid = s.grid.frequency_grid()?;
    let pulse = PulseEnvelope::gaussian(grid, s.calibration.pulse_fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
    let bins = bin_intensity(&pulse, &s.detection);
    let (fraction, used_ns) = window_fraction(&bins, &s.detection, s.detection.signal_window)?;
    calibrate_alpha(
        &s.converter,
        &s.noise,
        &AlphaCalibration {
            mu_in: 1.0,
            pump_w: s.pump.power_w,
            window_ns: used_ns,
            detector_efficiency: s.detection.detector_efficiency,
            window_fraction: fraction,
            target_snr: 1.0 / s.calibration.target_mu1,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub alpha: f64,
    pub d_peak: f64,
    pub finesse: f64,
    /// Echo efficiency of the calibration pulse with the calibrated comb.
    pub eta_afc: f64,
}

/// Runs the enabled calibration routines; disabled ones take the scenario's
/// configured values.
pub fn calibrate(s: &Scenario, mem: &Memory) -> Result<Calibration> {
    let alpha = if s.calibration.calibrate_alpha {
        calibrate_noise_alpha(s)?
    } else {
        s.noise.alpha
    };
    let cal = if s.calibration.calibrate_d_peak {
        calibrate_d_peak(s, mem)?
    } else {
        let c = &s.calibration;
        let d = s.memory.comb.peak_depth.expect("validated");
        let pulse = PulseEnvelope::gaussian(mem.grid, c.pulse_fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
        let spacing = 1e3 / c.storage_ns;
        let f = s.memory.comb.spacing_mhz / s.memory.comb.tooth_width_mhz;
        let f = f.min(finesse_cap(s, spacing));
        DPeakCalibration {
            d_peak: d,
            finesse: f,
            eta_afc: comb_efficiency(mem, s, &pulse, c.storage_ns, c.window_ns, f, d)?,
        }
    };
    info!(
        "calibration: alpha {alpha:.4}, d_peak {:.4}, F {:.3}, eta_AFC {:.4}",
        cal.d_peak, cal.finesse, cal.eta_afc
    );
    Ok(Calibration {
        alpha,
        d_peak: cal.d_peak,
        finesse: cal.finesse,
        eta_afc: cal.eta_afc,
    })
}

/// Deterministic sub-seed for one simulated point.
pub fn sub_seed(master: u64, case: &str, point: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(case.as_bytes());
    h.update((point as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Rows of formatted cells plus a header; written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Cell parsed as a number.
    pub fn value(&self, row: usize, name: &str) -> Option<f64> {
        self.rows.get(row)?.get(self.column(name)?)?.parse().ok()
    }

    /// CSV with a `# scenario_hash` / `# seed` footer.
    pub fn write_csv<W: Write>(&self, mut out: W, scenario_hash: &str, seed: u64) -> Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for r in &self.rows {
            writeln!(out, "{}", r.join(","))?;
        }
        writeln!(out, "# scenario_hash={scenario_hash}")?;
        writeln!(out, "# seed={seed}")?;
        Ok(())
    }
}

fn num(v: f64) -> String {
    format!("{v:.6e}")
}

/// Expected arrivals for one optical path, per unit input photon number.
#[derive(Debug, Clone)]
pub struct PathModel {
    /// Photons per pulse per bin at the detector, for `mu_in = 1`.
    pub signal: Vec<f64>,
    /// Detected pump-induced noise per pulse per bin.
    pub noise: Vec<f64>,
    pub signal_window: Window,
    /// Noise window; taken from a separate blocked-input run when `blocked`.
    pub noise_window: Window,
    pub blocked: bool,
}

fn snr_point(hist: &CountHistogram, noise: &CountHistogram, model: &PathModel, mu: f64) -> Result<SnrPoint> {
    let s = window_sum(hist, model.signal_window, model.signal_window.len_ns())?;
    let n = window_sum(noise, model.noise_window, s.used.len_ns())?;
    Ok(snr_with_raw(s.counts as f64, n.normalized, n.counts as f64)?.at(mu))
}

/// Simulates one path at every `mu_in` and returns the points, histograms
/// and the blocked-input noise histogram when used.
pub fn run_path(
    model: &PathModel,
    mus: &[f64],
    det: &DetectionConfig,
    seed: u64,
    tag: &str,
) -> Result<(Vec<SnrPoint>, Vec<CountHistogram>)> {
    let blocked = if model.blocked {
        let zeros = vec![0.0; det.bins];
        Some(simulate_counts(
            &zeros,
            &model.noise,
            det,
            sub_seed(seed, &format!("{tag}/blocked"), 0),
        )?)
    } else {
        None
    };
    let results: Vec<Result<(SnrPoint, CountHistogram)>> = mus
        .par_iter()
        .enumerate()
        .map(|(i, &mu)| {
            let signal: Vec<f64> = model.signal.iter().map(|v| v * mu).collect();
            let h = simulate_counts(&signal, &model.noise, det, sub_seed(seed, tag, i))?;
            let p = snr_point(&h, blocked.as_ref().unwrap_or(&h), model, mu)?;
            Ok((p, h))
        })
        .collect();
    let mut points = Vec::new();
    let mut hists = Vec::new();
    for r in results {
        let (p, h) = r?;
        points.push(p);
        hists.push(h);
    }
    Ok((points, hists))
}

fn snap_to_bin(t_ns: f64, det: &DetectionConfig) -> f64 {
    det.histogram_start_ns + ((t_ns - det.histogram_start_ns) / det.bin_size_ns).round() * det.bin_size_ns
}

/// Pump noise per bin on the converter-only path.
fn pump_noise_bins(s: &Scenario, alpha: f64) -> Vec<f64> {
    let noise = crate::conversion::NoiseModel { alpha, ..s.noise };
    vec![noise.pump_noise_rate_per_ns(s.pump.power_w, false) * s.detection.bin_size_ns; s.detection.bins]
}

/// Converter-only path: pulse straight to the detector.
pub fn fc_only_model(s: &Scenario, alpha: f64, pulse: &PulseEnvelope) -> Result<PathModel> {
    let eta = s.converter.conversion_efficiency(s.pump.power_w)?;
    Ok(PathModel {
        signal: bin_intensity(pulse, &s.detection).iter().map(|v| v * eta).collect(),
        noise: pump_noise_bins(s, alpha),
        signal_window: s.detection.signal_window,
        noise_window: s.detection.noise_window,
        blocked: false,
    })
}

/// Pit path: the pulse crosses the transparency window; broadband noise is
/// filtered by the inhomogeneous line around it.
pub fn pit_model(s: &Scenario, cal: &Calibration, mem: &Memory, pulse: &PulseEnvelope) -> Result<(PathModel, f64)> {
    let eta = s.converter.conversion_efficiency(s.pump.power_w)?;
    let t_mem = s.loss_chain.transmission(MEMORY_PATH)?;
    let h = transfer_function(&mem.pit_profile())?;
    let out = propagate(pulse, &h)?;
    let transmission = out.mu() / pulse.mu();
    let depth = line_depth_for_survival(
        s.memory.d1_survival,
        s.memory.d1_line_fwhm_ghz,
        s.noise.noise_bandwidth_ghz,
    )?;
    let survival = noise_filter_fraction(
        &mem.pit_profile(),
        s.noise.noise_bandwidth_ghz,
        NoiseFilterMode::D1Line {
            fwhm_ghz: s.memory.d1_line_fwhm_ghz,
            peak_depth: depth,
        },
    )?;
    let delay = snap_to_bin(out.peak_time_after(f64::NEG_INFINITY).unwrap_or(0.0), &s.detection);
    let w = s.detection.signal_window;
    Ok((
        PathModel {
            signal: bin_intensity(&out, &s.detection)
                .iter()
                .map(|v| v * eta * t_mem)
                .collect(),
            noise: pump_noise_bins(s, cal.alpha)
                .iter()
                .map(|v| v * t_mem * survival)
                .collect(),
            signal_window: Window::new(w.start_ns + delay, w.stop_ns + delay),
            noise_window: s.detection.noise_window,
            blocked: false,
        },
        transmission,
    ))
}

/// Diagnostics of an echo path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoDiagnostics {
    pub eta_afc: f64,
    pub finesse: f64,
    /// Broadband noise transmitted straight through the prepared line.
    pub direct_noise_fraction: f64,
    /// Broadband noise stored and recalled with the echo.
    pub recalled_noise_fraction: f64,
    pub gate: PumpSchedule,
}

/// Echo path: the pulse is stored for `tau_ns`; pump noise reaches the
/// detector directly through the line and delayed through the comb, and is
/// suppressed while the pump is gated.
pub fn echo_model(
    s: &Scenario,
    cal: &Calibration,
    mem: &Memory,
    pulse: &PulseEnvelope,
    tau_ns: f64,
    window_ns: f64,
    finesse: f64,
) -> Result<(PathModel, EchoDiagnostics)> {
    let eta = s.converter.conversion_efficiency(s.pump.power_w)?;
    let t_mem = s.loss_chain.transmission(MEMORY_PATH)?;
    let spec = mem.comb_spec(s, tau_ns, finesse, cal.d_peak);
    let profile = mem.comb_profile(&spec)?;
    let h: TransferFunction = transfer_function(&profile)?;
    let eta_afc = afc_efficiency_with(pulse, &h, tau_ns, window_ns)?;
    let out = propagate(pulse, &h)?;
    let direct = noise_filter_fraction(
        &profile,
        s.noise.noise_bandwidth_ghz,
        NoiseFilterMode::D2Line {
            fwhm_ghz: s.memory.d2_line_fwhm_ghz,
            peak_depth: s.memory.d_max,
        },
    )?;
    let recalled = noise_filter_fraction(
        &profile,
        s.noise.noise_bandwidth_ghz,
        NoiseFilterMode::CombBand {
            comb_bandwidth_mhz: spec.bandwidth_mhz,
            eta_afc,
        },
    )?;
    let gate = if s.pump.gating {
        PumpSchedule::new(s.pump.gate_start_ns(tau_ns), s.pump.gate_duration_ns)?
    } else {
        PumpSchedule::never()
    };
    let det = &s.detection;
    let suppression = s.noise.gating_suppression;
    let rate = crate::conversion::NoiseModel {
        alpha: cal.alpha,
        ..s.noise
    }
    .pump_noise_rate_per_ns(s.pump.power_w, false)
        * det.bin_size_ns;
    let pump_at = |t: f64| if gate.is_gated(t) { rate / suppression } else { rate };
    let noise = (0..det.bins)
        .map(|k| {
            let t = det.bin_center(k);
            t_mem * (direct * pump_at(t) + recalled * pump_at(t - tau_ns))
        })
        .collect();
    let noise_window = if gate.gate_duration_ns > 0.0 {
        Window::new(
            gate.gate_on_at_ns.max(det.histogram_start_ns),
            gate.gate_off_at_ns().min(det.histogram_end_ns()),
        )
    } else {
        det.noise_window
    };
    Ok((
        PathModel {
            signal: bin_intensity(&out, det).iter().map(|v| v * eta * t_mem).collect(),
            noise,
            signal_window: Window::centered(snap_to_bin(tau_ns, det), window_ns),
            noise_window,
            blocked: true,
        },
        EchoDiagnostics {
            eta_afc,
            finesse,
            direct_noise_fraction: direct,
            recalled_noise_fraction: recalled,
            gate,
        },
    ))
}

/// Efficiency and noise per pulse versus pump power, plus SNR at the first
/// configured photon number.
pub fn run_fig2(s: &Scenario, alpha: f64) -> Result<Table> {
    let grid = s.grid.frequency_grid()?;
    let pulse = PulseEnvelope::gaussian(grid, s.pulse.fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
    let mu = s.pulse.mu_in[0];
    let mut powers = s.pump.sweep_w.clone();
    powers.sort_by(f64::total_cmp);
    let det = &s.detection;
    let rows: Vec<Result<Vec<String>>> = powers
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let at_p = Scenario {
                pump: crate::scenario::PumpConfig {
                    power_w: p,
                    ..s.pump.clone()
                },
                ..s.clone()
            };
            let model = fc_only_model(&at_p, alpha, &pulse)?;
            let signal: Vec<f64> = model.signal.iter().map(|v| v * mu).collect();
            let h = simulate_counts(&signal, &model.noise, det, sub_seed(s.seed, "fig2", i))?;
            let n = window_sum(&h, det.noise_window, det.reference_window_ns)?;
            let per_pulse = n.normalized / det.pulses_total as f64;
            let sigma = per_pulse / (n.counts.max(1) as f64).sqrt();
            // An empty noise window leaves the SNR undefined; reported as NaN.
            let snr = match snr_point(&h, &h, &model, mu) {
                Err(SimError::UndefinedSnr) => SnrPoint::exact(mu, f64::NAN, f64::NAN),
                r => r?,
            };
            Ok(vec![
                num(p),
                num(s.converter.conversion_efficiency(p)?),
                num(per_pulse),
                num(sigma),
                num(snr.snr),
                num(snr.sigma),
            ])
        })
        .collect();
    let mut t = Table::new(&[
        "pump_w",
        "eta_dev",
        "noise_per_pulse",
        "noise_sigma",
        "snr",
        "snr_sigma",
    ]);
    for r in rows {
        t.push(r?);
    }
    Ok(t)
}

/// Results of the three-path comparison.
#[derive(Debug, Clone)]
pub struct Fig3Result {
    pub points: Table,
    pub fits: Table,
    pub mu1: [MuOneFit; 3],
    pub pit_transmission: f64,
    pub echo: EchoDiagnostics,
    /// Histograms at the photon number closest to 0.1, per path.
    pub inset: [(String, CountHistogram); 3],
}

pub const CASES: [&str; 3] = ["fc_only", "pit", "echo"];

pub fn run_fig3(s: &Scenario, cal: &Calibration, mem: &Memory) -> Result<Fig3Result> {
    let pulse = PulseEnvelope::gaussian(mem.grid, s.pulse.fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
    let tau = s.storage.times_ns[0];
    let fc = fc_only_model(s, cal.alpha, &pulse)?;
    let (pit, pit_transmission) = pit_model(s, cal, mem, &pulse)?;
    let (echo, diag) = echo_model(s, cal, mem, &pulse, tau, s.storage.window_ns, cal.finesse)?;
    let mut mus = s.pulse.mu_in.clone();
    mus.sort_by(f64::total_cmp);
    let mus = &mus;
    let inset_idx = mus
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 0.1).abs().total_cmp(&(b.1 - 0.1).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut points = Table::new(&["case", "mu_in", "s", "n", "snr", "sigma"]);
    let mut fits = Table::new(&["case", "slope", "slope_sigma", "mu1", "mu1_sigma"]);
    let mut mu1 = Vec::new();
    let mut inset = Vec::new();
    for (case, model) in CASES.iter().zip([&fc, &pit, &echo]) {
        let (pts, hists) = run_path(model, mus, &s.detection, s.seed, case)?;
        for p in &pts {
            points.push(vec![
                case.to_string(),
                num(p.mu_in),
                num(p.s),
                num(p.n),
                num(p.snr),
                num(p.sigma),
            ]);
        }
        let f = fit_mu1(&pts, s.calibration.fit_mode)?;
        fits.push(vec![
            case.to_string(),
            num(f.slope),
            num(f.slope_sigma),
            num(f.mu1),
            num(f.mu1_sigma),
        ]);
        mu1.push(f);
        inset.push((case.to_string(), hists[inset_idx].clone()));
    }
    let [a, b, c] = <[MuOneFit; 3]>::try_from(mu1).expect("three cases");
    let [ia, ib, ic] = <[(String, CountHistogram); 3]>::try_from(inset).expect("three cases");
    Ok(Fig3Result {
        points,
        fits,
        mu1: [a, b, c],
        pit_transmission,
        echo: diag,
        inset: [ia, ib, ic],
    })
}

/// Storage-time sweep: best comb under the tooth-width floor at each time.
pub fn run_fig4(s: &Scenario, cal: &Calibration, mem: &Memory) -> Result<Table> {
    let pulse = PulseEnvelope::gaussian(mem.grid, s.pulse.fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
    let window = s.storage.window_ns;
    let eta_dev = s.converter.conversion_efficiency(s.pump.power_w)?;
    let t_mem = s.loss_chain.transmission(MEMORY_PATH)?;
    let mut order: Vec<(usize, f64)> = s.storage.times_ns.iter().copied().enumerate().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let rows: Vec<Result<Vec<String>>> = order
        .par_iter()
        .map(|&(i, tau)| {
            if tau < window {
                return Err(SimError::EchoOverlap {
                    storage_ns: tau,
                    window_ns: window,
                });
            }
            let (f, _) = optimize_finesse(mem, s, &pulse, tau, window, cal.d_peak)?;
            let (model, diag) = echo_model(s, cal, mem, &pulse, tau, window, f)?;
            let mu = s.storage_mu(i);
            let (pts, _) = run_path(&model, &[mu], &s.detection, s.seed, &format!("fig4/{i}"))?;
            let snr = pts[0];
            Ok(vec![
                num(tau),
                num(f),
                num(diag.eta_afc),
                num(eta_dev * t_mem * diag.eta_afc),
                num(mu),
                num(snr.snr),
                num(snr.sigma),
                num(mu / snr.snr),
            ])
        })
        .collect();
    let mut t = Table::new(&[
        "tau_ns",
        "finesse",
        "eta_afc",
        "eta_tot",
        "mu_in",
        "snr",
        "snr_sigma",
        "mu1",
    ]);
    for r in rows {
        t.push(r?);
    }
    Ok(t)
}

/// Calibration summary as a table.
pub fn calibration_table(cal: &Calibration) -> Table {
    let mut t = Table::new(&["alpha", "d_peak", "finesse", "eta_afc"]);
    t.push(vec![
        num(cal.alpha),
        num(cal.d_peak),
        num(cal.finesse),
        num(cal.eta_afc),
    ]);
    t
}

/// What a command produces: file name and contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub name: String,
    pub contents: String,
}

/// Which piece of work to run on a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Experiment(Experiment),
    Calibrate,
    DumpProfile,
}

fn csv(name: &str, t: &Table, hash: &str, seed: u64) -> Result<Output> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf, hash, seed)?;
    Ok(Output {
        name: name.to_string(),
        contents: String::from_utf8(buf).expect("ascii"),
    })
}

fn text<F: FnOnce(&mut Vec<u8>) -> Result<()>>(name: &str, f: F) -> Result<Output> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(Output {
        name: name.to_string(),
        contents: String::from_utf8(buf).expect("ascii"),
    })
}

fn alpha_only(s: &Scenario) -> Result<f64> {
    if s.calibration.calibrate_alpha {
        calibrate_noise_alpha(s)
    } else {
        Ok(s.noise.alpha)
    }
}

/// Runs `task` and returns the files it produces. Results depend only on
/// the scenario, including its seed.
pub fn run_task(s: &Scenario, task: Task) -> Result<Vec<Output>> {
    s.validate()?;
    let hash = s.hash()?;
    let seed = s.seed;
    let mut out = Vec::new();
    match task {
        Task::Experiment(Experiment::Fig2) => {
            out.push(csv("fig2.csv", &run_fig2(s, alpha_only(s)?)?, &hash, seed)?);
        }
        Task::Experiment(Experiment::Fig3) => {
            let mem = build_memory(s)?;
            let cal = calibrate(s, &mem)?;
            let r = run_fig3(s, &cal, &mem)?;
            out.push(csv("fig3_points.csv", &r.points, &hash, seed)?);
            out.push(csv("fig3_fits.csv", &r.fits, &hash, seed)?);
            let mut d = Table::new(&["quantity", "value"]);
            let e = r.echo;
            for (k, v) in [
                ("pit_transmission", r.pit_transmission),
                ("echo_eta_afc", e.eta_afc),
                ("echo_finesse", e.finesse),
                ("direct_noise_fraction", e.direct_noise_fraction),
                ("recalled_noise_fraction", e.recalled_noise_fraction),
                ("gate_on_ns", e.gate.gate_on_at_ns),
                ("gate_off_ns", e.gate.gate_off_at_ns()),
                ("mu1_ratio_echo_over_fc", r.mu1[2].mu1 / r.mu1[0].mu1),
            ] {
                d.push(vec![k.to_string(), num(v)]);
            }
            out.push(csv("fig3_diagnostics.csv", &d, &hash, seed)?);
            for (case, h) in &r.inset {
                out.push(text(&format!("fig3_inset_{case}.hist"), |b| h.write(b))?);
            }
        }
        Task::Experiment(Experiment::Fig4) => {
            let mem = build_memory(s)?;
            let cal = calibrate(s, &mem)?;
            out.push(csv("fig4.csv", &run_fig4(s, &cal, &mem)?, &hash, seed)?);
        }
        Task::Calibrate => {
            let mem = build_memory(s)?;
            out.push(csv(
                "calibration.csv",
                &calibration_table(&calibrate(s, &mem)?),
                &hash,
                seed,
            )?);
        }
        Task::DumpProfile => {
            let mem = build_memory(s)?;
            let cal = calibrate(s, &mem)?;
            let tau = s.storage.times_ns[0];
            let spec = mem.comb_spec(s, tau, cal.finesse.min(finesse_cap(s, 1e3 / tau)), cal.d_peak);
            let comb = mem.comb_profile(&spec)?;
            let pit = mem.pit_profile();
            let pulse = PulseEnvelope::gaussian(mem.grid, s.pulse.fwhm_ns, s.pulse.carrier_mhz, 1.0)?;
            let echo = propagate(&pulse, &transfer_function(&comb)?)?;
            out.push(text("profile_pit.dat", |b| pit.write_two_column(b))?);
            out.push(text("profile_comb.dat", |b| comb.write_two_column(b))?);
            out.push(text("pulse_in.dat", |b| pulse.write_intensity(b))?);
            out.push(text("pulse_out.dat", |b| echo.write_intensity(b))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ_by_case_and_point() {
        assert_eq!(sub_seed(1, "a", 0), sub_seed(1, "a", 0));
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "a", 1));
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "b", 0));
        assert_ne!(sub_seed(1, "a", 0), sub_seed(2, "a", 0));
    }

    #[test]
    fn csv_has_header_rows_and_footer() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec!["1".into(), "2.5".into()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, "abc", 7).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,y\n1,2.5\n# scenario_hash=abc\n# seed=7\n");
        assert_eq!(t.value(0, "y"), Some(2.5));
        assert_eq!(t.value(0, "z"), None);
    }

    #[test]
    fn finesse_cap_follows_tooth_floor() {
        let s = Scenario::default();
        let at_5us = finesse_cap(&s, 0.2);
        assert!(at_5us < 0.2 / s.memory.comb.gamma_min_mhz && at_5us > 2.1);
        assert_eq!(finesse_cap(&s, 100.0), s.calibration.finesse_max);
    }

    #[test]
    fn fig2_is_reproducible() {
        let mut s = Scenario::default();
        s.detection.lots = 4;
        s.detection.pulses_per_lot = 1000;
        s.detection.pulses_total = 4000;
        s.pump.sweep_w = vec![0.252, 0.0, 0.144];
        let a = run_task(&s, Task::Experiment(Experiment::Fig2)).unwrap();
        let b = run_task(&s, Task::Experiment(Experiment::Fig2)).unwrap();
        assert_eq!(a, b);
        let lines: Vec<&str> = a[0].contents.lines().collect();
        assert!(lines[1].starts_with("0.000000e0,0.000000e0"));
        assert!(lines[3].starts_with("2.520000e-1,2.0"));
    }
}
