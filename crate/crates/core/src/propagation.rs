//! Linear propagation of pulse envelopes through an absorption profile.
//!
//! The medium is described by `H(f) = exp(-d(f)/2 + i phi(f))`, where the
//! phase is the Kramers-Kronig partner of the attenuation. It is built as a
//! minimum-phase filter by folding the complex cepstrum of `-d/2`, which
//! makes the impulse response causal up to cepstral aliasing.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::spectrum::{fft, ifft, ifftshift, FrequencyGrid, SpectralFunction};

/// Samples per narrowest designed feature required by [`transfer_function`].
pub const MIN_SAMPLES_PER_FEATURE: usize = 32;
/// Largest tolerated relative cepstral amplitude near the aliasing point.
pub const CEPSTRAL_TAIL_LIMIT: f64 = 1e-9;
/// Largest tolerated pulse energy fraction in the outer quarter of the band.
pub const LEAKAGE_LIMIT: f64 = 1e-10;

/// Complex envelope on the time grid paired with a [`FrequencyGrid`].
/// Sample `k` sits at `t_start_ns + k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseEnvelope {
    pub t_start_ns: f64,
    pub dt_ns: f64,
    pub samples: Vec<Complex64>,
    /// Carrier detuning (MHz) the envelope was built with.
    pub carrier_mhz: f64,
}

impl PulseEnvelope {
    /// Gaussian pulse with intensity FWHM `fwhm_ns`, centred at `t = 0`,
    /// carrying `mu` photons at detuning `carrier_mhz`.
    pub fn gaussian(grid: FrequencyGrid, fwhm_ns: f64, carrier_mhz: f64, mu: f64) -> Result<Self> {
        if !(fwhm_ns > 0.0) {
            return Err(SimError::invalid("pulse.fwhm_ns", "must be > 0"));
        }
        if !(mu >= 0.0) {
            return Err(SimError::invalid("pulse.mu", "must be >= 0"));
        }
        let n = grid.len();
        let dt = grid.time_step_ns();
        let t_start = -((n / 2) as f64) * dt;
        let sigma = fwhm_ns / (8.0 * std::f64::consts::LN_2).sqrt();
        let w = 2.0 * std::f64::consts::PI * carrier_mhz * 1e-3;
        let mut samples: Vec<Complex64> = (0..n)
            .map(|k| {
                let t = t_start + k as f64 * dt;
                Complex64::from_polar((-t * t / (4.0 * sigma * sigma)).exp(), w * t)
            })
            .collect();
        let energy: f64 = samples.iter().map(|a| a.norm_sqr()).sum::<f64>() * dt;
        let scale = (mu / energy).sqrt();
        samples.iter_mut().for_each(|a| *a *= scale);
        Ok(Self {
            t_start_ns: t_start,
            dt_ns: dt,
            samples,
            carrier_mhz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start_ns + k as f64 * self.dt_ns
    }

    pub fn t_end_ns(&self) -> f64 {
        self.time(self.len())
    }

    /// `|a|^2 dt` per sample: photons per time bin.
    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|a| a.norm_sqr() * self.dt_ns).collect()
    }

    /// Mean photon number.
    pub fn mu(&self) -> f64 {
        self.intensity().iter().sum()
    }

    /// Photons in samples with `start <= t < stop`.
    pub fn window_energy(&self, start_ns: f64, stop_ns: f64) -> Result<f64> {
        if start_ns < self.t_start_ns || stop_ns > self.t_end_ns() || stop_ns < start_ns {
            return Err(SimError::WindowOutOfRange { start_ns, stop_ns });
        }
        Ok(self
            .samples
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = self.time(*k);
                t >= start_ns && t < stop_ns
            })
            .map(|(_, a)| a.norm_sqr() * self.dt_ns)
            .sum())
    }

    /// Time of the intensity maximum among samples with `t > after_ns`.
    pub fn peak_time_after(&self, after_ns: f64) -> Option<f64> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(k, _)| self.time(*k) > after_ns)
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .map(|(k, _)| self.time(k))
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }

    /// Writes `time_ns intensity` rows in ascending time.
    pub fn write_intensity<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# time_ns intensity")?;
        for (k, a) in self.samples.iter().enumerate() {
            writeln!(out, "{:.3} {:.9e}", self.time(k), a.norm_sqr())?;
        }
        Ok(())
    }
}

/// Complex response on a frequency grid, natural order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl TransferFunction {
    pub fn identity(grid: FrequencyGrid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(1.0, 0.0); grid.len()],
        }
    }

    /// Impulse response in FFT order: sample `m < n/2` is delay `m dt`,
    /// sample `m >= n/2` is the negative delay `(m - n) dt`.
    pub fn impulse_response(&self) -> Vec<Complex64> {
        let mut h = ifftshift(&self.values);
        ifft(&mut h);
        h
    }

    /// Largest `|h(t)|` at negative delays relative to the peak.
    pub fn causality_leak(&self) -> f64 {
        let h = self.impulse_response();
        let n = h.len();
        let peak = h.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        h[n / 2 + 1..].iter().map(|v| v.norm()).fold(0.0, f64::max) / peak
    }

    pub fn max_gain(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Builds the causal transfer function of an optical-depth profile.
pub fn transfer_function(profile: &SpectralFunction) -> Result<TransferFunction> {
    let grid = profile.grid;
    if let Some(bad) = profile.values.iter().find(|d| !(**d >= 0.0)) {
        return Err(SimError::Domain(format!("optical depth {bad} is negative")));
    }
    if let Some(w) = profile.min_feature_mhz {
        let per = grid.samples_per(w);
        if per < MIN_SAMPLES_PER_FEATURE as f64 {
            return Err(SimError::Resolution {
                feature_mhz: w,
                samples_per_feature: per,
                required: MIN_SAMPLES_PER_FEATURE,
            });
        }
    }
    let n = grid.len();
    let half_log: Vec<Complex64> = profile.values.iter().map(|d| Complex64::new(-d / 2.0, 0.0)).collect();
    let mut c = ifftshift(&half_log);
    ifft(&mut c);

    let peak = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        let tail = c[3 * n / 8..5 * n / 8].iter().map(|v| v.norm()).fold(0.0, f64::max) / peak;
        if tail > CEPSTRAL_TAIL_LIMIT {
            return Err(SimError::NotBandLimited {
                tail,
                limit: CEPSTRAL_TAIL_LIMIT,
            });
        }
    }

    for v in c[1..n / 2].iter_mut() {
        *v *= 2.0;
    }
    for v in c[n / 2 + 1..].iter_mut() {
        *v = Complex64::new(0.0, 0.0);
    }
    fft(&mut c);
    let h: Vec<Complex64> = c.iter().map(|v| v.exp()).collect();
    Ok(TransferFunction {
        grid,
        values: crate::spectrum::fftshift(&h),
    })
}

fn check_pairing(pulse: &PulseEnvelope, h: &TransferFunction) -> Result<()> {
    if pulse.len() != h.grid.len() || ((pulse.dt_ns - h.grid.time_step_ns()) / pulse.dt_ns).abs() > 1e-9 {
        return Err(SimError::invalid(
            "pulse",
            "time grid does not pair with the transfer-function grid",
        ));
    }
    Ok(())
}

/// Fraction of the pulse spectrum in the outer quarter of the band.
pub fn edge_energy_fraction(spectrum_fft_order: &[Complex64]) -> f64 {
    let n = spectrum_fft_order.len();
    let total: f64 = spectrum_fft_order.iter().map(|v| v.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let edge: f64 = spectrum_fft_order[3 * n / 8..5 * n / 8]
        .iter()
        .map(|v| v.norm_sqr())
        .sum();
    edge / total
}

/// `IFFT(H FFT(x))`.
pub fn propagate(pulse: &PulseEnvelope, h: &TransferFunction) -> Result<PulseEnvelope> {
    check_pairing(pulse, h)?;
    let mut x = pulse.samples.clone();
    fft(&mut x);
    let fraction = edge_energy_fraction(&x);
    if fraction > LEAKAGE_LIMIT {
        return Err(SimError::SpectralLeakage { fraction });
    }
    let hf = ifftshift(&h.values);
    x.iter_mut().zip(&hf).for_each(|(a, b)| *a *= b);
    ifft(&mut x);
    Ok(PulseEnvelope {
        samples: x,
        ..pulse.clone()
    })
}

/// Peak time of the input pulse.
fn input_time(pulse: &PulseEnvelope) -> f64 {
    pulse.peak_time_after(f64::NEG_INFINITY).unwrap_or(0.0)
}

/// First-echo energy over input energy. The echo window has length
/// `window_ns` and is centred `storage_ns` after the input peak.
pub fn afc_efficiency_with(
    pulse: &PulseEnvelope,
    h: &TransferFunction,
    storage_ns: f64,
    window_ns: f64,
) -> Result<f64> {
    if storage_ns < window_ns {
        return Err(SimError::EchoOverlap { storage_ns, window_ns });
    }
    let mu = pulse.mu();
    if mu == 0.0 {
        return Err(SimError::invalid("pulse.mu", "input carries no energy"));
    }
    let out = propagate(pulse, h)?;
    let center = input_time(pulse) + storage_ns;
    Ok(out.window_energy(center - window_ns / 2.0, center + window_ns / 2.0)? / mu)
}

/// [`afc_efficiency_with`] on the transfer function of `profile`.
pub fn afc_efficiency(
    pulse: &PulseEnvelope,
    profile: &SpectralFunction,
    storage_ns: f64,
    window_ns: f64,
) -> Result<f64> {
    afc_efficiency_with(pulse, &transfer_function(profile)?, storage_ns, window_ns)
}

/// Total transmitted energy over input energy.
pub fn transparency_transmission(pulse: &PulseEnvelope, profile: &SpectralFunction) -> Result<f64> {
    let out = propagate(pulse, &transfer_function(profile)?)?;
    Ok(out.mu() / pulse.mu())
}

/// How a broadband, spectrally flat noise field meets an absorber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFilterMode {
    /// Gaussian inhomogeneous line of FWHM `fwhm_ghz` and peak depth
    /// `peak_depth`, centred on the noise band.
    D1Line { fwhm_ghz: f64, peak_depth: f64 },
    /// As `D1Line`, but the prepared profile replaces the line over the
    /// profile's own grid.
    D2Line { fwhm_ghz: f64, peak_depth: f64 },
    /// Share of the noise that is stored and recalled by the comb.
    CombBand { comb_bandwidth_mhz: f64, eta_afc: f64 },
}

const LINE_SAMPLES: usize = 400_001;

fn gaussian_line(f_ghz: f64, fwhm_ghz: f64, depth: f64) -> f64 {
    depth * (-4.0 * std::f64::consts::LN_2 * f_ghz * f_ghz / (fwhm_ghz * fwhm_ghz)).exp()
}

/// Mean of `exp(-d(f))` over `[-b/2, b/2]` GHz, skipping `|f| < hole_ghz/2`.
fn mean_transmission(b_ghz: f64, hole: Option<(f64, f64)>, d: impl Fn(f64) -> f64) -> f64 {
    let step = b_ghz / (LINE_SAMPLES - 1) as f64;
    let mut acc = 0.0;
    for k in 0..LINE_SAMPLES {
        let f = -b_ghz / 2.0 + k as f64 * step;
        if hole.is_some_and(|(lo, hi)| f >= lo && f < hi) {
            continue;
        }
        let w = if k == 0 || k == LINE_SAMPLES - 1 { 0.5 } else { 1.0 };
        acc += w * (-d(f)).exp() * step;
    }
    acc / b_ghz
}

/// Fraction of flat noise over `noise_bandwidth_ghz` surviving the absorber
/// (line modes) or recalled by the memory (comb mode).
pub fn noise_filter_fraction(
    profile: &SpectralFunction,
    noise_bandwidth_ghz: f64,
    mode: NoiseFilterMode,
) -> Result<f64> {
    if !(noise_bandwidth_ghz > 0.0) {
        return Err(SimError::invalid("noise_bandwidth_ghz", "must be > 0"));
    }
    match mode {
        NoiseFilterMode::D1Line { fwhm_ghz, peak_depth } => Ok(mean_transmission(noise_bandwidth_ghz, None, |f| {
            gaussian_line(f, fwhm_ghz, peak_depth)
        })),
        NoiseFilterMode::D2Line { fwhm_ghz, peak_depth } => {
            let grid = profile.grid;
            let (lo, hi) = (grid.min_mhz() * 1e-3, (grid.max_mhz() + grid.step_mhz()) * 1e-3);
            let wings = mean_transmission(noise_bandwidth_ghz, Some((lo, hi)), |f| {
                gaussian_line(f, fwhm_ghz, peak_depth)
            });
            let local: f64 = profile.values.iter().map(|d| (-d).exp()).sum::<f64>() * grid.step_mhz() * 1e-3;
            Ok(wings + local / noise_bandwidth_ghz)
        }
        NoiseFilterMode::CombBand {
            comb_bandwidth_mhz,
            eta_afc,
        } => Ok((comb_bandwidth_mhz * 1e-3 / noise_bandwidth_ghz).min(1.0) * eta_afc),
    }
}

/// Peak depth of a Gaussian line of FWHM `fwhm_ghz` that lets `survival`
/// of flat noise over `noise_bandwidth_ghz` through.
pub fn line_depth_for_survival(survival: f64, fwhm_ghz: f64, noise_bandwidth_ghz: f64) -> Result<f64> {
    let f = |d: f64| mean_transmission(noise_bandwidth_ghz, None, |x| gaussian_line(x, fwhm_ghz, d));
    if !(survival > 0.0 && survival <= 1.0) {
        return Err(SimError::invalid("survival", "must be in (0, 1]"));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) > survival {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(SimError::Calibration(format!(
                "no line depth lets only {survival} through"
            )));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > survival {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holeburning::{comb_profile, CombSpec};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::from_time_step(65536, 10.24).unwrap()
    }

    #[test]
    fn gaussian_is_normalised() {
        let p = PulseEnvelope::gaussian(grid(), 140.0, 2.5, 0.7).unwrap();
        assert!((p.mu() - 0.7).abs() < 1e-12);
        assert!(p.peak_time_after(f64::NEG_INFINITY).unwrap().abs() < 1e-9);
    }

    #[test]
    fn zero_profile_is_identity() {
        let g = grid();
        let h = transfer_function(&SpectralFunction::constant(g, 0.0)).unwrap();
        assert!(h.values.iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let p = PulseEnvelope::gaussian(g, 140.0, 2.5, 1.0).unwrap();
        let out = propagate(&p, &h).unwrap();
        let err = out
            .samples
            .iter()
            .zip(&p.samples)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn flat_loss_has_no_phase() {
        let h = transfer_function(&SpectralFunction::constant(grid(), 11.5)).unwrap();
        let want = (-11.5f64 / 2.0).exp();
        assert!(h
            .values
            .iter()
            .all(|v| (v.norm() - want).abs() < 1e-12 && v.arg().abs() < 1e-9));
    }

    #[test]
    fn comb_is_passive_and_causal() {
        let g = grid();
        let spec = CombSpec::default();
        let d = comb_profile(g, &spec, 3.0, 11.5, (-6.0, 6.0), 0.02).unwrap();
        let h = transfer_function(&d).unwrap();
        assert!(h.max_gain() <= 1.0 + 1e-12);
        assert!(h.causality_leak() < 1e-10, "{}", h.causality_leak());
        let p = PulseEnvelope::gaussian(g, 140.0, 2.5, 1.0).unwrap();
        let out = propagate(&p, &h).unwrap();
        assert!(out.mu() <= p.mu());
        let t = out.peak_time_after(700.0).unwrap();
        assert!((t - 1600.0).abs() < 250.0, "{t}");
        let eta = afc_efficiency_with(&p, &h, 1600.0, 400.0).unwrap();
        assert!(eta > 0.1 && eta < 0.3, "{eta}");
    }

    #[test]
    fn coarse_grid_and_negative_profile_rejected() {
        let g = FrequencyGrid::from_time_step(4096, 10.24).unwrap();
        let d = SpectralFunction::constant(g, 1.0).with_min_feature(0.25);
        assert!(matches!(transfer_function(&d), Err(SimError::Resolution { .. })));
        let neg = SpectralFunction::constant(grid(), -1.0);
        assert!(transfer_function(&neg).is_err());
    }

    #[test]
    fn sharp_profile_is_not_band_limited() {
        let d = SpectralFunction::from_fn(grid(), |f| if f.abs() < 6.0 { 0.0 } else { 11.5 });
        assert!(matches!(transfer_function(&d), Err(SimError::NotBandLimited { .. })));
    }

    #[test]
    fn overlap_and_leakage_errors() {
        let g = grid();
        let h = TransferFunction::identity(g);
        let p = PulseEnvelope::gaussian(g, 560.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            afc_efficiency_with(&p, &h, 1000.0, 1200.0),
            Err(SimError::EchoOverlap { .. })
        ));
        let mut spiky = p.clone();
        spiky.samples.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        spiky.samples[100] = Complex64::new(1.0, 0.0);
        assert!(matches!(propagate(&spiky, &h), Err(SimError::SpectralLeakage { .. })));
    }

    #[test]
    fn no_pit_flat_loss() {
        let g = grid();
        let p = PulseEnvelope::gaussian(g, 140.0, 0.0, 1.0).unwrap();
        let t = transparency_transmission(&p, &SpectralFunction::constant(g, 11.5)).unwrap();
        assert!((t / (-11.5f64).exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noise_filter_modes() {
        let d = SpectralFunction::constant(grid(), 0.0);
        let comb = NoiseFilterMode::CombBand {
            comb_bandwidth_mhz: 4.0,
            eta_afc: 0.2,
        };
        assert!((noise_filter_fraction(&d, 5.0, comb).unwrap() - 1.6e-4).abs() < 1e-15);
        assert!(noise_filter_fraction(&d, 1e12, comb).unwrap() < 1e-12);
        let depth = line_depth_for_survival(0.67, 9.0, 10.0).unwrap();
        let line = NoiseFilterMode::D1Line {
            fwhm_ghz: 9.0,
            peak_depth: depth,
        };
        assert!((noise_filter_fraction(&d, 10.0, line).unwrap() - 0.67).abs() < 1e-9);
        assert!(noise_filter_fraction(&d, 0.0, line).is_err());
    }

    #[test]
    fn d2_line_reduces_to_profile_inside_grid() {
        let g = grid();
        let line = NoiseFilterMode::D2Line {
            fwhm_ghz: 9.0,
            peak_depth: 11.5,
        };
        let opaque = noise_filter_fraction(&SpectralFunction::constant(g, 11.5), 10.0, line).unwrap();
        let open = noise_filter_fraction(&SpectralFunction::constant(g, 0.0), 10.0, line).unwrap();
        let gap = g.span_mhz() * 1e-3 / 10.0;
        assert!((open - opaque - gap * (1.0 - (-11.5f64).exp())).abs() < 1e-6);
    }
}
