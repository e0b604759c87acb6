//! Figures of merit from count histograms: SNR, mu_1 and efficiencies.

use serde::{Deserialize, Serialize};

use crate::counting::{window_sum, CountHistogram, Window};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub mu_in: f64,
    /// Counts in the signal window.
    pub s: f64,
    /// Noise counts normalised to the signal window length.
    pub n: f64,
    pub snr: f64,
    pub sigma: f64,
}

impl SnrPoint {
    /// Point with a given SNR and error, for fits on synthetic data.
    pub fn exact(mu_in: f64, snr: f64, sigma: f64) -> Self {
        Self {
            mu_in,
            s: f64::NAN,
            n: f64::NAN,
            snr,
            sigma,
        }
    }

    pub fn at(mut self, mu_in: f64) -> Self {
        self.mu_in = mu_in;
        self
    }
}

/// `(S - N) / N` with the noise counted in the same window length.
pub fn snr(s: f64, n: f64) -> Result<SnrPoint> {
    snr_with_raw(s, n, n)
}

/// As [`snr`], where the normalised noise `n` came from `n_raw` raw counts.
/// The error is first-order Poisson propagation on `S` and `n_raw`; a zero
/// signal count is given unit variance so the error never vanishes.
pub fn snr_with_raw(s: f64, n: f64, n_raw: f64) -> Result<SnrPoint> {
    if !(s >= 0.0 && n >= 0.0 && n_raw >= 0.0) {
        return Err(SimError::Domain("counts must be >= 0".into()));
    }
    if n == 0.0 || n_raw == 0.0 {
        return Err(SimError::UndefinedSnr);
    }
    let snr = (s - n) / n;
    let sigma = (s.max(1.0) + s * s / n_raw).sqrt() / n;
    Ok(SnrPoint {
        mu_in: f64::NAN,
        s,
        n,
        snr,
        sigma,
    })
}

/// SNR from a histogram: signal window against the noise window rescaled
/// to the signal window's length.
pub fn snr_from_histogram(hist: &CountHistogram, signal: Window, noise: Window) -> Result<SnrPoint> {
    let s = window_sum(hist, signal, signal.len_ns())?;
    let n = window_sum(hist, noise, s.used.len_ns())?;
    snr_with_raw(s.counts as f64, n.normalized, n.counts as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuOneFit {
    pub slope: f64,
    pub slope_sigma: f64,
    pub mu1: f64,
    pub mu1_sigma: f64,
    pub mode: FitMode,
}

/// Straight line through the origin, `snr = slope * mu_in`; `mu1 = 1/slope`.
pub fn fit_mu1(points: &[SnrPoint], mode: FitMode) -> Result<MuOneFit> {
    let used: Vec<&SnrPoint> = points.iter().filter(|p| p.mu_in > 0.0).collect();
    if used.is_empty() {
        return Err(SimError::NoSignal("no point with mu_in > 0".into()));
    }
    if used.iter().all(|p| p.snr == 0.0) {
        return Err(SimError::NoSignal("all SNR values are zero".into()));
    }
    let (slope, slope_sigma) = match mode {
        FitMode::Weighted => {
            if used.iter().any(|p| !(p.sigma > 0.0)) {
                return Err(SimError::invalid("sigma", "weighted fit needs sigma > 0"));
            }
            let sxx: f64 = used.iter().map(|p| p.mu_in * p.mu_in / (p.sigma * p.sigma)).sum();
            let sxy: f64 = used.iter().map(|p| p.mu_in * p.snr / (p.sigma * p.sigma)).sum();
            (sxy / sxx, 1.0 / sxx.sqrt())
        }
        FitMode::Unweighted => {
            let sxx: f64 = used.iter().map(|p| p.mu_in * p.mu_in).sum();
            let sxy: f64 = used.iter().map(|p| p.mu_in * p.snr).sum();
            let var: f64 = used.iter().map(|p| (p.mu_in * p.sigma).powi(2)).sum();
            (sxy / sxx, var.sqrt() / sxx)
        }
    };
    if !(slope > 0.0) {
        return Err(SimError::NoSignal(format!("fitted slope {slope} is not positive")));
    }
    Ok(MuOneFit {
        slope,
        slope_sigma,
        mu1: 1.0 / slope,
        mu1_sigma: slope_sigma / (slope * slope),
        mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub value: f64,
    pub sigma: f64,
}

/// Windows for [`efficiency_from_histograms`]. If `background` is set, its
/// rate is subtracted from both windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyWindows {
    pub input: Window,
    pub output: Window,
    pub background: Option<Window>,
}

/// `correction * output / input` over the two windows. `correction` moves
/// the ratio to the wanted reference plane (1 for a plain ratio).
pub fn efficiency_from_histograms(
    input: &CountHistogram,
    output: &CountHistogram,
    windows: &EfficiencyWindows,
    correction: f64,
) -> Result<Efficiency> {
    if input.bin_size_ns != output.bin_size_ns
        || input.start_ns != output.start_ns
        || input.pulses != output.pulses
        || input.counts.len() != output.counts.len()
    {
        return Err(SimError::invalid("histograms", "input and output configs differ"));
    }
    let net = |h: &CountHistogram, w: Window| -> Result<(f64, f64)> {
        let sum = window_sum(h, w, w.len_ns())?;
        let raw = sum.counts as f64;
        match windows.background {
            None => Ok((raw, raw)),
            Some(bw) => {
                let b = window_sum(h, bw, sum.used.len_ns())?;
                let var = raw + b.normalized * sum.used.len_ns() / b.used.len_ns();
                Ok((raw - b.normalized, var))
            }
        }
    };
    let (i, vi) = net(input, windows.input)?;
    let (o, vo) = net(output, windows.output)?;
    if !(i > 0.0) {
        return Err(SimError::NoSignal("input window is empty".into()));
    }
    let value = correction * o / i;
    let rel = (vo / (o * o).max(1.0) + vi / (i * i)).sqrt();
    Ok(Efficiency {
        value,
        sigma: value.abs().max(correction / i) * rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_definition() {
        let p = snr(220.0, 20.0).unwrap();
        assert_eq!(p.snr, 10.0);
        assert!(p.sigma > 0.0);
        assert_eq!(snr(5.0, 0.0), Err(SimError::UndefinedSnr));
    }

    #[test]
    fn fit_on_exact_points() {
        let pts = [
            SnrPoint::exact(0.5, 1.35, 0.1),
            SnrPoint::exact(1.0, 2.70, 0.1),
            SnrPoint::exact(2.0, 5.40, 0.2),
        ];
        for mode in [FitMode::Weighted, FitMode::Unweighted] {
            let f = fit_mu1(&pts, mode).unwrap();
            assert!((f.mu1 - 0.370).abs() < 5e-4, "{f:?}");
        }
        let one = fit_mu1(&[SnrPoint::exact(1.0, 1.0, 0.1)], FitMode::Weighted).unwrap();
        assert!((one.mu1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_no_signal() {
        let pts = [SnrPoint::exact(0.5, 0.0, 0.1), SnrPoint::exact(1.0, 0.0, 0.1)];
        assert!(matches!(fit_mu1(&pts, FitMode::Weighted), Err(SimError::NoSignal(_))));
        assert!(fit_mu1(&[], FitMode::Weighted).is_err());
    }

    #[test]
    fn scaled_counts_keep_snr() {
        let a = snr_with_raw(300.0, 40.0, 236.0).unwrap();
        let b = snr_with_raw(3000.0, 400.0, 2360.0).unwrap();
        assert!((a.snr - b.snr).abs() < 1e-12);
        assert!(b.sigma < a.sigma);
    }

    #[test]
    fn identical_histograms_have_unit_efficiency() {
        let h = CountHistogram::new(0.0, 10.0, (0..100).map(|k| 5 + k % 3).collect(), 10, 1);
        let w = EfficiencyWindows {
            input: Window::new(0.0, 400.0),
            output: Window::new(0.0, 400.0),
            background: None,
        };
        let e = efficiency_from_histograms(&h, &h, &w, 1.0).unwrap();
        assert_eq!(e.value, 1.0);
        let empty = CountHistogram::new(0.0, 10.0, vec![0; 100], 10, 1);
        assert!(efficiency_from_histograms(&empty, &h, &w, 1.0).is_err());
    }
}
