//! Monte Carlo start-stop detection: per-bin Poisson counts accumulated over
//! lots of pulses, detection windows, shutter and pump gating.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conversion::PumpSchedule;
use crate::error::{Result, SimError};
use crate::propagation::PulseEnvelope;

/// Half-open time interval `[start_ns, stop_ns)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start_ns: f64,
    pub stop_ns: f64,
}

impl Window {
    pub fn new(start_ns: f64, stop_ns: f64) -> Self {
        Self { start_ns, stop_ns }
    }

    /// Window of length `len_ns` centred on `center_ns`.
    pub fn centered(center_ns: f64, len_ns: f64) -> Self {
        Self::new(center_ns - len_ns / 2.0, center_ns + len_ns / 2.0)
    }

    pub fn len_ns(&self) -> f64 {
        self.stop_ns - self.start_ns
    }

    pub fn contains(&self, t_ns: f64) -> bool {
        t_ns >= self.start_ns && t_ns < self.stop_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub detector_efficiency: f64,
    pub dark_rate_hz: f64,
    pub bin_size_ns: f64,
    pub pulses_total: u64,
    pub pulse_rate_hz: f64,
    pub lots: u64,
    pub pulses_per_lot: u64,
    /// Start of the first histogram bin, relative to the input pulse peak.
    pub histogram_start_ns: f64,
    pub bins: usize,
    pub signal_window: Window,
    pub noise_window: Window,
    /// Noise counts are quoted per this window length.
    pub reference_window_ns: f64,
    /// Intervals during which the shutter is closed.
    #[serde(default)]
    pub shutter_closed: Vec<Window>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            detector_efficiency: 0.60,
            dark_rate_hz: 10.0,
            bin_size_ns: 10.24,
            pulses_total: 1_200_000,
            pulse_rate_hz: 5e4,
            lots: 200,
            pulses_per_lot: 6000,
            histogram_start_ns: -2048.0,
            bins: 2048,
            signal_window: Window::new(-200.0, 200.0),
            noise_window: Window::new(7480.0, 9840.0),
            reference_window_ns: 400.0,
            shutter_closed: Vec::new(),
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return Err(SimError::invalid("detection.detector_efficiency", "must be in (0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0) {
            return Err(SimError::invalid("detection.dark_rate_hz", "must be >= 0"));
        }
        if !(self.bin_size_ns > 0.0) || self.bins == 0 {
            return Err(SimError::invalid(
                "detection.bin_size_ns",
                "need positive bin size and count",
            ));
        }
        if self.lots * self.pulses_per_lot != self.pulses_total {
            return Err(SimError::invalid(
                "detection.pulses_total",
                format!(
                    "{} lots x {} pulses != {}",
                    self.lots, self.pulses_per_lot, self.pulses_total
                ),
            ));
        }
        if !(self.reference_window_ns > 0.0) {
            return Err(SimError::invalid("detection.reference_window_ns", "must be > 0"));
        }
        for (name, w) in [
            ("signal_window", self.signal_window),
            ("noise_window", self.noise_window),
        ] {
            if !(w.start_ns >= self.histogram_start_ns && w.stop_ns <= self.histogram_end_ns() && w.len_ns() > 0.0) {
                return Err(SimError::invalid(
                    &format!("detection.{name}"),
                    format!("[{}, {}) ns outside the histogram span", w.start_ns, w.stop_ns),
                ));
            }
        }
        Ok(())
    }

    pub fn histogram_end_ns(&self) -> f64 {
        self.histogram_start_ns + self.bins as f64 * self.bin_size_ns
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.histogram_start_ns + k as f64 * self.bin_size_ns
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.bin_start(k) + 0.5 * self.bin_size_ns
    }

    pub fn bin_index(&self, t_ns: f64) -> Option<usize> {
        let k = ((t_ns - self.histogram_start_ns) / self.bin_size_ns).floor();
        (k >= 0.0 && (k as usize) < self.bins).then_some(k as usize)
    }

    /// Dark counts per pulse per bin.
    pub fn dark_per_bin(&self) -> f64 {
        self.dark_rate_hz * self.bin_size_ns * 1e-9
    }

    pub fn shutter_open(&self, k: usize) -> bool {
        let t = self.bin_center(k);
        !self.shutter_closed.iter().any(|w| w.contains(t))
    }
}

/// Start-stop histogram accumulated over `pulses` trigger pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct CountHistogram {
    pub start_ns: f64,
    pub bin_size_ns: f64,
    pub counts: Vec<u64>,
    pub pulses: u64,
    pub seed: u64,
}

impl CountHistogram {
    pub fn new(start_ns: f64, bin_size_ns: f64, counts: Vec<u64>, pulses: u64, seed: u64) -> Self {
        Self {
            start_ns,
            bin_size_ns,
            counts,
            pulses,
            seed,
        }
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.start_ns + k as f64 * self.bin_size_ns
    }

    pub fn end_ns(&self) -> f64 {
        self.bin_start(self.counts.len())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Header `# bin_size_ns pulses seed` and one `bin_start_ns counts` row per bin.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# bin_size_ns={} pulses={} seed={} start_ns={}",
            self.bin_size_ns, self.pulses, self.seed, self.start_ns
        )?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(out, "{} {c}", self.bin_start(k))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: &str| SimError::Io(format!("histogram file: {m}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))??;
        let field = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(&format!("missing {key}")))
        };
        let num = |key: &str| -> Result<f64> { field(key)?.parse().map_err(|_| bad(key)) };
        let int = |key: &str| -> Result<u64> { field(key)?.parse().map_err(|_| bad(key)) };
        let (bin, pulses, seed, start) = (num("bin_size_ns")?, int("pulses")?, int("seed")?, num("start_ns")?);
        let mut counts = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let c = line
                .split_whitespace()
                .nth(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad("bad row"))?;
            counts.push(c);
        }
        Ok(Self::new(start, bin, counts, pulses, seed))
    }
}

/// Sums an envelope's photon numbers into the histogram bins.
pub fn bin_intensity(env: &PulseEnvelope, config: &DetectionConfig) -> Vec<f64> {
    let mut out = vec![0.0; config.bins];
    for (k, i) in env.intensity().into_iter().enumerate() {
        if let Some(b) = config.bin_index(env.time(k) + 1e-9 * env.dt_ns) {
            out[b] += i;
        }
    }
    out
}

fn lot_rng(seed: u64, lot: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(lot);
    rng
}

/// Draws the histogram. `signal` holds photons per pulse per bin arriving at
/// the detector, `noise_floor` detected noise counts per pulse per bin (dark
/// counts excluded; they are added here).
pub fn simulate_counts(
    signal: &[f64],
    noise_floor: &[f64],
    config: &DetectionConfig,
    seed: u64,
) -> Result<CountHistogram> {
    config.validate()?;
    if signal.len() != config.bins || noise_floor.len() != config.bins {
        return Err(SimError::invalid(
            "simulate_counts",
            "inputs must have one value per bin",
        ));
    }
    let dark = config.dark_per_bin();
    let mut lambda = Vec::with_capacity(config.bins);
    for k in 0..config.bins {
        let (s, n) = (signal[k], noise_floor[k]);
        if !(s >= 0.0 && n >= 0.0) {
            return Err(SimError::Domain(format!("negative expected counts in bin {k}")));
        }
        let l = if config.shutter_open(k) {
            (config.detector_efficiency * s + n + dark) * config.pulses_per_lot as f64
        } else {
            0.0
        };
        lambda.push(l);
    }
    let lots: Vec<Vec<u64>> = (0..config.lots)
        .into_par_iter()
        .map(|lot| {
            let mut rng = lot_rng(seed, lot);
            lambda
                .iter()
                .map(|&l| {
                    if l > 0.0 {
                        Poisson::new(l).unwrap().sample(&mut rng) as u64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let mut counts = vec![0u64; config.bins];
    for lot in &lots {
        counts.iter_mut().zip(lot).for_each(|(c, v)| *c += v);
    }
    Ok(CountHistogram::new(
        config.histogram_start_ns,
        config.bin_size_ns,
        counts,
        config.pulses_total,
        seed,
    ))
}

/// Counts in a window after snapping its edges to the nearest bin edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSum {
    pub counts: u64,
    /// Counts rescaled to the reference window length.
    pub normalized: f64,
    /// Window actually summed.
    pub used: Window,
}

/// Bin range `[a, b)` covering `window` after snapping its edges to the
/// nearest bin edges of a histogram starting at `start_ns`.
pub fn snap_window(start_ns: f64, bin_ns: f64, bins: usize, window: Window) -> Result<(usize, usize)> {
    let out_of_range = SimError::WindowOutOfRange {
        start_ns: window.start_ns,
        stop_ns: window.stop_ns,
    };
    let end = start_ns + bins as f64 * bin_ns;
    if window.start_ns < start_ns - bin_ns / 2.0 || window.stop_ns > end + bin_ns / 2.0 {
        return Err(out_of_range);
    }
    let a = ((window.start_ns - start_ns) / bin_ns).round().max(0.0) as usize;
    let b = (((window.stop_ns - start_ns) / bin_ns).round() as usize).min(bins);
    if b <= a {
        return Err(out_of_range);
    }
    Ok((a, b))
}

pub fn window_sum(hist: &CountHistogram, window: Window, reference_ns: f64) -> Result<WindowSum> {
    let (a, b) = snap_window(hist.start_ns, hist.bin_size_ns, hist.counts.len(), window)?;
    let counts: u64 = hist.counts[a..b].iter().sum();
    let used = Window::new(hist.bin_start(a), hist.bin_start(b));
    Ok(WindowSum {
        counts,
        normalized: counts as f64 * reference_ns / used.len_ns(),
        used,
    })
}

/// Divides the pump-induced noise of every bin whose centre lies in the gate.
pub fn apply_gating(
    pump_noise: &[f64],
    config: &DetectionConfig,
    schedule: &PumpSchedule,
    suppression: f64,
) -> Result<Vec<f64>> {
    if !(suppression >= 1.0) {
        return Err(SimError::invalid("gating_suppression", "must be >= 1"));
    }
    Ok(pump_noise
        .iter()
        .enumerate()
        .map(|(k, n)| {
            if schedule.is_gated(config.bin_center(k)) {
                n / suppression
            } else {
                *n
            }
        })
        .collect())
}
