//! Uniform frequency/time grids, sampled spectral functions and FFT helpers.
//!
//! Frequencies are in MHz, times in ns. A grid of `n` samples with frequency
//! step `df` pairs with a time grid of step `1e3 / (n * df)` ns, so the
//! propagation and the counting histograms can share bins exactly.

use std::cell::RefCell;
use std::io::Write;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Uniform frequency grid centred on zero detuning: sample `i` sits at
/// `(i - n/2) * step_mhz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    n: usize,
    step_mhz: f64,
}

impl FrequencyGrid {
    pub fn new(n: usize, step_mhz: f64) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(SimError::invalid("grid.n", "need an even sample count >= 4"));
        }
        if !(step_mhz > 0.0 && step_mhz.is_finite()) {
            return Err(SimError::invalid("grid.step_mhz", "must be positive"));
        }
        Ok(Self { n, step_mhz })
    }

    /// Grid whose conjugate time grid has step `dt_ns`.
    pub fn from_time_step(n: usize, dt_ns: f64) -> Result<Self> {
        if !(dt_ns > 0.0) {
            return Err(SimError::invalid("grid.dt_ns", "must be positive"));
        }
        Self::new(n, 1e3 / (n as f64 * dt_ns))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn step_mhz(&self) -> f64 {
        self.step_mhz
    }

    pub fn frequency(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.step_mhz
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.frequency(i))
    }

    pub fn min_mhz(&self) -> f64 {
        self.frequency(0)
    }

    pub fn max_mhz(&self) -> f64 {
        self.frequency(self.n - 1)
    }

    pub fn span_mhz(&self) -> f64 {
        self.n as f64 * self.step_mhz
    }

    /// Nearest sample index, clamped to the grid.
    pub fn nearest_index(&self, f_mhz: f64) -> usize {
        let i = (f_mhz / self.step_mhz).round() + (self.n / 2) as f64;
        i.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Signed shift, in samples, closest to `delta_mhz`.
    pub fn shift_samples(&self, delta_mhz: f64) -> i64 {
        (delta_mhz / self.step_mhz).round() as i64
    }

    /// Time step of the conjugate grid.
    pub fn time_step_ns(&self) -> f64 {
        1e3 / (self.n as f64 * self.step_mhz)
    }

    /// Period of the conjugate time grid.
    pub fn time_period_ns(&self) -> f64 {
        1e3 / self.step_mhz
    }

    /// Samples per `width_mhz`.
    pub fn samples_per(&self, width_mhz: f64) -> f64 {
        width_mhz / self.step_mhz
    }
}

/// Values sampled on a [`FrequencyGrid`] in natural (ascending-frequency) order.
///
/// `min_feature_mhz` records the narrowest designed feature (the comb tooth
/// width) when known, so that consumers can check grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFunction<T = f64> {
    pub grid: FrequencyGrid,
    pub values: Vec<T>,
    pub min_feature_mhz: Option<f64>,
}

impl<T: Clone> SpectralFunction<T> {
    pub fn new(grid: FrequencyGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SimError::invalid(
                "values",
                format!("length {} does not match grid {}", values.len(), grid.len()),
            ));
        }
        Ok(Self {
            grid,
            values,
            min_feature_mhz: None,
        })
    }

    pub fn constant(grid: FrequencyGrid, value: T) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
            min_feature_mhz: None,
        }
    }

    pub fn with_min_feature(mut self, width_mhz: f64) -> Self {
        self.min_feature_mhz = Some(width_mhz);
        self
    }

    pub fn at(&self, f_mhz: f64) -> T {
        self.values[self.grid.nearest_index(f_mhz)].clone()
    }
}

impl SpectralFunction<f64> {
    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            values: grid.frequencies().map(f).collect(),
            min_feature_mhz: None,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * factor).collect(),
            min_feature_mhz: self.min_feature_mhz,
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Mean over `[lo, hi]` MHz.
    pub fn mean_over(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.grid.nearest_index(lo), self.grid.nearest_index(hi));
        let slice = &self.values[a..=b];
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    /// Maximum over `[lo, hi]` MHz.
    pub fn max_in(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.grid.nearest_index(lo), self.grid.nearest_index(hi));
        self.values[a..=b].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `detuning_MHz optical_depth` rows.
    pub fn write_two_column<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# detuning_MHz optical_depth")?;
        for (f, d) in self.grid.frequencies().zip(&self.values) {
            writeln!(out, "{f:.6} {d:.9e}")?;
        }
        Ok(())
    }
}

/// Gaussian smoothing with FWHM `fwhm_mhz`, edge values extended (not wrapped).
pub fn gaussian_smooth(values: &[f64], step_mhz: f64, fwhm_mhz: f64) -> Vec<f64> {
    if fwhm_mhz <= 0.0 {
        return values.to_vec();
    }
    let sigma = fwhm_mhz / (8.0 * std::f64::consts::LN_2).sqrt() / step_mhz;
    let half = (8.0 * sigma).ceil() as i64 + 1;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let n = values.len() as i64;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| {
                    let idx = (i + j as i64 - half).clamp(0, n - 1);
                    w * values[idx as usize]
                })
                .sum()
        })
        .collect()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward FFT (`X_k = sum x_n e^{-2 pi i k n / N}`), in place.
pub fn fft(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

/// Inverse FFT normalised by `1/N`, in place.
pub fn ifft(buf: &mut [Complex64]) {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Natural (ascending-frequency) order to FFT order.
pub fn ifftshift<T: Clone>(natural: &[T]) -> Vec<T> {
    let h = natural.len() / 2;
    natural[h..].iter().chain(&natural[..h]).cloned().collect()
}

/// FFT order to natural order.
pub fn fftshift<T: Clone>(fft_order: &[T]) -> Vec<T> {
    let h = fft_order.len() - fft_order.len() / 2;
    fft_order[h..].iter().chain(&fft_order[..h]).cloned().collect()
}
