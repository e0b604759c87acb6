//! Spectral preparation of the inhomogeneously broadened line: pit, burn-back,
//! class cleaning and comb tailoring.
//!
//! Each ion is labelled by its inhomogeneous offset `delta`. Its transition
//! from ground level `g` to excited level `e` sits at
//! `delta + E_e - E_g`, so the nine "classes" seen at one probe frequency are
//! nine different ion offsets. The ensemble therefore stores three ground
//! populations per ion offset; the class view is derived.
//!
//! Level index 0, 1, 2 means ±1/2, ±3/2, ±5/2 for both ground and excited
//! manifolds.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::spectrum::{gaussian_smooth, FrequencyGrid, SpectralFunction};

pub const HALF: usize = 0;
pub const THREE_HALVES: usize = 1;
pub const FIVE_HALVES: usize = 2;

/// Ground level that stores the comb.
pub const STORAGE_GROUND: usize = HALF;
/// Excited level of the storage transition.
pub const STORAGE_EXCITED: usize = THREE_HALVES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperfineStructure {
    /// `[E(3/2g) - E(5/2g), E(1/2g) - E(3/2g)]` in MHz.
    pub ground_splittings_mhz: [f64; 2],
    /// `[E(3/2e) - E(1/2e), E(5/2e) - E(3/2e)]` in MHz.
    pub excited_splittings_mhz: [f64; 2],
    /// Relative strengths, row = ground level, column = excited level.
    pub oscillator_strengths: [[f64; 3]; 3],
    pub t1_opt_us: f64,
    pub t1_spin_s: f64,
}

impl Default for HyperfineStructure {
    fn default() -> Self {
        Self {
            ground_splittings_mhz: [17.3, 10.2],
            excited_splittings_mhz: [4.8, 4.6],
            oscillator_strengths: [[1.0 / 3.0; 3]; 3],
            t1_opt_us: 164.0,
            t1_spin_s: 100.0,
        }
    }
}

impl HyperfineStructure {
    pub fn validate(&self) -> Result<()> {
        let all = self.ground_splittings_mhz.iter().chain(&self.excited_splittings_mhz);
        if all.into_iter().any(|s| !(*s > 0.0)) {
            return Err(SimError::invalid("hyperfine", "splittings must be > 0"));
        }
        for (g, row) in self.oscillator_strengths.iter().enumerate() {
            if row.iter().any(|s| !(*s >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(SimError::invalid(
                    "hyperfine.oscillator_strengths",
                    format!("row {g} must be non-negative and sum to 1"),
                ));
            }
        }
        if !(self.t1_opt_us > 0.0 && self.t1_spin_s > 0.0) {
            return Err(SimError::invalid("hyperfine", "lifetimes must be > 0"));
        }
        Ok(())
    }

    /// Ground energies `[1/2g, 3/2g, 5/2g]`, ±5/2g at zero.
    pub fn ground_energies(&self) -> [f64; 3] {
        let [a, b] = self.ground_splittings_mhz;
        [a + b, a, 0.0]
    }

    /// Excited energies `[1/2e, 3/2e, 5/2e]`, ±1/2e at zero.
    pub fn excited_energies(&self) -> [f64; 3] {
        let [a, b] = self.excited_splittings_mhz;
        [0.0, a, a + b]
    }

    /// Transition frequency minus ion offset.
    pub fn transition_shift(&self, g: usize, e: usize) -> f64 {
        self.excited_energies()[e] - self.ground_energies()[g]
    }
}

/// Comb tooth lineshape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToothShape {
    Square,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombSpec {
    pub center_mhz: f64,
    pub bandwidth_mhz: f64,
    /// Tooth spacing Δ (ordinary frequency); storage time is `1/Δ`.
    pub spacing_mhz: f64,
    /// Tooth width γ (full width for square, FWHM for Gaussian).
    pub tooth_width_mhz: f64,
    pub lineshape: ToothShape,
    /// Depth between teeth inside the band.
    pub background_depth: f64,
    /// Tooth peak depth; defaults to the full single-class feature.
    pub peak_depth: Option<f64>,
    /// Narrowest tooth the burn laser can write.
    pub gamma_min_mhz: f64,
}

impl Default for CombSpec {
    fn default() -> Self {
        Self {
            center_mhz: 2.5,
            bandwidth_mhz: 4.0,
            spacing_mhz: 0.625,
            tooth_width_mhz: 0.625 / 2.5,
            lineshape: ToothShape::Square,
            background_depth: 0.0,
            peak_depth: None,
            gamma_min_mhz: 0.095,
        }
    }
}

impl CombSpec {
    /// Comb with spacing `1/tau` and tooth width `spacing / finesse`.
    pub fn for_storage_time(center_mhz: f64, bandwidth_mhz: f64, tau_ns: f64, finesse: f64) -> Self {
        let spacing_mhz = 1e3 / tau_ns;
        Self {
            center_mhz,
            bandwidth_mhz,
            spacing_mhz,
            tooth_width_mhz: spacing_mhz / finesse,
            ..Self::default()
        }
    }

    pub fn finesse(&self) -> f64 {
        self.spacing_mhz / self.tooth_width_mhz
    }

    pub fn storage_time_ns(&self) -> f64 {
        1e3 / self.spacing_mhz
    }

    pub fn with_finesse(mut self, finesse: f64) -> Self {
        self.tooth_width_mhz = self.spacing_mhz / finesse;
        self
    }

    pub fn with_peak_depth(mut self, d: f64) -> Self {
        self.peak_depth = Some(d);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_mhz > 0.0 && self.tooth_width_mhz > 0.0) {
            return Err(SimError::invalid("comb", "spacing and tooth width must be > 0"));
        }
        if !(self.finesse() > 1.0) {
            return Err(SimError::invalid(
                "comb.finesse",
                format!("F = {:.3} must exceed 1", self.finesse()),
            ));
        }
        if !(self.bandwidth_mhz / self.spacing_mhz >= 2.0 - 1e-12) {
            return Err(SimError::invalid("comb.bandwidth_mhz", "need at least two teeth"));
        }
        if !(self.background_depth >= 0.0) {
            return Err(SimError::invalid("comb.background_depth", "must be >= 0"));
        }
        if let Some(d) = self.peak_depth {
            if !(d >= self.background_depth) {
                return Err(SimError::invalid("comb.peak_depth", "must be >= background depth"));
            }
        }
        if self.tooth_width_mhz < self.gamma_min_mhz {
            return Err(SimError::invalid(
                "comb.tooth_width_mhz",
                format!(
                    "{:.4} MHz is below the minimum writable width {:.4} MHz",
                    self.tooth_width_mhz, self.gamma_min_mhz
                ),
            ));
        }
        Ok(())
    }

    fn tooth_indices(&self) -> i64 {
        (self.bandwidth_mhz / 2.0 / self.spacing_mhz + 1e-9).floor() as i64
    }

    /// Normalised comb shape in `[0, 1]` at detuning `f_mhz`, zero outside the band.
    pub fn shape(&self, f_mhz: f64) -> f64 {
        let x = f_mhz - self.center_mhz;
        if x.abs() > self.bandwidth_mhz / 2.0 {
            return 0.0;
        }
        let k = self.tooth_indices();
        let g = self.tooth_width_mhz;
        match self.lineshape {
            ToothShape::Square => {
                let nearest = (x / self.spacing_mhz).round().clamp(-k as f64, k as f64);
                let dx = x - nearest * self.spacing_mhz;
                if dx.abs() <= g / 2.0 + 1e-12 {
                    1.0
                } else {
                    0.0
                }
            }
            ToothShape::Gaussian => {
                let c = 4.0 * std::f64::consts::LN_2 / (g * g);
                let s: f64 = (-k..=k)
                    .map(|i| {
                        let dx = x - i as f64 * self.spacing_mhz;
                        (-c * dx * dx).exp()
                    })
                    .sum();
                s.min(1.0)
            }
        }
    }

    /// Depth profile inside the band: background plus teeth.
    pub fn depth(&self, f_mhz: f64, peak: f64) -> f64 {
        let x = f_mhz - self.center_mhz;
        if x.abs() > self.bandwidth_mhz / 2.0 {
            return 0.0;
        }
        self.background_depth + (peak - self.background_depth) * self.shape(f_mhz)
    }
}

/// Synthetic comb: flat background `d_background` outside the pit, zero in
/// the pit, plus the comb, then smoothed with `smoothing_fwhm_mhz`.
pub fn comb_profile(
    grid: FrequencyGrid,
    spec: &CombSpec,
    peak_depth: f64,
    d_background: f64,
    pit_mhz: (f64, f64),
    smoothing_fwhm_mhz: f64,
) -> Result<SpectralFunction> {
    spec.validate()?;
    let raw: Vec<f64> = grid
        .frequencies()
        .map(|f| {
            let bg = if f > pit_mhz.0 && f < pit_mhz.1 {
                0.0
            } else {
                d_background
            };
            bg + spec.depth(f, peak_depth)
        })
        .collect();
    let values = gaussian_smooth(&raw, grid.step_mhz(), smoothing_fwhm_mhz);
    Ok(SpectralFunction::new(grid, values)?.with_min_feature(spec.tooth_width_mhz))
}

/// Pit, burn-back and cleaning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreparationParams {
    pub pit_center_mhz: f64,
    pub pit_width_mhz: f64,
    /// Burn-back sweep centre relative to the pit centre.
    pub burn_back_offset_mhz: f64,
    pub burn_back_width_mhz: f64,
    pub fluence: f64,
    /// Burn-back plus clean repetitions.
    pub cycles: usize,
}

impl Default for PreparationParams {
    fn default() -> Self {
        Self {
            pit_center_mhz: 0.0,
            pit_width_mhz: 12.0,
            burn_back_offset_mhz: 30.0,
            burn_back_width_mhz: 4.0,
            fluence: 30.0,
            cycles: 4,
        }
    }
}

/// Steps applied so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreparationRecord {
    pub pit: Option<(f64, f64)>,
    pub burn_back: Option<(f64, f64)>,
    pub cleanings: usize,
    pub comb: Option<CombSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IonEnsemble {
    grid: FrequencyGrid,
    hyperfine: HyperfineStructure,
    d_max: f64,
    smoothing_fwhm_mhz: f64,
    /// Offset index (in grid steps) of the first stored ion.
    lo: i64,
    /// Max over transitions of the rounded shift, in samples.
    max_shift: i64,
    shifts: [[i64; 3]; 3],
    pop: [Vec<f64>; 3],
    designated: Vec<bool>,
    record: PreparationRecord,
}

fn rect(lo: f64, hi: f64) -> impl Fn(f64) -> f64 {
    move |x| if x >= lo && x <= hi { 1.0 } else { 0.0 }
}

impl IonEnsemble {
    /// Fresh ensemble with every ground level equally populated.
    pub fn new(grid: FrequencyGrid, hyperfine: HyperfineStructure, d_max: f64) -> Result<Self> {
        hyperfine.validate()?;
        if !(d_max >= 0.0) {
            return Err(SimError::invalid("memory.d_max", "must be >= 0"));
        }
        let mut shifts = [[0i64; 3]; 3];
        for (g, row) in shifts.iter_mut().enumerate() {
            for (e, k) in row.iter_mut().enumerate() {
                let eg = grid.shift_samples(hyperfine.ground_energies()[g]);
                let ee = grid.shift_samples(hyperfine.excited_energies()[e]);
                *k = ee - eg;
            }
        }
        let flat = shifts.iter().flatten();
        let max_shift = *flat.clone().max().unwrap();
        let min_shift = *flat.min().unwrap();
        let n = grid.len() as i64;
        let m = (n + max_shift - min_shift) as usize;
        Ok(Self {
            grid,
            hyperfine,
            d_max,
            smoothing_fwhm_mhz: 0.02,
            lo: -n / 2 - max_shift,
            max_shift,
            shifts,
            pop: std::array::from_fn(|_| vec![1.0 / 3.0; m]),
            designated: vec![false; m],
            record: PreparationRecord::default(),
        })
    }

    pub fn with_smoothing(mut self, fwhm_mhz: f64) -> Self {
        self.smoothing_fwhm_mhz = fwhm_mhz;
        self
    }

    pub fn grid(&self) -> FrequencyGrid {
        self.grid
    }

    pub fn hyperfine(&self) -> &HyperfineStructure {
        &self.hyperfine
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn record(&self) -> &PreparationRecord {
        &self.record
    }

    pub fn ion_count(&self) -> usize {
        self.designated.len()
    }

    /// Ground populations of ion `j`.
    pub fn populations(&self, j: usize) -> [f64; 3] {
        [self.pop[0][j], self.pop[1][j], self.pop[2][j]]
    }

    /// Population of ground level `g` across all ion offsets.
    pub fn ground_population(&self, g: usize) -> &[f64] {
        &self.pop[g]
    }

    pub fn designated(&self) -> &[bool] {
        &self.designated
    }

    /// Transition frequency `(g, e)` of ion `j`.
    pub fn transition_frequency(&self, g: usize, e: usize, j: usize) -> f64 {
        (self.lo + j as i64 + self.shifts[g][e]) as f64 * self.grid.step_mhz()
    }

    /// Ion index seen by probe sample `i` through transition `(g, e)`.
    fn ion_at(&self, g: usize, e: usize, i: usize) -> usize {
        (i as i64 - self.shifts[g][e] + self.max_shift) as usize
    }

    fn check_band(&self, lo: f64, hi: f64, what: &str) -> Result<()> {
        if hi - lo > self.grid.span_mhz() || lo < self.grid.min_mhz() || hi > self.grid.max_mhz() {
            return Err(SimError::invalid(
                what,
                format!("band [{lo}, {hi}] MHz exceeds the grid"),
            ));
        }
        Ok(())
    }

    /// Steady-state optical pumping with laser spectrum `exposure` (values in
    /// `[0, 1]`). Ground level `g` of each ion keeps `exp(-fluence a_g)` where
    /// `a_g` is its strongest resonant exposure; the rest is shared among the
    /// other levels in proportion to how dark they are. Levels flagged in
    /// `protect` are treated as dark.
    pub fn optical_pump(
        &mut self,
        exposure: impl Fn(f64) -> f64,
        fluence: f64,
        protect: Option<(usize, &[bool])>,
    ) -> Result<()> {
        if !(fluence >= 0.0) {
            return Err(SimError::invalid("fluence", "must be >= 0"));
        }
        if fluence == 0.0 {
            return Ok(());
        }
        for j in 0..self.ion_count() {
            let mut a = [0.0f64; 3];
            for (g, ag) in a.iter_mut().enumerate() {
                if matches!(protect, Some((pg, mask)) if pg == g && mask[j]) {
                    continue;
                }
                *ag = (0..3)
                    .map(|e| exposure(self.transition_frequency(g, e, j)).clamp(0.0, 1.0))
                    .fold(0.0, f64::max);
            }
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            let p = self.populations(j);
            let keep = a.map(|ag| {
                if fluence.is_infinite() {
                    if ag == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-fluence * ag).exp()
                }
            });
            let mut next = [p[0] * keep[0], p[1] * keep[1], p[2] * keep[2]];
            for g in 0..3 {
                let moved = p[g] * (1.0 - keep[g]);
                if moved == 0.0 {
                    continue;
                }
                let weights: [f64; 3] = std::array::from_fn(|k| if k == g { 0.0 } else { 1.0 - a[k] });
                let total: f64 = weights.iter().sum();
                if total > 1e-12 {
                    for k in 0..3 {
                        next[k] += moved * weights[k] / total;
                    }
                } else {
                    next[g] += moved;
                }
            }
            for g in 0..3 {
                self.pop[g][j] = next[g];
            }
        }
        Ok(())
    }

    /// Empties every level resonant inside `[center - width/2, center + width/2]`.
    pub fn burn_pit(&mut self, center_mhz: f64, width_mhz: f64, fluence: f64) -> Result<()> {
        if !(width_mhz > 0.0) {
            return Err(SimError::invalid("pit.width_mhz", "must be > 0"));
        }
        let (lo, hi) = (center_mhz - width_mhz / 2.0, center_mhz + width_mhz / 2.0);
        self.check_band(lo, hi, "pit")?;
        self.optical_pump(rect(lo, hi), fluence, None)?;
        self.record.pit = Some((lo, hi));
        Ok(())
    }

    /// Offset between a burn-back frequency and the storage transition of
    /// the ion it selects through `±5/2g -> ±3/2e`.
    fn burn_back_to_storage(&self) -> f64 {
        self.hyperfine.transition_shift(STORAGE_GROUND, STORAGE_EXCITED)
            - self.hyperfine.transition_shift(FIVE_HALVES, STORAGE_EXCITED)
    }

    /// Sweeps `[center - width/2, center + width/2]`, pumping resonant ions
    /// back into the pit. Ions driven on `±5/2g -> ±3/2e` form the designated
    /// storage class.
    pub fn burn_back(&mut self, center_mhz: f64, width_mhz: f64, fluence: f64) -> Result<()> {
        if self.record.pit.is_none() {
            return Err(SimError::PreparationOrder("burn-back needs a pit".into()));
        }
        if !(width_mhz >= 0.0) {
            return Err(SimError::invalid("burn_back.width_mhz", "must be >= 0"));
        }
        let (lo, hi) = (center_mhz - width_mhz / 2.0, center_mhz + width_mhz / 2.0);
        self.check_band(lo, hi, "burn_back")?;
        if width_mhz == 0.0 {
            return Ok(());
        }
        self.optical_pump(rect(lo, hi), fluence, None)?;
        let shift = self.burn_back_to_storage();
        for j in 0..self.ion_count() {
            let nu = self.transition_frequency(STORAGE_GROUND, STORAGE_EXCITED, j);
            self.designated[j] = nu >= lo + shift && nu <= hi + shift;
        }
        self.record.burn_back = Some((lo, hi));
        Ok(())
    }

    /// Storage-transition band of the designated class.
    pub fn class_band(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.record.burn_back?;
        let s = self.burn_back_to_storage();
        Some((lo + s, hi + s))
    }

    fn class_transition_span(&self, g: usize, e: usize) -> Option<(f64, f64)> {
        let nus = self
            .designated
            .iter()
            .enumerate()
            .filter(|(_, d)| **d)
            .map(|(j, _)| self.transition_frequency(g, e, j));
        nus.fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((a, b)) => Some((a.min(v), b.max(v))),
        })
    }

    /// Empties everything absorbing in the pit and in the designated class's
    /// `±3/2g -> ±3/2e` band, except the designated `±1/2g` population.
    pub fn clean_class(&mut self) -> Result<()> {
        let Some((plo, phi)) = self.record.pit else {
            return Err(SimError::PreparationOrder("cleaning needs a pit".into()));
        };
        if self.record.burn_back.is_none() {
            return Err(SimError::PreparationOrder("cleaning needs a burn-back".into()));
        }
        let band = self.class_transition_span(THREE_HALVES, STORAGE_EXCITED);
        let exposure = move |x: f64| {
            let in_pit = x >= plo && x <= phi;
            let in_band = band.is_some_and(|(a, b)| x >= a && x <= b);
            if in_pit || in_band {
                1.0
            } else {
                0.0
            }
        };
        let mask = self.designated.clone();
        self.optical_pump(exposure, f64::INFINITY, Some((STORAGE_GROUND, &mask)))?;
        self.record.cleaning_done();
        Ok(())
    }

    /// Pit, then `cycles` rounds of burn-back and cleaning.
    pub fn prepare(&mut self, p: &PreparationParams) -> Result<()> {
        self.burn_pit(p.pit_center_mhz, p.pit_width_mhz, p.fluence)?;
        for _ in 0..p.cycles {
            self.burn_back(
                p.pit_center_mhz + p.burn_back_offset_mhz,
                p.burn_back_width_mhz,
                p.fluence,
            )?;
            self.clean_class()?;
        }
        Ok(())
    }

    /// Largest tooth depth the designated class can supply.
    pub fn feature_depth(&self) -> f64 {
        let s = self.hyperfine.oscillator_strengths[STORAGE_GROUND][STORAGE_EXCITED];
        self.designated
            .iter()
            .zip(&self.pop[STORAGE_GROUND])
            .filter(|(d, _)| **d)
            .map(|(_, p)| self.d_max * s * p)
            .fold(0.0, f64::max)
    }

    /// Burns the designated class down to the comb. Removed population is
    /// split between `±3/2g` and `±5/2g`.
    pub fn tailor_comb(&mut self, spec: &CombSpec) -> Result<()> {
        if self.record.cleanings == 0 {
            return Err(SimError::PreparationOrder(
                "comb tailoring needs a cleaned class".into(),
            ));
        }
        spec.validate()?;
        let s = self.hyperfine.oscillator_strengths[STORAGE_GROUND][STORAGE_EXCITED];
        let peak = spec.peak_depth.unwrap_or(self.d_max * s);
        for j in 0..self.ion_count() {
            if !self.designated[j] {
                continue;
            }
            let current = self.d_max * s * self.pop[STORAGE_GROUND][j];
            if current <= 0.0 {
                continue;
            }
            let nu = self.transition_frequency(STORAGE_GROUND, STORAGE_EXCITED, j);
            let keep = (spec.depth(nu, peak) / current).min(1.0);
            let moved = self.pop[STORAGE_GROUND][j] * (1.0 - keep);
            self.pop[STORAGE_GROUND][j] -= moved;
            self.pop[THREE_HALVES][j] += moved / 2.0;
            self.pop[FIVE_HALVES][j] += moved / 2.0;
        }
        self.record.comb = Some(*spec);
        Ok(())
    }

    /// Unsmoothed optical depth contributed through transition `(g, e)`.
    pub fn transition_absorption(&self, g: usize, e: usize) -> SpectralFunction {
        let w = self.d_max * self.hyperfine.oscillator_strengths[g][e];
        let values = (0..self.grid.len())
            .map(|i| w * self.pop[g][self.ion_at(g, e, i)])
            .collect();
        SpectralFunction {
            grid: self.grid,
            values,
            min_feature_mhz: None,
        }
    }

    /// Unsmoothed optical depth of the designated class through `(g, e)`.
    pub fn class_absorption(&self, g: usize, e: usize) -> SpectralFunction {
        let w = self.d_max * self.hyperfine.oscillator_strengths[g][e];
        let values = (0..self.grid.len())
            .map(|i| {
                let j = self.ion_at(g, e, i);
                if self.designated[j] {
                    w * self.pop[g][j]
                } else {
                    0.0
                }
            })
            .collect();
        SpectralFunction {
            grid: self.grid,
            values,
            min_feature_mhz: None,
        }
    }

    /// Optical depth seen by a weak probe, smoothed by the homogeneous and
    /// burn-laser linewidth.
    pub fn absorption_profile(&self) -> SpectralFunction {
        let mut raw = vec![0.0; self.grid.len()];
        for g in 0..3 {
            for e in 0..3 {
                let t = self.transition_absorption(g, e);
                raw.iter_mut().zip(&t.values).for_each(|(r, v)| *r += v);
            }
        }
        let mut values = gaussian_smooth(&raw, self.grid.step_mhz(), self.smoothing_fwhm_mhz);
        taper_edges(&mut values, self.d_max);
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        SpectralFunction {
            grid: self.grid,
            values,
            min_feature_mhz: self.record.comb.map(|c| c.tooth_width_mhz),
        }
    }
}

/// Blends the outer eighth of the band on each side to `background` with a
/// raised cosine, so the profile is smooth across the periodic wrap of the grid.
fn taper_edges(values: &mut [f64], background: f64) {
    let n = values.len();
    let w = n / 8;
    for k in 0..w {
        let u = (k as f64 + 0.5) / w as f64;
        let keep = 0.5 * (1.0 - (std::f64::consts::PI * u).cos());
        for i in [k, n - 1 - k] {
            values[i] = keep * values[i] + (1.0 - keep) * background;
        }
    }
}

impl PreparationRecord {
    fn cleaning_done(&mut self) {
        self.cleanings += 1;
    }
}

/// Value-style wrappers around the in-place ensemble steps.
pub fn burn_pit(ens: &IonEnsemble, center_mhz: f64, width_mhz: f64, fluence: f64) -> Result<IonEnsemble> {
    let mut out = ens.clone();
    out.burn_pit(center_mhz, width_mhz, fluence)?;
    Ok(out)
}

pub fn burn_back(ens: &IonEnsemble, center_mhz: f64, width_mhz: f64, fluence: f64) -> Result<IonEnsemble> {
    let mut out = ens.clone();
    out.burn_back(center_mhz, width_mhz, fluence)?;
    Ok(out)
}

pub fn clean_class(ens: &IonEnsemble) -> Result<IonEnsemble> {
    let mut out = ens.clone();
    out.clean_class()?;
    Ok(out)
}

pub fn tailor_comb(ens: &IonEnsemble, spec: &CombSpec) -> Result<IonEnsemble> {
    let mut out = ens.clone();
    out.tailor_comb(spec)?;
    Ok(out)
}

pub fn absorption_profile(ens: &IonEnsemble) -> SpectralFunction {
    ens.absorption_profile()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> FrequencyGrid {
        FrequencyGrid::from_time_step(16384, 10.24).unwrap()
    }

    fn ensemble() -> IonEnsemble {
        IonEnsemble::new(small_grid(), HyperfineStructure::default(), 11.5).unwrap()
    }

    fn prepared() -> IonEnsemble {
        let mut e = ensemble();
        e.prepare(&PreparationParams::default()).unwrap();
        e
    }

    #[test]
    fn level_energies() {
        let h = HyperfineStructure::default();
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(h.ground_energies(), [27.5, 17.3, 0.0]));
        assert!(close(h.excited_energies(), [0.0, 4.8, 9.4]));
        assert!((h.transition_shift(HALF, THREE_HALVES) + 22.7).abs() < 1e-12);
    }

    #[test]
    fn bad_hyperfine_rejected() {
        let mut h = HyperfineStructure::default();
        h.oscillator_strengths[1][2] = 0.5;
        assert!(h.validate().is_err());
        h = HyperfineStructure::default();
        h.ground_splittings_mhz[0] = 0.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn fresh_profile_is_flat() {
        let d = ensemble().absorption_profile();
        assert!(d.values.iter().all(|v| (v - 11.5).abs() < 1e-9));
    }

    #[test]
    fn zero_fluence_is_identity() {
        let e = ensemble();
        assert_eq!(burn_pit(&e, 0.0, 12.0, 0.0).unwrap().pop, e.pop);
    }

    #[test]
    fn pit_residual_bounded_by_fluence() {
        let e = burn_pit(&ensemble(), 0.0, 12.0, 5.0).unwrap();
        let d = e.absorption_profile();
        assert!(d.mean_over(-5.0, 5.0) <= 11.5 * (-5.0f64).exp() + 1e-9);
        let inf = burn_pit(&ensemble(), 0.0, 12.0, f64::INFINITY).unwrap();
        assert!(inf.absorption_profile().max_in(-5.0, 5.0) < 1e-9);
    }

    #[test]
    fn pit_errors() {
        let e = ensemble();
        assert!(burn_pit(&e, 0.0, 0.0, 1.0).is_err());
        assert!(burn_pit(&e, 0.0, 1e4, 1.0).is_err());
        assert!(matches!(
            burn_back(&e, 30.0, 4.0, 30.0),
            Err(SimError::PreparationOrder(_))
        ));
        assert!(matches!(clean_class(&e), Err(SimError::PreparationOrder(_))));
        assert!(matches!(
            tailor_comb(&e, &CombSpec::default()),
            Err(SimError::PreparationOrder(_))
        ));
    }

    #[test]
    fn populations_conserved_per_ion() {
        let e = prepared();
        for j in 0..e.ion_count() {
            let s: f64 = e.populations(j).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_width_burn_back_is_noop() {
        let pit = burn_pit(&ensemble(), 0.0, 12.0, 30.0).unwrap();
        assert_eq!(burn_back(&pit, 30.0, 0.0, 30.0).unwrap().pop, pit.pop);
    }

    #[test]
    fn single_class_feature() {
        let e = prepared();
        let (lo, hi) = e.class_band().unwrap();
        assert!((lo - 0.5).abs() < 1e-9 && (hi - 4.5).abs() < 1e-9);
        let d = e.absorption_profile();
        assert!(d.mean_over(1.0, 4.0) > 3.7, "{}", d.mean_over(1.0, 4.0));
        assert!(e.feature_depth() <= 11.5 / 3.0 + 1e-12);
        let mut before = burn_pit(&ensemble(), 0.0, 12.0, 30.0).unwrap();
        before.burn_back(30.0, 4.0, 30.0).unwrap();
        let pre = before.class_absorption(THREE_HALVES, THREE_HALVES).max_in(10.7, 14.7);
        let post = e.class_absorption(THREE_HALVES, THREE_HALVES).max_in(10.7, 14.7);
        assert!(pre > 0.1 && post <= 0.01 * pre, "{pre} {post}");
    }

    #[test]
    fn cleaning_is_idempotent() {
        let e = prepared();
        let again = clean_class(&e).unwrap();
        assert_eq!(again.pop, e.pop);
    }

    #[test]
    fn comb_spec_validation() {
        let c = CombSpec::default();
        c.validate().unwrap();
        assert!((c.storage_time_ns() - 1600.0).abs() < 1e-9);
        assert!(c.with_finesse(1.0).validate().is_err());
        assert!(CombSpec {
            bandwidth_mhz: 1.0,
            ..c
        }
        .validate()
        .is_err());
        assert!(CombSpec::for_storage_time(2.5, 4.0, 10_000.0, 2.0).validate().is_err());
    }

    #[test]
    fn square_comb_shape() {
        let c = CombSpec::default();
        assert_eq!(c.shape(2.5), 1.0);
        assert_eq!(c.shape(2.5 + 0.3125), 0.0);
        assert_eq!(c.shape(2.5 + 0.625), 1.0);
        assert_eq!(c.shape(8.0), 0.0);
    }

    #[test]
    fn tailored_comb_depth() {
        let mut e = prepared();
        e.tailor_comb(&CombSpec::default().with_peak_depth(2.8)).unwrap();
        let d = e.absorption_profile();
        assert!((d.at(2.5) - 2.8).abs() < 0.05, "{}", d.at(2.5));
        assert!(d.at(2.5 + 0.3125) < 0.05);
        assert!(d.max_in(-6.0, 6.0) <= 11.5 && d.min() >= 0.0);
        // antiholes outside the pit stay below three times the background
        assert!(d.max() <= 3.0 * 11.5);
    }
}
