use afc_core::analysis::snr;
use afc_core::conversion::{output_wavelength_nm, total_efficiency, END, WAVEGUIDE_COUPLING};
use afc_core::holeburning::{comb_profile, CombSpec, HyperfineStructure, IonEnsemble, PreparationParams};
use afc_core::propagation::{afc_efficiency, propagate, transfer_function, PulseEnvelope};
use afc_core::{ConverterParams, FrequencyGrid, LossChain, NoiseModel, SpectralFunction};
use num_complex::Complex64;
use proptest::prelude::*;

fn small_grid() -> FrequencyGrid {
    FrequencyGrid::from_time_step(16384, 10.24).unwrap()
}

fn full_grid() -> FrequencyGrid {
    FrequencyGrid::from_time_step(65536, 10.24).unwrap()
}

fn fresh() -> IonEnsemble {
    IonEnsemble::new(small_grid(), HyperfineStructure::default(), 11.5)
        .unwrap()
        .with_smoothing(0.02)
}

fn prepared() -> IonEnsemble {
    let mut e = fresh();
    e.prepare(&PreparationParams::default()).unwrap();
    e
}

fn level_sums(e: &IonEnsemble) -> Vec<f64> {
    (0..e.ion_count()).map(|j| e.populations(j).iter().sum()).collect()
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Pit(f64, f64, f64),
    BurnBack(f64, f64, f64),
    Clean,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (-20.0..20.0f64, 0.5..15.0f64, 0.0..50.0f64).prop_map(|(c, w, f)| Op::Pit(c, w, f)),
        (10.0..40.0f64, 0.5..6.0f64, 0.0..50.0f64).prop_map(|(c, w, f)| Op::BurnBack(c, w, f)),
        Just(Op::Clean),
    ]
}

fn apply(e: &mut IonEnsemble, o: Op) {
    match o {
        Op::Pit(c, w, f) => e.burn_pit(c, w, f).unwrap(),
        Op::BurnBack(c, w, f) => {
            if e.record().pit.is_none() {
                e.burn_pit(0.0, 12.0, 30.0).unwrap();
            }
            e.burn_back(c, w, f).unwrap()
        }
        Op::Clean => {
            // cleaning without a designated class is an ordering error
            let _ = e.clean_class();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wavelength_identity(signal in 300.0..3000.0f64, pump in 300.0..3000.0f64) {
        let out = output_wavelength_nm(signal, pump).unwrap();
        let lhs = 1.0 / signal + 1.0 / pump;
        prop_assert!((lhs - 1.0 / out).abs() <= 1e-14 * lhs);
    }

    #[test]
    fn efficiency_rises_to_p_max(a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let c = ConverterParams::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (e_lo, e_hi) = (
            c.conversion_efficiency(lo * c.p_max()).unwrap(),
            c.conversion_efficiency(hi * c.p_max()).unwrap(),
        );
        prop_assert!(e_lo <= e_hi + 1e-15);
        prop_assert!(e_hi <= c.conversion_efficiency(c.p_max()).unwrap() + 1e-15);
    }

    #[test]
    fn noise_is_exactly_quadratic(alpha in 0.0..5.0f64, beta in 0.0..1.0f64, p in 0.0..0.3f64, h in 1e-3..0.05f64) {
        let m = NoiseModel { alpha, beta, ..NoiseModel::default() };
        let w = m.reference_window_ns;
        let n = |x: f64| m.noise_counts_per_pulse(x, w, false).unwrap();
        let second = n(p + 2.0 * h) - 2.0 * n(p + h) + n(p);
        prop_assert!((second - 2.0 * alpha * h * h).abs() <= 1e-12 * (1.0 + n(p + 2.0 * h)));
        prop_assert!(n(p + h) >= n(p));
    }

    #[test]
    fn chain_composes(t in prop::collection::vec(0.01..1.0f64, 5), i in 0usize..6, j in 0usize..6, k in 0usize..6) {
        let mut chain = LossChain::default();
        for (s, v) in chain.stages.iter_mut().zip(&t) {
            s.transmission = *v;
        }
        let mut labels: Vec<String> = chain.stages.iter().map(|s| s.label.clone()).collect();
        labels.push(END.to_string());
        let mut idx = [i, j, k];
        idx.sort();
        let [a, b, c] = idx.map(|x| labels[x].as_str());
        let ac = chain.chain_transmission(a, c).unwrap();
        let ab = chain.chain_transmission(a, b).unwrap();
        let bc = chain.chain_transmission(b, c).unwrap();
        prop_assert!(ac <= 1.0);
        prop_assert!((ac - ab * bc).abs() <= 1e-15);
    }

    #[test]
    fn lossless_total_is_conversion(p in 0.0..0.36f64) {
        let c = ConverterParams::default();
        let mut chain = LossChain::default();
        chain.stages.iter_mut().for_each(|s| s.transmission = 1.0);
        let t = chain.chain_transmission(WAVEGUIDE_COUPLING, END).unwrap();
        let eta = c.conversion_efficiency(p).unwrap();
        prop_assert_eq!(total_efficiency(eta, t, 1.0).unwrap(), eta);
    }

    #[test]
    fn snr_is_scale_invariant(s in 1.0..1e6f64, n in 1.0..1e5f64, k in 0.01..100.0f64) {
        let a = snr(s, n).unwrap().snr;
        let b = snr(k * s, k * n).unwrap().snr;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn burning_conserves_population_and_keeps_absorption_positive(ops in prop::collection::vec(op(), 1..5)) {
        let mut e = fresh();
        let before = level_sums(&e);
        for o in ops {
            apply(&mut e, o);
            for (a, b) in level_sums(&e).iter().zip(&before) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            prop_assert!(e.absorption_profile().values.iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn more_fluence_never_adds_absorption(c in -10.0..10.0f64, w in 2.0..10.0f64, f in 0.0..20.0f64, extra in 0.0..30.0f64) {
        let mut weak = fresh();
        weak.burn_pit(c, w, f).unwrap();
        let mut strong = fresh();
        strong.burn_pit(c, w, f + extra).unwrap();
        let (a, b) = (weak.absorption_profile(), strong.absorption_profile());
        let grid = a.grid;
        for k in 0..grid.len() {
            let nu = grid.frequency(k);
            if (nu - c).abs() < w / 2.0 - 0.2 {
                prop_assert!(b.values[k] <= a.values[k] + 1e-9);
            }
        }
    }
}

#[test]
fn cleaning_is_idempotent() {
    let e = prepared();
    let mut again = e.clone();
    again.clean_class().unwrap();
    let (a, b) = (e.absorption_profile(), again.absorption_profile());
    let diff = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9, "profile changed by {diff}");
}

fn autocorrelation_at(p: &SpectralFunction, lo: f64, hi: f64, lag_mhz: f64) -> f64 {
    let g = p.grid;
    let lag = (lag_mhz / g.step_mhz()).round() as usize;
    let (a, b) = (g.nearest_index(lo), g.nearest_index(hi - lag_mhz));
    let r = |l: usize| (a..b).map(|k| p.values[k] * p.values[k + l]).sum::<f64>();
    r(lag) / r(0)
}

#[test]
fn tailored_comb_is_periodic() {
    for (spacing, finesse) in [(0.625, 2.5), (0.4, 3.0), (1.0, 4.0)] {
        let mut e = prepared();
        let spec = CombSpec::for_storage_time(2.5, 4.0, 1e3 / spacing, finesse).with_peak_depth(2.5);
        e.tailor_comb(&spec).unwrap();
        let r = autocorrelation_at(&e.absorption_profile(), 0.5, 4.5, spacing);
        assert!(r >= 0.9, "spacing {spacing}: autocorrelation {r}");
    }
}

fn random_comb(spacing: f64, finesse: f64, d: f64, background: f64) -> SpectralFunction {
    let spec = CombSpec::for_storage_time(2.5, 4.0, 1e3 / spacing, finesse);
    comb_profile(full_grid(), &spec, d, background, (-6.0, 6.0), 0.02).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn propagation_is_passive_causal_and_linear(
        spacing in 0.2..1.0f64,
        u in 0.0..1.0f64,
        d in 0.5..12.0f64,
        background in 0.0..11.5f64,
        re in -3.0..3.0f64,
        im in -3.0..3.0f64,
    ) {
        // finesse within [2, 10] and above the writable tooth width
        let finesse = 2.0 + u * ((spacing / 0.095).min(10.0) - 2.0);
        let profile = random_comb(spacing, finesse, d, background);
        let h = transfer_function(&profile).unwrap();
        prop_assert!(h.max_gain() <= 1.0 + 1e-12);
        prop_assert!(h.causality_leak() <= 1e-10);
        let pulse = PulseEnvelope::gaussian(full_grid(), 140.0, 2.5, 1.0).unwrap();
        let out = propagate(&pulse, &h).unwrap();
        prop_assert!(out.mu() <= pulse.mu() * (1.0 + 1e-9));
        let a = Complex64::new(re, im);
        let scaled = propagate(&pulse.scaled(a), &h).unwrap();
        let peak = out.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (x, y) in scaled.samples.iter().zip(&out.samples) {
            prop_assert!((x - a * y).norm() <= 1e-9 * peak * a.norm().max(1.0));
        }
    }
}

#[test]
fn efficiency_grows_with_depth_below_optimum() {
    let pulse = PulseEnvelope::gaussian(full_grid(), 140.0, 2.5, 1.0).unwrap();
    let eta: Vec<f64> = [0.5, 1.0, 2.0, 3.0]
        .iter()
        .map(|&d| afc_efficiency(&pulse, &random_comb(0.625, 3.0, d, 0.0), 1600.0, 400.0).unwrap())
        .collect();
    assert!(eta.windows(2).all(|w| w[1] > w[0]), "{eta:?}");
}

#[test]
fn halving_depth_reduces_echo() {
    let pulse = PulseEnvelope::gaussian(full_grid(), 140.0, 2.5, 1.0).unwrap();
    let full = random_comb(0.625, 3.0, 3.0, 0.0);
    let half = full.scaled(0.5);
    let e_full = afc_efficiency(&pulse, &full, 1600.0, 400.0).unwrap();
    let e_half = afc_efficiency(&pulse, &half, 1600.0, 400.0).unwrap();
    assert!(e_half < e_full, "{e_half} vs {e_full}");
}
