use std::f64::consts::PI;

use proptest::prelude::*;

use kinereco::kinematics::{adaptive_filter, AdaptiveConfig};
use kinereco::wavelet::{butterworth_lowpass, cfc_filter, cwt, normalized_slices, select_cutoff, CoefficientSlices, CwtConfig};
use kinereco::{Series, TimeSeries3, Vec3};

const RATE: f64 = 1125.0;

// Event-window clock used by the pipeline: 50 ms before the trigger to 200 ms after.
fn grid() -> Vec<f64> {
    let n0 = (0.05 * RATE) as i64;
    let n1 = (0.2 * RATE) as i64;
    (-n0..=n1).map(|k| k as f64 / RATE).collect()
}

fn sine(t: &[f64], f: f64) -> Vec<f64> {
    t.iter().map(|t| (2.0 * PI * f * t).sin()).collect()
}

// Hann-windowed 300 Hz burst on [lo, hi].
fn burst(t: &[f64], amp: f64, lo: f64, hi: f64) -> Vec<f64> {
    t.iter()
        .map(|&t| {
            if t < lo || t > hi {
                0.0
            } else {
                let h = 0.5 - 0.5 * (2.0 * PI * (t - lo) / (hi - lo)).cos();
                amp * h * (2.0 * PI * 300.0 * t).sin()
            }
        })
        .collect()
}

fn on_x(t: &[f64], x: &[f64]) -> TimeSeries3 {
    TimeSeries3::new(t[0], RATE, x.iter().map(|&v| Vec3::new(v, 0.0, 0.0)).collect()).unwrap()
}

fn x_of(s: &TimeSeries3) -> Vec<f64> {
    s.samples().iter().map(|v| v[0]).collect()
}

fn nrmse_after(t: &[f64], clean: &[f64], got: &[f64], after: f64) -> f64 {
    let idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] > after).collect();
    let num: f64 = idx.iter().map(|&i| (got[i] - clean[i]).powi(2)).sum();
    let den: f64 = idx.iter().map(|&i| clean[i].powi(2)).sum();
    (num / den).sqrt()
}

// Energy of the DFT bins inside [lo, hi] Hz.
fn band_energy(x: &[f64], lo: f64, hi: f64) -> f64 {
    let n = x.len();
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * RATE / n as f64;
            f >= lo && f <= hi
        })
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .sum()
}

// Amplitude that gives the burst the same energy as the sine over the burst span.
fn zero_db_amplitude(t: &[f64], clean: &[f64], lo: f64, hi: f64) -> f64 {
    let unit = burst(t, 1.0, lo, hi);
    let (mut es, mut eb) = (0.0, 0.0);
    for i in 0..t.len() {
        if t[i] >= lo && t[i] <= hi {
            es += clean[i] * clean[i];
            eb += unit[i] * unit[i];
        }
    }
    (es / eb).sqrt()
}

#[test]
fn clean_sine_passes_through() {
    let t = grid();
    let clean = sine(&t, 5.0);
    let out = adaptive_filter(&on_x(&t, &clean), &AdaptiveConfig::default()).unwrap();
    assert!(out.axes[1].is_none() && out.axes[2].is_none());
    let err = nrmse_after(&t, &clean, &x_of(&out.filtered), f64::NEG_INFINITY);
    assert!(err < 0.02, "NRMSE {err}");
}

#[test]
fn burst_is_removed_and_sine_kept() {
    let t = grid();
    let clean = sine(&t, 10.0);
    let amp = zero_db_amplitude(&t, &clean, 0.0, 0.02);
    let b = burst(&t, amp, 0.0, 0.02);
    let noisy: Vec<f64> = clean.iter().zip(&b).map(|(c, b)| c + b).collect();
    let out = adaptive_filter(&on_x(&t, &noisy), &AdaptiveConfig::default()).unwrap();
    let f0 = out.f0();
    assert!((10.0..=180.0).contains(&f0), "f0 {f0}");
    let filtered = x_of(&out.filtered);
    let err = nrmse_after(&t, &clean, &filtered, 0.03);
    assert!(err < 0.05, "NRMSE after 30 ms {err}");
    let before = band_energy(&noisy, 250.0, 350.0);
    let after = band_energy(&filtered, 250.0, 350.0);
    assert!(after <= 0.1 * before, "band energy {after} vs {before}");
}

#[test]
fn burst_shows_as_onset_above_the_sine() {
    let t = grid();
    let clean = sine(&t, 10.0);
    let noisy: Vec<f64> = clean.iter().zip(burst(&t, 3.0, -0.01, 0.02)).map(|(c, b)| c + b).collect();
    let sc = cwt(&Series::new(t[0], RATE, noisy).unwrap(), &CwtConfig::default()).unwrap();
    let sl = normalized_slices(&sc, 0.0, 0.15).unwrap();
    let crossing = sl.freqs.iter().zip(sl.delta()).any(|(f, d)| *f > 10.0 && d > 0.1);
    assert!(crossing);
}

#[test]
fn stationary_sine_has_flat_slices_and_takes_the_cap() {
    let t = grid();
    let x = Series::new(t[0], RATE, sine(&t, 20.0)).unwrap();
    let sc = cwt(&x, &CwtConfig::default()).unwrap();
    let sl = normalized_slices(&sc, 0.0, 0.15).unwrap();
    let worst = sl.delta().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    assert!(worst < 0.05, "max |Δw̄| {worst}");
    // no onset anywhere, so the cutoff falls back to the upper limit
    let c = select_cutoff(sl, 0.1, 180.0);
    assert!(c.f_n.is_none());
    assert_eq!(c.f0, 180.0);
    assert!(c.f_ss.unwrap() < 180.0);
}

#[test]
fn larger_burst_never_raises_cutoff() {
    let t = grid();
    let clean = sine(&t, 10.0);
    for (lo, hi) in [(0.0, 0.02), (-0.01, 0.02), (-0.005, 0.015)] {
        let mut prev = f64::INFINITY;
        for k in 0..5 {
            let amp = 1.5 * 2f64.powi(k);
            let noisy: Vec<f64> = clean.iter().zip(burst(&t, amp, lo, hi)).map(|(c, b)| c + b).collect();
            let f0 = adaptive_filter(&on_x(&t, &noisy), &AdaptiveConfig::default()).unwrap().f0();
            assert!(f0 <= prev, "burst [{lo}, {hi}] amplitude {amp}: f0 {f0} above {prev}");
            prev = f0;
        }
    }
}

// Steady-state amplitude ratio of a sine through `f`.
fn gain(rate: f64, freq: f64, f: impl Fn(&Series) -> Series) -> f64 {
    let n = (rate * (40.0 / freq).max(0.2)) as usize;
    let x = Series::new(0.0, rate, (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()).unwrap();
    let y = f(&x);
    let mid = &y.samples()[n / 4..3 * n / 4];
    let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
    rms * 2f64.sqrt()
}

// Bisect for the -3 dB frequency of a low-pass response.
fn minus_3db(rate: f64, mut lo: f64, mut hi: f64, f: impl Fn(&Series) -> Series) -> f64 {
    let target = 10f64.powf(-3.0 / 20.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if gain(rate, mid, &f) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn cfc_1000_corner() {
    let f = minus_3db(20_000.0, 800.0, 3000.0, |x| cfc_filter(x, 1000.0));
    assert!((f - 1650.0).abs() <= 0.05 * 1650.0, "corner {f}");
}

#[test]
fn cfc_155_corner() {
    let f = minus_3db(3200.0, 100.0, 600.0, |x| cfc_filter(x, 155.0));
    assert!((f - 256.0).abs() <= 0.05 * 256.0, "corner {f}");
}

#[test]
fn cfc_dc_gain() {
    let x = Series::new(0.0, 3200.0, vec![7.25; 500]).unwrap();
    for class in [60.0, 155.0, 180.0] {
        let y = cfc_filter(&x, class);
        assert!(y.samples().iter().all(|v| (v - 7.25).abs() < 1e-9));
    }
}

fn slices(start: Vec<f64>, end: Vec<f64>) -> CoefficientSlices {
    let freqs = (0..start.len()).map(|i| 2.0 * 2f64.powf(i as f64 / 12.0)).collect();
    CoefficientSlices {
        freqs,
        t_start: 0.0,
        t_end: 0.15,
        start,
        end,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cutoff_never_exceeds_cap(
        pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.2f64), 90..100),
        threshold in 0.01..0.5f64,
    ) {
        let (s, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let c = select_cutoff(slices(s, e), threshold, 180.0);
        prop_assert!(c.f0 <= 180.0);
        prop_assert!(c.f0 > 0.0);
    }

    #[test]
    fn filters_are_linear(
        xs in prop::collection::vec(-10.0..10.0f64, 64),
        ys in prop::collection::vec(-10.0..10.0f64, 64),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        f0 in 20.0..400.0f64,
    ) {
        let x = Series::new(0.0, 1125.0, xs.clone()).unwrap();
        let y = Series::new(0.0, 1125.0, ys.clone()).unwrap();
        let mix = Series::new(0.0, 1125.0, xs.iter().zip(&ys).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let fx = butterworth_lowpass(&x, f0, 4).unwrap();
        let fy = butterworth_lowpass(&y, f0, 4).unwrap();
        let fm = butterworth_lowpass(&mix, f0, 4).unwrap();
        for i in 0..64 {
            let want = a * fx.samples()[i] + b * fy.samples()[i];
            prop_assert!((fm.samples()[i] - want).abs() < 1e-9);
        }
        let cx = cfc_filter(&x, 60.0);
        let cy = cfc_filter(&y, 60.0);
        let cm = cfc_filter(&mix, 60.0);
        for i in 0..64 {
            prop_assert!((cm.samples()[i] - (a * cx.samples()[i] + b * cy.samples()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn cutoff_is_scale_invariant(k in 0.001..1000.0f64, amp in 0.5..8.0f64) {
        let t = grid();
        let x: Vec<f64> = sine(&t, 10.0).iter().zip(burst(&t, amp, -0.01, 0.02)).map(|(c, b)| c + b).collect();
        let cfg = AdaptiveConfig::default();
        let a = adaptive_filter(&on_x(&t, &x), &cfg).unwrap().f0();
        let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
        let b = adaptive_filter(&on_x(&t, &scaled), &cfg).unwrap().f0();
        prop_assert_eq!(a, b);
    }
}
