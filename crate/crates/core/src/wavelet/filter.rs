//! Zero-phase IIR low-pass filters.
//!
//! Both filters run a Butterworth cascade forward and then backward over
//! the record, so the effective magnitude response is the square of one
//! pass and the phase is zero. For [`butterworth_lowpass`] of order `n`
//! each pass is an order `n / 2` Butterworth whose analogue cutoff is moved
//! up by `(√2 - 1)^(-1/n)`, which puts the combined -3 dB point exactly at
//! the requested frequency. [`cfc_filter`] uses the channel-frequency-class
//! coefficients (a two-pole Butterworth per pass designed at
//! `2.0775 × CFC`), giving the combined -3 dB point near `1.65 × CFC`.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::series::{Series, TimeSeries3};

/// Ratio of the per-pass design frequency to the class number.
const CFC_DESIGN_RATIO: f64 = 2.0775;

/// Nominal combined -3 dB frequency as a multiple of the class number.
pub const CFC_CORNER_RATIO: f64 = 1.65;

/// One second-order (or first-order, with `b[2] = a[1] = 0`) section with
/// `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Section {
    b: [f64; 3],
    a: [f64; 2],
}

impl Section {
    /// Low-pass biquad from a prewarped analogue cutoff `k = tan(π fc / fs)`.
    fn lowpass2(k: f64, q: f64) -> Self {
        let k2 = k * k;
        let norm = 1.0 / (1.0 + k / q + k2);
        let b0 = k2 * norm;
        Section {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
        }
    }

    fn lowpass1(k: f64) -> Self {
        let b0 = k / (1.0 + k);
        Section {
            b: [b0, b0, 0.0],
            a: [(k - 1.0) / (k + 1.0), 0.0],
        }
    }

    /// Transposed direct form II, started in the steady state for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let mut z2 = (b2 - a2) * x0;
        let mut z1 = (b1 - a1) * x0 + z2;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth low-pass cascade of the given order for a prewarped cutoff.
fn butterworth_sections(order: usize, k: f64) -> Vec<Section> {
    let mut out = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
        out.push(Section::lowpass2(k, 1.0 / (2.0 * theta.sin())));
    }
    if order % 2 == 1 {
        out.push(Section::lowpass1(k));
    }
    out
}

/// Forward-backward application with odd-reflection padding.
fn filtfilt(x: &[f64], sections: &[Section], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = padlen.min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    buf.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    buf.extend_from_slice(x);
    buf.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

fn pad_for(rate: f64, corner: f64, sections: usize) -> usize {
    // a few time constants of the slowest pole plus the usual 3 × taps
    ((4.0 * rate / corner).ceil() as usize).max(3 * (2 * sections + 1))
}

/// Zero-phase Butterworth low-pass of effective order `order` with its
/// combined -3 dB point at `f0`.
pub fn butterworth_lowpass(x: &Series, f0: f64, order: usize) -> Result<Series> {
    let rate = x.sample_rate();
    let nyquist = 0.5 * rate;
    if !(f0 > 0.0) || f0 >= nyquist {
        return Err(Error::Invalid(format!(
            "cutoff {f0} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if order == 0 || order % 2 != 0 {
        return Err(Error::Invalid(format!(
            "zero-phase order must be a positive even number, got {order}"
        )));
    }
    let per_pass = order / 2;
    let correction = (SQRT_2 - 1.0).powf(-1.0 / order as f64);
    let k = (PI * f0 / rate).tan() * correction;
    let sections = butterworth_sections(per_pass, k);
    let pad = pad_for(rate, f0, sections.len());
    Ok(x.with_samples(filtfilt(x.samples(), &sections, pad)))
}

// One warning per (class, rate) pair per process.
fn warn_once(cfc: f64, rate: f64, msg: impl FnOnce() -> String) {
    static SEEN: Mutex<Vec<(u64, u64)>> = Mutex::new(Vec::new());
    let key = (cfc.to_bits(), rate.to_bits());
    let mut seen = SEEN.lock().unwrap_or_else(|e| e.into_inner());
    if !seen.contains(&key) {
        seen.push(key);
        log::warn!("{}", msg());
    }
}

/// Channel-frequency-class filter.
///
/// When the per-pass design frequency reaches the Nyquist frequency the
/// class cannot be realised at this rate; the input is returned unchanged
/// with a warning. A warning is also logged whenever the sample rate is
/// below ten times the nominal corner.
pub fn cfc_filter(x: &Series, cfc: f64) -> Series {
    let rate = x.sample_rate();
    let corner = CFC_CORNER_RATIO * cfc;
    let arg = PI * CFC_DESIGN_RATIO * cfc / rate;
    if !(cfc > 0.0) || arg >= 0.5 * PI * (1.0 - 1e-9) {
        warn_once(cfc, rate, || {
            format!("CFC {cfc} is not realisable at {rate} Hz; channels left unfiltered")
        });
        return x.clone();
    }
    if rate < 10.0 * corner {
        warn_once(cfc, rate, || {
            format!("CFC {cfc}: sample rate {rate} Hz is below the recommended 10 × {corner} Hz")
        });
    }
    let section = Section::lowpass2(arg.tan(), 1.0 / SQRT_2);
    let pad = pad_for(rate, corner.min(0.5 * rate), 1);
    x.with_samples(filtfilt(x.samples(), &[section], pad))
}

fn per_axis(s: &TimeSeries3, mut f: impl FnMut(&Series) -> Result<Series>) -> Result<TimeSeries3> {
    let x = f(&s.component(0))?;
    let y = f(&s.component(1))?;
    let z = f(&s.component(2))?;
    let samples = (0..s.len())
        .map(|i| Vec3::new(x.samples()[i], y.samples()[i], z.samples()[i]))
        .collect();
    Ok(s.with_samples(samples))
}

/// [`butterworth_lowpass`] applied to each axis.
pub fn butterworth_lowpass3(s: &TimeSeries3, f0: f64, order: usize) -> Result<TimeSeries3> {
    per_axis(s, |c| butterworth_lowpass(c, f0, order))
}

/// [`cfc_filter`] applied to each axis.
pub fn cfc_filter3(s: &TimeSeries3, cfc: f64) -> TimeSeries3 {
    per_axis(s, |c| Ok(cfc_filter(c, cfc))).expect("cfc filtering is infallible")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(rate: f64, secs: f64, f: f64) -> Series {
        let n = (rate * secs) as usize;
        Series::new(0.0, rate, (0..n).map(|i| (2.0 * PI * f * i as f64 / rate).sin()).collect())
            .unwrap()
    }

    // steady-state amplitude oracle: RMS over the central half, times √2
    fn amplitude(s: &Series) -> f64 {
        let n = s.len();
        let mid = &s.samples()[n / 4..3 * n / 4];
        (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt() * SQRT_2
    }

    fn gain_db(out: &Series, inp: &Series) -> f64 {
        20.0 * (amplitude(out) / amplitude(inp)).log10()
    }

    #[test]
    fn dc_passes_unchanged() {
        let s = Series::new(0.0, 1125.0, vec![4.2; 500]).unwrap();
        let y = butterworth_lowpass(&s, 50.0, 4).unwrap();
        assert!(y.samples().iter().all(|v| (v - 4.2).abs() < 1e-9));
        let c = cfc_filter(&s, 155.0);
        assert!(c.samples().iter().all(|v| (v - 4.2).abs() < 1e-9));
    }

    #[test]
    fn minus_three_db_at_cutoff() {
        let x = sine(2000.0, 4.0, 50.0);
        let y = butterworth_lowpass(&x, 50.0, 4).unwrap();
        let g = gain_db(&y, &x);
        assert!((g + 3.0103).abs() < 0.5, "gain {g} dB");
    }

    #[test]
    fn forty_db_at_four_times_cutoff() {
        let x = sine(2000.0, 4.0, 200.0);
        let y = butterworth_lowpass(&x, 50.0, 4).unwrap();
        assert!(gain_db(&y, &x) <= -40.0, "{}", gain_db(&y, &x));
    }

    #[test]
    fn rejects_cutoff_at_nyquist() {
        let s = Series::new(0.0, 1000.0, vec![0.0; 100]).unwrap();
        assert!(butterworth_lowpass(&s, 500.0, 4).is_err());
        assert!(butterworth_lowpass(&s, 0.0, 4).is_err());
        assert!(butterworth_lowpass(&s, 100.0, 3).is_err());
    }

    #[test]
    fn unrealisable_cfc_passes_through() {
        let x = sine(3200.0, 0.2, 40.0);
        assert_eq!(cfc_filter(&x, 1000.0), x);
    }

    #[test]
    fn section_dc_gain_is_one() {
        for order in 1..7 {
            for s in butterworth_sections(order, 0.3) {
                let g = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
                assert!((g - 1.0).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn filters_are_linear(
            a in -5.0..5.0f64,
            b in -5.0..5.0f64,
            xs in prop::collection::vec(-10.0..10.0f64, 20..200),
            ys in prop::collection::vec(-10.0..10.0f64, 20..200),
            f0 in 5.0..200.0f64,
        ) {
            let n = xs.len().min(ys.len());
            let x = Series::new(0.0, 1125.0, xs[..n].to_vec()).unwrap();
            let y = Series::new(0.0, 1125.0, ys[..n].to_vec()).unwrap();
            let combo = x.with_samples((0..n).map(|i| a * x.samples()[i] + b * y.samples()[i]).collect());
            let fx = butterworth_lowpass(&x, f0, 4).unwrap();
            let fy = butterworth_lowpass(&y, f0, 4).unwrap();
            let fc = butterworth_lowpass(&combo, f0, 4).unwrap();
            for i in 0..n {
                let lin = a * fx.samples()[i] + b * fy.samples()[i];
                prop_assert!((fc.samples()[i] - lin).abs() < 1e-9);
            }
            let cx = cfc_filter(&x, 155.0);
            let cy = cfc_filter(&y, 155.0);
            let cc = cfc_filter(&combo, 155.0);
            for i in 0..n {
                let lin = a * cx.samples()[i] + b * cy.samples()[i];
                prop_assert!((cc.samples()[i] - lin).abs() < 1e-9);
            }
        }
    }
}
