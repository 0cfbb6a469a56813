use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::series::{magnitude, Series, TimeSeries3};

/// Maximum of the resultant and the time it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub value: f64,
    pub time: f64,
}

/// Peak of the Euclidean norm over the whole series; the first sample wins ties.
pub fn peak_resultant(s: &TimeSeries3) -> Result<Peak> {
    let m = magnitude(s);
    let mut best: Option<Peak> = None;
    for (i, &v) in m.samples().iter().enumerate() {
        if best.is_none_or(|b| v > b.value) {
            best = Some(Peak { value: v, time: m.time(i) });
        }
    }
    best.ok_or_else(|| Error::Invalid("peak of an empty series".into()))
}

/// Peak of the resultant restricted to samples with `lo <= t <= hi`.
pub fn peak_resultant_in(s: &TimeSeries3, lo: f64, hi: f64) -> Result<Peak> {
    let part = s.slice_time(lo, hi);
    if part.is_empty() {
        return Err(Error::Window {
            channel: "peak".into(),
            msg: format!("no samples in [{lo}, {hi}] s"),
        });
    }
    peak_resultant(&part)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanReport {
    /// Headband minus reference, per event.
    pub bias: Vec<f64>,
    pub mean_bias: f64,
    /// Sample standard deviation of the bias.
    pub sd_bias: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// Bias as a percentage of the largest reference peak.
    pub normalized_bias: Vec<f64>,
    pub mean_normalized_bias: f64,
    pub max_reference: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_sd(x: &[f64], m: f64) -> f64 {
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn check_paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "paired lists differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("at least two pairs are required".into()));
    }
    Ok(())
}

pub fn bland_altman(hb: &[f64], reference: &[f64]) -> Result<BlandAltmanReport> {
    check_paired(hb, reference)?;
    let bias: Vec<f64> = hb.iter().zip(reference).map(|(h, r)| h - r).collect();
    let mean_bias = mean(&bias);
    let sd_bias = sample_sd(&bias, mean_bias);
    let max_reference = reference.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.abs()));
    let normalized_bias: Vec<f64> = if max_reference > 0.0 {
        bias.iter().map(|b| b / max_reference * 100.0).collect()
    } else {
        vec![f64::NAN; bias.len()]
    };
    Ok(BlandAltmanReport {
        mean_normalized_bias: mean(&normalized_bias),
        bias,
        mean_bias,
        sd_bias,
        loa_low: mean_bias - 1.96 * sd_bias,
        loa_high: mean_bias + 1.96 * sd_bias,
        normalized_bias,
        max_reference,
    })
}

/// Normalised bias summary for one group of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBias {
    pub label: String,
    pub n: usize,
    pub mean_normalized_bias: f64,
    pub sd_normalized_bias: f64,
}

/// Per-label mean and sd of the normalised bias. The normaliser is the
/// largest reference peak over all events, not per group.
pub fn grouped_normalized_bias(report: &BlandAltmanReport, labels: &[String]) -> Result<Vec<GroupBias>> {
    if labels.len() != report.bias.len() {
        return Err(Error::Invalid("one label per event is required".into()));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (l, v) in labels.iter().zip(&report.normalized_bias) {
        groups.entry(l.as_str()).or_default().push(*v);
    }
    Ok(groups
        .into_iter()
        .map(|(label, v)| {
            let m = mean(&v);
            GroupBias {
                label: label.to_string(),
                n: v.len(),
                mean_normalized_bias: m,
                sd_normalized_bias: if v.len() > 1 { sample_sd(&v, m) } else { 0.0 },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub significant: bool,
}

/// Two-sided paired t-test on `a - b`, significance at 0.05.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_paired(a, b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = sample_sd(&d, m);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let n = d.len() as f64;
    let t = m / (sd / n.sqrt());
    let df = n - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        df,
        p,
        significant: p < 0.05,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nrmse {
    pub rms_abs: f64,
    /// RMS error as a percentage of `max |ref|` over the window.
    pub nrms_pct: f64,
    /// Mean signed error as a percentage of `max |ref|`.
    pub signed_mean_pct: f64,
}

/// Error metrics over a window of length `window` seconds centred on
/// `center`. Both series must share a clock.
pub fn nrmse_windowed(reference: &Series, test: &Series, window: f64, center: f64) -> Result<Nrmse> {
    if !reference.same_clock(test) {
        return Err(Error::Invalid("NRMSE inputs must share a clock".into()));
    }
    let half = 0.5 * window;
    let eps = 1e-9 / reference.sample_rate();
    if center - half < reference.start_time() - eps || center + half > reference.end_time() + eps {
        return Err(Error::Window {
            channel: "nrmse".into(),
            msg: format!(
                "window [{:.4}, {:.4}] s leaves the support [{:.4}, {:.4}] s",
                center - half,
                center + half,
                reference.start_time(),
                reference.end_time()
            ),
        });
    }
    let idx: Vec<usize> = (0..reference.len())
        .filter(|&i| (reference.time(i) - center).abs() <= half + eps)
        .collect();
    if idx.is_empty() {
        return Err(Error::Window {
            channel: "nrmse".into(),
            msg: "window contains no samples".into(),
        });
    }
    let (r, t) = (reference.samples(), test.samples());
    let peak = idx.iter().fold(0.0f64, |m, &i| m.max(r[i].abs()));
    if peak == 0.0 {
        return Err(Error::Degenerate("reference is zero over the NRMSE window".into()));
    }
    let n = idx.len() as f64;
    let rms_abs = (idx.iter().map(|&i| (t[i] - r[i]).powi(2)).sum::<f64>() / n).sqrt();
    let signed = idx.iter().map(|&i| t[i] - r[i]).sum::<f64>() / n;
    Ok(Nrmse {
        rms_abs,
        nrms_pct: rms_abs / peak * 100.0,
        signed_mean_pct: signed / peak * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_vector_peak() {
        let s = TimeSeries3::new(-0.01, 100.0, vec![Vec3::new(3.0, 4.0, 0.0); 10]).unwrap();
        let p = peak_resultant(&s).unwrap();
        assert_eq!(p.value, 5.0);
        assert_eq!(p.time, -0.01);
    }

    #[test]
    fn sine_peak_at_quarter_period() {
        let rate = 1000.0;
        let s = TimeSeries3::new(
            0.0,
            rate,
            (0..200)
                .map(|i| Vec3::new(2.5 * (2.0 * std::f64::consts::PI * 5.0 * i as f64 / rate).sin(), 0.0, 0.0))
                .collect(),
        )
        .unwrap();
        let p = peak_resultant(&s).unwrap();
        assert!((p.value - 2.5).abs() < 1e-9);
        assert!((p.time - 0.05).abs() <= 1.0 / rate);
    }

    #[test]
    fn peak_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)))
            .collect();
        let s = TimeSeries3::new(0.0, 100.0, v.clone()).unwrap();
        let mut best = (0.0, 0usize);
        for (i, x) in v.iter().enumerate() {
            let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if n > best.0 {
                best = (n, i);
            }
        }
        let p = peak_resultant(&s).unwrap();
        assert!((p.value - best.0).abs() < 1e-12);
        assert_eq!(p.time, s.time(best.1));
        let w = peak_resultant_in(&s, 1.0, 2.0).unwrap();
        assert!(w.time >= 1.0 && w.time <= 2.0);
    }

    #[test]
    fn hand_computed_bland_altman() {
        let r = bland_altman(&[5.0, 6.0, 7.0], &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(r.bias, vec![1.0, 2.0, 3.0]);
        assert!((r.mean_bias - 2.0).abs() < 1e-12);
        assert!((r.sd_bias - 1.0).abs() < 1e-12);
        assert!((r.loa_low - 0.04).abs() < 1e-9);
        assert!((r.loa_high - 3.96).abs() < 1e-9);
        assert!((r.mean_normalized_bias - 50.0).abs() < 1e-9);
    }

    #[test]
    fn identical_lists_zero_bias() {
        let r = bland_altman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mean_bias, r.sd_bias, r.loa_low, r.loa_high), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_pair_rejected() {
        assert!(bland_altman(&[1.0], &[2.0]).is_err());
        assert!(bland_altman(&[1.0, 2.0], &[2.0]).is_err());
    }

    #[test]
    fn grouping_by_label() {
        let r = bland_altman(&[5.0, 6.0, 7.0, 4.0], &[4.0, 4.0, 4.0, 4.0]).unwrap();
        let labels: Vec<String> = ["a", "b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let g = grouped_normalized_bias(&r, &labels).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].label, "a");
        assert!((g[0].mean_normalized_bias - 50.0).abs() < 1e-9);
        assert!((g[1].mean_normalized_bias - 25.0).abs() < 1e-9);
    }

    #[test]
    fn t_test_small_sample() {
        // t = 1.5 with 4 df; for 4 df the two-sided p has the closed form
        // 1 - √x (1 + (1 - x) / 2) with x = t² / (t² + 4), here exactly 0.208
        let t = paired_t_test(&[1.0, 1.0, 1.0, 1.0, -1.0], &[0.0; 5]).unwrap();
        assert!((t.t - 1.5).abs() < 1e-12);
        assert_eq!(t.df, 4.0);
        assert!((t.p - 0.208).abs() < 1e-9, "{}", t.p);
        assert!(!t.significant);
    }

    #[test]
    fn t_test_equal_inputs_rejected() {
        assert!(matches!(
            paired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn t_test_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..20).map(|_| n.sample(&mut rng) + 2.0).collect();
        let b: Vec<f64> = (0..20).map(|_| n.sample(&mut rng)).collect();
        assert!(paired_t_test(&a, &b).unwrap().p < 0.05);
    }

    #[test]
    fn nrmse_offset() {
        let r = Series::new(0.0, 1000.0, (0..100).map(|i| (i as f64 * 0.1).sin() * 4.0).collect()).unwrap();
        let same = nrmse_windowed(&r, &r, 0.0244, 0.05).unwrap();
        assert_eq!((same.rms_abs, same.nrms_pct, same.signed_mean_pct), (0.0, 0.0, 0.0));
        let t = r.map(|v| v + 0.5);
        let m = nrmse_windowed(&r, &t, 0.0244, 0.05).unwrap();
        let peak = (38..=62).map(|i| r.samples()[i].abs()).fold(0.0, f64::max);
        assert!((m.rms_abs - 0.5).abs() < 1e-12);
        assert!((m.signed_mean_pct - 0.5 / peak * 100.0).abs() < 1e-9);
        assert!(nrmse_windowed(&r, &t, 0.0244, 0.095).is_err());
    }

    proptest! {
        #[test]
        fn bias_antisymmetric(pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let x = bland_altman(&a, &b).unwrap();
            let y = bland_altman(&b, &a).unwrap();
            prop_assert!((x.mean_bias + y.mean_bias).abs() < 1e-9);
            prop_assert!((x.sd_bias - y.sd_bias).abs() < 1e-9);
            prop_assert!((x.loa_high - x.loa_low - 2.0 * 1.96 * x.sd_bias).abs() < 1e-9);
        }

        #[test]
        fn nrmse_matches_direct(
            pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 60..200),
            c in 0.2..0.8f64,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let n = a.len();
            let rate = 1000.0;
            let r = Series::new(0.0, rate, a.clone()).unwrap();
            let t = Series::new(0.0, rate, b.clone()).unwrap();
            let center = (c * n as f64).round() / rate;
            let w = 0.0244;
            prop_assume!(center - w / 2.0 >= 0.0 && center + w / 2.0 <= (n - 1) as f64 / rate);
            let got = nrmse_windowed(&r, &t, w, center).unwrap();
            // brute force with integer sample offsets: ±12 samples at 1 kHz
            let ci = (center * rate).round() as usize;
            let idx = ci - 12..=ci + 12;
            let peak = idx.clone().map(|i| a[i].abs()).fold(0.0, f64::max);
            prop_assume!(peak > 0.0);
            let rms = (idx.clone().map(|i| (b[i] - a[i]).powi(2)).sum::<f64>() / 25.0).sqrt();
            prop_assert!((got.rms_abs - rms).abs() < 1e-12);
            prop_assert!((got.nrms_pct - rms / peak * 100.0).abs() < 1e-9);
        }
    }
}
