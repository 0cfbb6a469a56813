//! CORA-style curve rating using the cross-correlation sub-method only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// Cross-correlation rating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoraParams {
    /// Largest time shift searched, as a fraction of the record length.
    pub max_shift_fraction: f64,
    /// Exponent on the linear phase penalty.
    pub phase_exponent: f64,
    /// Exponent on the correlation coefficient for the shape rating.
    pub shape_exponent: f64,
    /// Weight of the corridor sub-method; only 0 is supported.
    pub corridor_weight: f64,
}

impl Default for CoraParams {
    fn default() -> Self {
        CoraParams {
            max_shift_fraction: 0.2,
            phase_exponent: 1.0,
            shape_exponent: 1.0,
            corridor_weight: 0.0,
        }
    }
}

impl CoraParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.max_shift_fraction) {
            return Err(Error::Config("CORA max shift fraction must lie in [0, 1)".into()));
        }
        if !(self.phase_exponent > 0.0) || !(self.shape_exponent > 0.0) {
            return Err(Error::Config("CORA exponents must be positive".into()));
        }
        if self.corridor_weight != 0.0 {
            return Err(Error::Config("the CORA corridor sub-method is not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Excellent,
    Good,
    Fair,
    Marginal,
    Unacceptable,
}

impl Band {
    /// Biofidelity band: above 0.86 excellent, then lower-inclusive
    /// bounds at 0.66, 0.44 and 0.26.
    pub fn of(score: f64) -> Band {
        if score > 0.86 {
            Band::Excellent
        } else if score >= 0.66 {
            Band::Good
        } else if score >= 0.44 {
            Band::Fair
        } else if score >= 0.26 {
            Band::Marginal
        } else {
            Band::Unacceptable
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoraScore {
    pub phase: f64,
    pub magnitude: f64,
    pub shape: f64,
    pub total: f64,
    pub band: Band,
    /// Time shift (test relative to reference) at the correlation maximum, s.
    pub shift: f64,
}

// uncentred normalised cross-correlation of ref[i] against test[i + lag]
fn xcorr(r: &[f64], t: &[f64], lag: i64) -> f64 {
    let n = r.len() as i64;
    let (lo, hi) = ((-lag).max(0), (n - lag).min(n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in lo..hi {
        let a = r[i as usize];
        let b = t[(i + lag) as usize];
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

fn peak_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Rate `test` against `ref_` on a common clock.
pub fn cora_score(ref_: &Series, test: &Series, params: &CoraParams) -> Result<CoraScore> {
    if !ref_.same_clock(test) {
        return Err(Error::Invalid("CORA inputs must share a clock".into()));
    }
    let r = ref_.samples();
    let t = test.samples();
    let n = r.len();
    if n < 2 {
        return Err(Error::Invalid("CORA needs at least two samples".into()));
    }
    let mean = r.iter().sum::<f64>() / n as f64;
    if r.iter().all(|v| (v - mean).abs() == 0.0) {
        return Err(Error::Degenerate("reference curve has zero variance".into()));
    }
    let max_shift = (params.max_shift_fraction * n as f64).floor() as i64;
    let mut best_lag = 0i64;
    let mut best = xcorr(r, t, 0);
    for d in 1..=max_shift {
        for lag in [-d, d] {
            let k = xcorr(r, t, lag);
            if k > best {
                best = k;
                best_lag = lag;
            }
        }
    }
    let phase = if max_shift == 0 {
        1.0
    } else {
        (1.0 - best_lag.unsigned_abs() as f64 / max_shift as f64).powf(params.phase_exponent)
    };
    let shape = best.max(0.0).powf(params.shape_exponent);
    let (pr, pt) = (peak_abs(r), peak_abs(t));
    let magnitude = if pr.max(pt) == 0.0 {
        1.0
    } else {
        pr.min(pt) / pr.max(pt)
    };
    let total = (phase + magnitude + shape) / 3.0;
    Ok(CoraScore {
        phase,
        magnitude,
        shape,
        total,
        band: Band::of(total),
        shift: best_lag as f64 / ref_.sample_rate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pulse(n: usize, c: f64, w: f64) -> Series {
        Series::new(
            -0.03125,
            3200.0,
            (0..n)
                .map(|i| (-0.5 * ((i as f64 - c) / w).powi(2)).exp() + 0.1 * (i as f64 / 37.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_curves_score_one() {
        let x = pulse(400, 120.0, 15.0);
        let s = cora_score(&x, &x, &CoraParams::default()).unwrap();
        assert_eq!(s.total, 1.0);
        assert_eq!(s.band, Band::Excellent);
    }

    #[test]
    fn doubled_amplitude() {
        let x = pulse(400, 120.0, 15.0);
        let y = x.map(|v| 2.0 * v);
        let s = cora_score(&x, &y, &CoraParams::default()).unwrap();
        assert_eq!(s.phase, 1.0);
        assert_eq!(s.shape, 1.0);
        assert_eq!(s.magnitude, 0.5);
        assert!((s.total - 5.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn sign_flip_zero_shape() {
        let x = Series::new(0.0, 1000.0, (0..300).map(|i| (-0.5 * ((i as f64 - 150.0) / 10.0).powi(2)).exp()).collect()).unwrap();
        let y = x.map(|v| -v);
        let s = cora_score(&x, &y, &CoraParams::default()).unwrap();
        assert_eq!(s.shape, 0.0);
        assert!(s.total <= 2.0 / 3.0 + 1e-12);
    }

    #[test]
    fn shifted_copy_penalised_linearly() {
        let x = Series::new(0.0, 1000.0, (0..400).map(|i| (-0.5 * ((i as f64 - 150.0) / 10.0).powi(2)).exp()).collect()).unwrap();
        let y = Series::new(0.0, 1000.0, (0..400).map(|i| (-0.5 * ((i as f64 - 170.0) / 10.0).powi(2)).exp()).collect()).unwrap();
        let s = cora_score(&x, &y, &CoraParams::default()).unwrap();
        assert!((s.shift - 0.020).abs() < 1e-12);
        assert!((s.phase - (1.0 - 20.0 / 80.0)).abs() < 1e-12);
    }

    #[test]
    fn flat_reference_rejected() {
        let x = Series::new(0.0, 1000.0, vec![1.0; 100]).unwrap();
        assert!(matches!(
            cora_score(&x, &x, &CoraParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(Band::of(0.87), Band::Excellent);
        assert_eq!(Band::of(0.86), Band::Good);
        assert_eq!(Band::of(0.66), Band::Good);
        assert_eq!(Band::of(0.65), Band::Fair);
        assert_eq!(Band::of(0.44), Band::Fair);
        assert_eq!(Band::of(0.26), Band::Marginal);
        assert_eq!(Band::of(0.25), Band::Unacceptable);
    }

    proptest! {
        #[test]
        fn scale_invariance_and_magnitude_symmetry(
            xs in prop::collection::vec(-5.0..5.0f64, 20..120),
            ys in prop::collection::vec(-5.0..5.0f64, 20..120),
            k in 0.01..100.0f64,
        ) {
            let n = xs.len().min(ys.len());
            let x = Series::new(0.0, 100.0, xs[..n].to_vec()).unwrap();
            let y = Series::new(0.0, 100.0, ys[..n].to_vec()).unwrap();
            prop_assume!(xs[..n].iter().any(|v| (v - xs[0]).abs() > 1e-6));
            prop_assume!(ys[..n].iter().any(|v| (v - ys[0]).abs() > 1e-6));
            let p = CoraParams::default();
            let a = cora_score(&x, &y, &p).unwrap();
            let b = cora_score(&x.map(|v| k * v), &y.map(|v| k * v), &p).unwrap();
            prop_assert!((a.total - b.total).abs() < 1e-9);
            let c = cora_score(&y, &x, &p).unwrap();
            prop_assert!((a.magnitude - c.magnitude).abs() < 1e-15);
            let self_score = cora_score(&x, &x, &p).unwrap();
            prop_assert_eq!(self_score.total, 1.0);
        }
    }
}
