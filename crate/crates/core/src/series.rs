//! Uniformly sampled signals and the frame / clock utilities shared by
//! every processing stage.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::geom::{RotationMatrix, Vec3};

/// Relative slack used when deciding whether a time lies on or inside a grid.
const GRID_EPS: f64 = 1e-9;

/// Uniformly sampled signal: sample `i` sits at `start_time + i / sample_rate`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<T> {
    start_time: f64,
    sample_rate: f64,
    samples: Vec<T>,
}

/// Three-component series (angular velocity, acceleration, ...).
pub type TimeSeries3 = TimeSeries<Vec3>;

/// Scalar series (resultants, single axes).
pub type Series = TimeSeries<f64>;

/// Sample types that can be interpolated.
pub trait Interpolate: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {}

impl<T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>> Interpolate for T {}

impl<T> TimeSeries<T> {
    pub fn new(start_time: f64, sample_rate: f64, samples: Vec<T>) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::Invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        if !start_time.is_finite() {
            return Err(Error::Invalid("start time must be finite".into()));
        }
        Ok(TimeSeries {
            start_time,
            sample_rate,
            samples,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_time + i as f64 / self.sample_rate
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| self.time(i))
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Same clock, new values.
    pub fn with_samples<U>(&self, samples: Vec<U>) -> TimeSeries<U> {
        TimeSeries {
            start_time: self.start_time,
            sample_rate: self.sample_rate,
            samples,
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> TimeSeries<U> {
        self.with_samples(self.samples.iter().map(f).collect())
    }

    /// Shift the clock by `offset` seconds.
    pub fn shifted(mut self, offset: f64) -> Self {
        self.start_time += offset;
        self
    }

    /// Index of the sample nearest to `t`, if `t` lies within half a sample of the support.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let pos = ((t - self.start_time) * self.sample_rate).round();
        if pos < 0.0 || pos > (self.samples.len() - 1) as f64 {
            None
        } else {
            Some(pos as usize)
        }
    }

    /// True when both series share rate, start time and length.
    pub fn same_clock<U>(&self, other: &TimeSeries<U>) -> bool {
        self.samples.len() == other.samples.len()
            && (self.sample_rate - other.sample_rate).abs() <= GRID_EPS * self.sample_rate
            && (self.start_time - other.start_time).abs() <= GRID_EPS * self.dt()
    }

    /// Samples whose times fall in `[t_lo, t_hi]`, re-stamped on the same clock.
    pub fn slice_time(&self, t_lo: f64, t_hi: f64) -> TimeSeries<T>
    where
        T: Clone,
    {
        let slack = GRID_EPS;
        let lo = ((t_lo - self.start_time) * self.sample_rate - slack).ceil().max(0.0) as usize;
        let hi_f = ((t_hi - self.start_time) * self.sample_rate + slack).floor();
        let hi = if hi_f < 0.0 {
            0
        } else {
            ((hi_f as usize) + 1).min(self.samples.len())
        };
        let lo = lo.min(hi);
        TimeSeries {
            start_time: self.time(lo),
            sample_rate: self.sample_rate,
            samples: self.samples[lo..hi].to_vec(),
        }
    }
}

impl<T: Interpolate> TimeSeries<T> {
    /// Cubic (Catmull-Rom) interpolated value at `t`; `None` outside the support.
    pub fn value_at(&self, t: f64) -> Option<T> {
        let n = self.samples.len();
        if n == 0 {
            return None;
        }
        let pos = (t - self.start_time) * self.sample_rate;
        let last = (n - 1) as f64;
        if pos < -GRID_EPS || pos > last + GRID_EPS {
            return None;
        }
        let pos = pos.clamp(0.0, last);
        Some(self.interp_index(pos))
    }

    fn interp_index(&self, pos: f64) -> T {
        let n = self.samples.len();
        let i = pos.floor() as usize;
        if i + 1 >= n {
            return self.samples[n - 1];
        }
        let x = pos - i as f64;
        let s = &self.samples;
        if x == 0.0 {
            return s[i];
        }
        // Catmull-Rom cubic; missing neighbours at the ends are linear
        // extrapolations, so ramps stay exact everywhere.
        let (p1, p2) = (s[i], s[i + 1]);
        let p0 = if i > 0 { s[i - 1] } else { p1 + (p1 - p2) };
        let p3 = if i + 2 < n { s[i + 2] } else { p2 + (p2 - p1) };
        let c1 = p2 - p0;
        let c2 = p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3;
        let c3 = (p1 - p2) * 3.0 + p3 - p0;
        p1 + (c1 + (c2 + c3 * x) * x) * (0.5 * x)
    }

    /// Interpolate onto the explicit grid `start + k / rate`, `k < n`.
    /// Fails if any grid point falls outside the support.
    pub fn resample_onto(&self, start: f64, rate: f64, n: usize) -> Result<TimeSeries<T>> {
        if self.samples.len() < 2 {
            return Err(Error::Invalid("resampling needs at least two samples".into()));
        }
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let t = start + k as f64 / rate;
            match self.value_at(t) {
                Some(v) => out.push(v),
                None => {
                    return Err(Error::Invalid(format!(
                        "grid time {t:.6} s lies outside series support [{:.6}, {:.6}] s",
                        self.start_time,
                        self.end_time()
                    )))
                }
            }
        }
        TimeSeries::new(start, rate, out)
    }
}

impl TimeSeries3 {
    /// Scalar series of one axis (0 = x, 1 = y, 2 = z).
    pub fn component(&self, axis: usize) -> Series {
        self.map(|v| v[axis])
    }

    /// Assemble from three scalar series on a common clock.
    pub fn from_components(x: &Series, y: &Series, z: &Series) -> Result<TimeSeries3> {
        if !x.same_clock(y) || !x.same_clock(z) {
            return Err(Error::Invalid("components do not share a clock".into()));
        }
        let samples = x
            .samples()
            .iter()
            .zip(y.samples())
            .zip(z.samples())
            .map(|((&a, &b), &c)| Vec3::new(a, b, c))
            .collect();
        Ok(x.with_samples(samples))
    }
}

/// Apply `r` to every sample; timing metadata is untouched.
pub fn rotate_series(s: &TimeSeries3, r: &RotationMatrix) -> TimeSeries3 {
    s.map(|v| r.apply(v))
}

/// Cubic interpolation onto a uniform grid at `target_rate` starting at the
/// first sample and spanning the original support without extrapolation.
pub fn resample<T: Interpolate>(s: &TimeSeries<T>, target_rate: f64) -> Result<TimeSeries<T>> {
    if !(target_rate > 0.0) || !target_rate.is_finite() {
        return Err(Error::Invalid(format!("target rate must be positive, got {target_rate}")));
    }
    if s.len() < 2 {
        return Err(Error::Invalid("resampling needs at least two samples".into()));
    }
    let step = s.sample_rate / target_rate;
    let span = (s.len() - 1) as f64;
    let n_out = ((span / step) + GRID_EPS).floor() as usize + 1;
    let samples = (0..n_out)
        .map(|k| s.interp_index((k as f64 * step).min(span)))
        .collect();
    TimeSeries::new(s.start_time, target_rate, samples)
}

/// Per-sample Euclidean norm.
pub fn magnitude(s: &TimeSeries3) -> Series {
    s.map(|v| v.norm())
}
