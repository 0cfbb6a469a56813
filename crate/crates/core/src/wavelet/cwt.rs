use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Series;

/// Shortest series accepted by [`cwt`].
pub const MIN_CWT_LEN: usize = 64;

/// Analytic Morlet wavelet and log-spaced frequency grid.
///
/// The wavelet is `ψ̂(ω) = 2 exp(-(ω - ω0)² / 2)` for `ω > 0` and zero
/// otherwise, applied with L1 scale normalisation so a sinusoid of
/// amplitude `A` produces a coefficient magnitude of `A` at its own
/// frequency. Scale `s` maps to frequency `ω0 / (2π s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwtConfig {
    pub omega0: f64,
    pub voices_per_octave: usize,
    pub min_freq: f64,
}

impl Default for CwtConfig {
    fn default() -> Self {
        CwtConfig {
            omega0: 6.0,
            voices_per_octave: 12,
            min_freq: 2.0,
        }
    }
}

/// `min_freq · 2^(k / voices)` up to `(rate / 2) / 2.001`.
pub fn frequency_grid(rate: f64, cfg: &CwtConfig) -> Vec<f64> {
    let f_max = 0.5 * rate / 2.001;
    let v = cfg.voices_per_octave.max(1) as f64;
    (0..)
        .map(|k| cfg.min_freq * (k as f64 / v).exp2())
        .take_while(|&f| f <= f_max)
        .collect()
}

/// CWT coefficient magnitudes on a time × frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalogram {
    pub times: Vec<f64>,
    /// Strictly increasing, Hz.
    pub freqs: Vec<f64>,
    /// `coeffs[j][i]` is `|W|` at `freqs[j]`, `times[i]`.
    pub coeffs: Vec<Vec<f64>>,
    /// Per time: frequencies below this value are within the cone of
    /// influence of the record edges.
    pub coi_freq: Vec<f64>,
}

impl Scalogram {
    pub fn time_index(&self, t: f64) -> Option<usize> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        let dt = if self.times.len() > 1 {
            (last - first) / (self.times.len() - 1) as f64
        } else {
            1.0
        };
        let pos = ((t - first) / dt).round();
        if pos < 0.0 || pos > (self.times.len() - 1) as f64 {
            None
        } else {
            Some(pos as usize)
        }
    }

    /// Coefficients at one time index across the frequency grid.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.coeffs.iter().map(|row| row[i]).collect()
    }

    /// Long-format CSV (`time_s, freq_hz, coeff`) for plotting.
    pub fn write_csv(&self, path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let mut w = crate::ingest::commented_csv_writer(path, comment)?;
        w.write_record(["time_s", "freq_hz", "coeff"]).map_err(|e| Error::csv(path, e))?;
        for (j, f) in self.freqs.iter().enumerate() {
            for (i, t) in self.times.iter().enumerate() {
                w.write_record([format!("{t}"), format!("{f}"), format!("{}", self.coeffs[j][i])])
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

// Whole-sample symmetric extension with period 2n.
fn reflect(m: i64, n: usize) -> usize {
    let n = n as i64;
    let p = m.rem_euclid(2 * n);
    (if p < n { p } else { 2 * n - 1 - p }) as usize
}

/// Continuous wavelet transform magnitudes of `x`.
pub fn cwt(x: &Series, cfg: &CwtConfig) -> Result<Scalogram> {
    let n = x.len();
    if n < MIN_CWT_LEN {
        return Err(Error::Invalid(format!(
            "CWT needs at least {MIN_CWT_LEN} samples, got {n}"
        )));
    }
    let rate = x.sample_rate();
    let freqs = frequency_grid(rate, cfg);
    if freqs.is_empty() {
        return Err(Error::Invalid(format!(
            "sample rate {rate} Hz leaves no frequencies above {} Hz",
            cfg.min_freq
        )));
    }
    let pad = n;
    let len = n + 2 * pad;
    let data = x.samples();
    let mut spectrum: Vec<Complex<f64>> = (0..len)
        .map(|k| Complex::new(data[reflect(k as i64 - pad as i64, n)], 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    fwd.process(&mut spectrum);

    // bin frequency in Hz for positive bins only; the wavelet is analytic
    let bin_hz: Vec<f64> = (0..len)
        .map(|k| if k <= len / 2 { k as f64 * rate / len as f64 } else { -1.0 })
        .collect();
    let scale = 1.0 / len as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut coeffs = Vec::with_capacity(freqs.len());
    for &f in &freqs {
        for k in 0..len {
            let fk = bin_hz[k];
            buf[k] = if fk > 0.0 {
                let d = cfg.omega0 * (fk / f) - cfg.omega0;
                spectrum[k] * (2.0 * (-0.5 * d * d).exp() * scale)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        inv.process(&mut buf);
        coeffs.push(buf[pad..pad + n].iter().map(|c| c.norm()).collect());
    }

    let times: Vec<f64> = x.times().collect();
    let coi_freq = (0..n)
        .map(|i| {
            let d = i.min(n - 1 - i) as f64 / rate;
            if d == 0.0 {
                f64::INFINITY
            } else {
                std::f64::consts::SQRT_2 * cfg.omega0 / (2.0 * PI * d)
            }
        })
        .collect();
    Ok(Scalogram {
        times,
        freqs,
        coeffs,
        coi_freq,
    })
}
