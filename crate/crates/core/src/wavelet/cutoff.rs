use serde::{Deserialize, Serialize};

use super::cwt::Scalogram;
use crate::error::{Error, Result};

/// Two normalised coefficient slices on a shared frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSlices {
    pub freqs: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
    /// `w̄(t_start, η)`; maximum exactly 1.
    pub start: Vec<f64>,
    /// `w̄(t_end, η)`, normalised by the same factor as `start`.
    pub end: Vec<f64>,
}

impl CoefficientSlices {
    pub fn delta(&self) -> Vec<f64> {
        self.start.iter().zip(&self.end).map(|(a, b)| a - b).collect()
    }
}

/// Coefficients at `t_start` and `t_end`, both divided by the maximum over
/// frequency of the `t_start` slice.
pub fn normalized_slices(sc: &Scalogram, t_start: f64, t_end: f64) -> Result<CoefficientSlices> {
    let span = || {
        format!(
            "scalogram spans [{:.4}, {:.4}] s",
            sc.times.first().copied().unwrap_or(f64::NAN),
            sc.times.last().copied().unwrap_or(f64::NAN)
        )
    };
    let i0 = sc
        .time_index(t_start)
        .ok_or_else(|| Error::Invalid(format!("slice time {t_start} s outside range; {}", span())))?;
    let i1 = sc
        .time_index(t_end)
        .ok_or_else(|| Error::Invalid(format!("slice time {t_end} s outside range; {}", span())))?;
    let raw_start = sc.column(i0);
    let raw_end = sc.column(i1);
    let peak = raw_start.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Degenerate(format!(
            "all wavelet coefficients are zero at t = {t_start} s"
        )));
    }
    Ok(CoefficientSlices {
        freqs: sc.freqs.clone(),
        t_start: sc.times[i0],
        t_end: sc.times[i1],
        start: raw_start.iter().map(|v| v / peak).collect(),
        end: raw_end.iter().map(|v| v / peak).collect(),
    })
}

/// Outcome of the adaptive cutoff rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffResult {
    /// Highest frequency where `w̄(t_end, η)` exceeds the threshold.
    pub f_ss: Option<f64>,
    /// Lowest frequency where `w̄(t_start, η) - w̄(t_end, η)` exceeds the threshold.
    pub f_n: Option<f64>,
    pub f0: f64,
    pub slices: CoefficientSlices,
}

/// `f0 = min(max(f_ss, f_n), cap)`; with no transient onset the cap is used.
pub fn cutoff_frequency(f_ss: Option<f64>, f_n: Option<f64>, cap: f64) -> f64 {
    match f_n {
        None => cap,
        Some(f_n) => f_ss.map_or(f_n, |f| f.max(f_n)).min(cap),
    }
}

pub fn select_cutoff(slices: CoefficientSlices, threshold: f64, cap: f64) -> CutoffResult {
    let f_n = slices
        .freqs
        .iter()
        .zip(slices.start.iter().zip(&slices.end))
        .find(|(_, (s, e))| *s - *e > threshold)
        .map(|(f, _)| *f);
    let f_ss = slices
        .freqs
        .iter()
        .zip(&slices.end)
        .rev()
        .find(|(_, e)| **e > threshold)
        .map(|(f, _)| *f);
    CutoffResult {
        f_ss,
        f_n,
        f0: cutoff_frequency(f_ss, f_n, cap),
        slices,
    }
}
