//! Time-frequency analysis and low-pass filtering.
//!
//! [`cwt`] builds an analytic-Morlet scalogram, [`normalized_slices`] and
//! [`select_cutoff`] turn two of its time slices into a cutoff frequency, and
//! the [`filter`] submodule provides the zero-phase Butterworth and
//! channel-frequency-class filters applied at that cutoff.

mod cutoff;
mod cwt;
pub mod filter;

pub use cutoff::{cutoff_frequency, normalized_slices, select_cutoff, CoefficientSlices, CutoffResult};
pub use cwt::{cwt, frequency_grid, CwtConfig, Scalogram, MIN_CWT_LEN};
pub use filter::{butterworth_lowpass, butterworth_lowpass3, cfc_filter, cfc_filter3};
