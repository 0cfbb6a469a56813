//! Agreement metrics between a reconstruction and a reference measurement.

mod cora;
mod stats;

pub use cora::{cora_score, Band, CoraParams, CoraScore};
pub use stats::{
    bland_altman, grouped_normalized_bias, nrmse_windowed, paired_t_test, peak_resultant,
    peak_resultant_in, BlandAltmanReport, GroupBias, Nrmse, Peak, TTest,
};
