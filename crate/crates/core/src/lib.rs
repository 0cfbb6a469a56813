//! Head kinematics reconstruction from multi-IMU headband recordings.
//!
//! The crate covers device CSV ingest, impact detection and windowing,
//! wavelet-adaptive filtering, rigid-body reconstruction of angular and
//! translational acceleration, agreement metrics against a reference
//! sensor, and a simulator that produces matching synthetic sessions.

pub mod detect;
pub mod error;
pub mod evaluate;
pub mod geom;
pub mod ingest;
pub mod kinematics;
pub mod pipeline;
pub mod series;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use geom::{RotationMatrix, Vec3};
pub use series::{Series, TimeSeries, TimeSeries3};
