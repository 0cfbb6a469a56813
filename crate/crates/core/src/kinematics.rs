//! Rigid-body reconstruction: gyroscope averaging, adaptive low-pass
//! filtering, stencil differentiation and the three-accelerometer solve.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{skew, triangle_area, RotationMatrix, Vec3};
use crate::ingest::{CfcConfig, FilterConfig, ImuRecording, MIN_A3G1_AREA};
use crate::series::{rotate_series, Series, TimeSeries3};
use crate::wavelet::{
    butterworth_lowpass3, cfc_filter3, cwt, normalized_slices, select_cutoff, CutoffResult, CwtConfig,
};

/// Per-sample mean of head-frame angular velocities on one clock.
pub fn average_angular_velocity(gyros: &[TimeSeries3]) -> Result<TimeSeries3> {
    let first = gyros
        .first()
        .ok_or_else(|| Error::Invalid("no gyroscope series to average".into()))?;
    if let Some(bad) = gyros.iter().position(|g| !g.same_clock(first)) {
        return Err(Error::Invalid(format!(
            "gyroscope series {bad} is not on the clock of series 0"
        )));
    }
    let k = gyros.len() as f64;
    let samples = (0..first.len())
        .map(|i| gyros.iter().map(|g| g.samples()[i]).sum::<Vec3>() / k)
        .collect();
    Ok(first.with_samples(samples))
}

/// Settings for [`adaptive_filter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub cwt: CwtConfig,
    pub t_start: f64,
    pub t_end: f64,
    pub threshold: f64,
    pub cap: f64,
    pub order: usize,
}

impl AdaptiveConfig {
    /// Settings for the headband (`t_end` from `end_time_ms`) or, with
    /// `reference = true`, the reference slice time.
    pub fn from_filter(f: &FilterConfig, reference: bool) -> Self {
        let end_ms = if reference { f.reference_end_time_ms } else { f.end_time_ms };
        AdaptiveConfig {
            cwt: CwtConfig {
                omega0: f.morlet_omega0,
                voices_per_octave: f.voices_per_octave,
                min_freq: f.min_freq_hz,
            },
            t_start: 0.0,
            t_end: end_ms * 1e-3,
            threshold: f.coeff_threshold,
            cap: f.max_cutoff_hz,
            order: f.butterworth_order,
        }
    }
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig::from_filter(&FilterConfig::default(), false)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveOutput {
    pub filtered: TimeSeries3,
    /// Cutoff of the axis that set `f0`.
    pub cutoff: CutoffResult,
    /// Per-axis results; `None` for an identically zero axis.
    pub axes: [Option<CutoffResult>; 3],
}

impl AdaptiveOutput {
    pub fn f0(&self) -> f64 {
        self.cutoff.f0
    }
}

/// Cutoff analysis of each axis; the largest per-axis `f0` is applied to
/// all three axes with a zero-phase Butterworth.
pub fn adaptive_filter(omega_h: &TimeSeries3, cfg: &AdaptiveConfig) -> Result<AdaptiveOutput> {
    let mut axes: [Option<CutoffResult>; 3] = [None, None, None];
    for (axis, slot) in axes.iter_mut().enumerate() {
        let c = omega_h.component(axis);
        if c.samples().iter().all(|&v| v == 0.0) {
            continue;
        }
        let sc = cwt(&c, &cfg.cwt)?;
        let slices = normalized_slices(&sc, cfg.t_start, cfg.t_end)?;
        *slot = Some(select_cutoff(slices, cfg.threshold, cfg.cap));
    }
    let cutoff = axes
        .iter()
        .flatten()
        .max_by(|a, b| a.f0.total_cmp(&b.f0))
        .cloned()
        .ok_or_else(|| Error::Degenerate("angular velocity is identically zero".into()))?;
    let filtered = butterworth_lowpass3(omega_h, cutoff.f0, cfg.order)?;
    Ok(AdaptiveOutput {
        filtered,
        cutoff,
        axes,
    })
}

/// Five-point stencil derivative; the two samples at each end use
/// one-sided second-order differences.
pub fn five_point_derivative(x: &Series) -> Result<Series> {
    let v = x.samples();
    let n = v.len();
    if n < 5 {
        return Err(Error::Invalid(format!(
            "five-point derivative needs at least 5 samples, got {n}"
        )));
    }
    let dt = x.dt();
    let mut d = vec![0.0; n];
    for i in 2..n - 2 {
        d[i] = (-v[i + 2] + 8.0 * v[i + 1] - 8.0 * v[i - 1] + v[i - 2]) / (12.0 * dt);
    }
    for i in 0..2 {
        d[i] = (-3.0 * v[i] + 4.0 * v[i + 1] - v[i + 2]) / (2.0 * dt);
        let j = n - 1 - i;
        d[j] = (3.0 * v[j] - 4.0 * v[j - 1] + v[j - 2]) / (2.0 * dt);
    }
    Ok(x.with_samples(d))
}

pub fn five_point_derivative3(s: &TimeSeries3) -> Result<TimeSeries3> {
    let x = five_point_derivative(&s.component(0))?;
    let y = five_point_derivative(&s.component(1))?;
    let z = five_point_derivative(&s.component(2))?;
    TimeSeries3::from_components(&x, &y, &z)
}

/// Condition number of `GᵀG` above which the SVD pseudo-inverse is used.
const NORMAL_EQ_MAX_COND: f64 = 1e8;

/// Least-squares solver for `a_i − ω×(ω×r_i) = α×r_i + q`, i = 1..3.
///
/// The 9×6 geometry matrix depends only on the positions, so its
/// pseudo-inverse is formed once.
#[derive(Debug, Clone)]
pub struct A3g1Solver {
    positions: [Vec3; 3],
    geometry: SMatrix<f64, 9, 6>,
    pinv: SMatrix<f64, 6, 9>,
}

/// Per-sample solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A3g1Sample {
    pub alpha: Vec3,
    pub q: Vec3,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A3g1Output {
    pub alpha: TimeSeries3,
    pub q: TimeSeries3,
    /// Acceleration at the point of interest.
    pub a_point: TimeSeries3,
    pub residual: Series,
}

impl A3g1Solver {
    pub fn new(positions: [Vec3; 3]) -> Result<Self> {
        let [r1, r2, r3] = positions;
        let area = triangle_area(&r1, &r2, &r3);
        if !(area > MIN_A3G1_AREA) {
            return Err(Error::Config(format!(
                "A3G1 accelerometers are collinear (triangle area {area:.3e} m²)"
            )));
        }
        let mut g = SMatrix::<f64, 9, 6>::zeros();
        for (i, r) in positions.iter().enumerate() {
            g.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&(-skew(r)));
            g.fixed_view_mut::<3, 3>(3 * i, 3).fill_with_identity();
        }
        let gtg = g.transpose() * g;
        let sv = gtg.singular_values();
        let cond = sv.max() / sv.min();
        let pinv = match gtg.try_inverse() {
            Some(inv) if cond.is_finite() && cond <= NORMAL_EQ_MAX_COND => inv * g.transpose(),
            _ => {
                log::warn!("A3G1 normal equations ill-conditioned ({cond:.3e}); using SVD pseudo-inverse");
                g.pseudo_inverse(1e-12)
                    .map_err(|e| Error::Config(format!("A3G1 geometry is rank deficient: {e}")))?
            }
        };
        Ok(A3g1Solver {
            positions,
            geometry: g,
            pinv,
        })
    }

    pub fn positions(&self) -> &[Vec3; 3] {
        &self.positions
    }

    pub fn solve_sample(&self, accels: [Vec3; 3], omega: Vec3) -> A3g1Sample {
        let mut b = SVector::<f64, 9>::zeros();
        for i in 0..3 {
            let r = self.positions[i];
            let rhs = accels[i] - omega.cross(&omega.cross(&r));
            b.fixed_rows_mut::<3>(3 * i).copy_from(&rhs);
        }
        let x = self.pinv * b;
        let residual = (self.geometry * x - b).norm();
        A3g1Sample {
            alpha: x.fixed_rows::<3>(0).into_owned(),
            q: x.fixed_rows::<3>(3).into_owned(),
            residual,
        }
    }

    /// Solve every sample and evaluate the acceleration at `point`.
    pub fn solve(&self, accels: [&TimeSeries3; 3], omega: &TimeSeries3, point: Vec3) -> Result<A3g1Output> {
        if accels.iter().any(|a| !a.same_clock(omega)) {
            return Err(Error::Invalid(
                "A3G1 inputs must share the angular velocity clock".into(),
            ));
        }
        let n = omega.len();
        let mut alpha = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut a_point = Vec::with_capacity(n);
        let mut residual = Vec::with_capacity(n);
        for i in 0..n {
            let w = omega.samples()[i];
            let s = self.solve_sample(
                [accels[0].samples()[i], accels[1].samples()[i], accels[2].samples()[i]],
                w,
            );
            a_point.push(s.alpha.cross(&point) + w.cross(&w.cross(&point)) + s.q);
            alpha.push(s.alpha);
            q.push(s.q);
            residual.push(s.residual);
        }
        Ok(A3g1Output {
            alpha: omega.with_samples(alpha),
            q: omega.with_samples(q),
            a_point: omega.with_samples(a_point),
            residual: omega.with_samples(residual),
        })
    }
}

/// Which angular-acceleration series a kinematics export carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMethod {
    Diff,
    A3g1,
    #[default]
    Both,
}

impl std::str::FromStr for AlphaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diff" => Ok(AlphaMethod::Diff),
            "a3g1" => Ok(AlphaMethod::A3g1),
            "both" => Ok(AlphaMethod::Both),
            _ => Err(Error::Config(format!(
                "unknown alpha method {s:?}; expected diff, a3g1 or both"
            ))),
        }
    }
}

/// Reconstructed head kinematics for one event on one clock.
///
/// `q` is the specific force at the head-frame origin and includes gravity.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsSet {
    pub omega_h: TimeSeries3,
    pub omega_hf: TimeSeries3,
    pub alpha_diff: TimeSeries3,
    pub alpha_a3g1: TimeSeries3,
    pub a_ref_point: TimeSeries3,
    pub q: TimeSeries3,
    pub f0: f64,
    /// Cutoff analysis of the governing axis.
    pub cutoff: CutoffResult,
    /// Per-axis analyses; `None` for an identically zero axis.
    pub cutoff_axes: [Option<CutoffResult>; 3],
    pub a3g1_residual: Series,
}

impl KinematicsSet {
    /// Restrict every series to `[lo, hi]`.
    pub fn trimmed(&self, lo: f64, hi: f64) -> KinematicsSet {
        KinematicsSet {
            omega_h: self.omega_h.slice_time(lo, hi),
            omega_hf: self.omega_hf.slice_time(lo, hi),
            alpha_diff: self.alpha_diff.slice_time(lo, hi),
            alpha_a3g1: self.alpha_a3g1.slice_time(lo, hi),
            a_ref_point: self.a_ref_point.slice_time(lo, hi),
            q: self.q.slice_time(lo, hi),
            f0: self.f0,
            cutoff: self.cutoff.clone(),
            cutoff_axes: self.cutoff_axes.clone(),
            a3g1_residual: self.a3g1_residual.slice_time(lo, hi),
        }
    }

    /// One row per sample; `comment` lines go first, prefixed with `#`.
    pub fn write_csv(&self, path: impl AsRef<Path>, method: AlphaMethod, comment: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let io = |e| Error::io(path, e);
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(f, "# {line}").map_err(io)?;
            }
        }
        let mut cols: Vec<(&str, &TimeSeries3)> = vec![("omega_h", &self.omega_h), ("omega_hf", &self.omega_hf)];
        if method != AlphaMethod::A3g1 {
            cols.push(("alpha_diff", &self.alpha_diff));
        }
        if method != AlphaMethod::Diff {
            cols.push(("alpha_a3g1", &self.alpha_a3g1));
        }
        cols.push(("a_ref_point", &self.a_ref_point));
        cols.push(("q", &self.q));
        let mut header = vec!["time_s".to_string()];
        for (name, _) in &cols {
            for ax in ["x", "y", "z"] {
                header.push(format!("{name}_{ax}"));
            }
        }
        header.push("f0_hz".into());
        header.push("a3g1_residual".into());
        writeln!(f, "{}", header.join(",")).map_err(io)?;
        for i in 0..self.omega_h.len() {
            let mut row = vec![format!("{}", self.omega_h.time(i))];
            for (_, s) in &cols {
                let v = s.samples()[i];
                row.extend((0..3).map(|k| format!("{}", v[k])));
            }
            row.push(format!("{}", self.f0));
            row.push(format!("{}", self.a3g1_residual.samples()[i]));
            writeln!(f, "{}", row.join(",")).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

/// Reference-device kinematics in the head frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceKinematics {
    pub omega: TimeSeries3,
    pub alpha: TimeSeries3,
    pub accel: TimeSeries3,
}

/// Rotate to the head frame, apply the class filters and differentiate
/// the filtered angular velocity.
pub fn reference_kinematics(rec: &ImuRecording, orientation: &RotationMatrix, cfc: &CfcConfig) -> Result<ReferenceKinematics> {
    let omega = cfc_filter3(&rotate_series(&rec.gyro, orientation), cfc.ang_vel);
    let accel = cfc_filter3(&rotate_series(&rec.accel, orientation), cfc.trans);
    let alpha = five_point_derivative3(&omega)?;
    Ok(ReferenceKinematics { omega, alpha, accel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn triple() -> [Vec3; 3] {
        [
            Vec3::new(-0.02, -0.09, 0.05),
            Vec3::new(-0.02, 0.09, 0.05),
            Vec3::new(-0.10, 0.0, 0.06),
        ]
    }

    fn forward(r: &Vec3, w: &Vec3, al: &Vec3, q: &Vec3) -> Vec3 {
        al.cross(r) + w.cross(&w.cross(r)) + q
    }

    #[test]
    fn mean_of_two() {
        let a = TimeSeries3::new(0.0, 10.0, vec![Vec3::new(1.0, 0.0, 0.0); 4]).unwrap();
        let b = TimeSeries3::new(0.0, 10.0, vec![Vec3::new(3.0, 0.0, 0.0); 4]).unwrap();
        let m = average_angular_velocity(&[a.clone(), b]).unwrap();
        assert!(m.samples().iter().all(|v| *v == Vec3::new(2.0, 0.0, 0.0)));
        let same = average_angular_velocity(&vec![a.clone(); 5]).unwrap();
        assert_eq!(same, a);
        let off = TimeSeries3::new(0.1, 10.0, vec![Vec3::zeros(); 4]).unwrap();
        assert!(average_angular_velocity(&[a, off]).is_err());
    }

    #[test]
    fn averaging_reduces_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = 0.3;
        let noise = Normal::new(0.0, sigma).unwrap();
        let rate = 1125.0;
        let clean: Vec<Vec3> = (0..1000)
            .map(|i| Vec3::new((2.0 * PI * 8.0 * i as f64 / rate).sin(), 0.0, 0.0))
            .collect();
        let copies: Vec<TimeSeries3> = (0..5)
            .map(|_| {
                let s = clean
                    .iter()
                    .map(|v| v + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                    .collect();
                TimeSeries3::new(0.0, rate, s).unwrap()
            })
            .collect();
        let m = average_angular_velocity(&copies).unwrap();
        let res: Vec<f64> = m.samples().iter().zip(&clean).map(|(a, b)| a[0] - b[0]).collect();
        let sd = (res.iter().map(|v| v * v).sum::<f64>() / res.len() as f64).sqrt();
        assert!(sd < 0.6 * sigma, "{sd}");
    }

    #[test]
    fn stencil_constant_and_quartic() {
        let c = Series::new(0.0, 100.0, vec![3.0; 20]).unwrap();
        assert!(five_point_derivative(&c).unwrap().samples().iter().all(|v| v.abs() < 1e-12));
        let rate = 200.0;
        let t0 = 0.37;
        let x = Series::new(t0, rate, (0..50).map(|i| (t0 + i as f64 / rate).powi(4)).collect()).unwrap();
        let d = five_point_derivative(&x).unwrap();
        for i in 2..48 {
            let t = x.time(i);
            let exact = 4.0 * t.powi(3);
            assert!(((d.samples()[i] - exact) / exact).abs() < 1e-8, "{i}");
        }
        assert!(five_point_derivative(&Series::new(0.0, 1.0, vec![0.0; 4]).unwrap()).is_err());
    }

    #[test]
    fn stencil_sine() {
        let rate = 1125.0;
        let w = 2.0 * PI * 10.0;
        let x = Series::new(0.0, rate, (0..1125).map(|i| (w * i as f64 / rate).sin()).collect()).unwrap();
        let d = five_point_derivative(&x).unwrap();
        for i in 2..1123 {
            let exact = w * (w * x.time(i)).cos();
            assert!((d.samples()[i] - exact).abs() < 1e-4 * w, "{i}");
        }
    }

    #[test]
    fn pure_translation() {
        let s = A3g1Solver::new(triple()).unwrap();
        let a = Vec3::new(12.0, -3.0, 40.0);
        let out = s.solve_sample([a, a, a], Vec3::zeros());
        assert!(out.alpha.norm() < 1e-10);
        assert!((out.q - a).norm() < 1e-10);
        assert!(out.residual < 1e-10);
    }

    #[test]
    fn steady_spin() {
        let r = triple();
        let s = A3g1Solver::new(r).unwrap();
        let w = Vec3::new(0.0, 0.0, 7.0);
        let acc = r.map(|ri| Vec3::new(-49.0 * ri[0], -49.0 * ri[1], 0.0));
        let out = s.solve_sample(acc, w);
        assert!(out.alpha.norm() < 1e-9);
        assert!(out.q.norm() < 1e-9);
    }

    #[test]
    fn collinear_rejected() {
        let r = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        assert!(matches!(A3g1Solver::new(r), Err(Error::Config(_))));
    }

    #[test]
    fn zero_signal_is_degenerate() {
        let z = TimeSeries3::new(-0.05, 1125.0, vec![Vec3::zeros(); 300]).unwrap();
        assert!(matches!(adaptive_filter(&z, &AdaptiveConfig::default()), Err(Error::Degenerate(_))));
    }

    fn arb_vec(scale: f64) -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(move |(x, y, z)| Vec3::new(x, y, z) * scale)
    }

    proptest! {
        #[test]
        fn forward_inverse(w in arb_vec(20.0), al in arb_vec(3000.0), q in arb_vec(300.0)) {
            let r = triple();
            let s = A3g1Solver::new(r).unwrap();
            let acc = r.map(|ri| forward(&ri, &w, &al, &q));
            let out = s.solve_sample(acc, w);
            prop_assert!((out.alpha - al).norm() <= 1e-6 * al.norm().max(1.0));
            prop_assert!((out.q - q).norm() <= 1e-6 * q.norm().max(1.0));
            prop_assert!(out.residual < 1e-9);
        }

        #[test]
        fn gravity_shifts_q_only(w in arb_vec(20.0), al in arb_vec(3000.0), q in arb_vec(300.0), g in arb_vec(10.0)) {
            let r = triple();
            let s = A3g1Solver::new(r).unwrap();
            let acc = r.map(|ri| forward(&ri, &w, &al, &q));
            let base = s.solve_sample(acc, w);
            let shifted = s.solve_sample(acc.map(|a| a + g), w);
            prop_assert!((shifted.alpha - base.alpha).norm() < 1e-9);
            prop_assert!((shifted.q - base.q - g).norm() < 1e-9);
        }

        #[test]
        fn frame_covariance(
            w in arb_vec(20.0), al in arb_vec(3000.0), q in arb_vec(300.0),
            axis in arb_vec(1.0), angle in -3.0..3.0f64,
        ) {
            prop_assume!(axis.norm() > 0.1);
            let rot = RotationMatrix::from_axis_angle(axis, angle).unwrap();
            let r = triple();
            let acc = r.map(|ri| forward(&ri, &w, &al, &q));
            let base = A3g1Solver::new(r).unwrap().solve_sample(acc, w);
            let rr = r.map(|ri| rot.apply(&ri));
            let rot_out = A3g1Solver::new(rr).unwrap().solve_sample(acc.map(|a| rot.apply(&a)), rot.apply(&w));
            prop_assert!((rot_out.alpha - rot.apply(&base.alpha)).norm() < 1e-9);
            prop_assert!((rot_out.q - rot.apply(&base.q)).norm() < 1e-9);
        }

        #[test]
        fn averaging_commutes_with_rotation(
            vs in prop::collection::vec(arb_vec(10.0), 15),
            axis in arb_vec(1.0), angle in -3.0..3.0f64,
        ) {
            prop_assume!(axis.norm() > 0.1);
            let rot = RotationMatrix::from_axis_angle(axis, angle).unwrap();
            let gyros: Vec<TimeSeries3> = vs.chunks(3).map(|c| TimeSeries3::new(0.0, 100.0, c.to_vec()).unwrap()).collect();
            let a = rotate_series(&average_angular_velocity(&gyros).unwrap(), &rot);
            let rotated: Vec<TimeSeries3> = gyros.iter().map(|g| rotate_series(g, &rot)).collect();
            let b = average_angular_velocity(&rotated).unwrap();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }
    }
}
