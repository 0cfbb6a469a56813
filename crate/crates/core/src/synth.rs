//! Parametric rigid-body motion and sensor simulation.
//!
//! Angular velocity and origin acceleration are sums of Gaussian-windowed
//! cosines whose derivatives are evaluated in closed form, so the angular
//! acceleration fed to the simulated accelerometers is exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RotationMatrix, Vec3};
use crate::ingest::{
    commented_csv_writer, save_session_config, sensor_path, write_imu_csv, write_labels, write_reference_csv, ChannelKind, ImuRecording,
    ReferenceBlock, SensorRole, SensorSpec, SessionConfig, STANDARD_GRAVITY,
};
use crate::series::TimeSeries3;

/// `A · exp(-½((t - c)/σ)²) · cos(2π f (t - c) + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub amplitude: f64,
    pub freq_hz: f64,
    pub center_s: f64,
    pub width_s: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl WavePacket {
    pub fn value(&self, t: f64) -> f64 {
        let u = (t - self.center_s) / self.width_s;
        let arg = 2.0 * PI * self.freq_hz * (t - self.center_s) + self.phase_rad;
        self.amplitude * (-0.5 * u * u).exp() * arg.cos()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let u = (t - self.center_s) / self.width_s;
        let w = 2.0 * PI * self.freq_hz;
        let arg = w * (t - self.center_s) + self.phase_rad;
        let env = self.amplitude * (-0.5 * u * u).exp();
        env * (-(u / self.width_s) * arg.cos() - w * arg.sin())
    }
}

/// Packet sums per axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Packets3 {
    pub x: Vec<WavePacket>,
    pub y: Vec<WavePacket>,
    pub z: Vec<WavePacket>,
}

impl Packets3 {
    fn axes(&self) -> [&[WavePacket]; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn value(&self, t: f64) -> Vec3 {
        let a = self.axes();
        Vec3::from_fn(|i, _| a[i].iter().map(|p| p.value(t)).sum())
    }

    pub fn derivative(&self, t: f64) -> Vec3 {
        let a = self.axes();
        Vec3::from_fn(|i, _| a[i].iter().map(|p| p.derivative(t)).sum())
    }
}

/// One head impact. Packet centres are relative to `time_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderEvent {
    pub time_s: f64,
    pub label: String,
    /// Angular velocity, rad/s, head frame.
    pub omega: Packets3,
    /// Acceleration of the head-frame origin excluding gravity, m/s².
    pub q: Packets3,
}

/// Head motion over a whole session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub duration_s: f64,
    pub events: Vec<HeaderEvent>,
    /// Specific force of gravity in the head frame, m/s².
    #[serde(default = "default_gravity")]
    pub gravity: Vec3,
}

fn default_gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, STANDARD_GRAVITY)
}

/// Exact kinematic state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionState {
    pub omega: Vec3,
    pub alpha: Vec3,
    /// Origin acceleration excluding gravity.
    pub q: Vec3,
}

impl MotionState {
    /// Specific force at head-frame point `r` with gravity specific force `g`.
    pub fn specific_force(&self, r: &Vec3, g: &Vec3) -> Vec3 {
        self.alpha.cross(r) + self.omega.cross(&self.omega.cross(r)) + self.q + g
    }
}

impl MotionProfile {
    pub fn state(&self, t: f64) -> MotionState {
        let mut s = MotionState {
            omega: Vec3::zeros(),
            alpha: Vec3::zeros(),
            q: Vec3::zeros(),
        };
        for e in &self.events {
            let tau = t - e.time_s;
            s.omega += e.omega.value(tau);
            s.alpha += e.omega.derivative(tau);
            s.q += e.q.value(tau);
        }
        s
    }
}

/// Transient disturbance added to headband gyroscopes at each impact.
///
/// A sinusoid at `freq_hz` under a Hann window of `duration_s` starting at
/// the impact; the main lobe is about `2 / duration_s` wide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstNoise {
    /// rad/s
    pub amplitude: f64,
    pub freq_hz: f64,
    pub duration_s: f64,
    /// Per headband sensor amplitude factor, in configuration order;
    /// missing entries count as 1.
    #[serde(default)]
    pub sensor_scale: Vec<f64>,
}

impl BurstNoise {
    fn value(&self, tau: f64, phase: f64) -> f64 {
        if tau < 0.0 || tau > self.duration_s || self.duration_s <= 0.0 {
            return 0.0;
        }
        let hann = 0.5 - 0.5 * (2.0 * PI * tau / self.duration_s).cos();
        self.amplitude * hann * (2.0 * PI * self.freq_hz * tau + phase).sin()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// White noise sd per gyroscope axis, rad/s.
    pub gyro_sigma: f64,
    /// White noise sd per accelerometer axis, m/s².
    pub accel_sigma: f64,
    pub burst: Option<BurstNoise>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gyro_sigma >= 0.0) || !(self.accel_sigma >= 0.0) {
            return Err(Error::Config("noise sd must be non-negative".into()));
        }
        if let Some(b) = &self.burst {
            if !(b.duration_s >= 0.0) {
                return Err(Error::Config("burst duration must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Everything `simulate` needs besides the session configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationProfile {
    pub motion: MotionProfile,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Reference device clock minus headband clock, s.
    #[serde(default)]
    pub reference_skew_s: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<SimulationProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p: SimulationProfile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    p.noise.validate()?;
    if !(p.motion.duration_s > 0.0) {
        return Err(Error::Config("profile duration must be positive".into()));
    }
    Ok(p)
}

pub fn save_profile(p: &SimulationProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(p).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn clip(v: Vec3, limit: Option<f64>) -> Vec3 {
    match limit {
        Some(l) => v.map(|c| c.clamp(-l, l)),
        None => v,
    }
}

/// Simulate one device sampled at `k / rate` on its own clock, where
/// device time = physical time + `clock_offset`.
///
/// `sensor_index` selects the burst scale and the random stream.
pub fn simulate_sensor(
    motion: &MotionProfile,
    spec: &SensorSpec,
    noise: &NoiseSpec,
    clock_offset: f64,
    sensor_index: usize,
    seed: u64,
) -> Result<ImuRecording> {
    let n = (motion.duration_s * spec.rate).floor() as usize + 1;
    let to_sensor = spec.orientation.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sensor_index as u64 + 1);
    let gn = Normal::new(0.0, noise.gyro_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let an = Normal::new(0.0, noise.accel_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let phase = Uniform::new(0.0, 2.0 * PI).map_err(|e| Error::Config(e.to_string()))?;
    let burst_phase: Vec<[f64; 3]> = motion
        .events
        .iter()
        .map(|_| [phase.sample(&mut rng), phase.sample(&mut rng), phase.sample(&mut rng)])
        .collect();
    let burst = noise.burst.as_ref().filter(|_| spec.role == SensorRole::Headband);
    let scale = burst.map_or(0.0, |b| b.sensor_scale.get(sensor_index).copied().unwrap_or(1.0));
    let mut draw = |d: &Normal<f64>, sigma: f64| {
        if sigma > 0.0 {
            Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng))
        } else {
            Vec3::zeros()
        }
    };
    let gyro_lim = spec.range.gyro_dps.map(f64::to_radians);
    let low_lim = spec.range.accel_g.map(|g| g * STANDARD_GRAVITY);
    let high_lim = spec.range.high_g.map(|g| g * STANDARD_GRAVITY);
    let has_high = spec.has(ChannelKind::HighGAccelerometer);
    let (mut gyro, mut accel, mut high) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::new());
    for k in 0..n {
        let t = k as f64 / spec.rate - clock_offset;
        let st = motion.state(t);
        let mut w = st.omega;
        if let Some(b) = burst {
            for (e, ph) in motion.events.iter().zip(&burst_phase) {
                let tau = t - e.time_s;
                w += scale * Vec3::new(b.value(tau, ph[0]), b.value(tau, ph[1]), b.value(tau, ph[2]));
            }
        }
        let f = to_sensor.apply(&st.specific_force(&spec.position, &motion.gravity));
        gyro.push(clip(to_sensor.apply(&w) + draw(&gn, noise.gyro_sigma), gyro_lim));
        accel.push(clip(f + draw(&an, noise.accel_sigma), low_lim));
        if has_high {
            high.push(clip(f + draw(&an, noise.accel_sigma), high_lim));
        }
    }
    let mk = |v| TimeSeries3::new(0.0, spec.rate, v);
    Ok(ImuRecording {
        sensor_id: spec.id.clone(),
        gyro: mk(gyro)?,
        accel: mk(accel)?,
        accel_high: if has_high { Some(mk(high)?) } else { None },
    })
}

/// Continuous recordings for every configured sensor; the reference
/// device runs on a clock offset by `reference_skew`.
pub fn simulate_sensors(
    motion: &MotionProfile,
    specs: &[SensorSpec],
    noise: &NoiseSpec,
    reference_skew: f64,
    seed: u64,
) -> Result<Vec<ImuRecording>> {
    noise.validate()?;
    let mut hb_index = 0;
    specs
        .iter()
        .map(|s| {
            let (offset, idx) = match s.role {
                SensorRole::Reference => (reference_skew, usize::MAX - 1),
                SensorRole::Headband => {
                    hb_index += 1;
                    (0.0, hb_index - 1)
                }
            };
            simulate_sensor(motion, s, noise, offset, idx, seed)
        })
        .collect()
}

/// Cut fixed-length blocks from a continuous reference recording wherever
/// its accelerometer resultant exceeds `threshold` for longer than
/// `min_duration`. Mirrors the device's hardware trigger.
pub fn reference_blocks(
    rec: &ImuRecording,
    threshold: f64,
    min_duration: f64,
    pre: f64,
    post: f64,
) -> Result<Vec<ReferenceBlock>> {
    let rate = rec.accel.sample_rate();
    let n_pre = (pre * rate).round() as usize;
    let n_post = (post * rate).round() as usize;
    let a = rec.accel.samples();
    let mut blocks = Vec::new();
    let mut i = 0;
    let mut next_free = 0;
    while i < a.len() {
        if a[i].norm() <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < a.len() && a[i].norm() > threshold {
            i += 1;
        }
        if (i - start) as f64 / rate <= min_duration || start < next_free || start < n_pre {
            continue;
        }
        let (lo, hi) = (start - n_pre, start + n_post);
        if hi > a.len() {
            break;
        }
        let cut = |s: &TimeSeries3| TimeSeries3::new(s.time(lo), rate, s.samples()[lo..hi].to_vec());
        blocks.push(ReferenceBlock {
            event_id: format!("ref-{:03}", blocks.len() + 1),
            trigger_time: rec.accel.time(start),
            recording: ImuRecording {
                sensor_id: rec.sensor_id.clone(),
                gyro: cut(&rec.gyro)?,
                accel: cut(&rec.accel)?,
                accel_high: match &rec.accel_high {
                    Some(h) => Some(cut(h)?),
                    None => None,
                },
            },
        });
        next_free = hi;
    }
    Ok(blocks)
}

/// Exact peaks of one event over a physical-time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPeaks {
    pub event_id: String,
    pub label: String,
    /// Physical time of the reference trigger, s.
    pub t_trigger: f64,
    pub prv: f64,
    pub pra: f64,
    /// Peak specific force at the point of interest, gravity included.
    pub pla: f64,
}

/// Evaluate peaks of |ω|, |α| and the specific force at `point` on a
/// dense grid over `[t_lo, t_hi]`.
pub fn truth_peaks(motion: &MotionProfile, point: &Vec3, t_lo: f64, t_hi: f64, step: f64) -> (f64, f64, f64) {
    let n = ((t_hi - t_lo) / step).round() as usize;
    let mut peaks = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..=n {
        let st = motion.state(t_lo + k as f64 * step);
        peaks.0 = peaks.0.max(st.omega.norm());
        peaks.1 = peaks.1.max(st.alpha.norm());
        peaks.2 = peaks.2.max(st.specific_force(point, &motion.gravity).norm());
    }
    peaks
}

/// A simulated session ready to be written.
#[derive(Debug, Clone)]
pub struct SimulatedSession {
    pub config: SessionConfig,
    /// Headband recordings in configuration order.
    pub headband: Vec<ImuRecording>,
    pub reference: Vec<ReferenceBlock>,
    pub labels: BTreeMap<String, String>,
    pub truth: Vec<TruthPeaks>,
}

/// Simulate all devices, cut reference blocks and label them with the
/// nearest profile event.
pub fn simulate_session(cfg: &SessionConfig, profile: &SimulationProfile) -> Result<SimulatedSession> {
    cfg.validate()?;
    let recs = simulate_sensors(
        &profile.motion,
        &cfg.sensors,
        &profile.noise,
        profile.reference_skew_s,
        profile.seed,
    )?;
    let mut headband = Vec::new();
    let mut reference_rec = None;
    for (spec, rec) in cfg.sensors.iter().zip(recs) {
        match spec.role {
            SensorRole::Headband => headband.push(rec),
            SensorRole::Reference => reference_rec = Some(rec),
        }
    }
    let reference_rec = reference_rec.ok_or_else(|| Error::Config("no reference sensor".into()))?;
    let w = &cfg.windows;
    let reference = reference_blocks(
        &reference_rec,
        cfg.trigger.threshold_g * STANDARD_GRAVITY,
        cfg.trigger.min_duration_ms * 1e-3,
        w.reference_pre_ms * 1e-3,
        w.reference_post_ms * 1e-3,
    )?;
    let mut labels = BTreeMap::new();
    let mut truth = Vec::new();
    for b in &reference {
        let t_phys = b.trigger_time - profile.reference_skew_s;
        let Some(e) = profile
            .motion
            .events
            .iter()
            .min_by(|x, y| (x.time_s - t_phys).abs().total_cmp(&(y.time_s - t_phys).abs()))
        else {
            continue;
        };
        labels.insert(b.event_id.clone(), e.label.clone());
        let (prv, pra, pla) = truth_peaks(
            &profile.motion,
            &cfg.reference_point,
            t_phys - w.reference_pre_ms * 1e-3,
            t_phys + w.reference_post_ms * 1e-3,
            1.0 / 20_000.0,
        );
        truth.push(TruthPeaks {
            event_id: b.event_id.clone(),
            label: e.label.clone(),
            t_trigger: t_phys,
            prv,
            pra,
            pla,
        });
    }
    Ok(SimulatedSession {
        config: cfg.clone(),
        headband,
        reference,
        labels,
        truth,
    })
}

pub const CONFIG_FILE: &str = "config.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// Write device CSVs, labels, ground truth and the configuration into `dir`.
/// `comment` heads every CSV file.
pub fn write_session(session: &SimulatedSession, dir: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let dir = dir.as_ref();
    if session.headband.is_empty() {
        return Err(Error::Invalid("no recordings to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &session.config;
    let layout = cfg.layout();
    for (spec, rec) in cfg.headband().zip(&session.headband) {
        write_imu_csv(sensor_path(dir, spec), rec, &layout, comment)?;
    }
    let reference = cfg
        .reference()
        .ok_or_else(|| Error::Config("no reference sensor".into()))?;
    write_reference_csv(sensor_path(dir, reference), &session.reference, &layout, comment)?;
    write_labels(dir.join(LABELS_FILE), &session.labels, comment)?;
    write_truth(dir.join(TRUTH_FILE), &session.truth, comment)?;
    save_session_config(cfg, dir.join(CONFIG_FILE))
}

pub fn write_truth(path: impl AsRef<Path>, rows: &[TruthPeaks], comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut w = commented_csv_writer(path, comment)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<TruthPeaks>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<TruthPeaks>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Launch-condition tiers of the bundled session, mildest first.
pub const TIERS: [&str; 3] = ["throw-in", "goal-kick", "corner-kick"];

// (swing rad/s, impact oscillation rad/s, contact force m/s²)
const TIER_LEVELS: [(f64, f64, f64); 3] = [(4.6, 1.5, 120.0), (6.6, 2.6, 170.0), (8.6, 3.7, 230.0)];

/// One header: a slow forward pitch swing peaking after contact, a short
/// angular oscillation about the roll axis at contact, and a contact
/// force pushing the head back and up.
pub fn header_event(time_s: f64, label: &str, swing: f64, impact: f64, force: f64) -> HeaderEvent {
    let p = |amplitude, freq_hz, center_s, width_s, phase_rad| WavePacket {
        amplitude,
        freq_hz,
        center_s,
        width_s,
        phase_rad,
    };
    HeaderEvent {
        time_s,
        label: label.to_string(),
        omega: Packets3 {
            x: vec![p(impact, 90.0, 0.004, 0.0035, 0.0)],
            y: vec![p(swing, 1.5, 0.045, 0.12, 0.0)],
            z: vec![p(0.2 * swing, 2.0, 0.03, 0.1, 0.5)],
        },
        q: Packets3 {
            x: vec![p(-force, 0.0, 0.005, 0.004, 0.0)],
            y: vec![p(0.1 * force, 0.0, 0.005, 0.004, 0.0)],
            z: vec![p(0.35 * force, 0.0, 0.006, 0.005, 0.0)],
        },
    }
}

/// Eighteen headers, six per tier, one second apart, with small
/// deterministic variation inside each tier.
pub fn header_session_profile(noise: NoiseSpec, seed: u64) -> SimulationProfile {
    let mut events = Vec::new();
    for (k, (label, (swing, impact, force))) in TIERS.iter().zip(TIER_LEVELS).enumerate() {
        for j in 0..6 {
            let v = 1.0 + 0.04 * (j as f64 - 2.5);
            let i = k * 6 + j;
            events.push(header_event(1.0 + i as f64, label, swing * v, impact * v, force * v));
        }
    }
    SimulationProfile {
        motion: MotionProfile {
            duration_s: 1.0 + events.len() as f64,
            events,
            gravity: default_gravity(),
        },
        noise,
        reference_skew_s: 0.020,
        seed,
    }
}

/// Illustrative five-sensor headband plus a mouthpiece-style reference.
pub fn example_config() -> SessionConfig {
    let rz = |deg: f64| RotationMatrix::from_axis_angle(Vec3::z(), deg.to_radians()).expect("unit axis");
    let tilt = |deg: f64, pitch: f64| {
        rz(deg).compose(&RotationMatrix::from_axis_angle(Vec3::y(), pitch.to_radians()).expect("unit axis"))
    };
    let hb = |id: &str, pos: [f64; 3], orientation: RotationMatrix| SensorSpec {
        id: id.to_string(),
        role: SensorRole::Headband,
        position: Vec3::from(pos),
        orientation,
        channels: vec![ChannelKind::Gyroscope, ChannelKind::Accelerometer, ChannelKind::HighGAccelerometer],
        rate: 1125.0,
        range: crate::ingest::ChannelRanges {
            gyro_dps: Some(2000.0),
            accel_g: Some(16.0),
            high_g: Some(200.0),
        },
        file: None,
    };
    let mut sensors = vec![
        hb("hb_right", [-0.005, -0.080, 0.050], tilt(-90.0, 5.0)),
        hb("hb_front_right", [0.070, -0.050, 0.055], tilt(-35.0, 0.0)),
        hb("hb_front_left", [0.070, 0.050, 0.055], tilt(35.0, 0.0)),
        hb("hb_left", [-0.005, 0.080, 0.050], tilt(90.0, -5.0)),
        hb("hb_back", [-0.095, 0.0, 0.060], tilt(180.0, 10.0)),
    ];
    sensors.push(SensorSpec {
        id: "reference".into(),
        role: SensorRole::Reference,
        position: Vec3::new(0.080, 0.0, -0.060),
        orientation: rz(180.0),
        channels: vec![ChannelKind::Gyroscope, ChannelKind::Accelerometer],
        rate: 3200.0,
        range: crate::ingest::ChannelRanges {
            gyro_dps: Some(4000.0),
            accel_g: Some(200.0),
            high_g: None,
        },
        file: None,
    });
    SessionConfig {
        sensors,
        reference_point: Vec3::new(0.080, 0.0, -0.060),
        a3g1_sensors: ["hb_right".into(), "hb_left".into(), "hb_back".into()],
        a3g1_gyro: Default::default(),
        a3g1_accel: Default::default(),
        trigger: Default::default(),
        filter: Default::default(),
        cfc: Default::default(),
        windows: Default::default(),
        columns: Default::default(),
        units: Default::default(),
        device_rates: vec![1125.0, 1600.0, 3200.0],
        cora: Default::default(),
    }
}
