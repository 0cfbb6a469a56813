//! Session configuration and device CSV import/export.
//!
//! Headband devices export one continuous CSV per sensor with columns
//! `time_s, gx, gy, gz, ax, ay, az[, hx, hy, hz]`; the reference device
//! exports fixed-length event blocks with an additional `event_id`
//! column. Column names and units can be remapped through the `columns`
//! and `units` blocks of the session configuration.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::CoraParams;
use crate::geom::{triangle_area, RotationMatrix, Vec3};
use crate::series::TimeSeries3;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Minimum triangle area (m²) for the A3G1 accelerometer triple.
pub const MIN_A3G1_AREA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Gyroscope,
    /// Low-g accelerometer; the only accelerometer on single-accel devices.
    Accelerometer,
    HighGAccelerometer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorRole {
    #[default]
    Headband,
    Reference,
}

/// Full-scale ranges in device units (deg/s, g).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelRanges {
    pub gyro_dps: Option<f64>,
    pub accel_g: Option<f64>,
    pub high_g: Option<f64>,
}

/// Geometry and channel description of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    #[serde(default)]
    pub role: SensorRole,
    /// Position in the head frame, m.
    pub position: Vec3,
    /// Sensor-to-head rotation.
    pub orientation: RotationMatrix,
    pub channels: Vec<ChannelKind>,
    /// Sample rate shared by all channels of the device, Hz.
    pub rate: f64,
    #[serde(default)]
    pub range: ChannelRanges,
    /// Data file relative to the session directory; defaults to `<id>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl SensorSpec {
    pub fn has(&self, kind: ChannelKind) -> bool {
        self.channels.contains(&kind)
    }

    pub fn file_name(&self) -> String {
        self.file.clone().unwrap_or_else(|| format!("{}.csv", self.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub threshold_g: f64,
    pub min_duration_ms: f64,
    /// Headband sensor whose accelerometer drives the trigger; defaults to
    /// the first A3G1 sensor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sensor: Option<String>,
    /// Subtract 1 g from the resultant before thresholding.
    pub subtract_gravity: bool,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            threshold_g: 3.0,
            min_duration_ms: 3.0,
            sensor: None,
            subtract_gravity: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// End slice time for the headband scalogram, ms after the trigger.
    pub end_time_ms: f64,
    /// End slice time for the reference scalogram, ms after the trigger.
    pub reference_end_time_ms: f64,
    pub coeff_threshold: f64,
    pub max_cutoff_hz: f64,
    pub accel_prefilter_hz: f64,
    pub butterworth_order: usize,
    pub voices_per_octave: usize,
    pub min_freq_hz: f64,
    /// Morlet centre frequency parameter (rad).
    pub morlet_omega0: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            end_time_ms: 150.0,
            reference_end_time_ms: 90.0,
            coeff_threshold: 0.1,
            max_cutoff_hz: 180.0,
            accel_prefilter_hz: 260.0,
            butterworth_order: 4,
            voices_per_octave: 12,
            min_freq_hz: 2.0,
            morlet_omega0: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfcConfig {
    pub trans: f64,
    pub ang_vel: f64,
}

impl Default for CfcConfig {
    fn default() -> Self {
        CfcConfig {
            trans: 1000.0,
            ang_vel: 155.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub pre_ms: f64,
    pub post_ms: f64,
    pub reference_pre_ms: f64,
    pub reference_post_ms: f64,
    /// Extra data taken on both sides of the headband window for the
    /// wavelet analysis and filters; trimmed from the outputs.
    pub analysis_margin_ms: f64,
    /// Largest trigger-time difference accepted when pairing devices, s.
    pub max_pair_offset_s: f64,
    /// Half-width of the cross-correlation offset search, ms.
    pub refine_search_ms: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            pre_ms: 31.25,
            post_ms: 150.0,
            reference_pre_ms: 31.25,
            reference_post_ms: 93.75,
            analysis_margin_ms: 50.0,
            max_pair_offset_s: 1.0,
            refine_search_ms: 10.0,
        }
    }
}

/// CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: String,
    pub gyro: [String; 3],
    pub accel: [String; 3],
    pub accel_high: [String; 3],
    pub event: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let s = |a: &str, b: &str, c: &str| [a.to_string(), b.to_string(), c.to_string()];
        ColumnMap {
            time: "time_s".into(),
            gyro: s("gx", "gy", "gz"),
            accel: s("ax", "ay", "az"),
            accel_high: s("hx", "hy", "hz"),
            event: "event_id".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GyroUnit {
    #[default]
    DegPerS,
    RadPerS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelUnit {
    #[default]
    G,
    MPerS2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitConfig {
    pub gyro: GyroUnit,
    pub accel: AccelUnit,
}

impl GyroUnit {
    pub fn to_si(self, v: f64) -> f64 {
        match self {
            GyroUnit::DegPerS => v / (180.0 / PI),
            GyroUnit::RadPerS => v,
        }
    }

    pub fn from_si(self, v: f64) -> f64 {
        match self {
            GyroUnit::DegPerS => v * (180.0 / PI),
            GyroUnit::RadPerS => v,
        }
    }
}

impl AccelUnit {
    pub fn to_si(self, v: f64) -> f64 {
        match self {
            AccelUnit::G => v * STANDARD_GRAVITY,
            AccelUnit::MPerS2 => v,
        }
    }

    pub fn from_si(self, v: f64) -> f64 {
        match self {
            AccelUnit::G => v / STANDARD_GRAVITY,
            AccelUnit::MPerS2 => v,
        }
    }
}

/// Column names plus units: everything needed to read or write a device CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvLayout {
    pub columns: ColumnMap,
    pub units: UnitConfig,
}

/// Angular velocity source for the A3G1 solve.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GyroSource {
    /// Filtered average of all headband gyroscopes.
    #[default]
    Average,
    /// A single headband gyroscope, filtered at the same cutoff.
    Single(String),
}

/// Accelerometer channel fed to the A3G1 solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelChannel {
    Low,
    #[default]
    High,
}

fn default_device_rates() -> Vec<f64> {
    vec![1125.0, 1600.0, 3200.0]
}

/// Everything describing one recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub sensors: Vec<SensorSpec>,
    /// Point of interest (reference sensor location) in the head frame, m.
    pub reference_point: Vec3,
    /// The three headband sensors whose accelerometers feed the A3G1 solve.
    pub a3g1_sensors: [String; 3],
    #[serde(default)]
    pub a3g1_gyro: GyroSource,
    #[serde(default)]
    pub a3g1_accel: AccelChannel,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub cfc: CfcConfig,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub units: UnitConfig,
    #[serde(default = "default_device_rates")]
    pub device_rates: Vec<f64>,
    #[serde(default)]
    pub cora: CoraParams,
}

impl SessionConfig {
    pub fn layout(&self) -> CsvLayout {
        CsvLayout {
            columns: self.columns.clone(),
            units: self.units,
        }
    }

    pub fn sensor(&self, id: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.id == id)
    }

    pub fn headband(&self) -> impl Iterator<Item = &SensorSpec> {
        self.sensors.iter().filter(|s| s.role == SensorRole::Headband)
    }

    pub fn reference(&self) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.role == SensorRole::Reference)
    }

    /// Sensor that drives the headband trigger.
    pub fn trigger_sensor(&self) -> &str {
        self.trigger.sensor.as_deref().unwrap_or(&self.a3g1_sensors[0])
    }

    /// Positions of the A3G1 accelerometer triple.
    pub fn a3g1_positions(&self) -> Result<[Vec3; 3]> {
        let mut out = [Vec3::zeros(); 3];
        for (slot, id) in out.iter_mut().zip(&self.a3g1_sensors) {
            *slot = self
                .sensor(id)
                .ok_or_else(|| Error::Config(format!("A3G1 sensor {id} is not declared")))?
                .position;
        }
        Ok(out)
    }

    /// Check every structural invariant of the configuration.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sensors {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate sensor id {}", s.id)));
            }
            if s.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("sensor {} has a non-finite position", s.id)));
            }
            if !self.device_rates.iter().any(|r| (r - s.rate).abs() < 1e-9) {
                return Err(Error::Config(format!(
                    "sensor {} rate {} Hz is not a declared device rate {:?}",
                    s.id, s.rate, self.device_rates
                )));
            }
            if !s.has(ChannelKind::Gyroscope) || !s.has(ChannelKind::Accelerometer) {
                return Err(Error::Config(format!(
                    "sensor {} must carry a gyroscope and an accelerometer",
                    s.id
                )));
            }
        }
        if self.reference_point.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("reference point is not finite".into()));
        }
        let n_ref = self.sensors.iter().filter(|s| s.role == SensorRole::Reference).count();
        if n_ref != 1 {
            return Err(Error::Config(format!(
                "expected exactly one reference sensor, found {n_ref}"
            )));
        }
        if self.headband().count() == 0 {
            return Err(Error::Config("no headband sensors declared".into()));
        }
        let accel_bearing = self.headband().count();
        if accel_bearing < 3 {
            return Err(Error::Config(format!(
                "A3G1 needs at least three accelerometer-bearing headband sensors, found {accel_bearing}"
            )));
        }
        for id in &self.a3g1_sensors {
            let s = self
                .sensor(id)
                .ok_or_else(|| Error::Config(format!("A3G1 sensor {id} is not declared")))?;
            if s.role != SensorRole::Headband {
                return Err(Error::Config(format!("A3G1 sensor {id} is not a headband sensor")));
            }
            if self.a3g1_accel == AccelChannel::High && !s.has(ChannelKind::HighGAccelerometer) {
                return Err(Error::Config(format!(
                    "A3G1 sensor {id} has no high-g accelerometer"
                )));
            }
        }
        let a = &self.a3g1_sensors;
        if a[0] == a[1] || a[1] == a[2] || a[0] == a[2] {
            return Err(Error::Config("A3G1 sensors must be distinct".into()));
        }
        let [r1, r2, r3] = self.a3g1_positions()?;
        let area = triangle_area(&r1, &r2, &r3);
        if !(area > MIN_A3G1_AREA) {
            return Err(Error::Config(format!(
                "A3G1 accelerometers are collinear (triangle area {area:.3e} m²)"
            )));
        }
        if let GyroSource::Single(id) = &self.a3g1_gyro {
            match self.sensor(id) {
                Some(s) if s.role == SensorRole::Headband => {}
                _ => {
                    return Err(Error::Config(format!(
                        "single-gyro source {id} is not a headband sensor"
                    )))
                }
            }
        }
        let trig = self.trigger_sensor();
        match self.sensor(trig) {
            Some(s) if s.role == SensorRole::Headband => {}
            _ => return Err(Error::Config(format!("trigger sensor {trig} is not a headband sensor"))),
        }
        if !(self.trigger.threshold_g > 0.0) || !(self.trigger.min_duration_ms >= 0.0) {
            return Err(Error::Config("trigger threshold must be positive".into()));
        }
        let f = &self.filter;
        if !(f.max_cutoff_hz > 0.0) || !(f.coeff_threshold > 0.0) || !(f.accel_prefilter_hz > 0.0) {
            return Err(Error::Config("filter parameters must be positive".into()));
        }
        if f.butterworth_order == 0 || f.butterworth_order % 2 != 0 {
            return Err(Error::Config("Butterworth order must be a positive even number".into()));
        }
        let w = &self.windows;
        if !(w.pre_ms >= 0.0 && w.post_ms > 0.0 && w.reference_pre_ms >= 0.0 && w.reference_post_ms > 0.0)
        {
            return Err(Error::Config("window spans must be non-negative".into()));
        }
        if w.post_ms < f.end_time_ms {
            return Err(Error::Config(format!(
                "headband window ({} ms) ends before the wavelet end slice ({} ms)",
                w.post_ms, f.end_time_ms
            )));
        }
        self.cora.validate()?;
        Ok(())
    }
}

/// Read and validate a session configuration.
pub fn load_session_config(path: impl AsRef<Path>) -> Result<SessionConfig> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let cfg: SessionConfig = serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        if e.is_data() {
            Error::Config(format!("{}: {e}", path.display()))
        } else {
            Error::json(path, e)
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_session_config(cfg: &SessionConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, cfg).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One device's channels in SI units and the device frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecording {
    pub sensor_id: String,
    /// rad/s
    pub gyro: TimeSeries3,
    /// m/s²; the single accelerometer on reference devices.
    pub accel: TimeSeries3,
    /// m/s²
    pub accel_high: Option<TimeSeries3>,
}

impl ImuRecording {
    /// Accelerometer used for triggering: high-g when present.
    pub fn trigger_accel(&self) -> &TimeSeries3 {
        self.accel_high.as_ref().unwrap_or(&self.accel)
    }

    pub fn accel_channel(&self, ch: AccelChannel) -> &TimeSeries3 {
        match ch {
            AccelChannel::High => self.trigger_accel(),
            AccelChannel::Low => &self.accel,
        }
    }
}

/// One fixed-length event block from the reference device.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBlock {
    pub event_id: String,
    /// Device-clock time of the trigger, s.
    pub trigger_time: f64,
    pub recording: ImuRecording,
}

struct Columns {
    time: usize,
    event: Option<usize>,
    gyro: [usize; 3],
    accel: [usize; 3],
    accel_high: Option<[usize; 3]>,
}

fn find_columns(
    path: &Path,
    headers: &csv::StringRecord,
    map: &ColumnMap,
    need_event: bool,
    need_high: bool,
) -> Result<Columns> {
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let req = |name: &str| {
        idx(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("missing column {name}"),
        })
    };
    let triple = |names: &[String; 3]| -> Result<[usize; 3]> {
        Ok([req(&names[0])?, req(&names[1])?, req(&names[2])?])
    };
    let event = if need_event { Some(req(&map.event)?) } else { None };
    let accel_high = if need_high {
        Some(triple(&map.accel_high)?)
    } else if map.accel_high.iter().all(|n| idx(n).is_some()) {
        Some(triple(&map.accel_high)?)
    } else {
        None
    };
    Ok(Columns {
        time: req(&map.time)?,
        event,
        gyro: triple(&map.gyro)?,
        accel: triple(&map.accel)?,
        accel_high,
    })
}

struct Row {
    line: usize,
    event: Option<String>,
    time: f64,
    gyro: Vec3,
    accel: Vec3,
    accel_high: Option<Vec3>,
}

fn read_rows(path: &Path, layout: &CsvLayout, need_event: bool, need_high: bool) -> Result<Vec<Row>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = find_columns(path, &headers, &layout.columns, need_event, need_high)?;
    let units = layout.units;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            let cell = rec.get(i).unwrap_or("");
            let name = headers.get(i).unwrap_or("?");
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                path: path.to_path_buf(),
                row: line,
                msg: format!("column {name}: cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    row: line,
                    msg: format!("column {name}: non-finite value {cell:?}"),
                });
            }
            Ok(v)
        };
        let vec = |c: [usize; 3], f: &dyn Fn(f64) -> f64| -> Result<Vec3> {
            Ok(Vec3::new(f(num(c[0])?), f(num(c[1])?), f(num(c[2])?)))
        };
        rows.push(Row {
            line,
            event: cols.event.map(|i| rec.get(i).unwrap_or("").to_string()),
            time: num(cols.time)?,
            gyro: vec(cols.gyro, &|v| units.gyro.to_si(v))?,
            accel: vec(cols.accel, &|v| units.accel.to_si(v))?,
            accel_high: match cols.accel_high {
                Some(c) => Some(vec(c, &|v| units.accel.to_si(v))?),
                None => None,
            },
        });
    }
    Ok(rows)
}

/// Check monotone, uniform timing and build the recording.
fn rows_to_recording(path: &Path, spec: &SensorSpec, rows: &[Row]) -> Result<ImuRecording> {
    let first = rows.first().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        msg: "no data rows".into(),
    })?;
    let rate = spec.rate;
    let t0 = first.time;
    for (i, pair) in rows.windows(2).enumerate() {
        if !(pair[1].time > pair[0].time) {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: pair[1].line,
                msg: format!(
                    "time not strictly increasing ({} after {})",
                    pair[1].time, pair[0].time
                ),
            });
        }
        let expected = t0 + (i + 1) as f64 / rate;
        if (pair[1].time - expected).abs() > 0.5 / rate {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: pair[1].line,
                msg: format!("irregular sampling: expected t = {expected} s at {rate} Hz"),
            });
        }
    }
    let mk = |f: &dyn Fn(&Row) -> Vec3| TimeSeries3::new(t0, rate, rows.iter().map(f).collect());
    let accel_high = if spec.has(ChannelKind::HighGAccelerometer) {
        if first.accel_high.is_none() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("sensor {} declares a high-g channel but the file has none", spec.id),
            });
        }
        Some(mk(&|r| r.accel_high.unwrap_or_default())?)
    } else {
        None
    };
    let rec = ImuRecording {
        sensor_id: spec.id.clone(),
        gyro: mk(&|r| r.gyro)?,
        accel: mk(&|r| r.accel)?,
        accel_high,
    };
    warn_saturation(spec, &rec);
    Ok(rec)
}

fn warn_saturation(spec: &SensorSpec, rec: &ImuRecording) {
    let check = |name: &str, s: &TimeSeries3, limit: Option<f64>| {
        if let Some(limit) = limit {
            let peak = s.samples().iter().map(|v| v.amax()).fold(0.0, f64::max);
            if peak >= limit * (1.0 - 1e-9) {
                log::warn!("sensor {}: {name} reaches its full-scale range", spec.id);
            }
        }
    };
    check("gyroscope", &rec.gyro, spec.range.gyro_dps.map(|d| d.to_radians()));
    check("accelerometer", &rec.accel, spec.range.accel_g.map(|g| g * STANDARD_GRAVITY));
    if let Some(h) = &rec.accel_high {
        check("high-g accelerometer", h, spec.range.high_g.map(|g| g * STANDARD_GRAVITY));
    }
}

/// Parse one continuous device export.
pub fn parse_imu_csv(path: impl AsRef<Path>, spec: &SensorSpec, layout: &CsvLayout) -> Result<ImuRecording> {
    let path = path.as_ref();
    let rows = read_rows(path, layout, false, spec.has(ChannelKind::HighGAccelerometer))?;
    rows_to_recording(path, spec, &rows)
}

/// Parse a reference-device export made of fixed-length event blocks.
///
/// Every block must span `pre + post` seconds within one sample period;
/// the trigger sits `pre` seconds after the first sample of the block.
pub fn parse_reference_csv(
    path: impl AsRef<Path>,
    spec: &SensorSpec,
    layout: &CsvLayout,
    pre: f64,
    post: f64,
) -> Result<Vec<ReferenceBlock>> {
    let path = path.as_ref();
    let rows = read_rows(path, layout, true, spec.has(ChannelKind::HighGAccelerometer))?;
    let mut blocks = Vec::new();
    let mut seen = HashSet::new();
    let mut start = 0;
    while start < rows.len() {
        let id = rows[start].event.clone().unwrap_or_default();
        let mut end = start + 1;
        while end < rows.len() && rows[end].event.as_deref() == Some(id.as_str()) {
            end += 1;
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: rows[start].line,
                msg: format!("event block {id} is not contiguous"),
            });
        }
        let block = &rows[start..end];
        let span = block.len() as f64 / spec.rate;
        let expected = pre + post;
        if (span - expected).abs() > 1.0 / spec.rate + 1e-9 {
            let what = if span < expected { "short" } else { "long" };
            return Err(Error::Data {
                path: path.to_path_buf(),
                row: block[0].line,
                msg: format!(
                    "{what} event block {id}: {} samples ({:.3} ms), expected {:.3} ms",
                    block.len(),
                    span * 1e3,
                    expected * 1e3
                ),
            });
        }
        let recording = rows_to_recording(path, spec, block)?;
        blocks.push(ReferenceBlock {
            trigger_time: recording.gyro.start_time() + pre,
            event_id: id,
            recording,
        });
        start = end;
    }
    Ok(blocks)
}

fn header(layout: &CsvLayout, with_event: bool, with_high: bool) -> Vec<String> {
    let c = &layout.columns;
    let mut h = Vec::new();
    if with_event {
        h.push(c.event.clone());
    }
    h.push(c.time.clone());
    h.extend(c.gyro.iter().cloned());
    h.extend(c.accel.iter().cloned());
    if with_high {
        h.extend(c.accel_high.iter().cloned());
    }
    h
}

fn write_recording_rows<W: Write>(
    w: &mut csv::Writer<W>,
    rec: &ImuRecording,
    layout: &CsvLayout,
    event: Option<&str>,
) -> csv::Result<()> {
    let u = layout.units;
    let n = rec.gyro.len();
    let mut row: Vec<String> = Vec::with_capacity(11);
    for i in 0..n {
        row.clear();
        if let Some(e) = event {
            row.push(e.to_string());
        }
        row.push(format!("{}", rec.gyro.time(i)));
        let g = rec.gyro.samples()[i];
        row.extend(g.iter().map(|v| format!("{}", u.gyro.from_si(*v))));
        let a = rec.accel.samples()[i];
        row.extend(a.iter().map(|v| format!("{}", u.accel.from_si(*v))));
        if let Some(h) = &rec.accel_high {
            row.extend(h.samples()[i].iter().map(|v| format!("{}", u.accel.from_si(*v))));
        }
        w.write_record(&row)?;
    }
    Ok(())
}

fn check_writable(rec: &ImuRecording) -> Result<()> {
    let n = rec.gyro.len();
    let ok = rec.accel.same_clock(&rec.gyro)
        && rec.accel_high.as_ref().map_or(true, |h| h.same_clock(&rec.gyro));
    if n == 0 || !ok {
        return Err(Error::Invalid(format!(
            "recording {} channels must be non-empty and share one clock",
            rec.sensor_id
        )));
    }
    Ok(())
}

/// CSV writer on a new file whose first lines are `comment`, each
/// prefixed with `# `.
pub fn commented_csv_writer(path: &Path, comment: Option<&str>) -> Result<csv::Writer<std::fs::File>> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(f, "# {line}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(csv::Writer::from_writer(f))
}

/// Write a continuous device export in the layout `parse_imu_csv` reads.
pub fn write_imu_csv(path: impl AsRef<Path>, rec: &ImuRecording, layout: &CsvLayout, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    check_writable(rec)?;
    let mut w = commented_csv_writer(path, comment)?;
    w.write_record(header(layout, false, rec.accel_high.is_some()))
        .map_err(|e| Error::csv(path, e))?;
    write_recording_rows(&mut w, rec, layout, None).map_err(|e| Error::csv(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write reference event blocks in the layout `parse_reference_csv` reads.
pub fn write_reference_csv(
    path: impl AsRef<Path>,
    blocks: &[ReferenceBlock],
    layout: &CsvLayout,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let with_high = blocks.first().is_some_and(|b| b.recording.accel_high.is_some());
    let mut w = commented_csv_writer(path, comment)?;
    w.write_record(header(layout, true, with_high)).map_err(|e| Error::csv(path, e))?;
    for b in blocks {
        check_writable(&b.recording)?;
        write_recording_rows(&mut w, &b.recording, layout, Some(&b.event_id))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Optional `labels.csv` mapping reference event ids to free-form tags.
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() < 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "labels need event_id,label columns".into(),
            });
        }
        out.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(out)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &BTreeMap<String, String>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut w = commented_csv_writer(path, comment)?;
    w.write_record(["event_id", "label"]).map_err(|e| Error::csv(path, e))?;
    for (k, v) in labels {
        w.write_record([k, v]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Resolve a sensor's data file inside a session directory.
pub fn sensor_path(dir: &Path, spec: &SensorSpec) -> PathBuf {
    dir.join(spec.file_name())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn test_spec(id: &str, rate: f64, high: bool) -> SensorSpec {
        let mut channels = vec![ChannelKind::Gyroscope, ChannelKind::Accelerometer];
        if high {
            channels.push(ChannelKind::HighGAccelerometer);
        }
        SensorSpec {
            id: id.into(),
            role: SensorRole::Headband,
            position: Vec3::zeros(),
            orientation: RotationMatrix::identity(),
            channels,
            rate,
            range: ChannelRanges::default(),
            file: None,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn converts_units_to_si() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "time_s,gx,gy,gz,ax,ay,az\n0,90,0,0,1,0,0\n0.01,90,0,0,1,0,0\n0.02,90,0,0,1,0,0\n",
        );
        let rec = parse_imu_csv(&p, &test_spec("a", 100.0, false), &CsvLayout::default()).unwrap();
        assert_eq!(rec.gyro.len(), 3);
        assert!((rec.gyro.samples()[0].x - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(rec.accel.samples()[0].x, STANDARD_GRAVITY);
        assert!(rec.accel_high.is_none());
    }

    #[test]
    fn duplicated_timestamp_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "time_s,gx,gy,gz,ax,ay,az\n0,0,0,0,1,0,0\n0.01,0,0,0,1,0,0\n0.01,0,0,0,1,0,0\n",
        );
        let err = parse_imu_csv(&p, &test_spec("a", 100.0, false), &CsvLayout::default()).unwrap_err();
        match err {
            Error::Data { row, .. } => assert_eq!(row, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_column_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "time_s,gx,gy,ax,ay,az\n0,0,0,1,0,0\n");
        let err = parse_imu_csv(&p, &test_spec("a", 100.0, false), &CsvLayout::default()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("gz"));
    }

    #[test]
    fn nan_cell_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "time_s,gx,gy,gz,ax,ay,az\n0,0,0,0,1,0,0\n0.01,NaN,0,0,1,0,0\n",
        );
        let err = parse_imu_csv(&p, &test_spec("a", 100.0, false), &CsvLayout::default()).unwrap_err();
        assert!(matches!(err, Error::Data { row: 3, .. }), "{err}");
    }

    #[test]
    fn custom_columns_and_units() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "t,wx,wy,wz,fx,fy,fz\n1.0,1,2,3,4,5,6\n1.5,1,2,3,4,5,6\n",
        );
        let s = |a: &str, b: &str, c: &str| [a.to_string(), b.to_string(), c.to_string()];
        let layout = CsvLayout {
            columns: ColumnMap {
                time: "t".into(),
                gyro: s("wx", "wy", "wz"),
                accel: s("fx", "fy", "fz"),
                ..ColumnMap::default()
            },
            units: UnitConfig {
                gyro: GyroUnit::RadPerS,
                accel: AccelUnit::MPerS2,
            },
        };
        let rec = parse_imu_csv(&p, &test_spec("a", 2.0, false), &layout).unwrap();
        assert_eq!(rec.gyro.start_time(), 1.0);
        assert_eq!(rec.accel.samples()[1], Vec3::new(4.0, 5.0, 6.0));
    }

    fn block_rows(id: &str, n: usize, rate: f64, t0: f64) -> String {
        (0..n)
            .map(|i| format!("{id},{},0,0,0,0,0,1\n", t0 + i as f64 / rate))
            .collect()
    }

    #[test]
    fn reference_block_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = test_spec("mp", 3200.0, false);
        spec.role = SensorRole::Reference;
        let head = "event_id,time_s,gx,gy,gz,ax,ay,az\n";
        let ok = write(dir.path(), "ok.csv", &format!("{head}{}", block_rows("e1", 400, 3200.0, 5.0)));
        let blocks = parse_reference_csv(&ok, &spec, &CsvLayout::default(), 0.03125, 0.09375).unwrap();
        assert_eq!(blocks.len(), 1);
        assert!((blocks[0].trigger_time - 5.03125).abs() < 1e-12);

        let short = write(dir.path(), "short.csv", &format!("{head}{}", block_rows("e1", 200, 3200.0, 5.0)));
        let err = parse_reference_csv(&short, &spec, &CsvLayout::default(), 0.03125, 0.09375).unwrap_err();
        assert!(err.to_string().contains("short event block"), "{err}");
    }

    #[test]
    fn reference_blocks_must_be_contiguous() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = test_spec("mp", 3200.0, false);
        spec.role = SensorRole::Reference;
        let body = format!(
            "event_id,time_s,gx,gy,gz,ax,ay,az\n{}{}{}",
            block_rows("a", 400, 3200.0, 1.0),
            block_rows("b", 400, 3200.0, 3.0),
            block_rows("a", 400, 3200.0, 5.0)
        );
        let p = write(dir.path(), "r.csv", &body);
        assert!(parse_reference_csv(&p, &spec, &CsvLayout::default(), 0.03125, 0.09375).is_err());
    }
}
