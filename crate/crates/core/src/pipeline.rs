//! Session-level steps: loading a session directory, detecting and pairing
//! events, reconstructing one event, and comparing it with the reference.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{align_events, detect_impacts, extract_window, refine_offset, EventRecord, ImpactEvent, TriggerRule};
use crate::error::{Error, Result};
use crate::evaluate::{
    bland_altman, cora_score, grouped_normalized_bias, nrmse_windowed, paired_t_test, peak_resultant, Band,
    BlandAltmanReport, CoraScore, GroupBias, Nrmse, Peak, TTest,
};
use crate::geom::Vec3;
use crate::ingest::{
    parse_imu_csv, parse_reference_csv, read_labels, sensor_path, GyroSource, ImuRecording, ReferenceBlock,
    SessionConfig, STANDARD_GRAVITY,
};
use crate::kinematics::{
    adaptive_filter, average_angular_velocity, five_point_derivative3, reference_kinematics, A3g1Solver,
    AdaptiveConfig, KinematicsSet, ReferenceKinematics,
};
use crate::series::{magnitude, rotate_series, Series, TimeSeries3};
use crate::wavelet::butterworth_lowpass3;

pub const HEADBAND: &str = "headband";
pub const REFERENCE: &str = "reference";

/// Window length used for the NRMSE metric, s.
pub const NRMSE_WINDOW_S: f64 = 0.0244;

/// Continuous headband recordings in configuration order.
pub fn load_headband(cfg: &SessionConfig, dir: &Path) -> Result<Vec<ImuRecording>> {
    let layout = cfg.layout();
    cfg.headband()
        .map(|s| parse_imu_csv(sensor_path(dir, s), s, &layout))
        .collect()
}

pub fn load_reference(cfg: &SessionConfig, dir: &Path) -> Result<Vec<ReferenceBlock>> {
    let spec = cfg
        .reference()
        .ok_or_else(|| Error::Config("no reference sensor declared".into()))?;
    let w = &cfg.windows;
    parse_reference_csv(
        sensor_path(dir, spec),
        spec,
        &cfg.layout(),
        w.reference_pre_ms * 1e-3,
        w.reference_post_ms * 1e-3,
    )
}

/// Labels from `labels.csv` when present.
pub fn load_labels(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(crate::synth::LABELS_FILE);
    if path.exists() {
        read_labels(path)
    } else {
        Ok(BTreeMap::new())
    }
}

pub fn headband_event_id(i: usize) -> String {
    format!("hb-{:03}", i + 1)
}

pub fn trigger_rule(cfg: &SessionConfig) -> TriggerRule {
    let w = &cfg.windows;
    TriggerRule {
        threshold: cfg.trigger.threshold_g * STANDARD_GRAVITY,
        min_duration: cfg.trigger.min_duration_ms * 1e-3,
        min_separation: (w.pre_ms + w.post_ms) * 1e-3,
    }
}

fn headband_recording<'a>(cfg: &SessionConfig, hb: &'a [ImuRecording], id: &str) -> Result<&'a ImuRecording> {
    hb.iter()
        .find(|r| r.sensor_id == id)
        .ok_or_else(|| Error::Config(format!("no recording for headband sensor {id}")))
        .and_then(|r| {
            cfg.sensor(id)
                .map(|_| r)
                .ok_or_else(|| Error::Config(format!("sensor {id} is not declared")))
        })
}

/// Resultant acceleration of the trigger sensor.
pub fn trigger_signal(cfg: &SessionConfig, hb: &[ImuRecording]) -> Result<Series> {
    let rec = headband_recording(cfg, hb, cfg.trigger_sensor())?;
    let m = magnitude(rec.trigger_accel());
    Ok(if cfg.trigger.subtract_gravity {
        m.map(|v| v - STANDARD_GRAVITY)
    } else {
        m
    })
}

/// Headband channels of one event resampled onto `k / rate` for
/// `t ∈ [-pre, post]` relative to `t0`, where `rate` is the highest
/// headband rate.
fn common_grid(cfg: &SessionConfig, hb: &[ImuRecording], t0: f64, pre: f64, post: f64) -> Result<Vec<ImuRecording>> {
    let rate = cfg.headband().map(|s| s.rate).fold(0.0, f64::max);
    let n0 = (pre * rate + 1e-9).floor() as usize;
    let n1 = (post * rate + 1e-9).floor() as usize;
    let start = -(n0 as f64) / rate;
    let n = n0 + n1 + 1;
    let event = ImpactEvent {
        t0,
        source: HEADBAND.into(),
    };
    hb.iter()
        .map(|r| {
            let slack = 2.0 / r.gyro.sample_rate();
            let w = extract_window(r, &event, pre + slack, post + slack)?;
            let fit = |s: &TimeSeries3| s.resample_onto(start, rate, n);
            Ok(ImuRecording {
                sensor_id: w.sensor_id.clone(),
                gyro: fit(&w.gyro)?,
                accel: fit(&w.accel)?,
                accel_high: match &w.accel_high {
                    Some(h) => Some(fit(h)?),
                    None => None,
                },
            })
        })
        .collect()
}

fn head_frame_gyros(cfg: &SessionConfig, recs: &[ImuRecording]) -> Result<Vec<TimeSeries3>> {
    recs.iter()
        .map(|r| {
            let spec = cfg
                .sensor(&r.sensor_id)
                .ok_or_else(|| Error::Config(format!("sensor {} is not declared", r.sensor_id)))?;
            Ok(rotate_series(&r.gyro, &spec.orientation))
        })
        .collect()
}

fn a3g1_accels(cfg: &SessionConfig, recs: &[ImuRecording]) -> Result<[TimeSeries3; 3]> {
    let get = |id: &String| -> Result<TimeSeries3> {
        let rec = headband_recording(cfg, recs, id)?;
        let spec = cfg.sensor(id).expect("checked by headband_recording");
        Ok(rotate_series(rec.accel_channel(cfg.a3g1_accel), &spec.orientation))
    };
    let [a, b, c] = &cfg.a3g1_sensors;
    Ok([get(a)?, get(b)?, get(c)?])
}

/// Resultant acceleration at the point of interest from unfiltered
/// channels around `t0`, on the headband clock. Used for clock alignment.
pub fn quick_point_accel(cfg: &SessionConfig, hb: &[ImuRecording], t0: f64, pre: f64, post: f64) -> Result<Series> {
    let recs = common_grid(cfg, hb, t0, pre, post)?;
    let omega = average_angular_velocity(&head_frame_gyros(cfg, &recs)?)?;
    let [a, b, c] = a3g1_accels(cfg, &recs)?;
    let solver = A3g1Solver::new(cfg.a3g1_positions()?)?;
    let out = solver.solve([&a, &b, &c], &omega, cfg.reference_point)?;
    Ok(magnitude(&out.a_point).shifted(t0))
}

/// Detect headband impacts, pair them with reference blocks and refine
/// each pair's clock offset.
pub fn detect_session(
    cfg: &SessionConfig,
    hb: &[ImuRecording],
    blocks: &[ReferenceBlock],
    labels: &BTreeMap<String, String>,
) -> Result<Vec<EventRecord>> {
    let signal = trigger_signal(cfg, hb)?;
    let hb_events = detect_impacts(&signal, &trigger_rule(cfg), HEADBAND);
    log::info!("{} headband events, {} reference blocks", hb_events.len(), blocks.len());
    let ref_events: Vec<ImpactEvent> = blocks
        .iter()
        .map(|b| ImpactEvent {
            t0: b.trigger_time,
            source: REFERENCE.into(),
        })
        .collect();
    let w = &cfg.windows;
    let alignment = align_events(&hb_events, &ref_events, w.max_pair_offset_s);
    let search = w.refine_search_ms * 1e-3;
    let pre = w.reference_pre_ms * 1e-3 + search + 0.01;
    let post = w.reference_post_ms * 1e-3 + search + 0.01;
    let mut rows = Vec::new();
    for (pair_id, p) in alignment.pairs.iter().enumerate() {
        let e = &hb_events[p.a];
        let block = &blocks[p.b];
        let offset = match quick_point_accel(cfg, hb, e.t0, pre, post)
            .and_then(|a| refine_offset(&a, &magnitude(&block.recording.accel), p.offset, search))
        {
            Ok(o) => o,
            Err(err) => {
                log::warn!("pair {pair_id}: offset refinement failed ({err}); using trigger difference");
                p.offset
            }
        };
        let label = labels.get(&block.event_id).cloned();
        rows.push(EventRecord {
            pair_id: Some(pair_id),
            source: HEADBAND.into(),
            event: headband_event_id(p.a),
            t0_s: e.t0,
            label: label.clone(),
            offset_s: Some(offset),
        });
        rows.push(EventRecord {
            pair_id: Some(pair_id),
            source: REFERENCE.into(),
            event: block.event_id.clone(),
            t0_s: block.trigger_time,
            label,
            offset_s: Some(offset),
        });
    }
    for &i in &alignment.unpaired_a {
        rows.push(EventRecord {
            pair_id: None,
            source: HEADBAND.into(),
            event: headband_event_id(i),
            t0_s: hb_events[i].t0,
            label: None,
            offset_s: None,
        });
    }
    for &j in &alignment.unpaired_b {
        rows.push(EventRecord {
            pair_id: None,
            source: REFERENCE.into(),
            event: blocks[j].event_id.clone(),
            t0_s: blocks[j].trigger_time,
            label: labels.get(&blocks[j].event_id).cloned(),
            offset_s: None,
        });
    }
    Ok(rows)
}

/// Reconstruct the kinematics of the headband event triggered at `t0`.
///
/// Channels are taken with an extra analysis margin on both sides for the
/// wavelet analysis and filters; the result covers `[-pre, post]`.
pub fn reconstruct_event(cfg: &SessionConfig, hb: &[ImuRecording], t0: f64) -> Result<KinematicsSet> {
    let w = &cfg.windows;
    let margin = w.analysis_margin_ms * 1e-3;
    let (pre, post) = (w.pre_ms * 1e-3, w.post_ms * 1e-3);
    let recs = common_grid(cfg, hb, t0, pre + margin, post + margin)?;
    let gyros = head_frame_gyros(cfg, &recs)?;
    let omega_h = average_angular_velocity(&gyros)?;
    let adaptive = adaptive_filter(&omega_h, &AdaptiveConfig::from_filter(&cfg.filter, false))?;
    let f0 = adaptive.f0();
    let alpha_diff = five_point_derivative3(&adaptive.filtered)?;

    let order = cfg.filter.butterworth_order;
    let nyquist = 0.5 * omega_h.sample_rate();
    let prefilter = |s: TimeSeries3| -> Result<TimeSeries3> {
        if cfg.filter.accel_prefilter_hz < nyquist {
            butterworth_lowpass3(&s, cfg.filter.accel_prefilter_hz, order)
        } else {
            Ok(s)
        }
    };
    let [a, b, c] = a3g1_accels(cfg, &recs)?;
    let accels = [prefilter(a)?, prefilter(b)?, prefilter(c)?];
    let omega_a3g1 = match &cfg.a3g1_gyro {
        GyroSource::Average => adaptive.filtered.clone(),
        GyroSource::Single(id) => {
            let i = recs
                .iter()
                .position(|r| &r.sensor_id == id)
                .ok_or_else(|| Error::Config(format!("no recording for gyroscope {id}")))?;
            butterworth_lowpass3(&gyros[i], f0, order)?
        }
    };
    let solver = A3g1Solver::new(cfg.a3g1_positions()?)?;
    let out = solver.solve([&accels[0], &accels[1], &accels[2]], &omega_a3g1, cfg.reference_point)?;
    let set = KinematicsSet {
        omega_h,
        omega_hf: adaptive.filtered,
        alpha_diff,
        alpha_a3g1: out.alpha,
        a_ref_point: out.a_point,
        q: out.q,
        f0,
        cutoff: adaptive.cutoff,
        cutoff_axes: adaptive.axes,
        a3g1_residual: out.residual,
    };
    Ok(set.trimmed(-pre, post))
}

/// Reference kinematics of one block on the headband impact-relative
/// clock: device time `t` maps to `t - offset - t0_headband`.
pub fn reference_event(cfg: &SessionConfig, block: &ReferenceBlock, offset: f64, t0_headband: f64) -> Result<ReferenceKinematics> {
    let spec = cfg
        .reference()
        .ok_or_else(|| Error::Config("no reference sensor declared".into()))?;
    let k = reference_kinematics(&block.recording, &spec.orientation, &cfg.cfc)?;
    let shift = -(offset + t0_headband);
    Ok(ReferenceKinematics {
        omega: k.omega.shifted(shift),
        alpha: k.alpha.shifted(shift),
        accel: k.accel.shifted(shift),
    })
}

/// Compared quantities, their headband column and peak name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    AngularVelocity,
    AngularAccelerationDiff,
    AngularAccelerationA3g1,
    LinearAcceleration,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::AngularVelocity,
        Quantity::AngularAccelerationDiff,
        Quantity::AngularAccelerationA3g1,
        Quantity::LinearAcceleration,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Quantity::AngularVelocity => "omega_hf",
            Quantity::AngularAccelerationDiff => "alpha_diff",
            Quantity::AngularAccelerationA3g1 => "alpha_a3g1",
            Quantity::LinearAcceleration => "a_ref_point",
        }
    }

    pub fn peak_name(self) -> &'static str {
        match self {
            Quantity::AngularVelocity => "PRV",
            Quantity::AngularAccelerationDiff => "PRA_diff",
            Quantity::AngularAccelerationA3g1 => "PRA_a3g1",
            Quantity::LinearAcceleration => "PLA",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::AngularVelocity => "angular_velocity",
            Quantity::AngularAccelerationDiff => "angular_acceleration_diff",
            Quantity::AngularAccelerationA3g1 => "angular_acceleration_a3g1",
            Quantity::LinearAcceleration => "linear_acceleration",
        }
    }

    pub fn units(self) -> &'static str {
        match self {
            Quantity::AngularVelocity => "rad/s",
            Quantity::AngularAccelerationDiff | Quantity::AngularAccelerationA3g1 => "rad/s^2",
            Quantity::LinearAcceleration => "m/s^2",
        }
    }

    fn reference(self, r: &ReferenceKinematics) -> &TimeSeries3 {
        match self {
            Quantity::AngularVelocity => &r.omega,
            Quantity::AngularAccelerationDiff | Quantity::AngularAccelerationA3g1 => &r.alpha,
            Quantity::LinearAcceleration => &r.accel,
        }
    }
}

/// Named kinematic series of one event, as written by
/// [`KinematicsSet::write_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsTable {
    pub series: BTreeMap<String, TimeSeries3>,
    pub f0: f64,
    pub residual: Option<Series>,
}

impl KinematicsTable {
    pub fn from_set(set: &KinematicsSet) -> Self {
        let mut series = BTreeMap::new();
        for (k, v) in [
            ("omega_h", &set.omega_h),
            ("omega_hf", &set.omega_hf),
            ("alpha_diff", &set.alpha_diff),
            ("alpha_a3g1", &set.alpha_a3g1),
            ("a_ref_point", &set.a_ref_point),
            ("q", &set.q),
        ] {
            series.insert(k.to_string(), v.clone());
        }
        KinematicsTable {
            series,
            f0: set.f0,
            residual: Some(set.a3g1_residual.clone()),
        }
    }
}

pub fn read_kinematics_csv(path: impl AsRef<Path>) -> Result<KinematicsTable> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let time = col("time_s").ok_or_else(|| fmt("missing column time_s".into()))?;
    let f0_col = col("f0_hz").ok_or_else(|| fmt("missing column f0_hz".into()))?;
    let res_col = col("a3g1_residual");
    let mut groups: Vec<(String, [usize; 3])> = Vec::new();
    for h in headers.iter() {
        if let Some(base) = h.strip_suffix("_x") {
            let y = col(&format!("{base}_y"));
            let z = col(&format!("{base}_z"));
            if let (Some(x), Some(y), Some(z)) = (col(h), y, z) {
                groups.push((base.to_string(), [x, y, z]));
            }
        }
    }
    let mut times = Vec::new();
    let mut values: Vec<Vec<Vec3>> = vec![Vec::new(); groups.len()];
    let mut residual = Vec::new();
    let mut f0 = f64::NAN;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").parse::<f64>().map_err(|_| Error::Data {
                path: path.to_path_buf(),
                row: line,
                msg: format!("column {} is not a number", &headers[i]),
            })
        };
        times.push(num(time)?);
        f0 = num(f0_col)?;
        for (g, (_, c)) in groups.iter().enumerate() {
            values[g].push(Vec3::new(num(c[0])?, num(c[1])?, num(c[2])?));
        }
        if let Some(c) = res_col {
            residual.push(num(c)?);
        }
    }
    if times.len() < 2 {
        return Err(fmt("need at least two rows".into()));
    }
    let rate = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
    let start = times[0];
    let mut series = BTreeMap::new();
    for ((name, _), v) in groups.into_iter().zip(values) {
        series.insert(name, TimeSeries3::new(start, rate, v)?);
    }
    Ok(KinematicsTable {
        series,
        f0,
        residual: if res_col.is_some() {
            Some(Series::new(start, rate, residual)?)
        } else {
            None
        },
    })
}

/// Agreement of one quantity for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityAgreement {
    pub quantity: Quantity,
    pub peak: String,
    pub hb_peak: Peak,
    pub ref_peak: Peak,
    /// CORA rating of the resultants.
    pub cora: Option<CoraScore>,
    /// Per-axis CORA ratings; `None` where the reference axis is flat.
    pub cora_axes: [Option<CoraScore>; 3],
    pub nrmse: Option<Nrmse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAgreement {
    pub pair_id: usize,
    pub event: String,
    pub reference_event: String,
    pub label: Option<String>,
    pub t0_s: f64,
    pub offset_s: f64,
    pub f0_hz: f64,
    /// Comparison window on the headband impact-relative clock, s.
    pub window: [f64; 2],
    pub quantities: Vec<QuantityAgreement>,
}

/// Headband and reference series of one quantity on the comparison grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparedSeries {
    pub quantity: Quantity,
    pub hb: TimeSeries3,
    pub reference: TimeSeries3,
}

/// Put headband and reference series on one grid at the higher of the two
/// rates, over the reference window intersected with both supports.
pub fn comparison_series(cfg: &SessionConfig, table: &KinematicsTable, r: &ReferenceKinematics) -> Result<Vec<ComparedSeries>> {
    let omega = table
        .series
        .get("omega_hf")
        .ok_or_else(|| Error::Invalid("kinematics table lacks omega_hf".into()))?;
    let rate = omega.sample_rate().max(r.omega.sample_rate());
    let w = &cfg.windows;
    let lo = (-w.reference_pre_ms * 1e-3).max(r.omega.start_time()).max(omega.start_time());
    let hi = (w.reference_post_ms * 1e-3).min(r.omega.end_time()).min(omega.end_time());
    let k0 = (lo * rate - 1e-9).ceil() as i64;
    let k1 = (hi * rate + 1e-9).floor() as i64;
    if k1 - k0 < 8 {
        return Err(Error::Window {
            channel: "comparison".into(),
            msg: format!("headband and reference overlap only over [{lo:.4}, {hi:.4}] s"),
        });
    }
    let start = k0 as f64 / rate;
    let n = (k1 - k0 + 1) as usize;
    let mut out = Vec::new();
    for q in Quantity::ALL {
        let Some(hb) = table.series.get(q.column()) else { continue };
        out.push(ComparedSeries {
            quantity: q,
            hb: hb.resample_onto(start, rate, n)?,
            reference: q.reference(r).resample_onto(start, rate, n)?,
        });
    }
    Ok(out)
}

/// Peaks, CORA and NRMSE for every quantity present in `table`.
pub fn compare_event(cfg: &SessionConfig, table: &KinematicsTable, r: &ReferenceKinematics) -> Result<(Vec<QuantityAgreement>, [f64; 2])> {
    let compared = comparison_series(cfg, table, r)?;
    let mut window = [0.0, 0.0];
    let mut out = Vec::new();
    for c in compared {
        window = [c.hb.start_time(), c.hb.end_time()];
        let hb_mag = magnitude(&c.hb);
        let ref_mag = magnitude(&c.reference);
        let ref_peak = peak_resultant(&c.reference)?;
        let cora = match cora_score(&ref_mag, &hb_mag, &cfg.cora) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("{}: CORA unavailable ({e})", q_name(c.quantity));
                None
            }
        };
        let cora_axes = [0, 1, 2].map(|a| cora_score(&c.reference.component(a), &c.hb.component(a), &cfg.cora).ok());
        let nrmse = match nrmse_windowed(&ref_mag, &hb_mag, NRMSE_WINDOW_S, ref_peak.time) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("{}: NRMSE unavailable ({e})", q_name(c.quantity));
                None
            }
        };
        out.push(QuantityAgreement {
            quantity: c.quantity,
            peak: c.quantity.peak_name().into(),
            hb_peak: peak_resultant(&c.hb)?,
            ref_peak,
            cora,
            cora_axes,
            nrmse,
        });
    }
    Ok((out, window))
}

fn q_name(q: Quantity) -> &'static str {
    q.name()
}

/// Aggregate statistics of one quantity over all events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySummary {
    pub quantity: Quantity,
    pub peak: String,
    pub units: String,
    pub n: usize,
    pub bland_altman: Option<BlandAltmanReport>,
    pub groups: Vec<GroupBias>,
    pub t_test: Option<TTest>,
    pub cora_mean: Option<f64>,
    pub cora_sd: Option<f64>,
    pub band_counts: BTreeMap<String, usize>,
    pub nrms_pct_mean: Option<f64>,
    pub signed_mean_pct_mean: Option<f64>,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = if v.len() > 1 {
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
    } else {
        None
    };
    (Some(m), sd)
}

fn band_name(b: Band) -> &'static str {
    match b {
        Band::Excellent => "excellent",
        Band::Good => "good",
        Band::Fair => "fair",
        Band::Marginal => "marginal",
        Band::Unacceptable => "unacceptable",
    }
}

/// Bland-Altman, grouped bias, paired t-test and CORA summaries per quantity.
pub fn summarize(events: &[EventAgreement], notes: &mut Vec<String>) -> Vec<QuantitySummary> {
    let mut out = Vec::new();
    for q in Quantity::ALL {
        let rows: Vec<(&EventAgreement, &QuantityAgreement)> = events
            .iter()
            .filter_map(|e| e.quantities.iter().find(|x| x.quantity == q).map(|x| (e, x)))
            .collect();
        if rows.is_empty() {
            continue;
        }
        let hb: Vec<f64> = rows.iter().map(|(_, x)| x.hb_peak.value).collect();
        let rf: Vec<f64> = rows.iter().map(|(_, x)| x.ref_peak.value).collect();
        let labels: Vec<String> = rows
            .iter()
            .map(|(e, _)| e.label.clone().unwrap_or_else(|| "unlabelled".into()))
            .collect();
        let ba = match bland_altman(&hb, &rf) {
            Ok(r) => Some(r),
            Err(e) => {
                notes.push(format!("{}: Bland-Altman unavailable: {e}", q.peak_name()));
                None
            }
        };
        let groups = ba
            .as_ref()
            .and_then(|r| grouped_normalized_bias(r, &labels).ok())
            .unwrap_or_default();
        let t_test = match paired_t_test(&hb, &rf) {
            Ok(t) => Some(t),
            Err(e) => {
                notes.push(format!("{}: t-test unavailable: {e}", q.peak_name()));
                None
            }
        };
        let cora: Vec<f64> = rows.iter().filter_map(|(_, x)| x.cora.map(|c| c.total)).collect();
        let (cora_mean, cora_sd) = mean_sd(&cora);
        let mut band_counts = BTreeMap::new();
        for (_, x) in &rows {
            if let Some(c) = x.cora {
                *band_counts.entry(band_name(c.band).to_string()).or_insert(0) += 1;
            }
        }
        let nrms: Vec<f64> = rows.iter().filter_map(|(_, x)| x.nrmse.map(|m| m.nrms_pct)).collect();
        let signed: Vec<f64> = rows.iter().filter_map(|(_, x)| x.nrmse.map(|m| m.signed_mean_pct)).collect();
        out.push(QuantitySummary {
            quantity: q,
            peak: q.peak_name().into(),
            units: q.units().into(),
            n: rows.len(),
            bland_altman: ba,
            groups,
            t_test,
            cora_mean,
            cora_sd,
            band_counts,
            nrms_pct_mean: mean_sd(&nrms).0,
            signed_mean_pct_mean: mean_sd(&signed).0,
        });
    }
    out
}

/// Paths and parameters the report was built from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInputs {
    pub config: String,
    pub hb_dir: String,
    pub ref_dir: String,
    pub pairs: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub tool_version: String,
    pub manifest_hash: String,
    pub inputs: ReportInputs,
    pub cora_params: crate::evaluate::CoraParams,
    /// How the two device clocks were aligned.
    pub clock_alignment: String,
    pub events: Vec<EventAgreement>,
    pub quantities: Vec<QuantitySummary>,
    pub notes: Vec<String>,
}

pub const CLOCK_ALIGNMENT_NOTE: &str = "reference clock offset estimated per pair by cross-correlating the \
resultant acceleration at the point of interest (headband, unfiltered A3G1) with the reference accelerometer \
resultant; no external synchronisation signal was used";
