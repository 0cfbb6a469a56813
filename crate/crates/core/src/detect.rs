//! Impact detection, per-event windowing and cross-device event pairing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImuRecording;
use crate::series::{Series, TimeSeries};

/// Threshold trigger: magnitude above `threshold` for longer than
/// `min_duration`, with later runs inside `min_separation` of an accepted
/// event suppressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerRule {
    pub threshold: f64,
    pub min_duration: f64,
    pub min_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactEvent {
    /// Absolute device time of the first supra-threshold sample, s.
    pub t0: f64,
    pub source: String,
}

/// Find impact onsets in a resultant-acceleration series.
///
/// A run is a maximal stretch of consecutive samples strictly above the
/// threshold; its duration is `run_len / sample_rate`.
pub fn detect_impacts(accel_mag: &Series, rule: &TriggerRule, source: &str) -> Vec<ImpactEvent> {
    let mut events: Vec<ImpactEvent> = Vec::new();
    let x = accel_mag.samples();
    let rate = accel_mag.sample_rate();
    let mut i = 0;
    while i < x.len() {
        if x[i] > rule.threshold {
            let start = i;
            while i < x.len() && x[i] > rule.threshold {
                i += 1;
            }
            let duration = (i - start) as f64 / rate;
            if duration > rule.min_duration {
                let t0 = accel_mag.time(start);
                let clear = events
                    .last()
                    .map_or(true, |e| t0 - e.t0 >= rule.min_separation);
                if clear {
                    events.push(ImpactEvent {
                        t0,
                        source: source.to_string(),
                    });
                }
            }
        } else {
            i += 1;
        }
    }
    events
}

fn excerpt<T: Clone>(
    s: &TimeSeries<T>,
    channel: &str,
    t0: f64,
    pre: f64,
    post: f64,
) -> Result<TimeSeries<T>> {
    let rate = s.sample_rate();
    let eps = 1e-6;
    let lo = ((t0 - pre - s.start_time()) * rate - eps).ceil();
    let hi = ((t0 + post - s.start_time()) * rate + eps).floor();
    if lo < 0.0 || hi > (s.len() as f64 - 1.0) || hi < lo {
        return Err(Error::Window {
            channel: channel.to_string(),
            msg: format!(
                "recording [{:.4}, {:.4}] s does not cover [{:.4}, {:.4}] s",
                s.start_time(),
                s.end_time(),
                t0 - pre,
                t0 + post
            ),
        });
    }
    let (lo, hi) = (lo as usize, hi as usize);
    TimeSeries::new(s.time(lo) - t0, rate, s.samples()[lo..=hi].to_vec())
}

/// Excerpt `[t0 - pre, t0 + post]` of every channel, re-stamped so the
/// trigger sits at t = 0.
pub fn extract_window(rec: &ImuRecording, e: &ImpactEvent, pre: f64, post: f64) -> Result<ImuRecording> {
    let name = |ch: &str| format!("{}/{ch}", rec.sensor_id);
    Ok(ImuRecording {
        sensor_id: rec.sensor_id.clone(),
        gyro: excerpt(&rec.gyro, &name("gyro"), e.t0, pre, post)?,
        accel: excerpt(&rec.accel, &name("accel"), e.t0, pre, post)?,
        accel_high: match &rec.accel_high {
            Some(h) => Some(excerpt(h, &name("accel_high"), e.t0, pre, post)?),
            None => None,
        },
    })
}

/// All channels of one event on the impact-relative clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactWindow {
    pub event: ImpactEvent,
    pub channels: BTreeMap<String, ImuRecording>,
    pub pre: f64,
    pub post: f64,
}

pub fn extract_event<'a>(
    recs: impl IntoIterator<Item = &'a ImuRecording>,
    e: &ImpactEvent,
    pre: f64,
    post: f64,
) -> Result<ImpactWindow> {
    let channels = recs
        .into_iter()
        .map(|r| Ok((r.sensor_id.clone(), extract_window(r, e, pre, post)?)))
        .collect::<Result<_>>()?;
    Ok(ImpactWindow {
        event: e.clone(),
        channels,
        pre,
        post,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPair {
    pub a: usize,
    pub b: usize,
    /// `t0_b - t0_a`, s.
    pub offset: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Sorted by `a`.
    pub pairs: Vec<EventPair>,
    pub unpaired_a: Vec<usize>,
    pub unpaired_b: Vec<usize>,
}

/// Greedy nearest-neighbour pairing of two time-sorted event lists.
///
/// Candidate pairs within `max_offset` are taken in order of increasing
/// `|Δt0|`; ties are broken on the (smaller, larger) onset time so the
/// pair set does not depend on argument order.
pub fn align_events(a: &[ImpactEvent], b: &[ImpactEvent], max_offset: f64) -> Alignment {
    let mut cand = Vec::new();
    for (i, ea) in a.iter().enumerate() {
        for (j, eb) in b.iter().enumerate() {
            let d = eb.t0 - ea.t0;
            if d.abs() <= max_offset {
                cand.push((d.abs(), ea.t0.min(eb.t0), ea.t0.max(eb.t0), i, j, d));
            }
        }
    }
    cand.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.total_cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, j, d) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push(EventPair { a: i, b: j, offset: d });
        }
    }
    pairs.sort_by_key(|p| p.a);
    Alignment {
        pairs,
        unpaired_a: (0..a.len()).filter(|&i| !used_a[i]).collect(),
        unpaired_b: (0..b.len()).filter(|&j| !used_b[j]).collect(),
    }
}

fn normalized_xcorr(x: &[f64], y: &[f64]) -> f64 {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Refine the clock offset between two devices (`t_b = t_a + offset`) by
/// maximising the zero-mean normalised cross-correlation of their
/// translational-acceleration magnitudes.
///
/// `b_window` is the reference excerpt (device-b clock); `a_signal` is the
/// continuous device-a magnitude. The search covers `coarse ± search` on a
/// grid at `b_window`'s rate, with parabolic sub-sample interpolation.
pub fn refine_offset(a_signal: &Series, b_window: &Series, coarse: f64, search: f64) -> Result<f64> {
    let rate = b_window.sample_rate().max(a_signal.sample_rate());
    let b = if (rate - b_window.sample_rate()).abs() > 1e-9 {
        crate::series::resample(b_window, rate)?
    } else {
        b_window.clone()
    };
    let b_mean = b.samples().iter().sum::<f64>() / b.len() as f64;
    let bz: Vec<f64> = b.samples().iter().map(|v| v - b_mean).collect();
    let steps = (search * rate).round() as i64;
    let mut scores = Vec::with_capacity((2 * steps + 1) as usize);
    for k in -steps..=steps {
        let off = coarse + k as f64 / rate;
        let mut av = Vec::with_capacity(b.len());
        let mut bv = Vec::with_capacity(b.len());
        for (i, t) in b.times().enumerate() {
            if let Some(v) = a_signal.value_at(t - off) {
                av.push(v);
                bv.push(bz[i]);
            }
        }
        if av.len() < b.len() / 2 {
            scores.push(f64::NEG_INFINITY);
            continue;
        }
        let am = av.iter().sum::<f64>() / av.len() as f64;
        av.iter_mut().for_each(|v| *v -= am);
        scores.push(normalized_xcorr(&av, &bv));
    }
    let (best, &peak) = scores
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .ok_or_else(|| Error::Invalid("empty offset search".into()))?;
    if !peak.is_finite() {
        return Err(Error::Invalid("no overlap between device signals".into()));
    }
    let mut frac = 0.0;
    if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = l - 2.0 * c + r;
        if l.is_finite() && r.is_finite() && denom < 0.0 {
            frac = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(coarse + (best as f64 - steps as f64 + frac) / rate)
}

/// One row of the event table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub pair_id: Option<usize>,
    pub source: String,
    /// Headband event index or reference block id.
    pub event: String,
    pub t0_s: f64,
    pub label: Option<String>,
    /// Refined `t_reference - t_headband` clock offset for the pair, s.
    pub offset_s: Option<f64>,
}

/// Write the event table; `comment` lines are prefixed with `#`.
pub fn write_events_csv(path: impl AsRef<Path>, rows: &[EventRecord], comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    if let Some(c) = comment {
        for line in c.lines() {
            buf.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["pair_id", "source", "event", "t0_s", "label", "offset_s"])
            .map_err(|e| Error::csv(path, e))?;
        for r in rows {
            w.write_record([
                r.pair_id.map(|p| p.to_string()).unwrap_or_default(),
                r.source.clone(),
                r.event.clone(),
                format!("{}", r.t0_s),
                r.label.clone().unwrap_or_default(),
                r.offset_s.map(|o| format!("{o}")).unwrap_or_default(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_events_csv(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: &str| Error::Data {
            path: path.to_path_buf(),
            row: line,
            msg: msg.to_string(),
        };
        if rec.len() < 6 {
            return Err(bad("expected 6 columns"));
        }
        let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
        out.push(EventRecord {
            pair_id: match &rec[0] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad pair_id"))?),
            },
            source: rec[1].to_string(),
            event: rec[2].to_string(),
            t0_s: rec[3].parse().map_err(|_| bad("bad t0_s"))?,
            label: opt(&rec[4]),
            offset_s: match &rec[5] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad offset_s"))?),
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::STANDARD_GRAVITY as G;
    use proptest::prelude::*;

    fn rule() -> TriggerRule {
        TriggerRule {
            threshold: 3.0 * G,
            min_duration: 0.003,
            min_separation: 0.125,
        }
    }

    fn pulse_series(rate: f64, dur: f64, pulses: &[(f64, f64)]) -> Series {
        let n = (dur * rate) as usize;
        let v = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                if pulses.iter().any(|&(s, d)| t >= s - 1e-12 && t < s + d - 1e-12) {
                    5.0 * G
                } else {
                    G
                }
            })
            .collect();
        Series::new(0.0, rate, v).unwrap()
    }

    // run-length oracle: index of first sample of each supra-threshold run
    fn runs(s: &Series, thr: f64) -> Vec<(usize, usize)> {
        let mut out = vec![];
        let x = s.samples();
        let mut i = 0;
        while i < x.len() {
            if x[i] > thr {
                let st = i;
                while i < x.len() && x[i] > thr {
                    i += 1;
                }
                out.push((st, i - st));
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn constant_one_g_has_no_events() {
        let s = Series::new(0.0, 1125.0, vec![G; 5000]).unwrap();
        assert!(detect_impacts(&s, &rule(), "hb").is_empty());
    }

    #[test]
    fn ten_ms_pulse_detected_at_onset() {
        let s = pulse_series(1125.0, 4.0, &[(2.0, 0.010)]);
        let ev = detect_impacts(&s, &rule(), "hb");
        assert_eq!(ev.len(), 1);
        let r = runs(&s, 3.0 * G);
        assert_eq!(r.len(), 1);
        assert_eq!(ev[0].t0, s.time(r[0].0));
        assert!((ev[0].t0 - 2.0).abs() <= 1.0 / 1125.0);
    }

    #[test]
    fn two_ms_pulse_rejected() {
        let s = pulse_series(1125.0, 4.0, &[(2.0, 0.002)]);
        assert!(detect_impacts(&s, &rule(), "hb").is_empty());
    }

    #[test]
    fn close_runs_suppressed() {
        let s = pulse_series(1125.0, 4.0, &[(1.0, 0.010), (1.05, 0.010), (2.0, 0.01)]);
        let ev = detect_impacts(&s, &rule(), "hb");
        assert_eq!(ev.len(), 2);
        assert!(ev[1].t0 - ev[0].t0 >= 0.125);
    }

    #[test]
    fn window_at_recording_start_fails() {
        let rec = flat_recording(1125.0, 2.0);
        let e = ImpactEvent {
            t0: 0.0,
            source: "hb".into(),
        };
        let err = extract_window(&rec, &e, 0.03125, 0.15).unwrap_err();
        assert!(matches!(err, Error::Window { .. }));
        assert!(err.to_string().contains("s1/gyro"));
    }

    #[test]
    fn window_mid_recording_has_expected_length() {
        let rec = flat_recording(1125.0, 2.0);
        let e = ImpactEvent {
            t0: 1.0,
            source: "hb".into(),
        };
        let w = extract_window(&rec, &e, 0.03125, 0.15).unwrap();
        let span = w.gyro.end_time() - w.gyro.start_time();
        assert!((span - 0.18125).abs() <= 1.0 / 1125.0);
        assert!(w.gyro.start_time() >= -0.03125 - 1e-9);
        assert_eq!(w.gyro.sample_rate(), 1125.0);
    }

    fn flat_recording(rate: f64, dur: f64) -> ImuRecording {
        let n = (dur * rate) as usize;
        let s = TimeSeries::new(0.0, rate, vec![crate::geom::Vec3::zeros(); n]).unwrap();
        ImuRecording {
            sensor_id: "s1".into(),
            gyro: s.clone(),
            accel: s,
            accel_high: None,
        }
    }

    fn ev(ts: &[f64]) -> Vec<ImpactEvent> {
        ts.iter()
            .map(|&t0| ImpactEvent {
                t0,
                source: "x".into(),
            })
            .collect()
    }

    #[test]
    fn identical_lists_pair_with_zero_offset() {
        let a = ev(&[1.0, 3.0, 5.0]);
        let al = align_events(&a, &a, 1.0);
        assert_eq!(al.pairs.len(), 3);
        assert!(al.pairs.iter().all(|p| p.offset == 0.0 && p.a == p.b));
    }

    #[test]
    fn shifted_list_pairs_with_shift() {
        let a = ev(&[1.0, 3.0, 5.0]);
        let b = ev(&[1.5, 3.5, 5.5]);
        let al = align_events(&a, &b, 1.0);
        assert_eq!(al.pairs.len(), 3);
        for p in &al.pairs {
            assert_eq!(p.a, p.b);
            assert!((p.offset - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn far_events_stay_unpaired() {
        let al = align_events(&ev(&[1.0, 10.0]), &ev(&[1.2]), 1.0);
        assert_eq!(al.pairs.len(), 1);
        assert_eq!(al.unpaired_a, vec![1]);
        assert!(al.unpaired_b.is_empty());
    }

    #[test]
    fn events_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ev.csv");
        let rows = vec![
            EventRecord {
                pair_id: Some(0),
                source: "headband".into(),
                event: "0".into(),
                t0_s: 1.25,
                label: Some("throw-in".into()),
                offset_s: Some(0.02),
            },
            EventRecord {
                pair_id: None,
                source: "reference".into(),
                event: "e7".into(),
                t0_s: 9.5,
                label: None,
                offset_s: None,
            },
        ];
        write_events_csv(&p, &rows, Some("manifest: abc")).unwrap();
        assert_eq!(read_events_csv(&p).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn detection_shift_invariant(shift in -100.0..100.0f64, start in 0.5..2.0f64, dur in 0.004..0.05f64) {
            let s = pulse_series(1600.0, 3.0, &[(start, dur)]);
            let base = detect_impacts(&s, &rule(), "hb");
            let shifted = detect_impacts(&s.clone().shifted(shift), &rule(), "hb");
            prop_assert_eq!(base.len(), shifted.len());
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((b.t0 - a.t0 - shift).abs() < 1e-9);
            }
        }

        #[test]
        fn pairing_symmetric(
            a in prop::collection::vec(0.0..100.0f64, 0..12),
            b in prop::collection::vec(0.0..100.0f64, 0..12),
            max_off in 0.1..5.0f64,
        ) {
            let mut a = a; a.sort_by(f64::total_cmp);
            let mut b = b; b.sort_by(f64::total_cmp);
            let (ea, eb) = (ev(&a), ev(&b));
            let ab = align_events(&ea, &eb, max_off);
            let ba = align_events(&eb, &ea, max_off);
            let mut s1: Vec<(usize, usize)> = ab.pairs.iter().map(|p| (p.a, p.b)).collect();
            let mut s2: Vec<(usize, usize)> = ba.pairs.iter().map(|p| (p.b, p.a)).collect();
            s1.sort(); s2.sort();
            prop_assert_eq!(s1, s2);
        }
    }
}
