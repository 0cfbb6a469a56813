use std::path::Path;

use serde::Deserialize;

use kinereco::evaluate::Band;
use kinereco::ingest::{commented_csv_writer, load_session_config, SessionConfig};
use kinereco::kinematics::AdaptiveConfig;
use kinereco::pipeline::{
    comparison_series, load_reference, read_kinematics_csv, reference_event, AgreementReport, EventAgreement,
};
use kinereco::series::magnitude;
use kinereco::wavelet::{cwt, CutoffResult};
use kinereco::{Error, Result};

use super::{create_dir, cutoff_path, kinematics_path};
use crate::manifest::RunManifest;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn band(b: Band) -> String {
    format!("{b:?}").to_lowercase()
}

struct Tables<'a> {
    dir: &'a Path,
    comment: String,
}

impl Tables<'_> {
    fn write(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.dir.join(name);
        let mut w = commented_csv_writer(&path, Some(&self.comment))?;
        w.write_record(header).map_err(|e| Error::csv(&path, e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

pub fn run(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let report: AgreementReport = serde_json::from_str(&text).map_err(|e| Error::json(input, e))?;
    let manifest = RunManifest::new("report")
        .input("report", input)
        .param("report_manifest", &report.manifest_hash);
    create_dir(out)?;
    let t = Tables {
        dir: out,
        comment: manifest.comment(),
    };

    let mut rows = Vec::new();
    let mut ba = Vec::new();
    for e in &report.events {
        for q in &e.quantities {
            let c = q.cora;
            rows.push(vec![
                e.pair_id.to_string(),
                e.event.clone(),
                e.reference_event.clone(),
                e.label.clone().unwrap_or_default(),
                format!("{}", e.t0_s),
                format!("{}", e.offset_s),
                format!("{}", e.f0_hz),
                q.quantity.name().into(),
                q.peak.clone(),
                q.quantity.units().into(),
                format!("{}", q.hb_peak.value),
                format!("{}", q.hb_peak.time),
                format!("{}", q.ref_peak.value),
                format!("{}", q.ref_peak.time),
                opt(c.map(|c| c.total)),
                opt(c.map(|c| c.phase)),
                opt(c.map(|c| c.magnitude)),
                opt(c.map(|c| c.shape)),
                c.map(|c| band(c.band)).unwrap_or_default(),
                opt(c.map(|c| c.shift)),
                opt(q.cora_axes[0].map(|c| c.total)),
                opt(q.cora_axes[1].map(|c| c.total)),
                opt(q.cora_axes[2].map(|c| c.total)),
                opt(q.nrmse.map(|m| m.nrms_pct)),
                opt(q.nrmse.map(|m| m.signed_mean_pct)),
            ]);
            ba.push(vec![
                q.peak.clone(),
                e.event.clone(),
                e.label.clone().unwrap_or_default(),
                format!("{}", q.hb_peak.value),
                format!("{}", q.ref_peak.value),
                format!("{}", 0.5 * (q.hb_peak.value + q.ref_peak.value)),
                format!("{}", q.hb_peak.value - q.ref_peak.value),
            ]);
        }
    }
    t.write(
        "events.csv",
        &[
            "pair_id", "event", "reference_event", "label", "t0_s", "offset_s", "f0_hz", "quantity", "peak", "units",
            "hb_peak", "hb_peak_time_s", "ref_peak", "ref_peak_time_s", "cora", "cora_phase", "cora_magnitude",
            "cora_shape", "cora_band", "cora_shift_s", "cora_x", "cora_y", "cora_z", "nrms_pct", "signed_mean_pct",
        ],
        rows,
    )?;
    t.write(
        "bland_altman.csv",
        &["peak", "event", "label", "hb", "ref", "mean", "difference"],
        ba,
    )?;

    let summary = report.quantities.iter().map(|s| {
        let b = s.bland_altman.as_ref();
        let tt = s.t_test.as_ref();
        vec![
            s.quantity.name().into(),
            s.peak.clone(),
            s.units.clone(),
            s.n.to_string(),
            opt(b.map(|b| b.mean_bias)),
            opt(b.map(|b| b.sd_bias)),
            opt(b.map(|b| b.loa_low)),
            opt(b.map(|b| b.loa_high)),
            opt(b.map(|b| b.mean_normalized_bias)),
            opt(tt.map(|t| t.t)),
            opt(tt.map(|t| t.df)),
            opt(tt.map(|t| t.p)),
            tt.map(|t| t.significant.to_string()).unwrap_or_default(),
            opt(s.cora_mean),
            opt(s.cora_sd),
            opt(s.nrms_pct_mean),
            opt(s.signed_mean_pct_mean),
        ]
    });
    t.write(
        "summary.csv",
        &[
            "quantity", "peak", "units", "n", "mean_bias", "sd_bias", "loa_low", "loa_high",
            "mean_normalized_bias_pct", "t", "df", "p", "significant", "cora_mean", "cora_sd", "nrms_pct_mean",
            "signed_mean_pct_mean",
        ],
        summary.collect::<Vec<_>>(),
    )?;
    let groups = report.quantities.iter().flat_map(|s| {
        s.groups.iter().map(move |g| {
            vec![
                s.peak.clone(),
                g.label.clone(),
                g.n.to_string(),
                format!("{}", g.mean_normalized_bias),
                format!("{}", g.sd_normalized_bias),
            ]
        })
    });
    t.write(
        "groups.csv",
        &["peak", "label", "n", "mean_normalized_bias_pct", "sd_normalized_bias_pct"],
        groups.collect::<Vec<_>>(),
    )?;

    match plot_inputs(&report) {
        Ok((cfg, blocks)) => {
            for e in &report.events {
                if let Err(err) = event_plots(&t, &report, &cfg, &blocks, e) {
                    log::warn!("{}: no plot data ({err})", e.event);
                }
            }
        }
        Err(err) => log::warn!("plot data skipped: {err}"),
    }
    manifest.write(out)
}

fn plot_inputs(report: &AgreementReport) -> Result<(SessionConfig, Vec<kinereco::ingest::ReferenceBlock>)> {
    let cfg = load_session_config(&report.inputs.config)?;
    let blocks = load_reference(&cfg, Path::new(&report.inputs.ref_dir))?;
    Ok((cfg, blocks))
}

#[derive(Deserialize)]
struct CutoffFile {
    governing_axis: Option<String>,
    x: Option<CutoffResult>,
    y: Option<CutoffResult>,
    z: Option<CutoffResult>,
}

fn event_plots(
    t: &Tables,
    report: &AgreementReport,
    cfg: &SessionConfig,
    blocks: &[kinereco::ingest::ReferenceBlock],
    e: &EventAgreement,
) -> Result<()> {
    let hb_dir = Path::new(&report.inputs.hb_dir);
    let table = read_kinematics_csv(kinematics_path(hb_dir, &e.event))?;
    let block = blocks
        .iter()
        .find(|b| b.event_id == e.reference_event)
        .ok_or_else(|| Error::Invalid(format!("reference event {} not found", e.reference_event)))?;
    let rk = reference_event(cfg, block, e.offset_s, e.t0_s)?;
    let series = comparison_series(cfg, &table, &rk)?;

    let mut header = vec!["time_s".to_string()];
    for c in &series {
        for side in ["hb", "ref"] {
            for ax in ["x", "y", "z", "mag"] {
                header.push(format!("{side}_{}_{ax}", c.quantity.column()));
            }
        }
    }
    let mags: Vec<_> = series.iter().map(|c| (magnitude(&c.hb), magnitude(&c.reference))).collect();
    let n = series.first().map_or(0, |c| c.hb.len());
    let rows = (0..n).map(|i| {
        let mut r = vec![format!("{}", series[0].hb.time(i))];
        for (c, (hm, rm)) in series.iter().zip(&mags) {
            for (s, m) in [(&c.hb, hm), (&c.reference, rm)] {
                let v = s.samples()[i];
                r.extend((0..3).map(|k| format!("{}", v[k])));
                r.push(format!("{}", m.samples()[i]));
            }
        }
        r
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    t.write(&format!("timehistory_{}.csv", e.event), &header_refs, rows.collect::<Vec<_>>())?;

    let cutoff_text = std::fs::read_to_string(cutoff_path(hb_dir, &e.event))
        .map_err(|err| Error::io(cutoff_path(hb_dir, &e.event), err))?;
    let cutoff: CutoffFile =
        serde_json::from_str(&cutoff_text).map_err(|err| Error::json(cutoff_path(hb_dir, &e.event), err))?;
    let (axis, result) = match cutoff.governing_axis.as_deref() {
        Some("x") => (0, cutoff.x),
        Some("y") => (1, cutoff.y),
        Some("z") => (2, cutoff.z),
        _ => return Err(Error::Invalid("cutoff file names no governing axis".into())),
    };
    if let Some(c) = result {
        let s = &c.slices;
        let delta = s.delta();
        let rows = (0..s.freqs.len()).map(|j| {
            vec![
                format!("{}", s.freqs[j]),
                format!("{}", s.start[j]),
                format!("{}", s.end[j]),
                format!("{}", delta[j]),
            ]
        });
        t.write(
            &format!("slices_{}.csv", e.event),
            &["freq_hz", "w_start", "w_end", "delta"],
            rows.collect::<Vec<_>>(),
        )?;
    }
    let omega_h = table
        .series
        .get("omega_h")
        .ok_or_else(|| Error::Invalid("kinematics table lacks omega_h".into()))?;
    let sc = cwt(&omega_h.component(axis), &AdaptiveConfig::from_filter(&cfg.filter, false).cwt)?;
    let comment = format!("{}\naxis {}", t.comment, ["x", "y", "z"][axis]);
    sc.write_csv(t.dir.join(format!("scalogram_{}.csv", e.event)), Some(&comment))
}
