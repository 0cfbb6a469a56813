use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use kinereco::detect::read_events_csv;
use kinereco::ingest::{commented_csv_writer, load_session_config};
use kinereco::kinematics::{AlphaMethod, KinematicsSet};
use kinereco::pipeline::{load_headband, reconstruct_event, HEADBAND};
use kinereco::wavelet::CutoffResult;
use kinereco::{Error, Result};

use super::{create_dir, cutoff_path, kinematics_path, write_json};
use crate::manifest::RunManifest;

const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Serialize)]
struct CutoffFile<'a> {
    manifest_hash: String,
    event: &'a str,
    t0_s: f64,
    f0_hz: f64,
    /// Axis whose cutoff was applied to all three.
    governing_axis: Option<&'static str>,
    x: Option<&'a CutoffResult>,
    y: Option<&'a CutoffResult>,
    z: Option<&'a CutoffResult>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn run(config_path: &Path, input: &Path, events_path: &Path, out: &Path, method: AlphaMethod) -> Result<()> {
    let cfg = load_session_config(config_path)?;
    let manifest = RunManifest::new("reconstruct")
        .config(config_path)?
        .input("in", input)
        .input("events", events_path)
        .param("alpha_method", format!("{method:?}").to_lowercase());
    let events: Vec<_> = read_events_csv(events_path)?
        .into_iter()
        .filter(|r| r.source == HEADBAND)
        .collect();
    if events.is_empty() {
        return Err(Error::Invalid(format!(
            "{} lists no headband events",
            events_path.display()
        )));
    }
    let hb = load_headband(&cfg, input)?;
    let results: Vec<Result<KinematicsSet>> = events
        .par_iter()
        .map(|e| reconstruct_event(&cfg, &hb, e.t0_s))
        .collect();

    create_dir(out)?;
    let comment = manifest.comment();
    let summary_path = out.join("cutoffs.csv");
    let mut summary = commented_csv_writer(&summary_path, Some(&comment))?;
    let csv_err = |e| Error::csv(&summary_path, e);
    let mut header = vec!["event".to_string(), "t0_s".into(), "status".into(), "f0_hz".into()];
    for k in ["f0", "f_ss", "f_n"] {
        header.extend(AXES.iter().map(|a| format!("{k}_{a}_hz")));
    }
    header.push("message".into());
    summary.write_record(&header).map_err(csv_err)?;

    let mut ok = 0;
    for (e, r) in events.iter().zip(&results) {
        let mut row = vec![e.event.clone(), format!("{}", e.t0_s)];
        match r {
            Ok(set) => {
                ok += 1;
                set.write_csv(kinematics_path(out, &e.event), method, Some(&comment))?;
                let axes = &set.cutoff_axes;
                let governing = axes
                    .iter()
                    .position(|a| a.as_ref() == Some(&set.cutoff))
                    .map(|i| AXES[i]);
                write_json(
                    &cutoff_path(out, &e.event),
                    &CutoffFile {
                        manifest_hash: manifest.hash(),
                        event: &e.event,
                        t0_s: e.t0_s,
                        f0_hz: set.f0,
                        governing_axis: governing,
                        x: axes[0].as_ref(),
                        y: axes[1].as_ref(),
                        z: axes[2].as_ref(),
                    },
                )?;
                row.push("ok".into());
                row.push(format!("{}", set.f0));
                row.extend(axes.iter().map(|a| fmt_opt(a.as_ref().map(|c| c.f0))));
                row.extend(axes.iter().map(|a| fmt_opt(a.as_ref().and_then(|c| c.f_ss))));
                row.extend(axes.iter().map(|a| fmt_opt(a.as_ref().and_then(|c| c.f_n))));
                row.push(String::new());
            }
            Err(err) => {
                log::warn!("{}: {err}", e.event);
                row.push(err.kind().into());
                row.extend(std::iter::repeat_n(String::new(), 10));
                row.push(err.to_string());
            }
        }
        summary.write_record(&row).map_err(csv_err)?;
    }
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;
    log::info!("{ok} of {} events reconstructed", events.len());
    manifest.write(out)
}
