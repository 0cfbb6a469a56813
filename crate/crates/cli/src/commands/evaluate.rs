use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use kinereco::detect::{read_events_csv, EventRecord};
use kinereco::ingest::load_session_config;
use kinereco::pipeline::{
    compare_event, load_reference, read_kinematics_csv, reference_event, summarize, AgreementReport, EventAgreement,
    ReportInputs, CLOCK_ALIGNMENT_NOTE, HEADBAND, REFERENCE,
};
use kinereco::{Error, Result};

use super::{kinematics_path, write_json};
use crate::manifest::{RunManifest, VERSION};

pub fn run(config_path: &Path, hb_dir: &Path, ref_dir: &Path, pairs_path: &Path, out: &Path) -> Result<()> {
    let cfg = load_session_config(config_path)?;
    cfg.cora.validate()?;
    let manifest = RunManifest::new("evaluate")
        .config(config_path)?
        .input("hb", hb_dir)
        .input("ref", ref_dir)
        .input("pairs", pairs_path);
    let rows = read_events_csv(pairs_path)?;
    let mut pairs: BTreeMap<usize, (Option<&EventRecord>, Option<&EventRecord>)> = BTreeMap::new();
    for r in &rows {
        let Some(id) = r.pair_id else { continue };
        let slot = pairs.entry(id).or_default();
        match r.source.as_str() {
            HEADBAND => slot.0 = Some(r),
            REFERENCE => slot.1 = Some(r),
            other => log::warn!("ignoring row with source {other:?}"),
        }
    }
    let mut notes = Vec::new();
    let complete: Vec<(usize, &EventRecord, &EventRecord)> = pairs
        .into_iter()
        .filter_map(|(id, p)| match p {
            (Some(h), Some(r)) => Some((id, h, r)),
            _ => {
                notes.push(format!("pair {id} lacks a headband or reference row"));
                None
            }
        })
        .collect();
    let blocks = load_reference(&cfg, ref_dir)?;

    let results: Vec<Result<EventAgreement>> = complete
        .par_iter()
        .map(|&(id, h, r)| {
            let offset = h
                .offset_s
                .or(r.offset_s)
                .ok_or_else(|| Error::Invalid(format!("pair {id} has no clock offset")))?;
            let block = blocks
                .iter()
                .find(|b| b.event_id == r.event)
                .ok_or_else(|| Error::Invalid(format!("reference event {} not found", r.event)))?;
            let table = read_kinematics_csv(kinematics_path(hb_dir, &h.event))?;
            let rk = reference_event(&cfg, block, offset, h.t0_s)?;
            let (quantities, window) = compare_event(&cfg, &table, &rk)?;
            Ok(EventAgreement {
                pair_id: id,
                event: h.event.clone(),
                reference_event: r.event.clone(),
                label: h.label.clone().or_else(|| r.label.clone()),
                t0_s: h.t0_s,
                offset_s: offset,
                f0_hz: table.f0,
                window,
                quantities,
            })
        })
        .collect();
    let mut events = Vec::new();
    for ((id, h, _), r) in complete.iter().zip(results) {
        match r {
            Ok(e) => events.push(e),
            Err(err) => {
                log::warn!("pair {id} ({}): {err}", h.event);
                notes.push(format!("pair {id} ({}) skipped: {err}", h.event));
            }
        }
    }
    if events.is_empty() {
        return Err(Error::Invalid("no event pair could be evaluated".into()));
    }
    let quantities = summarize(&events, &mut notes);
    let report = AgreementReport {
        tool_version: VERSION.into(),
        manifest_hash: manifest.hash(),
        inputs: ReportInputs {
            config: config_path.display().to_string(),
            hb_dir: hb_dir.display().to_string(),
            ref_dir: ref_dir.display().to_string(),
            pairs: pairs_path.display().to_string(),
        },
        cora_params: cfg.cora.clone(),
        clock_alignment: CLOCK_ALIGNMENT_NOTE.into(),
        events,
        quantities,
        notes,
    };
    write_json(out, &report)
}
