use std::path::Path;

use kinereco::detect::write_events_csv;
use kinereco::ingest::load_session_config;
use kinereco::pipeline::{detect_session, load_headband, load_labels, load_reference};
use kinereco::Result;

use crate::manifest::RunManifest;

pub fn run(config_path: &Path, input: &Path, out: &Path) -> Result<()> {
    let cfg = load_session_config(config_path)?;
    let manifest = RunManifest::new("detect").config(config_path)?.input("in", input);
    let hb = load_headband(&cfg, input)?;
    let blocks = load_reference(&cfg, input)?;
    let labels = load_labels(input)?;
    let rows = detect_session(&cfg, &hb, &blocks, &labels)?;
    let paired = rows.iter().filter(|r| r.pair_id.is_some()).count() / 2;
    log::info!("{paired} paired events");
    write_events_csv(out, &rows, Some(&manifest.comment()))
}
