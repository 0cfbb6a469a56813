use std::path::Path;

use kinereco::ingest::load_session_config;
use kinereco::synth::{load_profile, simulate_session, write_session};
use kinereco::Result;

use super::create_dir;
use crate::manifest::RunManifest;

pub fn run(profile_path: &Path, config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_session_config(config_path)?;
    let mut profile = load_profile(profile_path)?;
    if let Some(s) = seed {
        profile.seed = s;
    }
    let mut manifest = RunManifest::new("simulate")
        .config(config_path)?
        .input("profile", profile_path);
    manifest.seed = Some(profile.seed);
    let session = simulate_session(&cfg, &profile)?;
    log::info!(
        "{} headband recordings, {} reference events",
        session.headband.len(),
        session.reference.len()
    );
    create_dir(out)?;
    write_session(&session, out, Some(&manifest.comment()))?;
    manifest.write(out)
}
