use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use driftguard_core::scenario::ScenarioSpec;

/// Looked up in the working directory when no scenario file is named.
pub const LOCAL_CONFIG: &str = "driftguard.json";

/// Where the scenario came from, for the log line.
#[derive(Debug, PartialEq)]
pub enum Source {
    File(PathBuf),
    Defaults,
}

/// Resolves the scenario: the explicit path (flag or `DRIFTGUARD_CONFIG`,
/// already merged by clap), else `./driftguard.json`, else the defaults.
pub fn load_spec(explicit: Option<&Path>) -> Result<(ScenarioSpec, Source)> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => Some(PathBuf::from(LOCAL_CONFIG)).filter(|p| p.is_file()),
    };
    let Some(path) = path else {
        return Ok((ScenarioSpec::default(), Source::Defaults));
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading scenario {}", path.display()))?;
    let spec: ScenarioSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))?;
    Ok((spec, Source::File(path)))
}

/// Applies command line overrides and checks the result.
pub fn finish(mut spec: ScenarioSpec, seed: Option<u64>, cycles: Option<u32>) -> Result<ScenarioSpec> {
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(c) = cycles {
        spec.cycles = c;
        // A hand-written schedule only fits the length it was written for.
        if spec.schedule.as_ref().is_some_and(|s| s.cycles() != c) {
            spec.schedule = None;
        }
    }
    spec.validate().context("invalid scenario")?;
    Ok(spec)
}
