//! Reading and writing the files exchanged between pipeline stages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tad_core::ingest::{load_features, resample_features, FeatureSequence};
use tad_core::metrics::VideoProposals;

use crate::failure::Failure;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Every `.bin` / `.csv` file of `dir`, ordered by video id, resampled to
/// `t` snippets when `t` is given.
pub fn load_feature_dir(dir: &Path, t: Option<usize>) -> Result<Vec<FeatureSequence>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && matches!(ext, "bin" | "csv") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Failure::Invalid(format!(
            "{}: no .bin or .csv feature files",
            dir.display()
        )));
    }
    paths.sort();
    let mut seqs = Vec::with_capacity(paths.len());
    for path in &paths {
        let seq = load_features(path)?;
        seqs.push(match t {
            Some(t) => resample_features(&seq, t)?,
            None => seq,
        });
    }
    for pair in seqs.windows(2) {
        if pair[0].video_id == pair[1].video_id {
            return Err(Failure::Invalid(format!(
                "two feature files for video {}",
                pair[0].video_id
            )));
        }
    }
    Ok(seqs)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn read_proposals(path: &Path) -> Result<VideoProposals, Failure> {
    let props: VideoProposals = read_json(path)?;
    for (vid, list) in &props {
        for p in list {
            p.validate()
                .map_err(|e| Failure::Invalid(format!("{}: video {vid}: {e}", path.display())))?;
        }
    }
    Ok(props)
}

pub fn by_id(seqs: &[FeatureSequence]) -> BTreeMap<&str, &FeatureSequence> {
    seqs.iter().map(|s| (s.video_id.as_str(), s)).collect()
}
