//! Loading and validation of feature files, annotation databases and
//! video-level classification scores.
//!
//! Binary feature layout (little endian):
//!
//! ```text
//! offset 0   "PRNF"
//! offset 4   u32 format version (1)
//! offset 8   u32 T (snippets)
//! offset 12  u32 C (channels)
//! offset 16  T*C f32, snippet-major
//! ```
//!
//! The CSV layout is one snippet per line with C comma separated values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{check_unit, to_normalized, Annotation, GroundTruthDB, VideoAnnotations};

pub const FEATURE_MAGIC: &[u8; 4] = b"PRNF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Snippet-level features of one video, `t` rows by `c` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    data: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, data: Array2<f64>) -> Result<Self> {
        let (t, c) = data.dim();
        if t == 0 || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature sequence must be non-empty, got {t}x{c}"
            )));
        }
        if let Some(((r, ch), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Value(format!(
                "non-finite feature {v} at snippet {r}, channel {ch}"
            )));
        }
        Ok(Self {
            video_id: video_id.into(),
            data,
        })
    }

    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn c(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }
}

/// Loads a feature file, picking the binary reader when the file starts with
/// the magic bytes and the CSV reader otherwise. The video id is the file stem.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_binary(&video_id, &bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Format {
            location: format!("byte {}", e.utf8_error().valid_up_to()),
            message: "CSV feature file is not valid UTF-8".into(),
        })?;
        parse_csv(&video_id, &text)
    }
}

pub fn decode_binary(video_id: &str, bytes: &[u8]) -> Result<FeatureSequence> {
    let fmt = |offset: usize, message: String| Error::Format {
        location: format!("byte {offset}"),
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(fmt(0, "bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(fmt(4, format!("unsupported format version {version}")));
    }
    let (t, c) = (word(8) as usize, word(12) as usize);
    if t == 0 || c == 0 {
        return Err(fmt(8, format!("shape mismatch: empty shape {t}x{c}")));
    }
    let body = &bytes[HEADER_LEN..];
    let expected = t * c * 4;
    if body.len() != expected {
        let rows = body.len() / (c * 4);
        return Err(fmt(
            HEADER_LEN + body.len().min(expected),
            format!("shape mismatch: header declares T={t}, C={c} ({expected} data bytes) but file holds {} data bytes (~{rows} rows)", body.len()),
        ));
    }
    let mut values = Vec::with_capacity(t * c);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fmt(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        values.push(v as f64);
    }
    let data = Array2::from_shape_vec((t, c), values).expect("length checked above");
    FeatureSequence::new(video_id, data)
}

/// Serializes to the binary layout. Values are narrowed to f32.
pub fn encode_binary(seq: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.t() * seq.c() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.t() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.c() as u32).to_le_bytes());
    for v in seq.data.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn write_features(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(seq)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(video_id: &str, text: &str) -> Result<FeatureSequence> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Format {
            location: format!("line {line_no}"),
            message,
        };
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| err(format!("cannot parse `{}` as a number", field.trim())))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {v}")));
            }
            values.push(v);
            n += 1;
        }
        match width {
            None => width = Some(n),
            Some(w) if w != n => {
                return Err(err(format!("row has {n} values, expected {w}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let c = width.ok_or_else(|| Error::Format {
        location: "line 1".into(),
        message: "no feature rows".into(),
    })?;
    let data = Array2::from_shape_vec((rows, c), values).expect("row widths checked");
    FeatureSequence::new(video_id, data)
}

/// Per-channel linear interpolation onto `target_t` evenly spaced positions
/// over `[0, t - 1]`.
pub fn resample_features(seq: &FeatureSequence, target_t: usize) -> Result<FeatureSequence> {
    if target_t < 2 {
        return Err(Error::Value(format!("target length {target_t} must be at least 2")));
    }
    let (t, c) = seq.data.dim();
    if t == target_t {
        return Ok(seq.clone());
    }
    let mut out = Array2::zeros((target_t, c));
    if t == 1 {
        for mut row in out.rows_mut() {
            row.assign(&seq.data.row(0));
        }
    } else {
        let span = (t - 1) as f64;
        let denom = (target_t - 1) as f64;
        for k in 0..target_t {
            let pos = k as f64 * span / denom;
            let lo = (pos.floor() as usize).min(t - 1);
            let frac = pos - lo as f64;
            for ch in 0..c {
                let a = seq.data[[lo, ch]];
                out[[k, ch]] = if frac == 0.0 || lo + 1 >= t {
                    a
                } else {
                    let b = seq.data[[lo + 1, ch]];
                    (a + frac * (b - a)).clamp(a.min(b), a.max(b))
                };
            }
        }
    }
    FeatureSequence::new(seq.video_id.clone(), out)
}

#[derive(Deserialize, Serialize)]
struct RawAnnotationFile {
    database: BTreeMap<String, RawVideo>,
}

#[derive(Deserialize, Serialize)]
struct RawVideo {
    duration: f64,
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize, Serialize)]
struct RawAnnotation {
    label: String,
    segment: [f64; 2],
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<GroundTruthDB> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text)
}

/// Parses the annotation JSON. Every bad entry is collected before failing.
pub fn parse_annotations(text: &str) -> Result<GroundTruthDB> {
    let raw: RawAnnotationFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    let mut problems = Vec::new();
    let mut db = GroundTruthDB::default();
    for (vid, video) in raw.database {
        if !(video.duration.is_finite() && video.duration > 0.0) {
            problems.push(format!("{vid}: duration {} must be positive", video.duration));
            continue;
        }
        let mut annotations = Vec::with_capacity(video.annotations.len());
        for (i, a) in video.annotations.into_iter().enumerate() {
            if a.label.is_empty() {
                problems.push(format!("{vid}[{i}]: empty label"));
                continue;
            }
            match to_normalized((a.segment[0], a.segment[1]), video.duration) {
                Ok(segment) => annotations.push(Annotation {
                    label: a.label,
                    segment,
                }),
                Err(e) => problems.push(format!("{vid}[{i}]: {e}")),
            }
        }
        db.videos.insert(
            vid,
            VideoAnnotations {
                duration_seconds: video.duration,
                annotations,
            },
        );
    }
    if problems.is_empty() {
        Ok(db)
    } else {
        Err(Error::InvalidSegment(problems))
    }
}

/// Serializes the database back to the seconds-based JSON schema.
pub fn annotations_to_json(db: &GroundTruthDB) -> serde_json::Value {
    let raw = RawAnnotationFile {
        database: db
            .videos
            .iter()
            .map(|(vid, v)| {
                let annotations = v
                    .annotations
                    .iter()
                    .map(|a| RawAnnotation {
                        label: a.label.clone(),
                        segment: a.segment.to_seconds(v.duration_seconds),
                    })
                    .collect();
                (
                    vid.clone(),
                    RawVideo {
                        duration: v.duration_seconds,
                        annotations,
                    },
                )
            })
            .collect(),
    };
    serde_json::to_value(raw).expect("plain data serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub score: f64,
}

/// Video-level class scores, sorted by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationScores {
    pub video_id: String,
    entries: Vec<ClassEntry>,
}

impl ClassificationScores {
    pub fn new(video_id: impl Into<String>, mut entries: Vec<ClassEntry>) -> Result<Self> {
        let video_id = video_id.into();
        let mut seen = BTreeSet::new();
        for e in &entries {
            check_unit(&format!("{video_id}/{} score", e.label), e.score)?;
            if !seen.insert(e.label.as_str()) {
                return Err(Error::Value(format!("{video_id}: duplicate label `{}`", e.label)));
            }
        }
        entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(Self { video_id, entries })
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }
}

pub fn load_classification(path: impl AsRef<Path>) -> Result<BTreeMap<String, ClassificationScores>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_classification(&text)
}

pub fn parse_classification(text: &str) -> Result<BTreeMap<String, ClassificationScores>> {
    let raw: BTreeMap<String, Vec<ClassEntry>> =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    raw.into_iter()
        .map(|(vid, entries)| Ok((vid.clone(), ClassificationScores::new(vid, entries)?)))
        .collect()
}

pub fn classification_to_json(cls: &BTreeMap<String, ClassificationScores>) -> serde_json::Value {
    let raw: BTreeMap<&String, &[ClassEntry]> = cls.iter().map(|(k, v)| (k, v.entries())).collect();
    serde_json::to_value(raw).expect("plain data serializes")
}
