//! Temporal intervals and the records built on them.
//!
//! All times are normalized to the unit interval; conversion from seconds
//! happens only at I/O boundaries (see [`to_normalized`]).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-open-free interval `[start, end]` with `0 <= start < end <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct TemporalSegment {
    start: f64,
    end: f64,
}

impl TemporalSegment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end > 1.0 || start >= end {
            return Err(Error::invalid_segment(format!(
                "[{start}, {end}] is not a valid normalized segment"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Length of the overlap with `other`; zero for disjoint or touching intervals.
    pub fn intersection(&self, other: &Self) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    /// Converts back to seconds for a video of the given duration.
    pub fn to_seconds(&self, duration: f64) -> [f64; 2] {
        [self.start * duration, self.end * duration]
    }
}

impl TryFrom<[f64; 2]> for TemporalSegment {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Self::new(v[0], v[1])
    }
}

impl From<TemporalSegment> for [f64; 2] {
    fn from(s: TemporalSegment) -> Self {
        [s.start, s.end]
    }
}

/// Temporal intersection over union.
pub fn tiou(a: &TemporalSegment, b: &TemporalSegment) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.length() + b.length() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Converts a `(start, end)` pair in seconds to normalized time, clamping the
/// end to the video duration.
pub fn to_normalized(seconds: (f64, f64), duration: f64) -> Result<TemporalSegment> {
    let (s, e) = seconds;
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid_segment(format!("duration {duration} must be positive")));
    }
    if !(s.is_finite() && e.is_finite()) || s < 0.0 || s >= e {
        return Err(Error::invalid_segment(format!("[{s}, {e}] is empty or reversed")));
    }
    if s >= duration {
        return Err(Error::invalid_segment(format!(
            "[{s}, {e}] starts at or beyond the duration {duration}"
        )));
    }
    TemporalSegment::new(s / duration, (e / duration).min(1.0))
}

/// Ranking order shared by every sorted proposal/detection list: descending
/// score, then earlier start, then shorter duration.
pub fn rank_cmp(a_score: f64, a: &TemporalSegment, b_score: f64, b: &TemporalSegment) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a.start.total_cmp(&b.start))
        .then_with(|| a.length().total_cmp(&b.length()))
}

/// The four confidences a decoded proposal score was fused from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreComponents {
    pub p_start: f64,
    pub p_end: f64,
    pub map_cc: f64,
    pub map_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub segment: TemporalSegment,
    pub score: f64,
    #[serde(default)]
    pub components: ScoreComponents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_score: Option<f64>,
}

impl Proposal {
    pub fn new(segment: TemporalSegment, score: f64) -> Self {
        Self {
            segment,
            score,
            components: ScoreComponents::default(),
            refined_score: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("proposal score", self.score)?;
        if let Some(r) = self.refined_score {
            check_unit("refined score", r)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub segment: TemporalSegment,
    pub label: String,
    pub score: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::Value("detection label is empty".into()));
        }
        check_unit("detection score", self.score)
    }
}

/// Anything with a segment and a mutable score; what suppression and
/// ranking operate on.
pub trait Scored {
    fn segment(&self) -> &TemporalSegment;
    fn score(&self) -> f64;
    fn set_score(&mut self, score: f64);
}

impl Scored for Proposal {
    fn segment(&self) -> &TemporalSegment {
        &self.segment
    }
    fn score(&self) -> f64 {
        self.score
    }
    fn set_score(&mut self, score: f64) {
        self.score = score;
    }
}

impl Scored for Detection {
    fn segment(&self) -> &TemporalSegment {
        &self.segment
    }
    fn score(&self) -> f64 {
        self.score
    }
    fn set_score(&mut self, score: f64) {
        self.score = score;
    }
}

/// Stable sort into ranking order (see [`rank_cmp`]).
pub fn sort_ranked<T: Scored>(items: &mut [T]) {
    items.sort_by(|a, b| rank_cmp(a.score(), a.segment(), b.score(), b.segment()));
}

pub(crate) fn check_unit(what: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Value(format!("{what} {v} is outside [0, 1]")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub segment: TemporalSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotations {
    pub duration_seconds: f64,
    pub annotations: Vec<Annotation>,
}

/// Ground truth keyed by video id, in normalized time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthDB {
    pub videos: BTreeMap<String, VideoAnnotations>,
}

impl GroundTruthDB {
    pub fn instance_count(&self) -> usize {
        self.videos.values().map(|v| v.annotations.len()).sum()
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.videos
            .values()
            .flat_map(|v| v.annotations.iter().map(|a| a.label.as_str()))
            .collect()
    }

    pub fn duration(&self, video_id: &str) -> Option<f64> {
        self.videos.get(video_id).map(|v| v.duration_seconds)
    }

    pub fn segments(&self, video_id: &str) -> Vec<TemporalSegment> {
        self.videos
            .get(video_id)
            .map(|v| v.annotations.iter().map(|a| a.segment).collect())
            .unwrap_or_default()
    }
}
