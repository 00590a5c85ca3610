//! Soft-NMS, proposal/classification fusion, and ensembling of runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ClassificationScores;
use crate::propgen::ConfidenceMaps;
use crate::segment::{rank_cmp, sort_ranked, tiou, Detection, GroundTruthDB, Proposal, Scored, TemporalSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsConfig {
    /// Gaussian decay width: overlapping scores are multiplied by `exp(-tiou^2 / sigma)`.
    pub sigma: f64,
    pub score_floor: f64,
    pub top_k: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            score_floor: 0.0005,
            top_k: 100,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Value(format!("sigma {} must be positive", self.sigma)));
        }
        if self.score_floor.is_nan() || self.score_floor >= 1.0 {
            return Err(Error::Value(format!(
                "score floor {} must be below 1",
                self.score_floor
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Value("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gaussian soft-NMS. Greedily takes the best remaining item, decays the
/// rest by their overlap with it, and drops anything that falls below the
/// floor. Output scores are the scores at selection time, in descending order.
pub fn soft_nms<T: Scored + Clone>(items: &[T], cfg: &NmsConfig) -> Vec<T> {
    let mut pool: Vec<T> = items.to_vec();
    let mut out = Vec::with_capacity(cfg.top_k.min(pool.len()));
    while !pool.is_empty() && out.len() < cfg.top_k {
        let best = (0..pool.len())
            .min_by(|&a, &b| rank_cmp(pool[a].score(), pool[a].segment(), pool[b].score(), pool[b].segment()))
            .expect("non-empty pool");
        let picked = pool.remove(best);
        let seg = *picked.segment();
        for other in pool.iter_mut() {
            let iou = tiou(&seg, other.segment());
            if iou > 0.0 {
                other.set_score(other.score() * (-(iou * iou) / cfg.sigma).exp());
            }
        }
        pool.retain(|o| o.score() >= cfg.score_floor);
        out.push(picked);
    }
    out
}

/// Pairs every proposal with the video's `top_k_classes` best labels.
pub fn fuse_classification(
    proposals: &[Proposal],
    cls: &ClassificationScores,
    top_k_classes: usize,
) -> Result<Vec<Detection>> {
    if top_k_classes == 0 {
        return Err(Error::Value("top_k_classes must be at least 1".into()));
    }
    if cls.entries().is_empty() {
        return Err(Error::EmptyClassification(cls.video_id.clone()));
    }
    let classes = &cls.entries()[..top_k_classes.min(cls.entries().len())];
    let mut out: Vec<Detection> = proposals
        .iter()
        .flat_map(|p| {
            classes.iter().map(move |c| Detection {
                segment: p.segment,
                label: c.label.clone(),
                score: p.score * c.score,
            })
        })
        .collect();
    sort_ranked(&mut out);
    Ok(out)
}

pub type VideoDetections = BTreeMap<String, Vec<Detection>>;

fn normalized_weights(weights: &[f64], n: usize) -> Result<Vec<f64>> {
    if weights.len() != n || n == 0 {
        return Err(Error::LengthMismatch(format!("{n} runs but {} weights", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Value(format!("ensemble weight {w} must be positive")));
    }
    let total: f64 = weights.iter().sum();
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Weighted union of several runs followed by per-label soft-NMS.
pub fn ensemble(runs: &[VideoDetections], weights: &[f64], cfg: &NmsConfig) -> Result<VideoDetections> {
    let weights = normalized_weights(weights, runs.len())?;
    let mut merged: BTreeMap<&str, BTreeMap<&str, Vec<Detection>>> = BTreeMap::new();
    for (run, w) in runs.iter().zip(&weights) {
        for (vid, dets) in run {
            let per_label = merged.entry(vid).or_default();
            for d in dets {
                per_label.entry(&d.label).or_default().push(Detection {
                    score: d.score * w,
                    ..d.clone()
                });
            }
        }
    }
    Ok(merged
        .into_iter()
        .map(|(vid, per_label)| {
            let mut all: Vec<Detection> = per_label.values().flat_map(|group| soft_nms(group, cfg)).collect();
            sort_ranked(&mut all);
            (vid.to_string(), all)
        })
        .collect())
}

/// Elementwise weighted average of maps that share `t` and `d_max`.
pub fn ensemble_maps(maps: &[ConfidenceMaps], weights: &[f64]) -> Result<ConfidenceMaps> {
    let weights = normalized_weights(weights, maps.len())?;
    let (t, d) = (maps[0].t(), maps[0].d_max());
    if let Some(m) = maps.iter().find(|m| m.t() != t || m.d_max() != d) {
        return Err(Error::ShapeMismatch(format!(
            "cannot average maps of shape ({}, {}) with ({t}, {d})",
            m.t(),
            m.d_max()
        )));
    }
    let mut out = ConfidenceMaps::zeros(t, d);
    for (m, w) in maps.iter().zip(&weights) {
        out.p_start.scaled_add(*w, &m.p_start);
        out.p_end.scaled_add(*w, &m.p_end);
        out.m_cc.scaled_add(*w, &m.m_cc);
        out.m_cr.scaled_add(*w, &m.m_cr);
    }
    for v in out
        .p_start
        .iter_mut()
        .chain(out.p_end.iter_mut())
        .chain(out.m_cc.iter_mut())
        .chain(out.m_cr.iter_mut())
    {
        *v = v.clamp(0.0, 1.0);
    }
    out.zero_invalid_cells();
    Ok(out)
}

/// One entry of the submission file, segment in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionEntry {
    pub label: String,
    pub score: f64,
    pub segment: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub version: String,
    pub results: BTreeMap<String, Vec<SubmissionEntry>>,
    pub external_data: serde_json::Map<String, serde_json::Value>,
}

pub const SUBMISSION_VERSION: &str = "1.3";

impl Submission {
    /// Converts normalized detections to seconds with the durations in `gt`.
    pub fn from_detections(dets: &VideoDetections, gt: &GroundTruthDB) -> Result<Self> {
        let mut results = BTreeMap::new();
        for (vid, list) in dets {
            let duration = gt
                .duration(vid)
                .ok_or_else(|| Error::Value(format!("no duration known for video `{vid}`")))?;
            let entries = list
                .iter()
                .map(|d| SubmissionEntry {
                    label: d.label.clone(),
                    score: d.score,
                    segment: d.segment.to_seconds(duration),
                })
                .collect();
            results.insert(vid.clone(), entries);
        }
        Ok(Self {
            version: SUBMISSION_VERSION.into(),
            results,
            external_data: Default::default(),
        })
    }

    /// Back to normalized detections; fails on any entry that is invalid.
    pub fn to_detections(&self, gt: &GroundTruthDB) -> Result<VideoDetections> {
        let mut out = BTreeMap::new();
        for (vid, list) in &self.results {
            let duration = gt
                .duration(vid)
                .ok_or_else(|| Error::Value(format!("no duration known for video `{vid}`")))?;
            let mut dets = Vec::with_capacity(list.len());
            for e in list {
                let segment = TemporalSegment::new(
                    (e.segment[0] / duration).clamp(0.0, 1.0),
                    (e.segment[1] / duration).clamp(0.0, 1.0),
                )?;
                let d = Detection {
                    segment,
                    label: e.label.clone(),
                    score: e.score,
                };
                d.validate()?;
                dets.push(d);
            }
            out.insert(vid.clone(), dets);
        }
        Ok(out)
    }
}

/// Structural check of a submission document.
pub fn validate_submission(doc: &serde_json::Value) -> Result<Submission> {
    let sub: Submission = serde_json::from_value(doc.clone()).map_err(|e| Error::Schema(e.to_string()))?;
    if sub.version != SUBMISSION_VERSION {
        return Err(Error::Schema(format!("unsupported version `{}`", sub.version)));
    }
    for (vid, list) in &sub.results {
        for (i, e) in list.iter().enumerate() {
            let [s, t] = e.segment;
            if e.label.is_empty() {
                return Err(Error::Schema(format!("{vid}[{i}]: empty label")));
            }
            if !(e.score.is_finite() && (0.0..=1.0).contains(&e.score)) {
                return Err(Error::Schema(format!("{vid}[{i}]: score {} outside [0, 1]", e.score)));
            }
            if !(s.is_finite() && t.is_finite() && 0.0 <= s && s < t) {
                return Err(Error::Schema(format!("{vid}[{i}]: bad segment [{s}, {t}]")));
            }
        }
    }
    Ok(sub)
}
