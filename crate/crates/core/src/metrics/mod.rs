//! Proposal metrics (AR@AN, AUC of the AR-vs-AN curve) and detection
//! metrics (AP, mAP, mAP averaged over tIoU thresholds).
//!
//! Only the ranking induced by scores matters; every metric here is
//! unchanged by a strictly increasing transform of the scores.

pub mod matching;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::VideoDetections;
use crate::segment::{rank_cmp, tiou, GroundTruthDB, Proposal, Scored, TemporalSegment};
use matching::{match_flags, IncrementalMatcher};

pub type VideoProposals = BTreeMap<String, Vec<Proposal>>;

/// `[0.5 : 0.05 : 0.95]`, ten values.
pub fn default_tiou_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_thresholds: Vec<f64>,
    pub an_grid: Vec<usize>,
    pub proposal_recall_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tiou_thresholds: default_tiou_thresholds(),
            an_grid: (1..=100).collect(),
            proposal_recall_thresholds: default_tiou_thresholds(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("tiou_thresholds", &self.tiou_thresholds),
            ("proposal_recall_thresholds", &self.proposal_recall_thresholds),
        ] {
            if list.is_empty() || list.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return Err(Error::Value(format!("{name} must be non-empty values in (0, 1]")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Value(format!("{name} must be strictly increasing")));
            }
        }
        if self.an_grid.is_empty() || self.an_grid[0] == 0 || self.an_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Value(
                "an_grid must be strictly increasing positive integers".into(),
            ));
        }
        Ok(())
    }
}

fn ranked_segments<T: Scored>(items: &[T]) -> Vec<TemporalSegment> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        rank_cmp(
            items[a].score(),
            items[a].segment(),
            items[b].score(),
            items[b].segment(),
        )
    });
    idx.into_iter().map(|i| *items[i].segment()).collect()
}

fn tiou_rows(preds: &[TemporalSegment], gt: &[TemporalSegment]) -> Vec<Vec<f64>> {
    preds.iter().map(|p| gt.iter().map(|g| tiou(p, g)).collect()).collect()
}

/// `out[k]` = instances recalled across all videos when each video keeps
/// its top `k` proposals, for `k` in `0..=max_an`.
fn cumulative_recall(proposals: &VideoProposals, gt: &GroundTruthDB, tau: f64, max_an: usize) -> Vec<usize> {
    let mut total = vec![0usize; max_an + 1];
    for (vid, video) in &gt.videos {
        let gts: Vec<TemporalSegment> = video.annotations.iter().map(|a| a.segment).collect();
        if gts.is_empty() {
            continue;
        }
        let Some(props) = proposals.get(vid) else { continue };
        let mut ranked = ranked_segments(props);
        ranked.truncate(max_an);
        let flags = match_flags(&tiou_rows(&ranked, &gts), gts.len(), tau);
        let mut running = 0;
        for (k, slot) in total.iter_mut().enumerate().skip(1) {
            if let Some(true) = flags.get(k - 1) {
                running += 1;
            }
            *slot += running;
        }
    }
    total
}

/// Average recall over `thresholds` at every AN in `an_grid`.
pub fn ar_curve(
    proposals: &VideoProposals,
    gt: &GroundTruthDB,
    an_grid: &[usize],
    thresholds: &[f64],
) -> Result<Vec<f64>> {
    let n_gt = gt.instance_count();
    if n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let max_an = an_grid.iter().copied().max().unwrap_or(0);
    let per_tau: Vec<Vec<usize>> = thresholds
        .iter()
        .map(|&tau| cumulative_recall(proposals, gt, tau, max_an))
        .collect();
    Ok(an_grid
        .iter()
        .map(|&an| {
            let sum: f64 = per_tau.iter().map(|c| c[an] as f64 / n_gt as f64).sum();
            sum / thresholds.len() as f64
        })
        .collect())
}

/// AR@AN: recall with the top `an` proposals per video, averaged over `thresholds`.
pub fn ar_at_an(proposals: &VideoProposals, gt: &GroundTruthDB, an: usize, thresholds: &[f64]) -> Result<f64> {
    if an == 0 {
        return Err(Error::Value("AN must be at least 1".into()));
    }
    Ok(ar_curve(proposals, gt, &[an], thresholds)?[0])
}

/// Trapezoidal area under the curve divided by the grid extent, so a flat
/// curve at `r` has area `r`.
pub fn auc_from_curve(an_grid: &[usize], ar: &[f64]) -> f64 {
    match an_grid.len() {
        0 => 0.0,
        1 => ar[0],
        n => {
            let extent = (an_grid[n - 1] - an_grid[0]) as f64;
            let area: f64 = (1..n)
                .map(|i| (an_grid[i] - an_grid[i - 1]) as f64 * 0.5 * (ar[i] + ar[i - 1]))
                .sum();
            area / extent
        }
    }
}

pub fn auc_ar_an(proposals: &VideoProposals, gt: &GroundTruthDB, cfg: &EvalConfig) -> Result<f64> {
    let curve = ar_curve(proposals, gt, &cfg.an_grid, &cfg.proposal_recall_thresholds)?;
    Ok(auc_from_curve(&cfg.an_grid, &curve))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalReport {
    pub ar_at: BTreeMap<usize, f64>,
    pub auc: f64,
    pub curve: Vec<(usize, f64)>,
    /// Recall at the largest AN for each recall threshold.
    pub recall_at_max_an: Vec<(f64, f64)>,
}

pub fn evaluate_proposals(proposals: &VideoProposals, gt: &GroundTruthDB, cfg: &EvalConfig) -> Result<ProposalReport> {
    cfg.validate()?;
    let ar = ar_curve(proposals, gt, &cfg.an_grid, &cfg.proposal_recall_thresholds)?;
    let auc = auc_from_curve(&cfg.an_grid, &ar);
    let curve: Vec<(usize, f64)> = cfg.an_grid.iter().copied().zip(ar.iter().copied()).collect();
    let mut ar_at = BTreeMap::new();
    for an in [1, 5, 10, 50, 100] {
        if let Some((_, v)) = curve.iter().find(|(a, _)| *a == an) {
            ar_at.insert(an, *v);
        }
    }
    let max_an = *cfg.an_grid.last().expect("validated");
    ar_at.entry(max_an).or_insert(*ar.last().expect("validated"));
    let recall_at_max_an = cfg
        .proposal_recall_thresholds
        .iter()
        .map(|&tau| Ok((tau, ar_at_an(proposals, gt, max_an, &[tau])?)))
        .collect::<Result<_>>()?;
    Ok(ProposalReport {
        ar_at,
        auc,
        curve,
        recall_at_max_an,
    })
}

impl ProposalReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mut doc = serde_json::Map::new();
        for (an, v) in &self.ar_at {
            doc.insert(format!("AR@{an}"), (*v).into());
        }
        doc.insert("AUC".into(), self.auc.into());
        doc.insert(
            "recall_per_threshold".into(),
            self.recall_at_max_an
                .iter()
                .map(|(t, r)| serde_json::json!({"tiou": t, "recall": r}))
                .collect(),
        );
        doc.insert(
            "curve".into(),
            self.curve
                .iter()
                .map(|(an, ar)| serde_json::json!({"an": an, "ar": ar}))
                .collect(),
        );
        serde_json::Value::Object(doc)
    }

    /// `an,ar` rows of the AR-vs-AN curve.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("an,ar\n");
        for (an, ar) in &self.curve {
            out.push_str(&format!("{an},{ar}\n"));
        }
        out
    }
}

/// A detection of one class, tagged with its video.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDetection {
    pub video_id: String,
    pub segment: TemporalSegment,
    pub score: f64,
}

fn sort_class_detections(dets: &mut [ClassDetection]) {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.video_id.cmp(&b.video_id))
            .then_with(|| rank_cmp(0.0, &a.segment, 0.0, &b.segment))
    });
}

/// True-positive flag for each detection in ranked order.
pub fn detection_flags(
    detections: &[ClassDetection],
    gt: &BTreeMap<String, Vec<TemporalSegment>>,
    tau: f64,
) -> Vec<bool> {
    let mut sorted = detections.to_vec();
    sort_class_detections(&mut sorted);
    let mut matchers: BTreeMap<&str, IncrementalMatcher> = BTreeMap::new();
    sorted
        .iter()
        .map(|d| match gt.get(&d.video_id) {
            Some(gts) if !gts.is_empty() => {
                let row: Vec<f64> = gts.iter().map(|g| tiou(&d.segment, g)).collect();
                matchers
                    .entry(d.video_id.as_str())
                    .or_insert_with(|| IncrementalMatcher::new(gts.len(), tau))
                    .push(&row)
            }
            _ => false,
        })
        .collect()
}

/// Interpolated average precision of one class at threshold `tau`.
pub fn average_precision(detections: &[ClassDetection], gt: &BTreeMap<String, Vec<TemporalSegment>>, tau: f64) -> f64 {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    if n_gt == 0 || detections.is_empty() {
        return 0.0;
    }
    let flags = detection_flags(detections, gt, tau);
    let mut precision = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = flags
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| *p)
        .sum();
    sum / n_gt as f64
}

/// Detections and ground truth of one class, the latter keyed by video.
type ClassSlice = (Vec<ClassDetection>, BTreeMap<String, Vec<TemporalSegment>>);

fn split_by_class(dets: &VideoDetections, gt: &GroundTruthDB) -> BTreeMap<String, ClassSlice> {
    let mut out: BTreeMap<String, ClassSlice> = BTreeMap::new();
    for (vid, video) in &gt.videos {
        for a in &video.annotations {
            out.entry(a.label.clone())
                .or_default()
                .1
                .entry(vid.clone())
                .or_default()
                .push(a.segment);
        }
    }
    for (vid, list) in dets {
        for d in list {
            if let Some(entry) = out.get_mut(&d.label) {
                entry.0.push(ClassDetection {
                    video_id: vid.clone(),
                    segment: d.segment,
                    score: d.score,
                });
            }
        }
    }
    out
}

/// AP per ground-truth class at `tau`.
pub fn per_class_ap(dets: &VideoDetections, gt: &GroundTruthDB, tau: f64) -> Result<BTreeMap<String, f64>> {
    if gt.instance_count() == 0 {
        return Err(Error::NoGroundTruth);
    }
    Ok(split_by_class(dets, gt)
        .into_iter()
        .map(|(label, (d, g))| (label, average_precision(&d, &g, tau)))
        .collect())
}

/// Unweighted mean of per-class AP over classes present in the ground truth.
pub fn mean_ap(dets: &VideoDetections, gt: &GroundTruthDB, tau: f64) -> Result<f64> {
    let aps = per_class_ap(dets, gt, tau)?;
    Ok(aps.values().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub average_map: f64,
    pub per_threshold: Vec<(f64, f64)>,
    pub per_class: BTreeMap<String, Vec<f64>>,
}

pub fn average_map(dets: &VideoDetections, gt: &GroundTruthDB, cfg: &EvalConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    let mut per_threshold = Vec::with_capacity(cfg.tiou_thresholds.len());
    let mut per_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &tau in &cfg.tiou_thresholds {
        let aps = per_class_ap(dets, gt, tau)?;
        let map = aps.values().sum::<f64>() / aps.len() as f64;
        per_threshold.push((tau, map));
        for (label, ap) in aps {
            per_class.entry(label).or_default().push(ap);
        }
    }
    let average_map = per_threshold.iter().map(|(_, m)| m).sum::<f64>() / per_threshold.len() as f64;
    Ok(DetectionReport {
        average_map,
        per_threshold,
        per_class,
    })
}

impl DetectionReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "average_mAP": self.average_map,
            "mAP_per_threshold": self.per_threshold.iter()
                .map(|(t, m)| serde_json::json!({"tiou": t, "mAP": m}))
                .collect::<Vec<_>>(),
            "per_class_AP": self.per_class,
        })
    }
}
