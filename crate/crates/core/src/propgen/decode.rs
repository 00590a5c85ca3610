use serde::{Deserialize, Serialize};

use super::ConfidenceMaps;
use crate::segment::{sort_ranked, Proposal, ScoreComponents, TemporalSegment};

/// How boundary probabilities and map confidences are fused into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFusion {
    /// `p_s * p_e * sqrt(m_cc * m_cr)`
    #[default]
    GeometricMean,
    /// `p_s * p_e * m_cc * m_cr`
    Product,
    /// `m_cc * m_cr`
    MapsOnly,
}

impl ScoreFusion {
    pub fn fuse(self, c: &ScoreComponents) -> f64 {
        match self {
            ScoreFusion::GeometricMean => c.p_start * c.p_end * (c.map_cc * c.map_cr).sqrt(),
            ScoreFusion::Product => c.p_start * c.p_end * c.map_cc * c.map_cr,
            ScoreFusion::MapsOnly => c.map_cc * c.map_cr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub boundary_ratio: f64,
    pub max_proposals: usize,
    #[serde(default)]
    pub fusion: ScoreFusion,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            boundary_ratio: 0.5,
            max_proposals: 100,
            fusion: ScoreFusion::GeometricMean,
        }
    }
}

/// Indices that are strict local maxima or exceed `ratio * max`.
fn boundary_candidates(p: &[f64], ratio: f64) -> Vec<usize> {
    let peak = p.iter().cloned().fold(0.0, f64::max);
    let threshold = ratio * peak;
    (0..p.len())
        .filter(|&i| {
            let left = i == 0 || p[i] > p[i - 1];
            let right = i + 1 == p.len() || p[i] > p[i + 1];
            (left && right && p.len() > 1) || p[i] > threshold
        })
        .collect()
}

/// Pairs every candidate start with every later candidate end that fits in
/// the map, scores the pair, and keeps the best `max_proposals`.
pub fn decode_proposals(maps: &ConfidenceMaps, cfg: &DecodeConfig) -> Vec<Proposal> {
    let t = maps.t();
    if t == 0 {
        return Vec::new();
    }
    let p_start = maps.p_start.as_slice().expect("contiguous");
    let p_end = maps.p_end.as_slice().expect("contiguous");
    let starts = boundary_candidates(p_start, cfg.boundary_ratio);
    let ends = boundary_candidates(p_end, cfg.boundary_ratio);
    let tf = t as f64;
    let mut out = Vec::new();
    for &i in &starts {
        for &j in ends.iter().filter(|&&j| j > i) {
            let d = j - i - 1;
            if d >= maps.d_max() {
                continue;
            }
            let components = ScoreComponents {
                p_start: p_start[i],
                p_end: p_end[j],
                map_cc: maps.m_cc[[d, i]],
                map_cr: maps.m_cr[[d, i]],
            };
            let segment = TemporalSegment::new(i as f64 / tf, j as f64 / tf).expect("j > i");
            out.push(Proposal {
                segment,
                score: cfg.fusion.fuse(&components).clamp(0.0, 1.0),
                components,
                refined_score: None,
            });
        }
    }
    sort_ranked(&mut out);
    out.truncate(cfg.max_proposals);
    out
}
