use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ingest::FeatureSequence;
use crate::segment::Proposal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    /// Bins per window.
    pub bins: usize,
    /// Context window length as a fraction of the proposal length.
    pub context_ratio: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            bins: 8,
            context_ratio: 0.5,
        }
    }
}

impl PoolConfig {
    /// Length of the pooled vector: three windows of `bins` plus
    /// (center, width, score).
    pub fn dim(&self) -> usize {
        3 * self.bins + 3
    }
}

/// Overlap-weighted mean of `profile` over `[a, b)` in snippet coordinates.
fn window_mean(profile: &[f64], a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let first = a.floor().max(0.0) as usize;
    let last = (b.ceil() as usize).min(profile.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &v) in profile.iter().enumerate().take(last).skip(first) {
        let w = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
        num += w * v;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn push_bins(out: &mut Vec<f64>, profile: &[f64], lo: f64, hi: f64, bins: usize) {
    let t = profile.len() as f64;
    let (a, b) = (lo * t, hi * t);
    let width = (b - a) / bins as f64;
    for q in 0..bins {
        let (x0, x1) = (a + q as f64 * width, a + (q + 1) as f64 * width);
        out.push(window_mean(profile, x0, x1));
    }
}

/// Channel-mean profile of a feature sequence, one value per snippet.
fn channel_profile(seq: &FeatureSequence) -> Vec<f64> {
    let c = seq.c() as f64;
    seq.data().rows().into_iter().map(|r| r.sum() / c).collect()
}

fn pool_with_profile(profile: &[f64], p: &Proposal, cfg: &PoolConfig) -> Vec<f64> {
    let (s, e) = (p.segment.start(), p.segment.end());
    let ctx = cfg.context_ratio * (e - s);
    let mut out = Vec::with_capacity(cfg.dim());
    push_bins(&mut out, profile, s, e, cfg.bins);
    push_bins(&mut out, profile, (s - ctx).max(0.0), s, cfg.bins);
    push_bins(&mut out, profile, e, (e + ctx).min(1.0), cfg.bins);
    out.extend([p.segment.center(), p.segment.length(), p.score]);
    out
}

/// Pools the channel-mean profile over the proposal and its two context
/// windows, `bins` values each, then appends center, width and score.
pub fn pool_proposal_feature(seq: &FeatureSequence, p: &Proposal, cfg: &PoolConfig) -> Vec<f64> {
    pool_with_profile(&channel_profile(seq), p, cfg)
}

/// Stacks the pooled vectors of every proposal into an `n x dim` matrix.
pub fn proposal_features(seq: &FeatureSequence, proposals: &[Proposal], cfg: &PoolConfig) -> Array2<f64> {
    let profile = channel_profile(seq);
    let mut x = Array2::zeros((proposals.len(), cfg.dim()));
    for (row, p) in x.rows_mut().into_iter().zip(proposals) {
        let v = pool_with_profile(&profile, p, cfg);
        row.into_iter().zip(v).for_each(|(dst, src)| *dst = src);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::TemporalSegment;
    use ndarray::array;

    fn prop(s: f64, e: f64, score: f64) -> Proposal {
        Proposal::new(TemporalSegment::new(s, e).unwrap(), score)
    }

    #[test]
    fn constant_sequence_pools_to_constant() {
        let seq = FeatureSequence::new("v", Array2::from_elem((37, 3), 0.7)).unwrap();
        let cfg = PoolConfig {
            bins: 5,
            context_ratio: 0.3,
        };
        let v = pool_proposal_feature(&seq, &prop(0.3, 0.55, 0.4), &cfg);
        assert_eq!(v.len(), 18);
        for x in &v[..15] {
            assert!((x - 0.7).abs() < 1e-12);
        }
        assert!((v[15] - 0.425).abs() < 1e-12);
        assert!((v[16] - 0.25).abs() < 1e-12);
        assert_eq!(v[17], 0.4);
    }

    #[test]
    fn full_extent_has_empty_context() {
        let seq = FeatureSequence::new("v", Array2::from_elem((10, 2), 1.0)).unwrap();
        let cfg = PoolConfig {
            bins: 4,
            context_ratio: 0.5,
        };
        let v = pool_proposal_feature(&seq, &prop(0.0, 1.0, 0.9), &cfg);
        assert!(v[4..12].iter().all(|&x| x == 0.0));
        assert!(v[..4].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn hand_computed_bin() {
        let seq = FeatureSequence::new("v", array![[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let cfg = PoolConfig {
            bins: 1,
            context_ratio: 0.0,
        };
        let v = pool_proposal_feature(&seq, &prop(0.0, 0.5, 0.1), &cfg);
        assert_eq!(v[0], 0.5);
        assert_eq!(&v[1..3], &[0.0, 0.0]);
    }

    #[test]
    fn fractional_bins_are_overlap_weighted() {
        // [0.1, 0.6] of 4 snippets is [0.4, 2.4): weights 0.6, 1, 0.4 on 0, 1, 2.
        let seq = FeatureSequence::new("v", array![[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let cfg = PoolConfig {
            bins: 1,
            context_ratio: 0.0,
        };
        let v = pool_proposal_feature(&seq, &prop(0.1, 0.6, 0.1), &cfg);
        assert!((v[0] - (1.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_rows_match_single_pooling() {
        let seq = FeatureSequence::new("v", Array2::from_shape_fn((20, 3), |(r, c)| (r + c) as f64)).unwrap();
        let cfg = PoolConfig::default();
        let ps = [prop(0.1, 0.4, 0.3), prop(0.5, 0.95, 0.8)];
        let x = proposal_features(&seq, &ps, &cfg);
        for (row, p) in x.rows().into_iter().zip(&ps) {
            assert_eq!(row.to_vec(), pool_proposal_feature(&seq, p, &cfg));
        }
    }
}
